#include "ksteer/judges.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "ksteer/assets.hpp"
#include "ksteer/error.hpp"

namespace ksteer {

using nlohmann::json;

JudgeVerdict JudgeVerdict::normalized() const {
    if (!is_steered_text_coherent) return {false, 0, false};
    return *this;
}

JudgeEndpoint JudgeEndpoint::from_env() {
    auto get = [](const char* name) {
        const char* v = std::getenv(name);
        return v ? std::string(v) : std::string();
    };
    JudgeEndpoint e;
    e.url = get("KSTEER_JUDGE_URL");
    e.api_key = get("KSTEER_JUDGE_KEY");
    e.model = get("KSTEER_JUDGE_MODEL");
    if (e.url.empty()) throw JudgeUnavailable("KSTEER_JUDGE_URL is not set");
    if (e.model.empty()) e.model = "gpt-4o-mini";
    return e;
}

std::string chat_request_body(const JudgeEndpoint& endpoint, const ChatRequest& request) {
    json body;
    body["model"] = endpoint.model;
    body["messages"] = json::array({{{"role", "user"}, {"content", request.prompt}}});
    body["temperature"] = request.temperature;
    if (request.top_p) body["top_p"] = *request.top_p;
    if (request.max_tokens) body["max_tokens"] = *request.max_tokens;
    if (request.top_logprobs) {
        body["logprobs"] = true;
        body["top_logprobs"] = *request.top_logprobs;
    }
    return body.dump();
}

ChatReply parse_chat_reply(std::string_view body) {
    json doc;
    try {
        doc = json::parse(body.begin(), body.end());
    } catch (const json::parse_error& e) {
        throw JudgeParseError(std::string("judge reply is not JSON: ") + e.what());
    }
    try {
        const auto& choice = doc.at("choices").at(0);
        ChatReply reply;
        const auto& content = choice.at("message").at("content");
        reply.content = content.is_string() ? content.get<std::string>() : std::string();
        const auto lp = choice.find("logprobs");
        if (lp != choice.end() && lp->is_object()) {
            const auto tokens = lp->find("content");
            if (tokens != lp->end() && tokens->is_array() && !tokens->empty()) {
                const auto& first = (*tokens)[0];
                const auto top = first.find("top_logprobs");
                if (top != first.end() && top->is_array()) {
                    for (const auto& c : *top) {
                        reply.first_token_logprobs.emplace_back(c.at("token").get<std::string>(),
                                                                c.at("logprob").get<double>());
                    }
                }
            }
        }
        return reply;
    } catch (const json::exception& e) {
        throw JudgeParseError(std::string("unexpected judge reply shape: ") + e.what());
    }
}

namespace {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

SplitUrl split_url(const std::string& url) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos) throw JudgeUnavailable("judge URL lacks a scheme: " + url);
    const auto slash = url.find('/', scheme + 3);
    SplitUrl out;
    out.origin = url.substr(0, slash);
    out.path = slash == std::string::npos ? std::string() : url.substr(slash);
    while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
    const std::string suffix = "/chat/completions";
    if (out.path.size() < suffix.size() ||
        out.path.compare(out.path.size() - suffix.size(), suffix.size(), suffix) != 0) {
        out.path += suffix;
    }
    return out;
}

}  // namespace

ChatReply chat_completion(const JudgeEndpoint& endpoint, const ChatRequest& request) {
    const auto target = split_url(endpoint.url);
    const std::string body = chat_request_body(endpoint, request);
    httplib::Headers headers;
    if (!endpoint.api_key.empty()) headers.emplace("Authorization", "Bearer " + endpoint.api_key);

    std::string last_error;
    auto delay = endpoint.backoff;
    for (std::size_t attempt = 0; attempt <= endpoint.retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(delay);
            delay *= 2;
        }
        httplib::Client client(target.origin);
        client.set_connection_timeout(endpoint.timeout);
        client.set_read_timeout(endpoint.timeout);
        client.set_write_timeout(endpoint.timeout);
        const auto res = client.Post(target.path, headers, body, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_error = "HTTP status " + std::to_string(res->status);
            continue;
        }
        return parse_chat_reply(res->body);
    }
    throw JudgeUnavailable("judge unavailable after " + std::to_string(endpoint.retries + 1) +
                           " attempts (" + last_error + ")");
}

std::string fill_template(std::string_view tmpl,
                          std::initializer_list<std::pair<std::string_view, std::string_view>> values) {
    std::string out(tmpl);
    for (const auto& [key, value] : values) {
        const std::string marker = "{" + std::string(key) + "}";
        std::size_t pos = 0;
        while ((pos = out.find(marker, pos)) != std::string::npos) {
            out.replace(pos, marker.size(), value);
            pos += value.size();
        }
    }
    return out;
}

namespace {

std::optional<int> as_integer(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    if (s.empty()) return std::nullopt;
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

}  // namespace

std::optional<double> logprob_weighted_score(const std::vector<std::pair<std::string, double>>& candidates,
                                             int lo, int hi) {
    double mass = 0.0;
    double weighted = 0.0;
    for (const auto& [token, logprob] : candidates) {
        const auto v = as_integer(token);
        if (!v || *v < lo || *v > hi) continue;
        const double p = std::exp(logprob);
        mass += p;
        weighted += p * *v;
    }
    if (!(mass > 0.0)) return std::nullopt;
    return weighted / mass;
}

int parse_single_integer(std::string_view reply, int lo, int hi) {
    std::vector<int> found;
    for (std::size_t i = 0; i < reply.size();) {
        if (std::isdigit(static_cast<unsigned char>(reply[i]))) {
            std::size_t j = i;
            while (j < reply.size() && std::isdigit(static_cast<unsigned char>(reply[j]))) ++j;
            int v = 0;
            const auto [ptr, ec] = std::from_chars(reply.data() + i, reply.data() + j, v);
            if (ec != std::errc()) throw JudgeParseError("judge reply number out of range");
            const bool negative = i > 0 && reply[i - 1] == '-';
            found.push_back(negative ? -v : v);
            i = j;
        } else {
            ++i;
        }
    }
    if (found.size() != 1) {
        throw JudgeParseError("expected a single integer in judge reply: \"" + std::string(reply) + "\"");
    }
    if (found[0] < lo || found[0] > hi) {
        throw JudgeParseError("judge score " + std::to_string(found[0]) + " outside " +
                              std::to_string(lo) + ".." + std::to_string(hi));
    }
    return found[0];
}

double http_judge_score(const JudgeEndpoint& endpoint, std::string_view generation) {
    ChatRequest req;
    req.prompt = fill_template(assets::coherence_template, {{"generation", generation}});
    req.temperature = 0.0;
    req.max_tokens = 4;
    req.top_logprobs = 20;
    const auto reply = chat_completion(endpoint, req);
    if (const auto weighted = logprob_weighted_score(reply.first_token_logprobs, 0, 100)) {
        return std::clamp(*weighted, 0.0, 100.0);
    }
    return parse_single_integer(reply.content, 0, 100);
}

int success_judge_score(const JudgeEndpoint& endpoint, std::string_view description,
                        std::string_view generation) {
    ChatRequest req;
    req.prompt = fill_template(assets::success_template,
                               {{"description", description}, {"generation", generation}});
    req.temperature = 0.0;
    req.max_tokens = 4;
    return parse_single_integer(chat_completion(endpoint, req).content, 0, 10);
}

JudgeVerdict parse_verdict(std::string_view reply) {
    const auto open = reply.find('{');
    const auto close = reply.rfind('}');
    if (open == std::string_view::npos || close == std::string_view::npos || close < open) {
        throw JudgeParseError("no JSON object in verdict reply");
    }
    json doc;
    try {
        doc = json::parse(reply.substr(open, close - open + 1));
    } catch (const json::parse_error& e) {
        throw JudgeParseError(std::string("verdict is not JSON: ") + e.what());
    }
    auto boolean = [&](const char* key) {
        const auto it = doc.find(key);
        if (it == doc.end() || !it->is_boolean()) {
            throw JudgeParseError(std::string("verdict field \"") + key + "\" missing or not boolean");
        }
        return it->get<bool>();
    };
    JudgeVerdict v;
    v.steering_successful = boolean("steering_successful");
    v.is_steered_text_coherent = boolean("is_steered_text_coherent");
    const auto strength = doc.find("steering_strength");
    if (strength == doc.end() || !strength->is_number_integer()) {
        throw JudgeParseError("verdict field \"steering_strength\" missing or not an integer");
    }
    v.steering_strength = strength->get<int>();
    if (v.steering_strength < 0 || v.steering_strength > 5) {
        throw JudgeParseError("steering_strength outside 0..5");
    }
    return v;
}

JudgeVerdict steering_verdict(const JudgeEndpoint& endpoint, std::string_view rubric,
                              std::string_view baseline, std::string_view steered) {
    ChatRequest req;
    req.prompt = fill_template(assets::score_template,
                               {{"rubric", rubric}, {"baseline", baseline}, {"steered", steered}});
    req.temperature = 0.1;
    req.top_p = 0.9;
    req.max_tokens = 1024;
    return parse_verdict(chat_completion(endpoint, req).content);
}

}  // namespace ksteer
