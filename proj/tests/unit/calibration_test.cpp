#include <doctest.h>

#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "ksteer/assets.hpp"
#include "ksteer/calibration.hpp"
#include "ksteer/error.hpp"
#include "ksteer/judges.hpp"
#include "ksteer/rng.hpp"

using namespace ksteer;

namespace {

/// Renders alpha as text so a judge can read it back.
std::string alpha_text(double alpha, std::size_t) { return std::to_string(alpha); }

class StepJudge final : public CoherenceJudge {
public:
    explicit StepJudge(double threshold) : threshold_(threshold) {}
    double score(std::string_view g) const override {
        ++calls;
        return std::stod(std::string(g)) <= threshold_ ? 100.0 : 0.0;
    }
    mutable std::atomic<std::size_t> calls{0};

private:
    double threshold_;
};

class ConstantJudge final : public CoherenceJudge {
public:
    explicit ConstantJudge(double s) : s_(s) {}
    double score(std::string_view) const override { return s_; }

private:
    double s_;
};

/// Fails on sample 0 of every probe with alpha above 100.
class FlakyJudge final : public CoherenceJudge {
public:
    double score(std::string_view g) const override {
        const auto bar = g.find('|');
        const double alpha = std::stod(std::string(g.substr(0, bar)));
        if (alpha > 100.0 && g.substr(bar + 1) == "0") throw JudgeUnavailable("offline");
        return 100.0;
    }
};

std::string render(std::initializer_list<int> ids) {
    std::string out;
    for (int id : ids) {
        if (!out.empty()) out += ' ';
        out += "t" + std::to_string(id);
    }
    return out;
}

/// Minimal chat-completions endpoint on a free loopback port.
struct MockEndpoint {
    using Handler = std::function<std::pair<int, std::string>(const nlohmann::json& request)>;

    explicit MockEndpoint(Handler h) : handler(std::move(h)) {
        server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            auto body = nlohmann::json::parse(req.body);
            {
                std::lock_guard lock(mutex);
                requests.push_back(body);
            }
            auto [status, text] = handler(body);
            res.status = status;
            res.set_content(text, "application/json");
        });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~MockEndpoint() {
        server.stop();
        thread.join();
    }

    JudgeEndpoint endpoint() const {
        JudgeEndpoint e;
        e.url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
        e.model = "mock";
        e.backoff = std::chrono::milliseconds(1);
        e.timeout = std::chrono::seconds(5);
        return e;
    }

    static std::string reply(const std::string& content, const nlohmann::json& logprobs = nullptr) {
        nlohmann::json choice{{"message", {{"role", "assistant"}, {"content", content}}}};
        if (!logprobs.is_null()) choice["logprobs"] = {{"content", {{{"top_logprobs", logprobs}}}}};
        return nlohmann::json{{"choices", {choice}}}.dump();
    }

    Handler handler;
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::mutex mutex;
    std::vector<nlohmann::json> requests;
};

}  // namespace

TEST_CASE("offline heuristic judge") {
    CHECK(offline_heuristic_score("", 64) == 0.0);
    CHECK(offline_heuristic_score("   ", 64) == 0.0);
    CHECK(offline_heuristic_score(render({1, 2, 1, 2, 1, 2, 1, 2}), 64) == 0.0);
    CHECK(offline_heuristic_score("a b a b a b a b", 64) == 0.0);
    CHECK(offline_heuristic_score(render({1, 2, 3, 4, 5, 6, 7, 8}), 64) == 100.0);
    // Half the tokens fall outside the vocabulary.
    CHECK(offline_heuristic_score(render({1, 2, 3, 4, 70, 71, 72, 73}), 64) == 50.0);
    CHECK(offline_heuristic_score("t1 t2 x3 t4", 64) == 75.0);
    CHECK(offline_heuristic_score("t64 t2", 64) == 50.0);
    // Windows 0 and 4 match: 2 of 5 repeat.
    CHECK(offline_heuristic_score(render({1, 2, 3, 4, 1, 2, 3, 4}), 64) == 60.0);

    SeededRng rng(12);
    auto perm = rng.permutation(64);
    std::string text;
    for (auto p : perm) text += "t" + std::to_string(p) + " ";
    CHECK(offline_heuristic_score(text, 64) >= 90.0);
    CHECK(offline_heuristic_score(text, 64) == offline_heuristic_score(text, 64));
}

TEST_CASE("bisection calibration") {
    CalibrationConfig cfg;
    StepJudge step(37.0);
    auto r = calibrate_alpha(alpha_text, step, cfg);
    CHECK(r.probes.size() == 12);
    CHECK(step.calls == 12 * 20);
    CHECK(r.judged() == 240);
    CHECK(std::abs(r.best_alpha - 37.0) <= (1024.0 - 0.1) / 4096.0);
    CHECK(r.best_alpha <= 37.0);
    bool probed = false;
    for (const auto& p : r.probes) {
        CHECK(p.coherent == (p.alpha <= 37.0));
        probed = probed || p.alpha == r.best_alpha;
    }
    CHECK(probed);

    auto always = calibrate_alpha(alpha_text, ConstantJudge(100.0), cfg);
    CHECK(1024.0 - always.best_alpha <= (1024.0 - 0.1) / 4096.0);
    auto never = calibrate_alpha(alpha_text, ConstantJudge(0.0), cfg);
    CHECK(never.best_alpha == 0.1);
    for (const auto& p : never.probes) CHECK_FALSE(p.coherent);

    // Threaded sampling reaches the same decisions.
    auto parallel = calibrate_alpha(alpha_text, StepJudge(37.0), cfg, {}, 4);
    CHECK(parallel.best_alpha == r.best_alpha);
}

TEST_CASE("calibration failure budget") {
    CalibrationConfig cfg;
    cfg.iterations = 1;
    cfg.alpha_lo = 0.0;
    cfg.alpha_hi = 2.0;
    // Sample i scores 40 when i < bad, 100 otherwise.
    auto run = [&](std::size_t bad) {
        struct J final : CoherenceJudge {
            std::size_t bad;
            double score(std::string_view g) const override {
                return std::stoul(std::string(g)) < bad ? 40.0 : 100.0;
            }
        } judge;
        judge.bad = bad;
        return calibrate_alpha([](double, std::size_t i) { return std::to_string(i); }, judge, cfg);
    };
    CHECK(run(0).probes[0].coherent);
    CHECK(run(1).probes[0].coherent);
    CHECK_FALSE(run(2).probes[0].coherent);
    CHECK(run(2).probes[0].below_threshold == 2);
}

TEST_CASE("judge errors mark probes incoherent") {
    CalibrationConfig cfg;
    auto r = calibrate_alpha([](double a, std::size_t i) { return std::to_string(a) + "|" + std::to_string(i); },
                             FlakyJudge(), cfg);
    CHECK(r.probes.size() == 12);
    CHECK(r.probes[0].alpha > 100.0);
    CHECK_FALSE(r.probes[0].coherent);
    CHECK(r.probes[0].judge_errors.size() == 1);
    CHECK(r.probes[0].scores.size() == 19);
    CHECK(r.best_alpha <= 100.0);
    CHECK(r.best_alpha > 99.0);
}

TEST_CASE("calibration config validation") {
    CalibrationConfig cfg;
    cfg.alpha_hi = cfg.alpha_lo;
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
    cfg = {};
    cfg.iterations = 0;
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
    cfg = {};
    cfg.coherence_threshold = 101;
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
}

TEST_CASE("judge reply parsing") {
    CHECK(parse_single_integer("100", 0, 100) == 100);
    CHECK(parse_single_integer("Score: 7.", 0, 10) == 7);
    CHECK_THROWS_AS((void)parse_single_integer("coherence: high", 0, 100), JudgeParseError);
    CHECK_THROWS_AS((void)parse_single_integer("yes", 0, 10), JudgeParseError);
    CHECK_THROWS_AS((void)parse_single_integer("3 or 4", 0, 10), JudgeParseError);
    CHECK_THROWS_AS((void)parse_single_integer("11", 0, 10), JudgeParseError);

    const double half = std::log(0.5);
    CHECK(*logprob_weighted_score({{"80", half}, {"90", half}}, 0, 100) == doctest::Approx(85.0));
    CHECK(*logprob_weighted_score({{"80", half}, {"the", half}}, 0, 100) == doctest::Approx(80.0));
    CHECK_FALSE(logprob_weighted_score({{"high", 0.0}, {"101", half}}, 0, 100).has_value());

    auto v = parse_verdict(R"(Sure: {"steering_successful": true, "steering_strength": 4,
        "is_steered_text_coherent": true, "notes": "fine"} done)");
    CHECK(v == JudgeVerdict{true, 4, true});
    CHECK(JudgeVerdict{true, 5, false}.normalized() == JudgeVerdict{false, 0, false});
    CHECK(v.normalized() == v);
    CHECK_THROWS_AS((void)parse_verdict("no object"), JudgeParseError);
    CHECK_THROWS_AS((void)parse_verdict(R"({"steering_successful": true, "steering_strength": 9,
        "is_steered_text_coherent": true})"),
                    JudgeParseError);
    CHECK_THROWS_AS((void)parse_verdict(R"({"steering_successful": 1, "steering_strength": 2,
        "is_steered_text_coherent": true})"),
                    JudgeParseError);

    CHECK(fill_template("a {x} b {y} {x}", {{"x", "1"}, {"y", "{x}"}}) == "a 1 b {x} 1");
    CHECK(assets::coherence_template.find("{generation}") != std::string_view::npos);
    CHECK(assets::success_template.find("{description}") != std::string_view::npos);
    CHECK(assets::score_template.find("{steered}") != std::string_view::npos);
}

TEST_CASE("chat request body") {
    JudgeEndpoint e;
    e.model = "m";
    ChatRequest r;
    r.prompt = "hi";
    r.temperature = 0.1;
    r.top_p = 0.9;
    r.max_tokens = 1024;
    auto body = nlohmann::json::parse(chat_request_body(e, r));
    CHECK(body["model"] == "m");
    CHECK(body["messages"][0]["role"] == "user");
    CHECK(body["messages"][0]["content"] == "hi");
    CHECK(body["top_p"] == 0.9);
    CHECK(body["max_tokens"] == 1024);
    CHECK_FALSE(body.contains("logprobs"));
    CHECK_THROWS_AS((void)parse_chat_reply("{}"), JudgeParseError);
    CHECK_THROWS_AS((void)parse_chat_reply("nope"), JudgeParseError);
}

TEST_CASE("http judges against a mock endpoint") {
    std::atomic<int> failures_left{0};
    std::string content = "100";
    nlohmann::json logprobs = nullptr;
    MockEndpoint mock([&](const nlohmann::json&) -> std::pair<int, std::string> {
        if (failures_left > 0) {
            --failures_left;
            return {503, "busy"};
        }
        return {200, MockEndpoint::reply(content, logprobs)};
    });
    auto ep = mock.endpoint();

    CHECK(http_judge_score(ep, "t1 t2") == 100.0);
    CHECK(mock.requests.back()["temperature"] == 0.0);
    CHECK(mock.requests.back()["top_logprobs"] == 20);
    CHECK(mock.requests.back()["messages"][0]["content"].get<std::string>().find("t1 t2") !=
          std::string::npos);

    logprobs = nlohmann::json::array({{{"token", "80"}, {"logprob", std::log(0.5)}},
                                      {{"token", "90"}, {"logprob", std::log(0.5)}}});
    CHECK(http_judge_score(ep, "x") == doctest::Approx(85.0));
    logprobs = nullptr;

    content = "coherence: high";
    CHECK_THROWS_AS((void)http_judge_score(ep, "x"), JudgeParseError);

    content = "7";
    CHECK(success_judge_score(ep, "formal", "x") == 7);
    content = "10";
    CHECK(success_judge_score(ep, "formal", "x") == 10);
    content = "yes";
    CHECK_THROWS_AS((void)success_judge_score(ep, "formal", "x"), JudgeParseError);

    content = R"({"steering_successful": true, "steering_strength": 5, "is_steered_text_coherent": false})";
    CHECK(steering_verdict(ep, "r", "b", "s") == JudgeVerdict{true, 5, false});
    CHECK(mock.requests.back()["temperature"] == 0.1);
    CHECK(mock.requests.back()["top_p"] == 0.9);
    CHECK(mock.requests.back()["max_tokens"] == 1024);

    content = "42";
    const auto before = mock.requests.size();
    failures_left = 2;
    CHECK(http_judge_score(ep, "x") == 42.0);
    CHECK(mock.requests.size() - before == 3);

    failures_left = 10;
    const auto start = mock.requests.size();
    CHECK_THROWS_AS((void)http_judge_score(ep, "x"), JudgeUnavailable);
    CHECK(mock.requests.size() - start == 4);
    failures_left = 0;

    HttpCoherenceJudge judge(ep);
    CHECK(judge.score("t3") == 42.0);

    JudgeEndpoint dead;
    dead.url = "http://127.0.0.1:1/v1";
    dead.retries = 1;
    dead.backoff = std::chrono::milliseconds(1);
    CHECK_THROWS_AS((void)http_judge_score(dead, "x"), JudgeUnavailable);
}
