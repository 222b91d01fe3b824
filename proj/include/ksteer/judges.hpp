#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ksteer/calibration.hpp"

namespace ksteer {

/// Per-generation verdict of the steering-score judge.
struct JudgeVerdict {
    bool steering_successful = false;
    int steering_strength = 0;  // 0..5
    bool is_steered_text_coherent = false;

    /// Incoherent text never counts: (false, 0) unless coherent.
    [[nodiscard]] JudgeVerdict normalized() const;

    friend bool operator==(const JudgeVerdict&, const JudgeVerdict&) = default;
};

/// OpenAI-compatible chat-completions endpoint. `url` is either the API base
/// (".../v1") or the full ".../chat/completions" path.
struct JudgeEndpoint {
    std::string url;
    std::string api_key;
    std::string model;
    std::size_t retries = 3;
    std::chrono::milliseconds backoff{250};  // doubled after each failed attempt
    std::chrono::seconds timeout{60};

    /// KSTEER_JUDGE_URL, KSTEER_JUDGE_KEY, KSTEER_JUDGE_MODEL. Throws
    /// JudgeUnavailable when the URL is unset.
    [[nodiscard]] static JudgeEndpoint from_env();
};

struct ChatRequest {
    std::string prompt;
    double temperature = 0.0;
    std::optional<double> top_p;
    std::optional<int> max_tokens;
    std::optional<int> top_logprobs;  // request per-token log-probabilities
};

struct ChatReply {
    std::string content;
    /// (token, logprob) candidates for the first generated token, if returned.
    std::vector<std::pair<std::string, double>> first_token_logprobs;
};

/// Request JSON: {"model", "messages": [{"role": "user", "content"}],
/// "temperature", ["top_p"], ["max_tokens"], ["logprobs", "top_logprobs"]}.
[[nodiscard]] std::string chat_request_body(const JudgeEndpoint& endpoint, const ChatRequest& request);
/// Reads choices[0].message.content and choices[0].logprobs.content[0].top_logprobs.
/// Throws JudgeParseError on an unexpected body.
[[nodiscard]] ChatReply parse_chat_reply(std::string_view body);

/// POST with retries; throws JudgeUnavailable after the last failed attempt.
[[nodiscard]] ChatReply chat_completion(const JudgeEndpoint& endpoint, const ChatRequest& request);

/// Replaces every {key} with its value.
[[nodiscard]] std::string fill_template(std::string_view tmpl,
                                        std::initializer_list<std::pair<std::string_view, std::string_view>> values);

/// Probability-weighted mean over candidates that are integers in [lo, hi];
/// nullopt when no candidate qualifies.
[[nodiscard]] std::optional<double> logprob_weighted_score(
    const std::vector<std::pair<std::string, double>>& candidates, int lo, int hi);

/// The single integer in a reply, which must lie in [lo, hi]. Throws
/// JudgeParseError otherwise.
[[nodiscard]] int parse_single_integer(std::string_view reply, int lo, int hi);

/// Coherence judge: temperature 0, logprob-weighted when the provider returns
/// top-20 log-probabilities, otherwise the integer in the reply.
[[nodiscard]] double http_judge_score(const JudgeEndpoint& endpoint, std::string_view generation);

/// Steering-success judge, 0..10.
[[nodiscard]] int success_judge_score(const JudgeEndpoint& endpoint, std::string_view description,
                                      std::string_view generation);

/// Parses the verdict object from a reply (first '{' to last '}'); unknown
/// fields are ignored.
[[nodiscard]] JudgeVerdict parse_verdict(std::string_view reply);

/// Steering-score judge at temperature 0.1, top_p 0.9, max_tokens 1024.
[[nodiscard]] JudgeVerdict steering_verdict(const JudgeEndpoint& endpoint, std::string_view rubric,
                                            std::string_view baseline, std::string_view steered);

class HttpCoherenceJudge final : public CoherenceJudge {
public:
    explicit HttpCoherenceJudge(JudgeEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
    [[nodiscard]] double score(std::string_view generation) const override {
        return http_judge_score(endpoint_, generation);
    }

private:
    JudgeEndpoint endpoint_;
};

}  // namespace ksteer
