#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ksteer/classifier.hpp"
#include "ksteer/steering.hpp"
#include "ksteer/toy_model.hpp"

namespace ksteer {

struct CalibrationConfig {
    double alpha_lo = 0.1;
    double alpha_hi = 1024.0;
    std::size_t iterations = 12;
    std::size_t samples_per_probe = 20;
    int coherence_threshold = 45;
    std::size_t max_failures = 1;

    void validate() const;
};

/// Scores a generation for coherence on [0, 100]. Implementations must be
/// safe to call concurrently.
class CoherenceJudge {
public:
    virtual ~CoherenceJudge() = default;
    [[nodiscard]] virtual double score(std::string_view generation) const = 0;
};

/// 100 * (1 - repetition_ratio) * validity_ratio, rounded and clamped.
/// Tokens are whitespace-separated words; a token is valid when it reads
/// t<id> with id < vocab_size. repetition_ratio is the fraction of length-4
/// windows whose content occurs at another window position. Empty text
/// scores 0.
[[nodiscard]] double offline_heuristic_score(std::string_view text, std::size_t vocab_size);

class OfflineHeuristicJudge final : public CoherenceJudge {
public:
    explicit OfflineHeuristicJudge(std::size_t vocab_size) : vocab_size_(vocab_size) {}
    [[nodiscard]] double score(std::string_view generation) const override {
        return offline_heuristic_score(generation, vocab_size_);
    }

private:
    std::size_t vocab_size_;
};

struct CalibrationProbe {
    double alpha = 0.0;
    bool coherent = false;
    std::vector<double> scores;  // one per successfully judged sample
    std::size_t below_threshold = 0;
    std::vector<std::string> judge_errors;
};

struct CalibrationResult {
    double best_alpha = 0.0;
    std::vector<CalibrationProbe> probes;
    LossSpec label_combo;

    /// Number of judge calls made (successful or not).
    [[nodiscard]] std::size_t judged() const;
};

/// Generates the text of sample `index` steered at `alpha`.
using GenerationSampler = std::function<std::string(double alpha, std::size_t index)>;

/// Bisection on alpha. Each midpoint draws samples_per_probe generations; the
/// probe is coherent when at most max_failures score below the threshold. A
/// judge exception marks the probe incoherent. Returns the largest coherent
/// midpoint, or alpha_lo when none was coherent. Samples of one probe run on
/// up to `jobs` threads.
[[nodiscard]] CalibrationResult calibrate_alpha(const GenerationSampler& sampler,
                                                const CoherenceJudge& judge,
                                                const CalibrationConfig& cfg,
                                                LossSpec label_combo = {}, std::size_t jobs = 1);

/// Sampler over the toy model: sample i continues prompt perm[i mod n]
/// (seeded permutation) for max_new greedy tokens under the template
/// intervention rescaled to alpha, and renders only the generated tokens.
[[nodiscard]] GenerationSampler toy_generation_sampler(const ToyModel& model,
                                                       const Intervention& intervention,
                                                       std::vector<std::vector<std::uint32_t>> prompts,
                                                       std::size_t max_new, std::uint64_t seed);

}  // namespace ksteer
