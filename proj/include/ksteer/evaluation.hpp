#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ksteer/classifier.hpp"
#include "ksteer/judges.hpp"
#include "ksteer/steering.hpp"
#include "ksteer/toy_model.hpp"

namespace ksteer {

using Prompt = std::vector<std::uint32_t>;

struct EvalOutcome {
    LossSpec label_combo;
    std::size_t layer = 0;  // first steered layer
    SteeringMethod method = SteeringMethod::gradient;
    double mean_delta = 0.0;
    std::vector<double> per_input;
    double alpha = 0.0;
    std::size_t steps = 1;
    std::string dataset;
    std::optional<double> score;  // steering score, when judged
};

struct EvalConfig {
    std::size_t max_new_tokens = 0;
    std::size_t jobs = 1;
    std::string dataset;
};

/// Attribute probability of one activation under a label combo:
/// mean p(T+) (when T+ is non-empty) minus mean p(T-) (when T- is non-empty).
[[nodiscard]] double target_probability(std::span<const float> probs, const LossSpec& combo);

/// Unsteered final-layer final-position activations, computed once and
/// reused by every steered run over the same inputs.
class BaselineCache {
public:
    BaselineCache(const ToyModel& model, std::span<const Prompt> inputs, std::size_t max_new,
                  std::size_t jobs = 1);

    [[nodiscard]] std::span<const Prompt> inputs() const noexcept { return inputs_; }
    [[nodiscard]] std::size_t max_new() const noexcept { return max_new_; }
    [[nodiscard]] const std::vector<float>& activation(std::size_t i) const { return final_[i]; }

private:
    std::vector<Prompt> inputs_;
    std::size_t max_new_;
    std::vector<std::vector<float>> final_;
};

/// Final-layer final-position activation after greedy generation under the
/// given hooks (the capture pass over the full sequence).
[[nodiscard]] std::vector<float> final_activation(const ToyModel& model, const Prompt& prompt,
                                                  std::size_t max_new,
                                                  std::span<const HookPoint> hooks);

/// Per input: target_probability(steered) - target_probability(unsteered),
/// both read by eval_clf from the final layer; mean_delta is their average.
[[nodiscard]] EvalOutcome mean_target_prob_delta(const ToyModel& model, const MlpClassifier& eval_clf,
                                                 const Intervention& intervention,
                                                 const BaselineCache& baseline,
                                                 const EvalConfig& cfg = {});
[[nodiscard]] EvalOutcome mean_target_prob_delta(const ToyModel& model, const MlpClassifier& eval_clf,
                                                 const Intervention& intervention,
                                                 std::span<const Prompt> inputs,
                                                 const EvalConfig& cfg = {});

/// Layer whose outcomes have the highest mean of mean_delta; ties go to the
/// lowest layer. Throws InvalidInput on an empty list.
[[nodiscard]] std::size_t select_best_layer(std::span<const EvalOutcome> outcomes);

/// (average_strength / 5) * success_rate over normalized verdicts.
[[nodiscard]] double steering_score(std::span<const JudgeVerdict> verdicts);

/// Every target-only combination of 1..max_k labels out of n, ordered by size
/// then lexicographically.
[[nodiscard]] std::vector<LossSpec> enumerate_label_combos(std::size_t n, std::size_t max_k = 3);

struct SweepConfig {
    std::vector<double> alphas;      // default 0.2, 0.6, ..., 4.6
    std::vector<std::size_t> steps;  // default 1..10

    [[nodiscard]] static SweepConfig defaults();
};

struct SweepCell {
    double alpha = 0.0;
    std::size_t steps = 0;
    double mean_delta = 0.0;
};

struct SweepGroupBest {
    std::string group;  // early (alpha <= 1), middle (1 < alpha <= 3), late (alpha > 3)
    double alpha = 0.0;
    std::size_t steps = 0;
    double mean_delta = 0.0;
};

struct SweepResult {
    std::vector<double> alphas;
    std::vector<std::size_t> steps;
    std::vector<SweepCell> cells;  // alpha-major: cells[a * steps.size() + s]
    std::vector<SweepGroupBest> group_best;

    [[nodiscard]] const SweepCell& at(std::size_t alpha_index, std::size_t steps_index) const {
        return cells[alpha_index * steps.size() + steps_index];
    }
};

/// mean_target_prob_delta at every (alpha, steps) pair of the grid, sharing
/// one baseline cache, plus the best cell of each alpha group.
[[nodiscard]] SweepResult multi_step_sweep(const ToyModel& model, const MlpClassifier& eval_clf,
                                           const Intervention& base, std::span<const Prompt> inputs,
                                           const SweepConfig& grid, const EvalConfig& cfg = {});

}  // namespace ksteer
