#pragma once

#include <map>
#include <memory>
#include <vector>

#include "ksteer/calibration.hpp"
#include "ksteer/classifier.hpp"
#include "ksteer/datasets.hpp"
#include "ksteer/evaluation.hpp"
#include "ksteer/toy_model.hpp"

namespace ksteer {

/// End-to-end steering run on a planted toy model: corpus, steering and
/// evaluation classifiers, CAA vectors, and per-combo calibrate + evaluate.
struct ToyPipelineConfig {
    ToyModelConfig model;
    std::size_t corpus_size = 10000;  // prompts, mirror-closed
    std::size_t prompt_length = 8;
    std::uint64_t corpus_seed = 11;
    std::size_t steer_layer = 5;
    std::size_t num_inputs = 100;
    std::uint64_t input_seed = 99;
    std::size_t calibration_prompts = 40;
    std::uint64_t sampler_seed = 3;
    std::size_t max_new_tokens = 24;
    std::size_t caa_pairs = 200;
    std::uint64_t caa_seed = 4;
    std::size_t steps = 1;
    float gamma = 1.0f;
    std::uint64_t steer_clf_seed = 1;
    std::uint64_t eval_clf_seed = 2;
    std::uint64_t split_seed = 5;
    TrainConfig train;
    CalibrationConfig calibration;
    std::size_t jobs = 1;
};

struct ComboRun {
    CalibrationResult calibration;
    EvalOutcome outcome;
};

class ToyPipeline {
public:
    /// Builds the model and corpus and trains both classifiers. The steering
    /// classifier sees 80% of the steer-layer activations; the evaluation
    /// classifier sees the other 20% of the final-layer ones.
    explicit ToyPipeline(ToyPipelineConfig cfg);

    [[nodiscard]] const ToyPipelineConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] const ToyModel& model() const noexcept { return model_; }
    [[nodiscard]] std::shared_ptr<const MlpClassifier> steer_classifier() const noexcept { return steer_clf_; }
    [[nodiscard]] const MlpClassifier& eval_classifier() const noexcept { return eval_clf_; }
    [[nodiscard]] const LabeledActivationSet& steer_set() const noexcept { return steer_set_; }
    [[nodiscard]] std::span<const Prompt> inputs() const noexcept { return inputs_; }
    [[nodiscard]] const BaselineCache& baseline() const noexcept { return *baseline_; }
    [[nodiscard]] std::size_t num_classes() const { return model_.planted_classes(); }

    /// Held-out accuracies: steering classifier on its 20%, evaluation
    /// classifier on the 80% it did not see.
    [[nodiscard]] double steer_accuracy() const noexcept { return steer_accuracy_; }
    [[nodiscard]] double eval_accuracy() const noexcept { return eval_accuracy_; }

    /// Contrastive pairs for one label at the steer layer. Xor plantings draw
    /// whole mirror couples, so their difference-in-means cancels exactly.
    [[nodiscard]] ContrastivePairs caa_pairs(std::uint32_t label) const;
    /// Per-label CAA vectors, computed on first use.
    [[nodiscard]] const std::map<std::uint32_t, SteeringVector>& caa_vectors() const;

    /// Steering intervention for a combo at alpha = 1 (method gradient or caa_add).
    [[nodiscard]] Intervention intervention(const LossSpec& combo, SteeringMethod method) const;

    /// Calibrates alpha with the offline judge, then evaluates at that alpha.
    [[nodiscard]] ComboRun run(const LossSpec& combo, SteeringMethod method) const;
    /// Evaluates at a fixed alpha.
    [[nodiscard]] EvalOutcome evaluate(const Intervention& intervention) const;

private:
    ToyPipelineConfig cfg_;
    ToyModel model_;
    std::vector<LabeledPrompt> corpus_;
    LabeledActivationSet steer_set_;
    std::shared_ptr<const MlpClassifier> steer_clf_;
    MlpClassifier eval_clf_;
    double steer_accuracy_ = 0.0;
    double eval_accuracy_ = 0.0;
    std::vector<Prompt> inputs_;
    std::vector<Prompt> calibration_prompts_;
    std::unique_ptr<BaselineCache> baseline_;
    mutable std::map<std::uint32_t, SteeringVector> caa_;
};

}  // namespace ksteer
