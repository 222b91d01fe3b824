#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ksteer/activation_set.hpp"
#include "ksteer/tensor.hpp"

namespace ksteer {

/// Target set T+ (logits to raise) and avoid set T- (logits to lower).
struct LossSpec {
    std::vector<std::size_t> targets;
    std::vector<std::size_t> avoids;

    /// Throws InvalidInput unless the sets are disjoint, duplicate-free, not
    /// both empty and every index is below num_classes.
    void validate(std::size_t num_classes) const;

    friend bool operator==(const LossSpec&, const LossSpec&) = default;
};

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    float learning_rate = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float epsilon = 1e-8f;
    std::uint64_t seed = 0;

    void validate() const;
};

struct DenseLayer {
    Tensor2 weight;             // out x in
    std::vector<float> bias;    // out

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// d_model -> 256 -> 256 -> K perceptron with ReLU hidden units. Logits are
/// computed for each sequence position independently.
class MlpClassifier {
public:
    static constexpr std::size_t kHiddenWidth = 256;

    MlpClassifier(DenseLayer l1, DenseLayer l2, DenseLayer l3);

    /// Gaussian weights with sigma = 1/sqrt(fan_in), zero biases.
    static MlpClassifier initialized(std::size_t d_model, std::size_t num_classes,
                                     std::uint64_t seed, std::size_t hidden = kHiddenWidth);
    static MlpClassifier zeros(std::size_t d_model, std::size_t num_classes,
                               std::size_t hidden = kHiddenWidth);

    [[nodiscard]] std::size_t d_model() const noexcept { return layers_[0].weight.cols(); }
    [[nodiscard]] std::size_t num_classes() const noexcept { return layers_[2].weight.rows(); }
    [[nodiscard]] std::size_t hidden_width() const noexcept { return layers_[0].weight.rows(); }

    [[nodiscard]] const std::array<DenseLayer, 3>& layers() const noexcept { return layers_; }
    [[nodiscard]] std::array<DenseLayer, 3>& layers() noexcept { return layers_; }

    /// d_seq x K logits.
    [[nodiscard]] Tensor2 forward_logits(const ActivationMatrix& a) const;
    /// Row-wise softmax of forward_logits.
    [[nodiscard]] Tensor2 predict_probs(const ActivationMatrix& a) const;
    [[nodiscard]] std::size_t predict(std::span<const float> activation) const;

    friend bool operator==(const MlpClassifier&, const MlpClassifier&) = default;

private:
    void check_input(const ActivationMatrix& a) const;

    std::array<DenseLayer, 3> layers_;
};

/// -mean(logits[:, T+]) + mean(logits[:, T-]), each term present only when
/// its set is non-empty. Means run over positions x classes.
[[nodiscard]] float steering_loss(const Tensor2& logits, const LossSpec& spec);

struct LossAndGradient {
    float loss;
    Tensor2 gradient;  // same shape as the input activation
};

/// Reverse-mode gradient of steering_loss(forward_logits(a)) w.r.t. a.
/// The ReLU derivative at exactly 0 is taken as 0.
[[nodiscard]] LossAndGradient loss_and_gradient(const MlpClassifier& clf,
                                                const ActivationMatrix& a, const LossSpec& spec);
[[nodiscard]] Tensor2 input_gradient(const MlpClassifier& clf, const ActivationMatrix& a,
                                     const LossSpec& spec);

struct TrainResult {
    MlpClassifier classifier;
    std::vector<float> loss_history;  // mean cross-entropy per epoch
};

/// Mini-batch Adam on softmax cross-entropy; one seeded permutation per epoch,
/// trailing partial batch kept.
[[nodiscard]] TrainResult train(MlpClassifier clf, const LabeledActivationSet& data,
                                const TrainConfig& cfg);

[[nodiscard]] double accuracy(const MlpClassifier& clf, const LabeledActivationSet& data);

// KSCL checkpoint: "KSCL", u32 version, u32 d_model, u32 num_classes, then
// (u32 rows, u32 cols, f32 data) for w1 b1 w2 b2 w3 b3. Biases are rows x 1.
[[nodiscard]] std::vector<std::uint8_t> encode_classifier(const MlpClassifier& clf);
[[nodiscard]] MlpClassifier decode_classifier(std::span<const std::uint8_t> bytes);
void save_classifier(const MlpClassifier& clf, const std::filesystem::path& path);
[[nodiscard]] MlpClassifier load_classifier(const std::filesystem::path& path);

}  // namespace ksteer
