#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ksteer/classifier.hpp"
#include "ksteer/tensor.hpp"

namespace ksteer {

enum class SteeringMethod { gradient, projection_removal, caa_add, directional_ablation };

[[nodiscard]] std::string_view method_name(SteeringMethod m);
[[nodiscard]] SteeringMethod parse_method(std::string_view name);

struct SteeringSpec {
    LossSpec loss;
    float alpha = 1.0f;
    std::size_t steps = 1;
    float gamma = 1.0f;
    std::vector<std::size_t> layers;
    SteeringMethod method = SteeringMethod::gradient;

    void validate() const;
};

/// alpha * gamma^k for k = 0 .. steps-1.
[[nodiscard]] std::vector<float> step_sizes(float alpha, float gamma, std::size_t steps);

/// a_{k+1} = a_k - alpha * gamma^k * grad L(a_k), gradient recomputed every
/// step. steps == 0 or alpha == 0 returns the input unchanged.
[[nodiscard]] ActivationMatrix gradient_steer(const ActivationMatrix& a, const MlpClassifier& clf,
                                              const SteeringSpec& spec);

enum class ReflectionMode {
    per_row,       // each position reflected across its own gradient row
    whole_matrix,  // one Frobenius reflection of the flattened matrix
};

struct ReflectionResult {
    ActivationMatrix activations;
    /// Rows left unchanged because |g|^2 < 1e-12 (every row in whole_matrix mode).
    std::vector<std::size_t> degenerate_rows;

    [[nodiscard]] bool degenerate() const noexcept { return !degenerate_rows.empty(); }
};

inline constexpr float kDegenerateGradient = 1e-12f;

/// Householder reflection of the activation across the hyperplane orthogonal
/// to the gradient of mean(avoid logits). `scale` multiplies the removed
/// component (1 = reflection, 0.5 = plain projection removal, 0 = identity).
[[nodiscard]] ReflectionResult projection_removal(const ActivationMatrix& a,
                                                  const MlpClassifier& clf,
                                                  std::span<const std::size_t> avoids,
                                                  ReflectionMode mode = ReflectionMode::per_row,
                                                  float scale = 1.0f);

/// row -= 2 * scale * (row.n / n.n) * n in place. Returns false (and leaves the
/// row untouched) when n.n < 1e-12.
bool householder_reflect(std::span<float> row, std::span<const float> normal, float scale = 1.0f);

enum class VectorProvenance : std::uint8_t { caa = 0, external = 1 };

struct SignedLabel {
    std::uint32_t label = 0;
    std::int8_t sign = 1;

    friend bool operator==(const SignedLabel&, const SignedLabel&) = default;
};

struct SteeringVector {
    std::vector<float> direction;
    std::vector<SignedLabel> labels;
    VectorProvenance method = VectorProvenance::caa;
    std::uint32_t source_layer = 0;

    friend bool operator==(const SteeringVector&, const SteeringVector&) = default;
};

/// Mean of pairwise differences pos[i] - neg[i].
[[nodiscard]] SteeringVector caa_compute_vector(std::span<const std::vector<float>> pos,
                                                std::span<const std::vector<float>> neg);

/// Mean of {v_t : t in targets} U {-v_a : a in avoids}.
[[nodiscard]] SteeringVector caa_combine(const std::map<std::uint32_t, SteeringVector>& per_label,
                                         std::span<const std::size_t> targets,
                                         std::span<const std::size_t> avoids);

/// Adds alpha * v to every position row.
[[nodiscard]] ActivationMatrix caa_apply(const ActivationMatrix& a, const SteeringVector& v,
                                         float alpha);

/// r' = r - strength * (r.u) u with u = v / |v|.
[[nodiscard]] ActivationMatrix directional_ablation(const ActivationMatrix& a,
                                                    const SteeringVector& v,
                                                    float strength = 1.0f);

// KSVF: "KSVF", u32 version, u32 d_model, u32 label_count, (u32 label, i8 sign)*,
// u32 source_layer, u8 method, d_model f32.
[[nodiscard]] std::vector<std::uint8_t> encode_steering_vector(const SteeringVector& v);
[[nodiscard]] SteeringVector decode_steering_vector(std::span<const std::uint8_t> bytes);
void save_steering_vector(const SteeringVector& v, const std::filesystem::path& path);
[[nodiscard]] SteeringVector load_steering_vector(const std::filesystem::path& path);

/// Notices raised while applying an intervention (degenerate gradients).
struct InterventionNotes {
    std::size_t degenerate_rows = 0;
};

/// A configured intervention: one SteeringSpec bound to the classifier or
/// vector it needs. Immutable and shareable across threads.
///
/// alpha == 0 disables every method. For the two removal methods alpha scales
/// the removed component, so alpha == 1 is the canonical operation.
class Intervention {
public:
    Intervention(SteeringSpec spec, std::shared_ptr<const MlpClassifier> clf,
                 std::shared_ptr<const SteeringVector> vector,
                 ReflectionMode mode = ReflectionMode::per_row);

    [[nodiscard]] const SteeringSpec& spec() const noexcept { return spec_; }
    [[nodiscard]] Intervention with_alpha(float alpha) const;
    [[nodiscard]] Intervention with_steps(std::size_t steps) const;

    [[nodiscard]] ActivationMatrix apply(const ActivationMatrix& a, InterventionNotes& notes) const;

private:
    SteeringSpec spec_;
    std::shared_ptr<const MlpClassifier> clf_;
    std::shared_ptr<const SteeringVector> vector_;
    ReflectionMode mode_;
};

}  // namespace ksteer
