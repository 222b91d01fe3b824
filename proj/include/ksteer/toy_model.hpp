#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ksteer/rng.hpp"
#include "ksteer/steering.hpp"
#include "ksteer/tensor.hpp"

namespace ksteer {

inline constexpr std::size_t kMaxContext = 512;

/// Token emitted when the final-position state leaves the decoder's range.
/// Embeds as the zero vector and renders as "<unk>".
inline constexpr std::uint32_t kUnknownToken = 0xFFFFFFFFu;

enum class PlantingKind : std::uint8_t {
    linear = 1,    // label = argmax_c x . u_c over orthogonal, variance-matched directions
    xor_pair = 2,  // label = [sign(x . u) * sign(x . v) > 0], two classes
};

/// Synthetic attribute structure read off the final-layer activation.
struct AttributePlanting {
    PlantingKind kind = PlantingKind::linear;
    std::size_t num_classes = 2;

    friend bool operator==(const AttributePlanting&, const AttributePlanting&) = default;
};

struct ToyModelConfig {
    std::size_t vocab_size = 64;
    std::size_t d_model = 32;
    std::size_t n_layers = 6;
    std::uint64_t seed = 0;
    std::optional<AttributePlanting> planting;
    /// Hidden width of each residual block; 0 means 2 * d_model.
    std::size_t mlp_width = 0;
    float residual_scale = 0.5f;
    /// Decoder range as a multiple of the typical final-layer norm; a state
    /// beyond it decodes to kUnknownToken. 0 disables the limit.
    float decode_range = 1.5f;

    void validate() const;

    friend bool operator==(const ToyModelConfig&, const ToyModelConfig&) = default;
};

/// Intervention point on the residual stream after block `layer`.
struct HookPoint {
    std::size_t layer = 0;
    std::function<ActivationMatrix(const ActivationMatrix&, InterventionNotes&)> transform;
};

/// One hook per layer listed in the intervention's spec.
[[nodiscard]] std::vector<HookPoint> hooks_for(const Intervention& intervention);

struct ForwardResult {
    std::vector<ActivationMatrix> layers;  // post-hook residual stream, one per block
    std::vector<float> next_logits;        // unembedding of the last position
    InterventionNotes notes;
};

struct GenerationResult {
    std::vector<std::uint32_t> tokens;  // prompt followed by generated ids
    std::size_t prompt_length = 0;
    /// Filled when capture was requested: every block's activation from a final
    /// hooked pass over the full sequence.
    std::map<std::size_t, ActivationMatrix> per_layer_activations;
    InterventionNotes notes;

    [[nodiscard]] std::span<const std::uint32_t> generated() const {
        return std::span<const std::uint32_t>(tokens).subspan(prompt_length);
    }
};

/// Deterministic position-wise residual MLP stack used as a steerable stand-in
/// for a language model.
///
/// Input row t is s_t * (E[tok_t] + mean_{s<=t} E[tok_s]) with fixed random
/// sign vectors s_t, followed by n_layers blocks a += W2 tanh(W1 a). Token ids
/// come in pairs (2k, 2k+1) whose embedding and unembedding rows are negated
/// copies, so the model is odd: negating every embedding negates every
/// activation and swaps the predicted token with its partner.
class ToyModel {
public:
    explicit ToyModel(const ToyModelConfig& cfg);

    /// All weights zero (embeddings included).
    static ToyModel zeros(const ToyModelConfig& cfg);

    [[nodiscard]] const ToyModelConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] std::size_t d_model() const noexcept { return cfg_.d_model; }
    [[nodiscard]] std::size_t n_layers() const noexcept { return cfg_.n_layers; }
    [[nodiscard]] std::size_t vocab_size() const noexcept { return cfg_.vocab_size; }
    [[nodiscard]] std::size_t final_layer() const noexcept { return cfg_.n_layers - 1; }

    [[nodiscard]] ForwardResult forward(std::span<const std::uint32_t> tokens,
                                        std::span<const HookPoint> hooks = {}) const;

    /// Greedy decoding; ties go to the lowest token id. Stops early when the
    /// context reaches kMaxContext. A final-position state whose norm exceeds
    /// norm_limit() decodes to kUnknownToken.
    [[nodiscard]] GenerationResult generate(std::span<const std::uint32_t> prompt,
                                            std::size_t max_new,
                                            std::span<const HookPoint> hooks = {},
                                            bool capture = false) const;

    /// RMS norm of the final-layer last-position state over seeded random prompts.
    [[nodiscard]] float typical_norm() const noexcept { return typical_norm_; }
    [[nodiscard]] float norm_limit() const noexcept;

    [[nodiscard]] bool has_planting() const noexcept { return cfg_.planting.has_value(); }
    /// Planted label of a final-layer activation. Throws if no planting is configured.
    [[nodiscard]] std::uint32_t planted_label(std::span<const float> final_activation) const;
    [[nodiscard]] std::size_t planted_classes() const;
    [[nodiscard]] const Tensor2& planted_directions() const noexcept { return planted_; }

    // KSTM weight dump: "KSTM", u32 version, u32 vocab, u32 d_model, u32 n_layers,
    // u32 mlp_width (0 = 2 * d_model), u64 seed, u8 planting kind (0 none), u32 planted classes, f32 residual
    // scale, f32 decode range, f32 typical norm, then tensors
    // embedding, unembedding, position signs, planted directions, and W1, W2 per block.
    [[nodiscard]] std::vector<std::uint8_t> encode_weights() const;
    [[nodiscard]] static ToyModel decode_weights(std::span<const std::uint8_t> bytes);
    void save_weights(const std::filesystem::path& path) const;
    [[nodiscard]] static ToyModel load_weights(const std::filesystem::path& path);

    friend bool operator==(const ToyModel&, const ToyModel&) = default;

private:
    struct Block {
        Tensor2 w_in;   // width x d_model
        Tensor2 w_out;  // d_model x width

        friend bool operator==(const Block&, const Block&) = default;
    };

    ToyModel() = default;
    void check_tokens(std::span<const std::uint32_t> tokens) const;
    [[nodiscard]] float measure_typical_norm(SeededRng& rng) const;

    ToyModelConfig cfg_;
    Tensor2 embedding_;       // vocab x d_model
    Tensor2 unembedding_;     // vocab x d_model
    Tensor2 position_signs_;  // kMaxContext x d_model, entries +-1
    float typical_norm_ = 0.0f;
    Tensor2 planted_;         // planted directions: orthonormal (xor) or orthogonal, RMS-scaled (linear)
    std::vector<Block> blocks_;
};

/// Text form of token ids: "t<id>" (or "<unk>") joined by single spaces.
[[nodiscard]] std::string render_tokens(std::span<const std::uint32_t> tokens);

/// Whitespace tokenizer for the toy vocabulary. Words of the form t<id> map to
/// that id; any other word maps to FNV-1a(lowercased word) mod vocab_size.
[[nodiscard]] std::vector<std::uint32_t> tokenize(std::string_view text, std::size_t vocab_size);

/// Partner swap 2k <-> 2k+1 of every id. The model is odd, so the mirrored
/// prompt's activations are the exact negation of the original's.
[[nodiscard]] std::vector<std::uint32_t> mirror_prompt(std::span<const std::uint32_t> tokens,
                                                       std::size_t vocab_size);

/// Uniform random token sequence (used for planted-attribute prompts).
[[nodiscard]] std::vector<std::uint32_t> random_prompt(SeededRng& rng, std::size_t length,
                                                       std::size_t vocab_size);

}  // namespace ksteer
