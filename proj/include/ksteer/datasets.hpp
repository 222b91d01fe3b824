#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ksteer/activation_set.hpp"
#include "ksteer/toy_model.hpp"

namespace ksteer {

struct PromptRecord {
    std::string category;
    std::string question;

    friend bool operator==(const PromptRecord&, const PromptRecord&) = default;
};

struct LabelDescriptor {
    std::uint32_t id = 0;
    std::string name;
    std::string instruction;

    friend bool operator==(const LabelDescriptor&, const LabelDescriptor&) = default;
};

/// JSON array of {"category", "prompt"} objects. "question" is accepted as an
/// alias for "prompt". Throws ParseError naming the offending record.
[[nodiscard]] std::vector<PromptRecord> parse_prompt_bank(std::string_view json_text);
[[nodiscard]] std::vector<PromptRecord> load_prompt_bank(const std::filesystem::path& path);

/// JSON array of {"id", "name", "instruction"}; ids must be dense 0..K-1 and
/// names unique. Records are returned sorted by id.
[[nodiscard]] std::vector<LabelDescriptor> parse_label_descriptors(std::string_view json_text);
[[nodiscard]] std::vector<LabelDescriptor> load_label_descriptors(const std::filesystem::path& path);

/// Built-in descriptor sets (6 tones, 10 debate styles).
[[nodiscard]] std::vector<LabelDescriptor> tonebank_labels();
[[nodiscard]] std::vector<LabelDescriptor> debatemix_labels();

/// Trimmed instruction, a blank line, trimmed question. An empty instruction
/// yields the question alone.
[[nodiscard]] std::string compose_prompt(const LabelDescriptor& desc, const PromptRecord& rec);

struct LabeledPrompt {
    std::vector<std::uint32_t> tokens;
    std::uint32_t label = 0;
};

/// Final-position activation at `layer` of a hook-free forward pass, one entry
/// per prompt, in input order. Prompts are processed on up to `jobs` threads.
[[nodiscard]] LabeledActivationSet extract_activations(const ToyModel& model,
                                                       std::span<const LabeledPrompt> prompts,
                                                       std::size_t layer, std::size_t jobs = 1);

struct ContrastivePlan {
    std::vector<std::size_t> question_index;    // prompt-bank record per pair
    std::vector<std::uint32_t> negative_label;  // never the target
    std::vector<std::string> positive_prompt;
    std::vector<std::string> negative_prompt;
};

/// Chooses n distinct questions (seeded permutation of the bank) and a
/// seeded-uniform negative label for each pair.
[[nodiscard]] ContrastivePlan plan_contrastive_pairs(std::uint32_t label,
                                                     std::span<const LabelDescriptor> labels,
                                                     std::span<const PromptRecord> prompts,
                                                     std::size_t n, std::uint64_t seed);

struct ContrastivePairs {
    std::vector<std::vector<float>> positive;
    std::vector<std::vector<float>> negative;
};

/// Final-position activations after generating `max_new` tokens from each
/// side of a planned pair.
[[nodiscard]] ContrastivePairs build_contrastive_pairs(const ToyModel& model, std::size_t layer,
                                                       std::uint32_t label,
                                                       std::span<const LabelDescriptor> labels,
                                                       std::span<const PromptRecord> prompts,
                                                       std::size_t n, std::uint64_t seed,
                                                       std::size_t max_new = 0,
                                                       std::size_t jobs = 1);

/// Pairs drawn from an already-labelled set: positive from `target`, negative
/// from a seeded-uniform other label.
[[nodiscard]] ContrastivePairs planted_contrastive_pairs(const LabeledActivationSet& set,
                                                         std::uint32_t target, std::size_t n,
                                                         std::uint64_t seed);

/// As planted_contrastive_pairs for a set laid out in mirror couples (entries
/// 2k and 2k+1 are exact negations sharing a label). Couples are drawn whole,
/// so n must be even and the pairwise differences cancel exactly.
[[nodiscard]] ContrastivePairs mirrored_contrastive_pairs(const LabeledActivationSet& set,
                                                          std::uint32_t target, std::size_t n,
                                                          std::uint64_t seed);

/// Random prompts labelled by the model's planted attribute at the final
/// layer. With `mirrored`, each prompt is followed by its mirror_prompt, so
/// the set of activations is centrally symmetric. Each prompt is labelled on
/// its own: xor couples share a label, linear couples generally do not.
[[nodiscard]] std::vector<LabeledPrompt> planted_prompt_corpus(const ToyModel& model,
                                                               std::size_t count,
                                                               std::size_t length,
                                                               std::uint64_t seed,
                                                               bool mirrored = true);

enum class SynthKind { linear, xor_pair };

struct SynthConfig {
    SynthKind kind = SynthKind::linear;
    std::size_t d_model = 16;
    std::size_t n_per_class = 200;
    float sigma = 0.1f;
    std::uint64_t seed = 0;
    /// linear only: class c sits at (-1)^c * mu * e_{c/2}.
    std::size_t num_classes = 2;
    float mu = 1.0f;
};

/// Gaussian clusters with planted structure. The xor kind samples the four
/// quadrant centres +-u +-v (u, v seeded orthonormal) equally often; the
/// label is 1 when the two signs agree.
[[nodiscard]] LabeledActivationSet synth_planted_set(const SynthConfig& cfg);

/// Orthonormal (u, v) used by the xor kind for a given seed and width.
[[nodiscard]] Tensor2 synth_xor_directions(std::uint64_t seed, std::size_t d_model);

// KSAV: "KSAV", u32 version, u32 d_model, u64 count, then (u32 label,
// u32 layer, d_model f32) per entry.
[[nodiscard]] std::vector<std::uint8_t> encode_activations(const LabeledActivationSet& set);
[[nodiscard]] LabeledActivationSet decode_activations(std::span<const std::uint8_t> bytes);
void save_activations(const LabeledActivationSet& set, const std::filesystem::path& path);
[[nodiscard]] LabeledActivationSet load_activations(const std::filesystem::path& path);

struct DataSplit {
    LabeledActivationSet train;
    LabeledActivationSet heldout;
};

/// Seeded permutation; the first round(fraction * n) entries train.
[[nodiscard]] DataSplit split_train_heldout(const LabeledActivationSet& set, std::uint64_t seed,
                                            double train_fraction = 0.8);

}  // namespace ksteer
