#pragma once

#include <cstdint>
#include <vector>

namespace ksteer {

struct ActivationEntry {
    std::vector<float> activation;
    std::uint32_t label = 0;
    std::uint32_t layer = 0;
    /// Index of the producing prompt. Not persisted; reloaded sets use the entry index.
    std::uint64_t source_id = 0;

    friend bool operator==(const ActivationEntry&, const ActivationEntry&) = default;
};

/// Final-position activations paired with class labels.
struct LabeledActivationSet {
    std::size_t d_model = 0;
    std::vector<ActivationEntry> entries;

    [[nodiscard]] std::size_t size() const noexcept { return entries.size(); }
    [[nodiscard]] bool empty() const noexcept { return entries.empty(); }
    /// Highest label + 1 (0 for an empty set).
    [[nodiscard]] std::size_t label_count() const;

    friend bool operator==(const LabeledActivationSet&, const LabeledActivationSet&) = default;
};

}  // namespace ksteer
