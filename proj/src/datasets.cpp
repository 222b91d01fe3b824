#include "ksteer/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "json.hpp"
#include "ksteer/assets.hpp"
#include "ksteer/binary_io.hpp"
#include "ksteer/error.hpp"
#include "ksteer/numeric.hpp"
#include "ksteer/parallel.hpp"
#include "ksteer/rng.hpp"

namespace ksteer {

namespace {

using nlohmann::json;

json parse_array(std::string_view text, const char* what) {
    json doc;
    try {
        doc = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw ParseError(std::string(what) + ": " + e.what(), 0);
    }
    if (!doc.is_array()) throw ParseError(std::string(what) + ": top level must be an array", 0);
    return doc;
}

std::string string_field(const json& rec, std::size_t index, const char* key) {
    const auto it = rec.find(key);
    if (it == rec.end()) throw ParseError(std::string("missing field \"") + key + "\"", index);
    if (!it->is_string()) throw ParseError(std::string("field \"") + key + "\" must be a string", index);
    return it->get<std::string>();
}

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

}  // namespace

std::vector<PromptRecord> parse_prompt_bank(std::string_view json_text) {
    const json doc = parse_array(json_text, "prompt bank");
    std::vector<PromptRecord> out;
    out.reserve(doc.size());
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const json& rec = doc[i];
        if (!rec.is_object()) throw ParseError("record must be an object", i);
        PromptRecord r;
        r.category = string_field(rec, i, "category");
        r.question = string_field(rec, i, rec.contains("prompt") ? "prompt" : "question");
        if (trim(r.question).empty()) throw ParseError("empty question", i);
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<PromptRecord> load_prompt_bank(const std::filesystem::path& path) {
    return parse_prompt_bank(io::read_text_file(path));
}

std::vector<LabelDescriptor> parse_label_descriptors(std::string_view json_text) {
    const json doc = parse_array(json_text, "label descriptors");
    std::vector<LabelDescriptor> out;
    std::set<std::string> names;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const json& rec = doc[i];
        if (!rec.is_object()) throw ParseError("record must be an object", i);
        const auto id = rec.find("id");
        if (id == rec.end() || !id->is_number_unsigned()) {
            throw ParseError("\"id\" must be a non-negative integer", i);
        }
        LabelDescriptor d;
        d.id = id->get<std::uint32_t>();
        d.name = string_field(rec, i, "name");
        d.instruction = string_field(rec, i, "instruction");
        if (!names.insert(d.name).second) throw ParseError("duplicate label name " + d.name, i);
        out.push_back(std::move(d));
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out[i].id != i) throw ParseError("label ids must be dense 0..K-1", i);
    }
    return out;
}

std::vector<LabelDescriptor> load_label_descriptors(const std::filesystem::path& path) {
    return parse_label_descriptors(io::read_text_file(path));
}

std::vector<LabelDescriptor> tonebank_labels() { return parse_label_descriptors(assets::tonebank_labels); }
std::vector<LabelDescriptor> debatemix_labels() { return parse_label_descriptors(assets::debatemix_labels); }

std::string compose_prompt(const LabelDescriptor& desc, const PromptRecord& rec) {
    const auto instruction = trim(desc.instruction);
    const auto question = trim(rec.question);
    if (instruction.empty()) return std::string(question);
    std::string out(instruction);
    out += "\n\n";
    out += question;
    return out;
}

LabeledActivationSet extract_activations(const ToyModel& model, std::span<const LabeledPrompt> prompts,
                                         std::size_t layer, std::size_t jobs) {
    if (layer >= model.n_layers()) {
        throw InvalidInput("layer " + std::to_string(layer) + " out of range for a " +
                           std::to_string(model.n_layers()) + "-layer model");
    }
    LabeledActivationSet set;
    set.d_model = model.d_model();
    set.entries.resize(prompts.size());
    parallel_for(prompts.size(), jobs, [&](std::size_t i) {
        const auto fwd = model.forward(prompts[i].tokens);
        const auto& a = fwd.layers[layer];
        const auto last = a.row(a.rows() - 1);
        auto& e = set.entries[i];
        e.activation.assign(last.begin(), last.end());
        e.label = prompts[i].label;
        e.layer = static_cast<std::uint32_t>(layer);
        e.source_id = i;
    });
    return set;
}

ContrastivePlan plan_contrastive_pairs(std::uint32_t label, std::span<const LabelDescriptor> labels,
                                       std::span<const PromptRecord> prompts, std::size_t n,
                                       std::uint64_t seed) {
    if (n == 0) throw InvalidInput("contrastive pairs: n must be >= 1");
    if (labels.size() < 2) throw InvalidInput("contrastive pairs need at least two labels");
    if (label >= labels.size()) throw InvalidLabel("contrastive pairs: unknown label");
    if (prompts.size() < n) {
        throw InvalidInput("contrastive pairs: " + std::to_string(n) + " pairs requested but only " +
                           std::to_string(prompts.size()) + " prompts available");
    }
    SeededRng rng(seed);
    const auto order = rng.permutation(prompts.size());
    ContrastivePlan plan;
    for (std::size_t i = 0; i < n; ++i) {
        auto neg = static_cast<std::uint32_t>(rng.uniform_index(labels.size() - 1));
        if (neg >= label) ++neg;
        const auto& rec = prompts[order[i]];
        plan.question_index.push_back(order[i]);
        plan.negative_label.push_back(neg);
        plan.positive_prompt.push_back(compose_prompt(labels[label], rec));
        plan.negative_prompt.push_back(compose_prompt(labels[neg], rec));
    }
    return plan;
}

ContrastivePairs build_contrastive_pairs(const ToyModel& model, std::size_t layer, std::uint32_t label,
                                         std::span<const LabelDescriptor> labels,
                                         std::span<const PromptRecord> prompts, std::size_t n,
                                         std::uint64_t seed, std::size_t max_new, std::size_t jobs) {
    if (layer >= model.n_layers()) throw InvalidInput("contrastive pairs: layer out of range");
    const auto plan = plan_contrastive_pairs(label, labels, prompts, n, seed);
    ContrastivePairs pairs;
    pairs.positive.resize(n);
    pairs.negative.resize(n);
    auto final_activation = [&](const std::string& text) {
        auto tokens = tokenize(text, model.vocab_size());
        // Keep the tail so the question (and the final position) survive.
        const std::size_t keep = kMaxContext - std::min(max_new, kMaxContext - 1);
        if (tokens.size() > keep) tokens.erase(tokens.begin(), tokens.end() - static_cast<std::ptrdiff_t>(keep));
        const auto gen = model.generate(tokens, max_new, {}, true);
        const auto& a = gen.per_layer_activations.at(layer);
        const auto last = a.row(a.rows() - 1);
        return std::vector<float>(last.begin(), last.end());
    };
    parallel_for(2 * n, jobs, [&](std::size_t j) {
        const std::size_t i = j / 2;
        if (j % 2 == 0) {
            pairs.positive[i] = final_activation(plan.positive_prompt[i]);
        } else {
            pairs.negative[i] = final_activation(plan.negative_prompt[i]);
        }
    });
    return pairs;
}

ContrastivePairs planted_contrastive_pairs(const LabeledActivationSet& set, std::uint32_t target,
                                           std::size_t n, std::uint64_t seed) {
    if (n == 0) throw InvalidInput("contrastive pairs: n must be >= 1");
    const std::size_t k = set.label_count();
    if (k < 2) throw InvalidInput("contrastive pairs need at least two labels");
    std::vector<std::vector<std::size_t>> by_label(k);
    for (std::size_t i = 0; i < set.size(); ++i) by_label[set.entries[i].label].push_back(i);
    if (target >= k || by_label[target].size() < n) {
        throw InvalidInput("contrastive pairs: fewer than n activations carry the target label");
    }
    SeededRng rng(seed);
    const auto pos_order = rng.permutation(by_label[target].size());
    ContrastivePairs pairs;
    for (std::size_t i = 0; i < n; ++i) {
        pairs.positive.push_back(set.entries[by_label[target][pos_order[i]]].activation);
        std::uint32_t neg;
        do {
            neg = static_cast<std::uint32_t>(rng.uniform_index(k - 1));
            if (neg >= target) ++neg;
        } while (by_label[neg].empty());
        const auto& pool = by_label[neg];
        pairs.negative.push_back(set.entries[pool[rng.uniform_index(pool.size())]].activation);
    }
    return pairs;
}

ContrastivePairs mirrored_contrastive_pairs(const LabeledActivationSet& set, std::uint32_t target,
                                            std::size_t n, std::uint64_t seed) {
    if (n == 0 || n % 2 != 0) throw InvalidInput("mirrored contrastive pairs: n must be even and >= 2");
    if (set.size() % 2 != 0) throw InvalidInput("mirrored contrastive pairs: set is not in couples");
    const std::size_t k = set.label_count();
    if (k < 2) throw InvalidInput("contrastive pairs need at least two labels");
    std::vector<std::vector<std::size_t>> couples(k);
    for (std::size_t c = 0; 2 * c < set.size(); ++c) {
        const auto& a = set.entries[2 * c];
        if (set.entries[2 * c + 1].label != a.label) {
            throw InvalidInput("mirrored contrastive pairs: couple " + std::to_string(c) + " mixes labels");
        }
        couples[a.label].push_back(c);
    }
    if (target >= k || couples[target].size() < n / 2) {
        throw InvalidInput("contrastive pairs: fewer than n activations carry the target label");
    }
    SeededRng rng(seed);
    const auto order = rng.permutation(couples[target].size());
    ContrastivePairs pairs;
    for (std::size_t i = 0; i < n / 2; ++i) {
        const std::size_t pos = couples[target][order[i]];
        std::uint32_t neg_label;
        do {
            neg_label = static_cast<std::uint32_t>(rng.uniform_index(k - 1));
            if (neg_label >= target) ++neg_label;
        } while (couples[neg_label].empty());
        const auto& pool = couples[neg_label];
        const std::size_t neg = pool[rng.uniform_index(pool.size())];
        for (std::size_t m = 0; m < 2; ++m) {
            pairs.positive.push_back(set.entries[2 * pos + m].activation);
            pairs.negative.push_back(set.entries[2 * neg + m].activation);
        }
    }
    return pairs;
}

std::vector<LabeledPrompt> planted_prompt_corpus(const ToyModel& model, std::size_t count,
                                                 std::size_t length, std::uint64_t seed, bool mirrored) {
    if (!model.has_planting()) throw InvalidInput("planted corpus: model has no attribute planting");
    if (length == 0 || length > kMaxContext) throw InvalidInput("planted corpus: bad prompt length");
    if (mirrored && count % 2 != 0) throw InvalidInput("planted corpus: mirrored count must be even");
    SeededRng rng(seed);
    std::vector<LabeledPrompt> out;
    out.reserve(count);
    while (out.size() < count) {
        auto p = random_prompt(rng, length, model.vocab_size());
        const auto f = model.forward(p);
        const auto label = model.planted_label(f.layers.back().row(length - 1));
        if (mirrored) {
            auto q = mirror_prompt(p, model.vocab_size());
            // Negation keeps an xor label but generally changes a linear one.
            const auto q_label = model.planted_label(model.forward(q).layers.back().row(length - 1));
            out.push_back({std::move(p), label});
            out.push_back({std::move(q), q_label});
        } else {
            out.push_back({std::move(p), label});
        }
    }
    return out;
}

Tensor2 synth_xor_directions(std::uint64_t seed, std::size_t d_model) {
    SeededRng rng(seed ^ 0x584f5244495253ULL);
    return random_orthonormal(rng, 2, d_model);
}

LabeledActivationSet synth_planted_set(const SynthConfig& cfg) {
    if (cfg.n_per_class == 0) throw InvalidInput("synth_planted_set: n_per_class must be >= 1");
    if (cfg.sigma < 0) throw InvalidInput("synth_planted_set: sigma must be >= 0");
    const std::size_t d = cfg.d_model;
    LabeledActivationSet set;
    set.d_model = d;
    SeededRng rng(cfg.seed);

    auto push = [&](std::vector<float> centre, std::uint32_t label) {
        for (auto& x : centre) x += static_cast<float>(cfg.sigma * rng.gaussian());
        set.entries.push_back({std::move(centre), label, 0, set.entries.size()});
    };

    if (cfg.kind == SynthKind::linear) {
        if (cfg.num_classes < 2 || (cfg.num_classes + 1) / 2 > d) {
            throw InvalidInput("synth_planted_set: need 2 <= num_classes <= 2 * d_model");
        }
        if (d < 1) throw InvalidInput("synth_planted_set: d_model must be >= 1");
        // Interleave classes so every prefix of the set is roughly balanced.
        for (std::size_t i = 0; i < cfg.n_per_class; ++i) {
            for (std::size_t c = 0; c < cfg.num_classes; ++c) {
                std::vector<float> centre(d, 0.0f);
                centre[c / 2] = (c % 2 == 0 ? 1.0f : -1.0f) * cfg.mu;
                push(std::move(centre), static_cast<std::uint32_t>(c));
            }
        }
        return set;
    }

    if (d < 2) throw InvalidInput("synth_planted_set: xor kind needs d_model >= 2");
    const Tensor2 uv = synth_xor_directions(cfg.seed, d);
    for (std::size_t i = 0; i < cfg.n_per_class; ++i) {
        // Alternate the two quadrants of each class: (su, sv) with su*sv = +-1.
        const float su = (i % 2 == 0) ? 1.0f : -1.0f;
        for (std::uint32_t label = 0; label < 2; ++label) {
            const float sv = label == 1 ? su : -su;
            std::vector<float> centre(d);
            for (std::size_t j = 0; j < d; ++j) centre[j] = su * uv(0, j) + sv * uv(1, j);
            push(std::move(centre), label);
        }
    }
    return set;
}

std::vector<std::uint8_t> encode_activations(const LabeledActivationSet& set) {
    io::ByteWriter w;
    w.magic("KSAV");
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(set.d_model));
    w.u64(set.entries.size());
    for (const auto& e : set.entries) {
        if (e.activation.size() != set.d_model) throw ShapeError("KSAV: entry width differs from d_model");
        w.u32(e.label);
        w.u32(e.layer);
        w.f32s(e.activation);
    }
    return w.bytes();
}

LabeledActivationSet decode_activations(std::span<const std::uint8_t> bytes) {
    io::ByteReader r(bytes);
    r.expect_magic("KSAV");
    const auto version = r.u32();
    if (version != 1) throw FormatError("KSAV: unsupported version " + std::to_string(version));
    LabeledActivationSet set;
    set.d_model = r.u32();
    const auto count = r.u64();
    const std::size_t entry_bytes = 8 + 4 * set.d_model;
    if (count > (bytes.size() - r.offset()) / entry_bytes) throw FormatError("KSAV: truncated");
    set.entries.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        auto& e = set.entries[i];
        e.label = r.u32();
        e.layer = r.u32();
        e.activation.resize(set.d_model);
        r.f32s(e.activation);
        e.source_id = i;
    }
    r.expect_end();
    return set;
}

void save_activations(const LabeledActivationSet& set, const std::filesystem::path& path) {
    io::write_file(path, encode_activations(set));
}

LabeledActivationSet load_activations(const std::filesystem::path& path) {
    return decode_activations(io::read_file(path));
}

DataSplit split_train_heldout(const LabeledActivationSet& set, std::uint64_t seed, double train_fraction) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw InvalidInput("split: train fraction must lie in (0, 1)");
    }
    SeededRng rng(seed);
    const auto order = rng.permutation(set.size());
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(set.size())));
    DataSplit split;
    split.train.d_model = split.heldout.d_model = set.d_model;
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < n_train ? split.train : split.heldout).entries.push_back(set.entries[order[i]]);
    }
    return split;
}

}  // namespace ksteer
