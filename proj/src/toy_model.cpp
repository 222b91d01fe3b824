#include "ksteer/toy_model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <memory>

#include "ksteer/binary_io.hpp"
#include "ksteer/error.hpp"
#include "ksteer/kernels.hpp"
#include "ksteer/numeric.hpp"
#include "ksteer/rng.hpp"

namespace ksteer {

void ToyModelConfig::validate() const {
    if (n_layers < 2) throw InvalidInput("toy model needs n_layers >= 2");
    if (d_model < 4) throw InvalidInput("toy model needs d_model >= 4");
    if (vocab_size < 2) throw InvalidInput("toy model needs vocab_size >= 2");
    if (!(decode_range >= 0.0f)) throw InvalidInput("toy model needs decode_range >= 0");
    if (planting) {
        if (planting->kind == PlantingKind::xor_pair && planting->num_classes != 2) {
            throw InvalidInput("xor planting defines exactly 2 classes");
        }
        if (planting->kind == PlantingKind::linear &&
            (planting->num_classes < 2 || planting->num_classes > d_model)) {
            throw InvalidInput("linear planting needs 2 <= classes <= d_model");
        }
    }
}

std::vector<HookPoint> hooks_for(const Intervention& intervention) {
    auto shared = std::make_shared<const Intervention>(intervention);
    std::vector<HookPoint> hooks;
    for (std::size_t layer : intervention.spec().layers) {
        hooks.push_back({layer, [shared](const ActivationMatrix& a, InterventionNotes& notes) {
                             return shared->apply(a, notes);
                         }});
    }
    return hooks;
}

namespace {

constexpr std::uint32_t kWeightsVersion = 1;

// Fills rows in (2k, 2k+1) pairs with v and -v.
Tensor2 paired_rows(SeededRng& rng, std::size_t rows, std::size_t cols, float sigma) {
    Tensor2 out(rows, cols);
    for (std::size_t r = 0; r < rows; r += 2) {
        for (std::size_t c = 0; c < cols; ++c) {
            const auto x = static_cast<float>(rng.gaussian() * sigma);
            out(r, c) = x;
            if (r + 1 < rows) out(r + 1, c) = -x;
        }
    }
    return out;
}

std::size_t block_width(const ToyModelConfig& cfg) {
    return cfg.mlp_width ? cfg.mlp_width : 2 * cfg.d_model;
}

std::size_t planted_rows(const ToyModelConfig& cfg) {
    if (!cfg.planting) return 0;
    return cfg.planting->kind == PlantingKind::xor_pair ? 2 : cfg.planting->num_classes;
}

constexpr std::size_t kPlantingProbes = 256;
constexpr std::size_t kPlantingPromptLength = 8;

}  // namespace

ToyModel::ToyModel(const ToyModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t d = cfg_.d_model;
    const std::size_t width = block_width(cfg_);
    SeededRng rng(cfg_.seed);
    embedding_ = paired_rows(rng, cfg_.vocab_size, d, 1.0f);
    unembedding_ = paired_rows(rng, cfg_.vocab_size, d, 1.0f / std::sqrt(static_cast<float>(d)));
    position_signs_ = Tensor2(kMaxContext, d);
    for (float& s : position_signs_.values()) s = (rng.next_u64() & 1U) ? 1.0f : -1.0f;
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
        Block b;
        b.w_in = gaussian_matrix(rng, width, d, 1.0f / std::sqrt(static_cast<float>(d)));
        b.w_out = gaussian_matrix(rng, d, width,
                                  cfg_.residual_scale / std::sqrt(static_cast<float>(width)));
        blocks_.push_back(std::move(b));
    }
    SeededRng range_rng = rng.fork(0x72616E6765ULL);
    typical_norm_ = measure_typical_norm(range_rng);
    SeededRng planting_rng = rng.fork(0x706C616E74ULL);
    planted_ = random_orthonormal(planting_rng, planted_rows(cfg_), d);
    if (cfg_.planting && cfg_.planting->kind == PlantingKind::linear) {
        // Scale each direction by the inverse RMS of its projection over random
        // prompts so no class wins the argmax merely through larger variance.
        std::vector<double> power(planted_.rows(), 0.0);
        for (std::size_t i = 0; i < kPlantingProbes; ++i) {
            const auto prompt = random_prompt(planting_rng, kPlantingPromptLength, cfg_.vocab_size);
            const auto f = forward(prompt);
            const auto x = f.layers.back().row(prompt.size() - 1);
            for (std::size_t r = 0; r < planted_.rows(); ++r) {
                const double p = dot(x, planted_.row(r));
                power[r] += p * p;
            }
        }
        for (std::size_t r = 0; r < planted_.rows(); ++r) {
            const double rms = std::sqrt(power[r] / kPlantingProbes);
            const auto inv = static_cast<float>(rms > 0.0 ? 1.0 / rms : 1.0);
            for (float& v : planted_.row(r)) v *= inv;
        }
    }
}

float ToyModel::measure_typical_norm(SeededRng& rng) const {
    double power = 0.0;
    for (std::size_t i = 0; i < kPlantingProbes; ++i) {
        const auto prompt = random_prompt(rng, kPlantingPromptLength, cfg_.vocab_size);
        const auto f = forward(prompt);
        const auto x = f.layers.back().row(prompt.size() - 1);
        for (const float v : x) power += static_cast<double>(v) * v;
    }
    return static_cast<float>(std::sqrt(power / kPlantingProbes));
}

float ToyModel::norm_limit() const noexcept {
    if (cfg_.decode_range == 0.0f) return std::numeric_limits<float>::infinity();
    return cfg_.decode_range * typical_norm_;
}

ToyModel ToyModel::zeros(const ToyModelConfig& cfg) {
    ToyModel m(cfg);
    for (Tensor2* t : {&m.embedding_, &m.unembedding_}) {
        std::fill(t->values().begin(), t->values().end(), 0.0f);
    }
    for (auto& b : m.blocks_) {
        std::fill(b.w_in.values().begin(), b.w_in.values().end(), 0.0f);
        std::fill(b.w_out.values().begin(), b.w_out.values().end(), 0.0f);
    }
    return m;
}

void ToyModel::check_tokens(std::span<const std::uint32_t> tokens) const {
    if (tokens.empty()) throw InvalidInput("toy model needs at least one token");
    if (tokens.size() > kMaxContext) {
        throw InvalidInput("sequence of " + std::to_string(tokens.size()) +
                           " tokens exceeds context " + std::to_string(kMaxContext));
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] >= cfg_.vocab_size && tokens[i] != kUnknownToken) {
            throw InvalidInput("token id " + std::to_string(tokens[i]) + " at position " +
                               std::to_string(i) + " >= vocab size " +
                               std::to_string(cfg_.vocab_size));
        }
    }
}

ForwardResult ToyModel::forward(std::span<const std::uint32_t> tokens,
                                std::span<const HookPoint> hooks) const {
    check_tokens(tokens);
    for (const auto& h : hooks) {
        if (h.layer >= cfg_.n_layers) {
            throw InvalidInput("hook layer " + std::to_string(h.layer) + " >= n_layers " +
                               std::to_string(cfg_.n_layers));
        }
    }
    const std::size_t d = cfg_.d_model;
    const std::size_t n = tokens.size();
    const auto& k = kernels::active();

    ActivationMatrix stream(n, d);
    std::vector<float> prefix(d, 0.0f);
    const std::vector<float> unknown(d, 0.0f);
    for (std::size_t t = 0; t < n; ++t) {
        const std::span<const float> e =
            tokens[t] == kUnknownToken ? std::span<const float>(unknown) : embedding_.row(tokens[t]);
        for (std::size_t j = 0; j < d; ++j) prefix[j] += e[j];
        const float inv = 1.0f / static_cast<float>(t + 1);
        const auto signs = position_signs_.row(t);
        auto row = stream.row(t);
        for (std::size_t j = 0; j < d; ++j) row[j] = signs[j] * (e[j] + prefix[j] * inv);
    }

    ForwardResult result;
    result.layers.reserve(cfg_.n_layers);
    std::vector<float> hidden;
    std::vector<float> update(d);
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
        const Block& b = blocks_[l];
        hidden.resize(b.w_in.rows());
        for (std::size_t t = 0; t < n; ++t) {
            auto row = stream.row(t);
            k.gemv(b.w_in.data(), b.w_in.rows(), b.w_in.cols(), row.data(), nullptr, hidden.data());
            for (float& h : hidden) h = std::tanh(h);
            k.gemv(b.w_out.data(), b.w_out.rows(), b.w_out.cols(), hidden.data(), nullptr,
                   update.data());
            for (std::size_t j = 0; j < d; ++j) row[j] += update[j];
        }
        for (const auto& h : hooks) {
            if (h.layer != l) continue;
            ActivationMatrix steered = h.transform(stream, result.notes);
            if (steered.rows() != stream.rows() || steered.cols() != stream.cols()) {
                throw ContractViolation("hook at layer " + std::to_string(l) + " changed shape " +
                                        std::to_string(stream.rows()) + "x" +
                                        std::to_string(stream.cols()) + " to " +
                                        std::to_string(steered.rows()) + "x" +
                                        std::to_string(steered.cols()));
            }
            if (!steered.all_finite()) {
                throw ContractViolation("hook at layer " + std::to_string(l) +
                                        " produced non-finite activations");
            }
            stream = std::move(steered);
        }
        result.layers.push_back(stream);
    }

    result.next_logits.resize(cfg_.vocab_size);
    k.gemv(unembedding_.data(), unembedding_.rows(), unembedding_.cols(), stream.row(n - 1).data(),
           nullptr, result.next_logits.data());
    return result;
}

GenerationResult ToyModel::generate(std::span<const std::uint32_t> prompt, std::size_t max_new,
                                    std::span<const HookPoint> hooks, bool capture) const {
    check_tokens(prompt);
    GenerationResult out;
    out.tokens.assign(prompt.begin(), prompt.end());
    out.prompt_length = prompt.size();
    for (std::size_t i = 0; i < max_new && out.tokens.size() < kMaxContext; ++i) {
        ForwardResult f = forward(out.tokens, hooks);
        out.notes.degenerate_rows += f.notes.degenerate_rows;
        if (l2_norm(f.layers.back().row(out.tokens.size() - 1)) > norm_limit()) {
            out.tokens.push_back(kUnknownToken);
            continue;
        }
        const auto best = std::max_element(f.next_logits.begin(), f.next_logits.end());
        out.tokens.push_back(static_cast<std::uint32_t>(best - f.next_logits.begin()));
    }
    if (capture) {
        ForwardResult f = forward(out.tokens, hooks);
        out.notes.degenerate_rows += f.notes.degenerate_rows;
        for (std::size_t l = 0; l < f.layers.size(); ++l) {
            out.per_layer_activations.emplace(l, std::move(f.layers[l]));
        }
    }
    return out;
}

std::size_t ToyModel::planted_classes() const {
    if (!cfg_.planting) throw InvalidInput("toy model has no attribute planting");
    return cfg_.planting->num_classes;
}

std::uint32_t ToyModel::planted_label(std::span<const float> x) const {
    if (!cfg_.planting) throw InvalidInput("toy model has no attribute planting");
    if (x.size() != cfg_.d_model) throw ShapeError("planted_label: width mismatch");
    if (cfg_.planting->kind == PlantingKind::xor_pair) {
        const float s = dot(x, planted_.row(0));
        const float t = dot(x, planted_.row(1));
        return ((s > 0.0f) == (t > 0.0f)) ? 1U : 0U;
    }
    std::uint32_t best = 0;
    float best_score = dot(x, planted_.row(0));
    for (std::size_t c = 1; c < cfg_.planting->num_classes; ++c) {
        const float score = dot(x, planted_.row(c));
        if (score > best_score) {
            best_score = score;
            best = static_cast<std::uint32_t>(c);
        }
    }
    return best;
}

std::vector<std::uint8_t> ToyModel::encode_weights() const {
    io::ByteWriter w;
    w.magic("KSTM");
    w.u32(kWeightsVersion);
    w.u32(static_cast<std::uint32_t>(cfg_.vocab_size));
    w.u32(static_cast<std::uint32_t>(cfg_.d_model));
    w.u32(static_cast<std::uint32_t>(cfg_.n_layers));
    w.u32(static_cast<std::uint32_t>(cfg_.mlp_width));
    w.u64(cfg_.seed);
    w.u8(cfg_.planting ? static_cast<std::uint8_t>(cfg_.planting->kind) : 0);
    w.u32(cfg_.planting ? static_cast<std::uint32_t>(cfg_.planting->num_classes) : 0);
    w.f32(cfg_.residual_scale);
    w.f32(cfg_.decode_range);
    w.f32(typical_norm_);
    w.tensor(embedding_);
    w.tensor(unembedding_);
    w.tensor(position_signs_);
    w.tensor(planted_);
    for (const auto& b : blocks_) {
        w.tensor(b.w_in);
        w.tensor(b.w_out);
    }
    return w.bytes();
}

ToyModel ToyModel::decode_weights(std::span<const std::uint8_t> bytes) {
    io::ByteReader r(bytes);
    r.expect_magic("KSTM");
    if (const auto version = r.u32(); version != kWeightsVersion) {
        throw FormatError("unsupported KSTM version " + std::to_string(version));
    }
    ToyModel m;
    m.cfg_.vocab_size = r.u32();
    m.cfg_.d_model = r.u32();
    m.cfg_.n_layers = r.u32();
    m.cfg_.mlp_width = r.u32();
    m.cfg_.seed = r.u64();
    const std::uint8_t kind = r.u8();
    const std::uint32_t classes = r.u32();
    if (kind > static_cast<std::uint8_t>(PlantingKind::xor_pair)) {
        throw FormatError("unknown planting kind " + std::to_string(kind));
    }
    if (kind != 0) m.cfg_.planting = AttributePlanting{static_cast<PlantingKind>(kind), classes};
    m.cfg_.residual_scale = r.f32();
    m.cfg_.decode_range = r.f32();
    m.typical_norm_ = r.f32();
    try {
        m.cfg_.validate();
    } catch (const InvalidInput& e) {
        throw FormatError(std::string("KSTM header invalid: ") + e.what());
    }
    const std::size_t d = m.cfg_.d_model;
    const std::size_t width = block_width(m.cfg_);
    auto expect_shape = [](const Tensor2& t, std::size_t rows, std::size_t cols, const char* what) {
        if (t.rows() != rows || t.cols() != cols) {
            throw FormatError(std::string("KSTM tensor ") + what + " has wrong shape");
        }
    };
    m.embedding_ = r.tensor();
    expect_shape(m.embedding_, m.cfg_.vocab_size, d, "embedding");
    m.unembedding_ = r.tensor();
    expect_shape(m.unembedding_, m.cfg_.vocab_size, d, "unembedding");
    m.position_signs_ = r.tensor();
    expect_shape(m.position_signs_, kMaxContext, d, "position signs");
    m.planted_ = r.tensor();
    expect_shape(m.planted_, planted_rows(m.cfg_), d, "planted directions");
    for (std::size_t l = 0; l < m.cfg_.n_layers; ++l) {
        Block b;
        b.w_in = r.tensor();
        expect_shape(b.w_in, width, d, "block input");
        b.w_out = r.tensor();
        expect_shape(b.w_out, d, width, "block output");
        m.blocks_.push_back(std::move(b));
    }
    r.expect_end();
    return m;
}

void ToyModel::save_weights(const std::filesystem::path& path) const {
    io::write_file(path, encode_weights());
}

ToyModel ToyModel::load_weights(const std::filesystem::path& path) {
    return decode_weights(io::read_file(path));
}

std::string render_tokens(std::span<const std::uint32_t> tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        if (tokens[i] == kUnknownToken) {
            out += "<unk>";
            continue;
        }
        out += 't';
        out += std::to_string(tokens[i]);
    }
    return out;
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= static_cast<std::uint64_t>(std::tolower(c));
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::optional<std::uint32_t> token_literal(std::string_view word, std::size_t vocab_size) {
    if (word.size() < 2 || word[0] != 't' || word.size() > 11) return std::nullopt;
    std::uint64_t id = 0;
    for (char c : word.substr(1)) {
        if (c < '0' || c > '9') return std::nullopt;
        id = id * 10 + static_cast<std::uint64_t>(c - '0');
    }
    if (word.size() > 2 && word[1] == '0') return std::nullopt;
    if (id >= vocab_size) return std::nullopt;
    return static_cast<std::uint32_t>(id);
}

}  // namespace

std::vector<std::uint32_t> tokenize(std::string_view text, std::size_t vocab_size) {
    if (vocab_size == 0) throw InvalidInput("tokenize: empty vocabulary");
    std::vector<std::uint32_t> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) {
            const auto word = text.substr(i, j - i);
            if (word == "<unk>") {
                out.push_back(kUnknownToken);
            } else if (auto lit = token_literal(word, vocab_size)) {
                out.push_back(*lit);
            } else {
                out.push_back(static_cast<std::uint32_t>(fnv1a(word) % vocab_size));
            }
        }
        i = j;
    }
    return out;
}

std::vector<std::uint32_t> mirror_prompt(std::span<const std::uint32_t> tokens, std::size_t vocab_size) {
    std::vector<std::uint32_t> out(tokens.begin(), tokens.end());
    for (auto& t : out) {
        if (t != kUnknownToken && (t ^ 1U) < vocab_size) t ^= 1U;
    }
    return out;
}

std::vector<std::uint32_t> random_prompt(SeededRng& rng, std::size_t length, std::size_t vocab_size) {
    std::vector<std::uint32_t> out(length);
    for (auto& t : out) t = static_cast<std::uint32_t>(rng.uniform_index(vocab_size));
    return out;
}

}  // namespace ksteer
