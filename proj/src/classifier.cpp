#include "ksteer/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "ksteer/binary_io.hpp"
#include "ksteer/error.hpp"
#include "ksteer/kernels.hpp"
#include "ksteer/numeric.hpp"
#include "ksteer/rng.hpp"

namespace ksteer {

std::size_t LabeledActivationSet::label_count() const {
    std::size_t k = 0;
    for (const auto& e : entries) k = std::max<std::size_t>(k, e.label + 1);
    return k;
}

void LossSpec::validate(std::size_t num_classes) const {
    if (targets.empty() && avoids.empty()) throw InvalidInput("loss spec has no target or avoid classes");
    std::set<std::size_t> seen;
    for (const auto* group : {&targets, &avoids}) {
        for (std::size_t c : *group) {
            if (c >= num_classes) {
                throw InvalidInput("class " + std::to_string(c) + " out of range for " +
                                   std::to_string(num_classes) + " classes");
            }
            if (!seen.insert(c).second) {
                throw InvalidInput("class " + std::to_string(c) + " listed twice in loss spec");
            }
        }
    }
}

void TrainConfig::validate() const {
    if (epochs < 1) throw InvalidInput("epochs must be >= 1");
    if (batch_size < 1) throw InvalidInput("batch_size must be >= 1");
    if (!(learning_rate > 0.0f)) throw InvalidInput("learning_rate must be > 0");
}

namespace {

void check_layer(const DenseLayer& l, std::size_t in, const char* name) {
    if (l.weight.cols() != in || l.bias.size() != l.weight.rows()) {
        throw ShapeError(std::string("inconsistent classifier layer ") + name);
    }
    if (!l.weight.all_finite() ||
        !std::all_of(l.bias.begin(), l.bias.end(), [](float x) { return std::isfinite(x); })) {
        throw InvalidInput(std::string("non-finite parameters in layer ") + name);
    }
}

// Per-position forward activations kept for the backward pass.
struct ForwardCache {
    std::vector<float> h1;
    std::vector<float> h2;
    std::vector<float> logits;
};

void forward_row(const std::array<DenseLayer, 3>& layers, const float* x, ForwardCache& c) {
    const auto& k = kernels::active();
    const auto& [l1, l2, l3] = layers;
    c.h1.resize(l1.weight.rows());
    c.h2.resize(l2.weight.rows());
    c.logits.resize(l3.weight.rows());
    k.gemv(l1.weight.data(), l1.weight.rows(), l1.weight.cols(), x, l1.bias.data(), c.h1.data());
    k.relu(c.h1.size(), c.h1.data());
    k.gemv(l2.weight.data(), l2.weight.rows(), l2.weight.cols(), c.h1.data(), l2.bias.data(),
           c.h2.data());
    k.relu(c.h2.size(), c.h2.data());
    k.gemv(l3.weight.data(), l3.weight.rows(), l3.weight.cols(), c.h2.data(), l3.bias.data(),
           c.logits.data());
}

// Backpropagates dlogits through one position with double accumulation and
// writes dx rounded to float. Coordinates whose gradient cancels to ~1e-5
// lose three digits when summed in float.
void backward_row(const std::array<DenseLayer, 3>& layers, const ForwardCache& c,
                       const double* dlogits, std::vector<double>& dh2, std::vector<double>& dh1,
                       std::vector<double>& dx, float* out) {
    const auto& k = kernels::active();
    const auto& [l1, l2, l3] = layers;
    dh2.resize(l2.weight.rows());
    dh1.resize(l1.weight.rows());
    dx.resize(l1.weight.cols());
    k.gemv_t_wide(l3.weight.data(), l3.weight.rows(), l3.weight.cols(), dlogits, dh2.data());
    for (std::size_t i = 0; i < dh2.size(); ++i) dh2[i] = c.h2[i] > 0.0f ? dh2[i] : 0.0;
    k.gemv_t_wide(l2.weight.data(), l2.weight.rows(), l2.weight.cols(), dh2.data(), dh1.data());
    for (std::size_t i = 0; i < dh1.size(); ++i) dh1[i] = c.h1[i] > 0.0f ? dh1[i] : 0.0;
    k.gemv_t_wide(l1.weight.data(), l1.weight.rows(), l1.weight.cols(), dh1.data(), dx.data());
    for (std::size_t i = 0; i < dx.size(); ++i) out[i] = static_cast<float>(dx[i]);
}

DenseLayer gaussian_layer(SeededRng& rng, std::size_t out, std::size_t in) {
    const float sigma = 1.0f / std::sqrt(static_cast<float>(in));
    return {gaussian_matrix(rng, out, in, sigma), std::vector<float>(out, 0.0f)};
}

}  // namespace

MlpClassifier::MlpClassifier(DenseLayer l1, DenseLayer l2, DenseLayer l3)
    : layers_{std::move(l1), std::move(l2), std::move(l3)} {
    if (d_model() == 0) throw ShapeError("classifier input width must be >= 1");
    check_layer(layers_[0], layers_[0].weight.cols(), "1");
    check_layer(layers_[1], layers_[0].weight.rows(), "2");
    check_layer(layers_[2], layers_[1].weight.rows(), "3");
    if (num_classes() < 2) throw InvalidInput("classifier needs at least 2 classes");
}

MlpClassifier MlpClassifier::initialized(std::size_t d_model, std::size_t num_classes,
                                         std::uint64_t seed, std::size_t hidden) {
    SeededRng rng(seed);
    auto l1 = gaussian_layer(rng, hidden, d_model);
    auto l2 = gaussian_layer(rng, hidden, hidden);
    auto l3 = gaussian_layer(rng, num_classes, hidden);
    return {std::move(l1), std::move(l2), std::move(l3)};
}

MlpClassifier MlpClassifier::zeros(std::size_t d_model, std::size_t num_classes,
                                   std::size_t hidden) {
    return {DenseLayer{Tensor2(hidden, d_model), std::vector<float>(hidden, 0.0f)},
            DenseLayer{Tensor2(hidden, hidden), std::vector<float>(hidden, 0.0f)},
            DenseLayer{Tensor2(num_classes, hidden), std::vector<float>(num_classes, 0.0f)}};
}

void MlpClassifier::check_input(const ActivationMatrix& a) const {
    if (a.cols() != d_model()) {
        throw ShapeError("activation width " + std::to_string(a.cols()) +
                         " != classifier d_model " + std::to_string(d_model()));
    }
}

Tensor2 MlpClassifier::forward_logits(const ActivationMatrix& a) const {
    check_input(a);
    Tensor2 out(a.rows(), num_classes());
    ForwardCache cache;
    for (std::size_t r = 0; r < a.rows(); ++r) {
        forward_row(layers_, a.row(r).data(), cache);
        std::copy(cache.logits.begin(), cache.logits.end(), out.row(r).begin());
    }
    return out;
}

Tensor2 MlpClassifier::predict_probs(const ActivationMatrix& a) const {
    Tensor2 logits = forward_logits(a);
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const auto p = softmax(logits.row(r));
        std::copy(p.begin(), p.end(), logits.row(r).begin());
    }
    return logits;
}

std::size_t MlpClassifier::predict(std::span<const float> activation) const {
    if (activation.size() != d_model()) throw ShapeError("predict: width mismatch");
    ForwardCache cache;
    forward_row(layers_, activation.data(), cache);
    return static_cast<std::size_t>(
        std::max_element(cache.logits.begin(), cache.logits.end()) - cache.logits.begin());
}

float steering_loss(const Tensor2& logits, const LossSpec& spec) {
    spec.validate(logits.cols());
    const auto positions = static_cast<float>(logits.rows());
    float loss = 0.0f;
    if (!spec.targets.empty()) {
        float sum = 0.0f;
        for (std::size_t r = 0; r < logits.rows(); ++r) {
            for (std::size_t c : spec.targets) sum += logits(r, c);
        }
        loss -= sum / (positions * static_cast<float>(spec.targets.size()));
    }
    if (!spec.avoids.empty()) {
        float sum = 0.0f;
        for (std::size_t r = 0; r < logits.rows(); ++r) {
            for (std::size_t c : spec.avoids) sum += logits(r, c);
        }
        loss += sum / (positions * static_cast<float>(spec.avoids.size()));
    }
    return loss;
}

LossAndGradient loss_and_gradient(const MlpClassifier& clf, const ActivationMatrix& a,
                                  const LossSpec& spec) {
    if (a.cols() != clf.d_model()) {
        throw ShapeError("activation width " + std::to_string(a.cols()) +
                         " != classifier d_model " + std::to_string(clf.d_model()));
    }
    spec.validate(clf.num_classes());
    if (a.rows() == 0) throw ShapeError("activation has no positions");

    // dL/dlogits is the same for every position
    const auto positions = static_cast<double>(a.rows());
    std::vector<double> dlogits(clf.num_classes(), 0.0);
    for (std::size_t c : spec.targets) {
        dlogits[c] = -1.0 / (positions * static_cast<double>(spec.targets.size()));
    }
    for (std::size_t c : spec.avoids) {
        dlogits[c] = 1.0 / (positions * static_cast<double>(spec.avoids.size()));
    }

    Tensor2 logits(a.rows(), clf.num_classes());
    Tensor2 grad(a.rows(), a.cols());
    ForwardCache cache;
    std::vector<double> dh1, dh2, dx;
    for (std::size_t r = 0; r < a.rows(); ++r) {
        forward_row(clf.layers(), a.row(r).data(), cache);
        std::copy(cache.logits.begin(), cache.logits.end(), logits.row(r).begin());
        backward_row(clf.layers(), cache, dlogits.data(), dh2, dh1, dx, grad.row(r).data());
    }
    return {steering_loss(logits, spec), std::move(grad)};
}

Tensor2 input_gradient(const MlpClassifier& clf, const ActivationMatrix& a, const LossSpec& spec) {
    return loss_and_gradient(clf, a, spec).gradient;
}

namespace {

struct Moments {
    std::vector<float> m;
    std::vector<float> v;
    explicit Moments(std::size_t n) : m(n, 0.0f), v(n, 0.0f) {}
};

struct LayerGrad {
    Tensor2 weight;
    std::vector<float> bias;
};

}  // namespace

TrainResult train(MlpClassifier clf, const LabeledActivationSet& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw InvalidInput("training set is empty");
    if (data.d_model != clf.d_model()) throw ShapeError("training set width != classifier d_model");
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& e = data.entries[i];
        if (e.label >= clf.num_classes()) {
            throw InvalidLabel("label " + std::to_string(e.label) + " of entry " + std::to_string(i) +
                               " >= num_classes " + std::to_string(clf.num_classes()));
        }
        if (e.activation.size() != clf.d_model()) throw ShapeError("entry width mismatch");
    }

    const auto& k = kernels::active();
    auto& layers = clf.layers();
    std::array<LayerGrad, 3> grads;
    std::vector<Moments> weight_moments;
    std::vector<Moments> bias_moments;
    for (std::size_t l = 0; l < 3; ++l) {
        grads[l] = {Tensor2(layers[l].weight.rows(), layers[l].weight.cols()),
                    std::vector<float>(layers[l].bias.size())};
        weight_moments.emplace_back(layers[l].weight.size());
        bias_moments.emplace_back(layers[l].bias.size());
    }

    SeededRng rng(cfg.seed);
    ForwardCache cache;
    std::vector<float> dlogits(clf.num_classes());
    std::vector<float> dh1;
    std::vector<float> dh2;
    std::vector<float> dx(clf.d_model());
    std::vector<float> history;
    history.reserve(cfg.epochs);
    std::uint64_t step = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = rng.permutation(data.size());
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const auto inv_batch = 1.0f / static_cast<float>(end - start);
            for (auto& g : grads) {
                std::fill(g.weight.values().begin(), g.weight.values().end(), 0.0f);
                std::fill(g.bias.begin(), g.bias.end(), 0.0f);
            }
            for (std::size_t b = start; b < end; ++b) {
                const auto& entry = data.entries[order[b]];
                const float* x = entry.activation.data();
                forward_row(layers, x, cache);
                const auto probs = softmax(cache.logits);
                const float peak = *std::max_element(cache.logits.begin(), cache.logits.end());
                float sum_exp = 0.0f;
                for (float z : cache.logits) sum_exp += std::exp(z - peak);
                epoch_loss += static_cast<double>(peak + std::log(sum_exp) - cache.logits[entry.label]);
                for (std::size_t c = 0; c < dlogits.size(); ++c) {
                    const float target = c == entry.label ? 1.0f : 0.0f;
                    dlogits[c] = (probs[c] - target) * inv_batch;
                }
                // layer 3
                k.rank1(grads[2].weight.data(), grads[2].weight.rows(), grads[2].weight.cols(),
                        dlogits.data(), cache.h2.data());
                k.axpy(dlogits.size(), 1.0f, dlogits.data(), grads[2].bias.data());
                dh2.resize(cache.h2.size());
                k.gemv_t(layers[2].weight.data(), layers[2].weight.rows(), layers[2].weight.cols(),
                         dlogits.data(), dh2.data());
                k.relu_mask(dh2.size(), cache.h2.data(), dh2.data());
                // layer 2
                k.rank1(grads[1].weight.data(), grads[1].weight.rows(), grads[1].weight.cols(),
                        dh2.data(), cache.h1.data());
                k.axpy(dh2.size(), 1.0f, dh2.data(), grads[1].bias.data());
                dh1.resize(cache.h1.size());
                k.gemv_t(layers[1].weight.data(), layers[1].weight.rows(), layers[1].weight.cols(),
                         dh2.data(), dh1.data());
                k.relu_mask(dh1.size(), cache.h1.data(), dh1.data());
                // layer 1
                k.rank1(grads[0].weight.data(), grads[0].weight.rows(), grads[0].weight.cols(),
                        dh1.data(), x);
                k.axpy(dh1.size(), 1.0f, dh1.data(), grads[0].bias.data());
            }

            ++step;
            const double c1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(step));
            const double c2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(step));
            const kernels::AdamStep adam{
                static_cast<float>(cfg.learning_rate / c1),
                cfg.beta1,
                cfg.beta2,
                1.0f - cfg.beta1,
                1.0f - cfg.beta2,
                static_cast<float>(std::sqrt(c2)),
                cfg.epsilon,
            };
            for (std::size_t l = 0; l < 3; ++l) {
                k.adam(layers[l].weight.size(), layers[l].weight.data(), grads[l].weight.data(),
                       weight_moments[l].m.data(), weight_moments[l].v.data(), adam);
                k.adam(layers[l].bias.size(), layers[l].bias.data(), grads[l].bias.data(),
                       bias_moments[l].m.data(), bias_moments[l].v.data(), adam);
            }
        }
        history.push_back(static_cast<float>(epoch_loss / static_cast<double>(data.size())));
    }
    return {std::move(clf), std::move(history)};
}

double accuracy(const MlpClassifier& clf, const LabeledActivationSet& data) {
    if (data.empty()) return 0.0;
    std::size_t correct = 0;
    for (const auto& e : data.entries) {
        if (clf.predict(e.activation) == e.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {
constexpr std::uint32_t kCheckpointVersion = 1;
}

std::vector<std::uint8_t> encode_classifier(const MlpClassifier& clf) {
    io::ByteWriter w;
    w.magic("KSCL");
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(clf.d_model()));
    w.u32(static_cast<std::uint32_t>(clf.num_classes()));
    for (const auto& layer : clf.layers()) {
        w.tensor(layer.weight);
        w.u32(static_cast<std::uint32_t>(layer.bias.size()));
        w.u32(1);
        w.f32s(layer.bias);
    }
    return w.bytes();
}

MlpClassifier decode_classifier(std::span<const std::uint8_t> bytes) {
    io::ByteReader r(bytes);
    r.expect_magic("KSCL");
    if (const auto version = r.u32(); version != kCheckpointVersion) {
        throw FormatError("unsupported KSCL version " + std::to_string(version));
    }
    const std::uint32_t d_model = r.u32();
    const std::uint32_t num_classes = r.u32();
    std::array<DenseLayer, 3> layers;
    for (auto& layer : layers) {
        layer.weight = r.tensor();
        Tensor2 bias = r.tensor();
        if (bias.cols() != 1) throw FormatError("KSCL bias tensor must be a column");
        layer.bias.assign(bias.values().begin(), bias.values().end());
    }
    r.expect_end();
    try {
        MlpClassifier clf(std::move(layers[0]), std::move(layers[1]), std::move(layers[2]));
        if (clf.d_model() != d_model || clf.num_classes() != num_classes) {
            throw FormatError("KSCL header does not match tensor shapes");
        }
        return clf;
    } catch (const ShapeError& e) {
        throw FormatError(std::string("KSCL tensors inconsistent: ") + e.what());
    }
}

void save_classifier(const MlpClassifier& clf, const std::filesystem::path& path) {
    io::write_file(path, encode_classifier(clf));
}

MlpClassifier load_classifier(const std::filesystem::path& path) {
    return decode_classifier(io::read_file(path));
}

}  // namespace ksteer
