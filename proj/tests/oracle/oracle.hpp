#pragma once

// 64-bit reference implementations used only by the tests. Everything here is
// written straight-line from the definitions and shares no code with the
// library beyond reading its parameter tensors.

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "ksteer/activation_set.hpp"
#include "ksteer/classifier.hpp"
#include "ksteer/tensor.hpp"

namespace oracle {

struct Matrix64 {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix64() = default;
    Matrix64(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    explicit Matrix64(const ksteer::Tensor2& t) : Matrix64(t.rows(), t.cols()) {
        for (std::size_t i = 0; i < t.size(); ++i) data[i] = t.values()[i];
    }

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

inline std::vector<double> softmax(std::span<const double> v) {
    std::vector<double> e(v.size());
    double total = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        e[i] = std::exp(v[i]);
        total += e[i];
    }
    for (auto& x : e) x /= total;
    return e;
}

/// Dense layer applied to one row, optional ReLU.
inline std::vector<double> dense(const ksteer::DenseLayer& layer, const std::vector<double>& x,
                                 bool relu) {
    const auto& w = layer.weight;
    std::vector<double> out(w.rows());
    for (std::size_t o = 0; o < w.rows(); ++o) {
        double acc = layer.bias[o];
        for (std::size_t i = 0; i < w.cols(); ++i) acc += double(w(o, i)) * x[i];
        out[o] = relu && acc <= 0.0 ? 0.0 : acc;
    }
    return out;
}

inline Matrix64 forward_logits(const ksteer::MlpClassifier& clf, const Matrix64& a) {
    const auto& layers = clf.layers();
    Matrix64 out(a.rows, clf.num_classes());
    for (std::size_t r = 0; r < a.rows; ++r) {
        std::vector<double> x(a.data.begin() + r * a.cols, a.data.begin() + (r + 1) * a.cols);
        auto h1 = dense(layers[0], x, true);
        auto h2 = dense(layers[1], h1, true);
        auto z = dense(layers[2], h2, false);
        for (std::size_t k = 0; k < z.size(); ++k) out(r, k) = z[k];
    }
    return out;
}

inline double steering_loss(const Matrix64& logits, const ksteer::LossSpec& spec) {
    double loss = 0.0;
    if (!spec.targets.empty()) {
        double s = 0.0;
        for (std::size_t r = 0; r < logits.rows; ++r)
            for (auto t : spec.targets) s += logits(r, t);
        loss -= s / double(logits.rows * spec.targets.size());
    }
    if (!spec.avoids.empty()) {
        double s = 0.0;
        for (std::size_t r = 0; r < logits.rows; ++r)
            for (auto t : spec.avoids) s += logits(r, t);
        loss += s / double(logits.rows * spec.avoids.size());
    }
    return loss;
}

/// Central differences (L(a + h e) - L(a - h e)) / 2h per coordinate.
inline Matrix64 fd_gradient(const ksteer::MlpClassifier& clf, const ksteer::Tensor2& a,
                            const ksteer::LossSpec& spec, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("fd_gradient: h must be > 0");
    Matrix64 base(a);
    Matrix64 grad(a.rows(), a.cols());
    for (std::size_t i = 0; i < base.data.size(); ++i) {
        Matrix64 plus = base, minus = base;
        plus.data[i] += h;
        minus.data[i] -= h;
        grad.data[i] = (steering_loss(forward_logits(clf, plus), spec) -
                        steering_loss(forward_logits(clf, minus), spec)) /
                       (2.0 * h);
    }
    return grad;
}

/// Hidden pre-activations of one row, both layers, before the ReLU.
inline std::vector<double> pre_activations(const ksteer::MlpClassifier& clf,
                                           const std::vector<double>& x) {
    const auto& layers = clf.layers();
    auto z1 = dense(layers[0], x, false);
    std::vector<double> h1(z1);
    for (auto& v : h1) v = v <= 0.0 ? 0.0 : v;
    auto z2 = dense(layers[1], h1, false);
    z1.insert(z1.end(), z2.begin(), z2.end());
    return z1;
}

/// True when some ReLU of coordinate `index`'s row switches between a - h e
/// and a + h e, so the central difference straddles a kink.
inline bool straddles_kink(const ksteer::MlpClassifier& clf, const ksteer::Tensor2& a,
                           std::size_t index, double h) {
    const std::size_t r = index / a.cols(), c = index % a.cols();
    std::vector<double> lo(a.cols()), hi(a.cols());
    for (std::size_t j = 0; j < a.cols(); ++j) lo[j] = hi[j] = a(r, j);
    lo[c] -= h;
    hi[c] += h;
    const auto zl = pre_activations(clf, lo), zh = pre_activations(clf, hi);
    for (std::size_t k = 0; k < zl.size(); ++k)
        if ((zl[k] > 0.0) != (zh[k] > 0.0)) return true;
    return false;
}

struct GradientCheck {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped_small = 0;
    std::size_t skipped_kink = 0;
};

/// Compares an analytic gradient with fd_gradient coordinate-wise, relative to
/// the estimate, skipping |estimate| <= small and kink-straddling coordinates.
inline GradientCheck check_gradient(const ksteer::MlpClassifier& clf, const ksteer::Tensor2& a,
                                    const ksteer::LossSpec& spec,
                                    std::span<const float> analytic, double h,
                                    double small = 1e-6) {
    const auto fd = fd_gradient(clf, a, spec, h);
    GradientCheck out;
    for (std::size_t i = 0; i < fd.data.size(); ++i) {
        if (std::abs(fd.data[i]) <= small) {
            ++out.skipped_small;
            continue;
        }
        if (straddles_kink(clf, a, i, h)) {
            ++out.skipped_kink;
            continue;
        }
        ++out.checked;
        out.max_rel_error = std::max(out.max_rel_error,
                                     std::abs(double(analytic[i]) - fd.data[i]) / std::abs(fd.data[i]));
    }
    return out;
}

/// max |a - b| / max |b|: error relative to the tensor's scale.
inline double scaled_error(std::span<const float> a, std::span<const double> b) {
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(double(a[i]) - b[i]));
        scale = std::max(scale, std::abs(b[i]));
    }
    return scale == 0.0 ? diff : diff / scale;
}

/// Mean of pos[i] - neg[i].
inline std::vector<double> mean_difference(std::span<const std::vector<float>> pos,
                                           std::span<const std::vector<float>> neg) {
    std::vector<double> out(pos.front().size(), 0.0);
    for (std::size_t i = 0; i < pos.size(); ++i)
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += double(pos[i][j]) - double(neg[i][j]);
    for (auto& x : out) x /= double(pos.size());
    return out;
}

/// Binary logistic regression by full-batch gradient descent; returns the
/// training accuracy of the fitted linear probe. Labels must be 0/1.
inline double logistic_probe_accuracy(const ksteer::LabeledActivationSet& set,
                                      std::size_t iterations = 500, double lr = 0.5) {
    const std::size_t d = set.d_model;
    std::vector<double> w(d, 0.0);
    double b = 0.0;
    const double n = double(set.size());
    for (std::size_t it = 0; it < iterations; ++it) {
        std::vector<double> gw(d, 0.0);
        double gb = 0.0;
        for (const auto& e : set.entries) {
            double z = b;
            for (std::size_t j = 0; j < d; ++j) z += w[j] * e.activation[j];
            const double err = 1.0 / (1.0 + std::exp(-z)) - double(e.label);
            for (std::size_t j = 0; j < d; ++j) gw[j] += err * e.activation[j];
            gb += err;
        }
        for (std::size_t j = 0; j < d; ++j) w[j] -= lr * gw[j] / n;
        b -= lr * gb / n;
    }
    std::size_t correct = 0;
    for (const auto& e : set.entries) {
        double z = b;
        for (std::size_t j = 0; j < d; ++j) z += w[j] * e.activation[j];
        correct += (z > 0.0) == (e.label == 1);
    }
    return double(correct) / n;
}

/// Coefficient of determination of the least-squares line through (x, y).
inline double linear_fit_r2(std::span<const double> x, std::span<const double> y) {
    const double n = double(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (syy == 0.0) return 1.0;
    const double slope = sxy / sxx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double fit = my + slope * (x[i] - mx);
        ss_res += (y[i] - fit) * (y[i] - fit);
    }
    return 1.0 - ss_res / syy;
}

/// max |a - b| / max(|b|, floor) over coordinates where |b| > skip.
inline double max_relative_error(std::span<const float> a, std::span<const double> b,
                                 double skip = 0.0, double floor = 1e-12) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::abs(b[i]) <= skip) continue;
        worst = std::max(worst, std::abs(double(a[i]) - b[i]) / std::max(std::abs(b[i]), floor));
    }
    return worst;
}

}  // namespace oracle
