#include "ksteer/numeric.hpp"

#include <algorithm>
#include <cmath>

#include "ksteer/error.hpp"

namespace ksteer {

std::vector<float> softmax(std::span<const float> logits) {
    if (logits.empty()) throw InvalidInput("softmax of an empty vector");
    const float peak = *std::max_element(logits.begin(), logits.end());
    std::vector<float> out(logits.size());
    float total = 0.0f;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - peak);
        total += out[i];
    }
    for (float& p : out) p /= total;
    return out;
}

float l2_norm(std::span<const float> v) {
    // scaled accumulation keeps large or tiny components from over/underflowing
    float scale = 0.0f;
    for (float x : v) scale = std::max(scale, std::fabs(x));
    if (scale == 0.0f) return 0.0f;
    float acc = 0.0f;
    for (float x : v) {
        const float s = x / scale;
        acc += s * s;
    }
    return scale * std::sqrt(acc);
}

float dot(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
    float acc = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

Tensor2 gaussian_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, float sigma) {
    if (sigma < 0.0f) throw InvalidInput("gaussian_matrix: negative sigma");
    Tensor2 out(rows, cols);
    for (float& x : out.values()) x = static_cast<float>(rng.gaussian() * sigma);
    return out;
}

Tensor2 random_orthonormal(SeededRng& rng, std::size_t count, std::size_t dim) {
    if (count > dim) throw InvalidInput("random_orthonormal: more directions than dimensions");
    std::vector<std::vector<double>> basis;
    while (basis.size() < count) {
        std::vector<double> v(dim);
        for (double& x : v) x = rng.gaussian();
        for (const auto& b : basis) {
            double proj = 0.0;
            for (std::size_t i = 0; i < dim; ++i) proj += v[i] * b[i];
            for (std::size_t i = 0; i < dim; ++i) v[i] -= proj * b[i];
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-6) continue;
        for (double& x : v) x /= norm;
        basis.push_back(std::move(v));
    }
    Tensor2 out(count, dim);
    for (std::size_t r = 0; r < count; ++r) {
        for (std::size_t c = 0; c < dim; ++c) out(r, c) = static_cast<float>(basis[r][c]);
    }
    return out;
}

}  // namespace ksteer
