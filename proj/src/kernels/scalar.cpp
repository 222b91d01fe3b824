#include <cmath>

#include "tables.hpp"

namespace ksteer::kernels::detail {

namespace {

void gemv(const float* w, std::size_t rows, std::size_t cols, const float* x, const float* bias,
          float* out) {
    for (std::size_t o = 0; o < rows; ++o) {
        const float* wr = w + o * cols;
        float acc = 0.0f;
        for (std::size_t i = 0; i < cols; ++i) acc += wr[i] * x[i];
        out[o] = bias ? acc + bias[o] : acc;
    }
}

void gemv_t(const float* w, std::size_t rows, std::size_t cols, const float* g, float* out) {
    for (std::size_t i = 0; i < cols; ++i) out[i] = 0.0f;
    for (std::size_t o = 0; o < rows; ++o) {
        const float* wr = w + o * cols;
        const float go = g[o];
        for (std::size_t i = 0; i < cols; ++i) out[i] += go * wr[i];
    }
}

void gemv_t_wide(const float* w, std::size_t rows, std::size_t cols, const double* g, double* out) {
    for (std::size_t i = 0; i < cols; ++i) out[i] = 0.0;
    for (std::size_t o = 0; o < rows; ++o) {
        const float* wr = w + o * cols;
        const double go = g[o];
        for (std::size_t i = 0; i < cols; ++i) out[i] += go * static_cast<double>(wr[i]);
    }
}

void axpy(std::size_t n, float a, const float* x, float* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void rank1(float* w, std::size_t rows, std::size_t cols, const float* g, const float* x) {
    for (std::size_t o = 0; o < rows; ++o) {
        float* wr = w + o * cols;
        const float go = g[o];
        for (std::size_t i = 0; i < cols; ++i) wr[i] += go * x[i];
    }
}

void relu(std::size_t n, float* x) {
    for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_mask(std::size_t n, const float* activated, float* g) {
    for (std::size_t i = 0; i < n; ++i) g[i] = activated[i] > 0.0f ? g[i] : 0.0f;
}

void adam(std::size_t n, float* param, const float* grad, float* m, float* v, const AdamStep& s) {
    for (std::size_t i = 0; i < n; ++i) {
        const float g = grad[i];
        m[i] = s.beta1 * m[i] + s.one_minus_beta1 * g;
        v[i] = s.beta2 * v[i] + s.one_minus_beta2 * (g * g);
        const float denom = std::sqrt(v[i]) / s.sqrt_correction2 + s.epsilon;
        param[i] = param[i] - s.step_size * (m[i] / denom);
    }
}

}  // namespace

const KernelTable scalar_table{Isa::scalar, "scalar", gemv,  gemv_t,    gemv_t_wide, axpy,
                               rank1,       relu,     relu_mask, adam};

}  // namespace ksteer::kernels::detail
