// Built with -mavx2 (no -mfma). Only reached after a runtime CPU check.
#include <immintrin.h>

#include <cmath>
#include <cstdint>

#include "tables.hpp"

namespace ksteer::kernels::detail {

namespace {

constexpr std::size_t kLanes = 8;

void gemv(const float* w, std::size_t rows, std::size_t cols, const float* x, const float* bias,
          float* out) {
    std::size_t o = 0;
    if (rows >= kLanes) {
        const auto stride = static_cast<std::int32_t>(cols);
        const __m256i offsets = _mm256_mullo_epi32(_mm256_setr_epi32(0, 1, 2, 3, 4, 5, 6, 7),
                                                   _mm256_set1_epi32(stride));
        for (; o + kLanes <= rows; o += kLanes) {
            const float* block = w + o * cols;
            __m256 acc = _mm256_setzero_ps();
            for (std::size_t i = 0; i < cols; ++i) {
                const __m256 column = _mm256_i32gather_ps(block + i, offsets, 4);
                acc = _mm256_add_ps(acc, _mm256_mul_ps(column, _mm256_set1_ps(x[i])));
            }
            if (bias) acc = _mm256_add_ps(acc, _mm256_loadu_ps(bias + o));
            _mm256_storeu_ps(out + o, acc);
        }
    }
    for (; o < rows; ++o) {
        const float* wr = w + o * cols;
        float acc = 0.0f;
        for (std::size_t i = 0; i < cols; ++i) acc += wr[i] * x[i];
        out[o] = bias ? acc + bias[o] : acc;
    }
}

void axpy(std::size_t n, float a, const float* x, float* y) {
    const __m256 va = _mm256_set1_ps(a);
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        const __m256 prod = _mm256_mul_ps(va, _mm256_loadu_ps(x + i));
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), prod));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void gemv_t(const float* w, std::size_t rows, std::size_t cols, const float* g, float* out) {
    for (std::size_t i = 0; i < cols; ++i) out[i] = 0.0f;
    for (std::size_t o = 0; o < rows; ++o) axpy(cols, g[o], w + o * cols, out);
}

void gemv_t_wide(const float* w, std::size_t rows, std::size_t cols, const double* g, double* out) {
    for (std::size_t i = 0; i < cols; ++i) out[i] = 0.0;
    for (std::size_t o = 0; o < rows; ++o) {
        const float* wr = w + o * cols;
        const __m256d go = _mm256_set1_pd(g[o]);
        std::size_t i = 0;
        for (; i + 4 <= cols; i += 4) {
            const __m256d prod = _mm256_mul_pd(go, _mm256_cvtps_pd(_mm_loadu_ps(wr + i)));
            _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(out + i), prod));
        }
        for (; i < cols; ++i) out[i] += g[o] * static_cast<double>(wr[i]);
    }
}

void rank1(float* w, std::size_t rows, std::size_t cols, const float* g, const float* x) {
    // w[o, i] += g[o] * x[i]; the product order matches the scalar reference
    for (std::size_t o = 0; o < rows; ++o) {
        float* wr = w + o * cols;
        const __m256 go = _mm256_set1_ps(g[o]);
        std::size_t i = 0;
        for (; i + kLanes <= cols; i += kLanes) {
            const __m256 prod = _mm256_mul_ps(go, _mm256_loadu_ps(x + i));
            _mm256_storeu_ps(wr + i, _mm256_add_ps(_mm256_loadu_ps(wr + i), prod));
        }
        for (; i < cols; ++i) wr[i] += g[o] * x[i];
    }
}

void relu(std::size_t n, float* x) {
    const __m256 zero = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        const __m256 v = _mm256_loadu_ps(x + i);
        const __m256 keep = _mm256_cmp_ps(v, zero, _CMP_GT_OQ);
        _mm256_storeu_ps(x + i, _mm256_and_ps(v, keep));
    }
    for (; i < n; ++i) x[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_mask(std::size_t n, const float* activated, float* g) {
    const __m256 zero = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        const __m256 keep = _mm256_cmp_ps(_mm256_loadu_ps(activated + i), zero, _CMP_GT_OQ);
        _mm256_storeu_ps(g + i, _mm256_and_ps(_mm256_loadu_ps(g + i), keep));
    }
    for (; i < n; ++i) g[i] = activated[i] > 0.0f ? g[i] : 0.0f;
}

void adam(std::size_t n, float* param, const float* grad, float* m, float* v, const AdamStep& s) {
    const __m256 b1 = _mm256_set1_ps(s.beta1);
    const __m256 b2 = _mm256_set1_ps(s.beta2);
    const __m256 omb1 = _mm256_set1_ps(s.one_minus_beta1);
    const __m256 omb2 = _mm256_set1_ps(s.one_minus_beta2);
    const __m256 corr2 = _mm256_set1_ps(s.sqrt_correction2);
    const __m256 eps = _mm256_set1_ps(s.epsilon);
    const __m256 step = _mm256_set1_ps(s.step_size);
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        const __m256 g = _mm256_loadu_ps(grad + i);
        const __m256 mi = _mm256_add_ps(_mm256_mul_ps(b1, _mm256_loadu_ps(m + i)),
                                        _mm256_mul_ps(omb1, g));
        const __m256 vi = _mm256_add_ps(_mm256_mul_ps(b2, _mm256_loadu_ps(v + i)),
                                        _mm256_mul_ps(omb2, _mm256_mul_ps(g, g)));
        _mm256_storeu_ps(m + i, mi);
        _mm256_storeu_ps(v + i, vi);
        const __m256 denom = _mm256_add_ps(_mm256_div_ps(_mm256_sqrt_ps(vi), corr2), eps);
        const __m256 update = _mm256_mul_ps(step, _mm256_div_ps(mi, denom));
        _mm256_storeu_ps(param + i, _mm256_sub_ps(_mm256_loadu_ps(param + i), update));
    }
    for (; i < n; ++i) {
        const float g = grad[i];
        m[i] = s.beta1 * m[i] + s.one_minus_beta1 * g;
        v[i] = s.beta2 * v[i] + s.one_minus_beta2 * (g * g);
        const float denom = std::sqrt(v[i]) / s.sqrt_correction2 + s.epsilon;
        param[i] = param[i] - s.step_size * (m[i] / denom);
    }
}

}  // namespace

const KernelTable avx2_table{Isa::avx2, "avx2", gemv,  gemv_t,    gemv_t_wide, axpy,
                             rank1,     relu,   relu_mask, adam};

}  // namespace ksteer::kernels::detail
