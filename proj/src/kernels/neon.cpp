// AArch64 Advanced SIMD variants. gemv stays on the scalar path: NEON has no
// gather, and lanes must span independent outputs to stay bit-identical.
#include <arm_neon.h>

#include <cmath>

#include "tables.hpp"

namespace ksteer::kernels::detail {

namespace {

constexpr std::size_t kLanes = 4;

void gemv(const float* w, std::size_t rows, std::size_t cols, const float* x, const float* bias,
          float* out) {
    scalar_table.gemv(w, rows, cols, x, bias, out);
}

void axpy(std::size_t n, float a, const float* x, float* y) {
    const float32x4_t va = vdupq_n_f32(a);
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        const float32x4_t prod = vmulq_f32(va, vld1q_f32(x + i));
        vst1q_f32(y + i, vaddq_f32(vld1q_f32(y + i), prod));
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
        const float64x2_t go = vdupq_n_f64(g[o]);
        std::size_t i = 0;
        for (; i + 2 <= cols; i += 2) {
            const float64x2_t prod = vmulq_f64(go, vcvt_f64_f32(vld1_f32(wr + i)));
            vst1q_f64(out + i, vaddq_f64(vld1q_f64(out + i), prod));
        }
        for (; i < cols; ++i) out[i] += g[o] * static_cast<double>(wr[i]);
    }
}

void rank1(float* w, std::size_t rows, std::size_t cols, const float* g, const float* x) {
    for (std::size_t o = 0; o < rows; ++o) {
        float* wr = w + o * cols;
        const float32x4_t go = vdupq_n_f32(g[o]);
        std::size_t i = 0;
        for (; i + kLanes <= cols; i += kLanes) {
            const float32x4_t prod = vmulq_f32(go, vld1q_f32(x + i));
            vst1q_f32(wr + i, vaddq_f32(vld1q_f32(wr + i), prod));
        }
        for (; i < cols; ++i) wr[i] += g[o] * x[i];
    }
}

void relu(std::size_t n, float* x) {
    const float32x4_t zero = vdupq_n_f32(0.0f);
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        const float32x4_t v = vld1q_f32(x + i);
        const uint32x4_t keep = vcgtq_f32(v, zero);
        vst1q_f32(x + i, vreinterpretq_f32_u32(vandq_u32(vreinterpretq_u32_f32(v), keep)));
    }
    for (; i < n; ++i) x[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_mask(std::size_t n, const float* activated, float* g) {
    const float32x4_t zero = vdupq_n_f32(0.0f);
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        const uint32x4_t keep = vcgtq_f32(vld1q_f32(activated + i), zero);
        const uint32x4_t bits = vreinterpretq_u32_f32(vld1q_f32(g + i));
        vst1q_f32(g + i, vreinterpretq_f32_u32(vandq_u32(bits, keep)));
    }
    for (; i < n; ++i) g[i] = activated[i] > 0.0f ? g[i] : 0.0f;
}

void adam(std::size_t n, float* param, const float* grad, float* m, float* v, const AdamStep& s) {
    const float32x4_t b1 = vdupq_n_f32(s.beta1);
    const float32x4_t b2 = vdupq_n_f32(s.beta2);
    const float32x4_t omb1 = vdupq_n_f32(s.one_minus_beta1);
    const float32x4_t omb2 = vdupq_n_f32(s.one_minus_beta2);
    const float32x4_t corr2 = vdupq_n_f32(s.sqrt_correction2);
    const float32x4_t eps = vdupq_n_f32(s.epsilon);
    const float32x4_t step = vdupq_n_f32(s.step_size);
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        const float32x4_t g = vld1q_f32(grad + i);
        const float32x4_t mi = vaddq_f32(vmulq_f32(b1, vld1q_f32(m + i)), vmulq_f32(omb1, g));
        const float32x4_t vi =
            vaddq_f32(vmulq_f32(b2, vld1q_f32(v + i)), vmulq_f32(omb2, vmulq_f32(g, g)));
        vst1q_f32(m + i, mi);
        vst1q_f32(v + i, vi);
        const float32x4_t denom = vaddq_f32(vdivq_f32(vsqrtq_f32(vi), corr2), eps);
        const float32x4_t update = vmulq_f32(step, vdivq_f32(mi, denom));
        vst1q_f32(param + i, vsubq_f32(vld1q_f32(param + i), update));
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

const KernelTable neon_table{Isa::neon, "neon", gemv,  gemv_t,    gemv_t_wide, axpy,
                             rank1,     relu,   relu_mask, adam};

}  // namespace ksteer::kernels::detail
