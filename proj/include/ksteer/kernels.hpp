#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

namespace ksteer::kernels {

enum class Isa { scalar, avx2, neon };

struct AdamStep {
    float step_size;        // lr / (1 - beta1^t)
    float beta1;
    float beta2;
    float one_minus_beta1;
    float one_minus_beta2;
    float sqrt_correction2;  // sqrt(1 - beta2^t)
    float epsilon;
};

/// Inner loops of the classifier and training code.
///
/// Every variant computes bit-identical results to the scalar reference:
/// vector lanes always span independent outputs, each output is reduced in
/// ascending index order starting from 0.0f, and multiply/add are separately
/// rounded (no FMA).
struct KernelTable {
    Isa isa;
    std::string_view name;

    /// out[o] = (sum_i w[o, i] * x[i]) + bias[o]; bias may be null.
    void (*gemv)(const float* w, std::size_t rows, std::size_t cols, const float* x,
                 const float* bias, float* out);
    /// out[i] = sum_o w[o, i] * g[o], o ascending.
    void (*gemv_t)(const float* w, std::size_t rows, std::size_t cols, const float* g,
                   float* out);
    /// As gemv_t with widened products and a double accumulator; g is double.
    void (*gemv_t_wide)(const float* w, std::size_t rows, std::size_t cols, const double* g,
                        double* out);
    /// y += a * x
    void (*axpy)(std::size_t n, float a, const float* x, float* y);
    /// w[o, i] += g[o] * x[i]
    void (*rank1)(float* w, std::size_t rows, std::size_t cols, const float* g, const float* x);
    /// x = x > 0 ? x : 0
    void (*relu)(std::size_t n, float* x);
    /// g = activated > 0 ? g : 0
    void (*relu_mask)(std::size_t n, const float* activated, float* g);
    /// One Adam update in PyTorch's formulation.
    void (*adam)(std::size_t n, float* param, const float* grad, float* m, float* v,
                 const AdamStep& step);
};

/// Table used by the library. Selected once from CPU features; the
/// KSTEER_KERNELS environment variable (scalar|avx2|neon) overrides.
const KernelTable& active();

/// Table for a specific ISA, or nullptr when it was not built or the CPU
/// lacks it.
const KernelTable* table_for(Isa isa);

std::vector<Isa> available();

std::string_view isa_name(Isa isa);

}  // namespace ksteer::kernels
