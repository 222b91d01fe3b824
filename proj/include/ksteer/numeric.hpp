#pragma once

#include <span>
#include <vector>

#include "ksteer/rng.hpp"
#include "ksteer/tensor.hpp"

namespace ksteer {

/// Max-subtracted softmax. Throws InvalidInput on an empty vector.
[[nodiscard]] std::vector<float> softmax(std::span<const float> logits);

[[nodiscard]] float l2_norm(std::span<const float> v);

/// Sequential (left-to-right) dot product.
[[nodiscard]] float dot(std::span<const float> a, std::span<const float> b);

/// rows x cols matrix of N(0, sigma^2) draws, row-major fill order.
[[nodiscard]] Tensor2 gaussian_matrix(SeededRng& rng, std::size_t rows, std::size_t cols,
                                      float sigma);

/// Orthonormal set of `count` directions in R^dim (Gram-Schmidt on Gaussian draws).
[[nodiscard]] Tensor2 random_orthonormal(SeededRng& rng, std::size_t count, std::size_t dim);

}  // namespace ksteer
