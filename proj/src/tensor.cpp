#include "ksteer/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "ksteer/error.hpp"

namespace ksteer {

Tensor2::Tensor2(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) + " != " +
                         std::to_string(rows_) + "x" + std::to_string(cols_));
    }
}

Tensor2 Tensor2::row_vector(std::span<const float> values) {
    return Tensor2(1, values.size(), std::vector<float>(values.begin(), values.end()));
}

bool Tensor2::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float x) { return std::isfinite(x); });
}

float frobenius_norm(const Tensor2& t) {
    float acc = 0.0f;
    for (float x : t.values()) acc += x * x;
    return std::sqrt(acc);
}

}  // namespace ksteer
