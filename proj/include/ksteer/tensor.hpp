#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ksteer {

/// Dense row-major matrix of 32-bit reals.
class Tensor2 {
public:
    Tensor2() = default;
    Tensor2(std::size_t rows, std::size_t cols, float fill = 0.0f);
    Tensor2(std::size_t rows, std::size_t cols, std::vector<float> data);

    static Tensor2 row_vector(std::span<const float> values);

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    [[nodiscard]] std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    [[nodiscard]] std::span<const float> row(std::size_t r) const {
        return {data_.data() + r * cols_, cols_};
    }

    [[nodiscard]] std::span<float> values() noexcept { return data_; }
    [[nodiscard]] std::span<const float> values() const noexcept { return data_; }
    [[nodiscard]] float* data() noexcept { return data_.data(); }
    [[nodiscard]] const float* data() const noexcept { return data_.data(); }

    [[nodiscard]] bool all_finite() const noexcept;

    /// Exact elementwise equality (bit-level for finite values).
    friend bool operator==(const Tensor2&, const Tensor2&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

/// d_seq x d_model residual-stream slice.
using ActivationMatrix = Tensor2;

/// Frobenius norm, sequential summation.
[[nodiscard]] float frobenius_norm(const Tensor2& t);

}  // namespace ksteer
