#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ksteer/tensor.hpp"

namespace ksteer::io {

/// Little-endian byte sink.
class ByteWriter {
public:
    void magic(std::string_view four_cc);
    void u8(std::uint8_t v);
    void i8(std::int8_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void f32s(std::span<const float> values);
    /// (u32 rows, u32 cols, rows*cols f32)
    void tensor(const Tensor2& t);

    [[nodiscard]] const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked little-endian byte source; throws FormatError on truncation.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    void expect_magic(std::string_view four_cc);
    std::uint8_t u8();
    std::int8_t i8();
    std::uint32_t u32();
    std::uint64_t u64();
    float f32();
    void f32s(std::span<float> out);
    Tensor2 tensor();

    [[nodiscard]] std::size_t offset() const noexcept { return pos_; }
    [[nodiscard]] bool at_end() const noexcept { return pos_ == bytes_.size(); }
    void expect_end() const;

private:
    std::span<const std::uint8_t> take(std::size_t n);

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace ksteer::io
