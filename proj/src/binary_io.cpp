#include "ksteer/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ksteer/error.hpp"

namespace ksteer::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }
}

template <typename T>
T get_le(std::span<const std::uint8_t> b) {
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(b[i]) << (8 * i);
    return value;
}

}  // namespace

void ByteWriter::magic(std::string_view four_cc) {
    bytes_.insert(bytes_.end(), four_cc.begin(), four_cc.end());
}
void ByteWriter::u8(std::uint8_t v) { bytes_.push_back(v); }
void ByteWriter::i8(std::int8_t v) { bytes_.push_back(static_cast<std::uint8_t>(v)); }
void ByteWriter::u32(std::uint32_t v) { put_le(bytes_, v); }
void ByteWriter::u64(std::uint64_t v) { put_le(bytes_, v); }
void ByteWriter::f32(float v) { put_le(bytes_, std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f32s(std::span<const float> values) {
    bytes_.reserve(bytes_.size() + values.size() * 4);
    for (float v : values) f32(v);
}
void ByteWriter::tensor(const Tensor2& t) {
    u32(static_cast<std::uint32_t>(t.rows()));
    u32(static_cast<std::uint32_t>(t.cols()));
    f32s(t.values());
}

std::span<const std::uint8_t> ByteReader::take(std::size_t n) {
    if (bytes_.size() - pos_ < n) {
        throw FormatError("truncated input: need " + std::to_string(n) + " bytes at offset " +
                          std::to_string(pos_));
    }
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
}

void ByteReader::expect_magic(std::string_view four_cc) {
    auto b = take(four_cc.size());
    if (std::memcmp(b.data(), four_cc.data(), four_cc.size()) != 0) {
        throw FormatError("bad magic, expected \"" + std::string(four_cc) + "\"");
    }
}
std::uint8_t ByteReader::u8() { return take(1)[0]; }
std::int8_t ByteReader::i8() { return static_cast<std::int8_t>(take(1)[0]); }
std::uint32_t ByteReader::u32() { return get_le<std::uint32_t>(take(4)); }
std::uint64_t ByteReader::u64() { return get_le<std::uint64_t>(take(8)); }
float ByteReader::f32() { return std::bit_cast<float>(u32()); }
void ByteReader::f32s(std::span<float> out) {
    auto b = take(out.size() * 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::bit_cast<float>(get_le<std::uint32_t>(b.subspan(i * 4, 4)));
    }
}
Tensor2 ByteReader::tensor() {
    const std::uint32_t rows = u32();
    const std::uint32_t cols = u32();
    const std::uint64_t count = static_cast<std::uint64_t>(rows) * cols;
    if (count * 4 > bytes_.size() - pos_) throw FormatError("truncated tensor payload");
    Tensor2 t(rows, cols);
    f32s(t.values());
    return t;
}
void ByteReader::expect_end() const {
    if (!at_end()) {
        throw FormatError("trailing bytes after offset " + std::to_string(pos_));
    }
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error("write failed for " + path.string());
}

}  // namespace ksteer::io
