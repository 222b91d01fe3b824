#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ksteer::base64 {

/// RFC 4648 standard alphabet with '=' padding.
[[nodiscard]] std::string encode(std::span<const std::uint8_t> bytes);

struct DecodeError {
    std::size_t offset;
    std::string message;
};

/// Strict decoding: rejects characters outside the alphabet and bad padding.
[[nodiscard]] std::vector<std::uint8_t> decode(std::string_view text, DecodeError* error);

}  // namespace ksteer::base64
