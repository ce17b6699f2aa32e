#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace vdc {

// Lowercase 8-digit hex CRC32 (zlib polynomial).
std::uint32_t crc32_bytes(std::span<const std::byte> bytes);
std::string crc32_hex(std::span<const std::byte> bytes);

// Lowercase hex SHA-256 of the given text/bytes.
std::string sha256_hex(std::string_view text);
std::string sha256_hex(std::span<const std::byte> bytes);

// First 16 hex digits of the SHA-256; used for content-addressed keys.
std::string short_hash(std::string_view text);

}  // namespace vdc
