#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace organsim {

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t hash_text(std::string_view text);  // FNV-1a, stable across platforms

// Uniform double in [0, 1) from the top 53 bits.
inline double unit_double(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

}  // namespace organsim
