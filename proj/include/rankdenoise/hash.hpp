#pragma once

#include <cstdint>
#include <string_view>

namespace rankdenoise {

// 64-bit FNV-1a. Used for feature hashing and content fingerprints; fixed
// constants so hashes are identical on every platform.
inline constexpr uint64_t fnv1a64(std::string_view bytes, uint64_t h = 14695981039346656037ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace rankdenoise
