// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>

namespace patchbf {

/// 64-bit FNV-1a. Used for dataset fingerprints, geometry tags and manifests;
/// not a cryptographic hash.
class Fnv1a {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
  }

  template <typename T>
    requires std::is_trivially_copyable_v<T>
  void value(const T& v) {
    bytes(&v, sizeof(T));
  }

  template <typename T>
    requires std::is_trivially_copyable_v<T>
  void values(std::span<const T> v) {
    bytes(v.data(), v.size_bytes());
  }

  void text(std::string_view s) { bytes(s.data(), s.size()); }

  std::uint64_t digest() const { return state_; }

  std::string hex() const { return to_hex(state_); }

  static std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
  }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace patchbf
