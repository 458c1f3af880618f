#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

namespace impactscan {

// 64-bit FNV-1a. Used for content checksums and stable identifiers, not for security.
class Fnv1a {
 public:
  Fnv1a& update(std::span<const std::uint8_t> bytes) {
    for (auto b : bytes) {
      state_ ^= b;
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Fnv1a& update(std::string_view s) {
    return update({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  }
  template <class T>
  Fnv1a& update_pod(const T& v) {
    return update({reinterpret_cast<const std::uint8_t*>(&v), sizeof(T)});
  }
  std::uint64_t digest() const { return state_; }
  std::string hex() const { return to_hex(state_); }

  static std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
  }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a(std::string_view s) { return Fnv1a{}.update(s).digest(); }

// splitmix64 finalizer; counter-based randomness for reproducible per-pixel noise.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace impactscan
