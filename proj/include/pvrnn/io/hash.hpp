#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <string_view>

#include "pvrnn/core/params.hpp"

namespace pvrnn {

/// 64-bit FNV-1a.
class Fnv1a {
 public:
  void bytes(std::span<const std::uint8_t> data) {
    for (auto b : data) {
      h_ ^= b;
      h_ *= 0x100000001b3ULL;
    }
  }
  void text(std::string_view s) {
    bytes({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h_ ^= static_cast<std::uint8_t>(v >> (8 * i));
      h_ *= 0x100000001b3ULL;
    }
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t hash_text(std::string_view s) {
  Fnv1a h;
  h.text(s);
  return h.value();
}

/// Content hash over tensor names, shapes and values.
inline std::uint64_t hash_params(const NetworkParams& p) {
  Fnv1a h;
  visit_tensors(p, [&](const std::string& name, const auto& t) {
    h.text(name);
    h.u64(static_cast<std::uint64_t>(t.rows()));
    h.u64(static_cast<std::uint64_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.size(); ++i) h.f64(t.data()[i]);
  });
  return h.value();
}

}  // namespace pvrnn
