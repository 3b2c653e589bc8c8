#pragma once

#include <atomic>

namespace dgcnn {

namespace detail {
inline std::atomic<bool>& strict_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}
}  // namespace detail

/// Strict-deterministic mode: primitives avoid any floating-point
/// reassociation that would make results depend on row placement, so
/// permutation-equivariant paths are bitwise reproducible.
inline bool strict_deterministic() { return detail::strict_flag().load(std::memory_order_relaxed); }
inline void set_strict_deterministic(bool on) { detail::strict_flag().store(on, std::memory_order_relaxed); }

struct StrictModeGuard {
  bool previous;
  explicit StrictModeGuard(bool on) : previous(strict_deterministic()) { set_strict_deterministic(on); }
  ~StrictModeGuard() { set_strict_deterministic(previous); }
};

}  // namespace dgcnn
