#pragma once

#include <cstdint>
#include <span>
#include <utility>

#include "mld/numerics/tensor.hpp"

namespace mld {

/// Counter-based generator: draw k of stream s under seed is a pure function of (seed, s, k).
/// Forking a stream never perturbs the parent, so sampling flows can hand out independent
/// sub-streams by name (epoch, step, sample index) without ordering dependencies.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t stream = 0) noexcept;

  uint64_t seed() const noexcept { return seed_; }
  uint64_t stream() const noexcept { return stream_; }
  uint64_t counter() const noexcept { return counter_; }

  uint64_t next_u64() noexcept;
  /// Uniform in [0, 1).
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  double normal() noexcept;
  /// Uniform integer in [0, n).
  size_t below(size_t n) noexcept;

  Rng fork(uint64_t tag) const noexcept;

  Tensor normal_tensor(Shape dims);
  Tensor uniform_tensor(Shape dims, double lo, double hi);

  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    for (size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[below(i)]);
  }

 private:
  uint64_t seed_;
  uint64_t stream_;
  uint64_t key_;
  uint64_t counter_ = 0;
};

}  // namespace mld
