#include "mld/numerics/rng.hpp"

#include <cmath>
#include <numbers>

namespace mld {

namespace {
constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr uint64_t mix64(uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
}  // namespace

Rng::Rng(uint64_t seed, uint64_t stream) noexcept
    : seed_(seed), stream_(stream), key_(mix64(mix64(seed ^ kGolden) + stream * 0xD1B54A32D192ED03ULL)) {}

uint64_t Rng::next_u64() noexcept {
  const uint64_t c = counter_++;
  return mix64(key_ + mix64(c * kGolden + 0x632BE59BD9B4E019ULL));
}

double Rng::uniform() noexcept { return double(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() noexcept {
  // Box-Muller, one value per pair of draws.
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

size_t Rng::below(size_t n) noexcept {
  if (n <= 1) return 0;
  // Lemire's multiply-shift; bias is below 2^-64 * n, irrelevant here.
  return size_t((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

Rng Rng::fork(uint64_t tag) const noexcept { return Rng(seed_, mix64(key_ ^ mix64(tag + kGolden))); }

Tensor Rng::normal_tensor(Shape dims) {
  Tensor t(std::move(dims));
  for (auto& v : t.data()) v = real(normal());
  return t;
}

Tensor Rng::uniform_tensor(Shape dims, double lo, double hi) {
  Tensor t(std::move(dims));
  for (auto& v : t.data()) v = real(uniform(lo, hi));
  return t;
}

}  // namespace mld
