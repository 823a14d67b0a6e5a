#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <utility>

namespace mtr {

namespace detail {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

inline constexpr std::uint64_t Mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// FNV-1a, used to turn a stream label into a key.
inline constexpr std::uint64_t HashLabel(std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Counter-based generator keyed by (seed, stream label). The i-th draw is a
// pure function of (seed, label, i), so streams can be re-created anywhere
// and derived streams never share state with their parent.
class Rng {
 public:
  using result_type = std::uint64_t;

  Rng() : Rng(0, "default") {}
  Rng(std::uint64_t seed, std::string_view label)
      : seed_(seed), label_(label) {
    key_ = detail::Mix64(detail::Mix64(seed + detail::kGolden) ^
                         detail::HashLabel(label));
    key2_ = detail::Mix64(key_ ^ 0xD1B54A32D192ED03ULL);
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }
  result_type operator()() { return next_u64(); }

  std::uint64_t next_u64() {
    const std::uint64_t c = counter_++;
    return detail::Mix64(detail::Mix64(c * detail::kGolden + key_) ^ key2_);
  }

  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n) by rejection (unbiased).
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) {
    if (p <= 0.0) return false;
    if (p >= 1.0) return true;
    return uniform() < p;
  }

  // Box-Muller, one variate per call.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }
  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Independent child stream, e.g. derive("epoch3").
  Rng derive(std::string_view sublabel) const {
    std::string label = label_;
    label += '/';
    label += sublabel;
    return Rng(seed_, label);
  }

  template <class Item>
  void shuffle(std::span<Item> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t seed() const { return seed_; }
  const std::string& label() const { return label_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::string label_;
  std::uint64_t key_ = 0;
  std::uint64_t key2_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace mtr
