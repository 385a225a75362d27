#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>

namespace cstnet {

/// Named deterministic random stream.
///
/// Every (seed, label) pair maps to an independent mt19937_64 engine whose
/// state is derived with FNV-1a over the label followed by a SplitMix64
/// finalizer. Uniform and normal draws are computed here rather than through
/// the <random> distributions so the sequence does not depend on the
/// standard library vendor.
class RngStream {
 public:
  static constexpr std::string_view kAlgorithm = "mt19937_64/fnv1a-splitmix64";

  RngStream(std::uint64_t seed, std::string_view label)
      : seed_(seed), label_(label), engine_(derive_state(seed, label)) {}

  std::uint64_t seed() const { return seed_; }
  const std::string& label() const { return label_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n), unbiased (rejection sampling).
  std::uint64_t uniform_index(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t draw = engine_();
    while (draw >= limit) draw = engine_();
    return draw % n;
  }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Child stream with a label nested under this one.
  RngStream derive(std::string_view sublabel) const {
    return RngStream(seed_, label_ + "/" + std::string(sublabel));
  }

 private:
  static std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t derive_state(std::uint64_t seed, std::string_view label) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (const char ch : label) {
      hash ^= static_cast<unsigned char>(ch);
      hash *= 0x100000001b3ULL;
    }
    return splitmix64(splitmix64(seed) ^ hash);
  }

  std::uint64_t seed_;
  std::string label_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace cstnet
