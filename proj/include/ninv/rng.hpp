#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ninv {

/// Seeded random stream. Child streams are derived by name so that phases of
/// a run draw from isolated, reproducible sequences.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  static std::uint64_t derive(std::uint64_t root, std::string_view name);
  Rng fork(std::string_view name) const { return Rng(derive(seed_, name)); }

  std::uint64_t seed() const { return seed_; }

  double uniform() { return unit_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit_(engine_); }
  double normal() { return normal_(engine_); }
  double normal(double mean, double stddev) { return mean + stddev * normal_(engine_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace ninv
