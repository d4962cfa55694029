#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace fedsim {

/// Mixes a base seed with a list of tags (device id, round, purpose, ...) into
/// an independent stream seed. SplitMix64 finalizer applied per tag, so
/// stream_seed(s, {i}) and stream_seed(s, {j}) are decorrelated for i != j.
std::uint64_t stream_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

/// Seedable generator with platform-independent output.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. All distributions are implemented here rather than taken from
/// <random>, because the standard library's distribution algorithms differ
/// between implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);

  /// Standard normal via the Marsaglia polar method.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// exp(N(mu, sigma^2)).
  double lognormal(double mu, double sigma);

  /// Gamma(shape, 1) via Marsaglia-Tsang.
  double gamma(double shape);

  /// Dirichlet(concentration * 1_k).
  std::vector<double> dirichlet(std::size_t k, double concentration);

  /// Index drawn proportionally to nonnegative weights (at least one positive).
  std::size_t categorical(std::span<const double> weights);

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  /// Uniform sample of `count` distinct values from [0, n), ascending.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fedsim
