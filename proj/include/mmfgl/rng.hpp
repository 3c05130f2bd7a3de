#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace mmfgl {

// Counter-based pseudo-random generator built on the SplitMix64 finalizer.
// Each draw hashes (seed, counter) and advances the counter, so streams are
// reproducible byte-for-byte across platforms and independent of any standard
// library distribution internals.  See README "Determinism" for the contract.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), counter_(0) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() {
    std::uint64_t v = mix(seed_ ^ mix(counter_));
    ++counter_;
    return v;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), n > 0.  Rejection-free modulo with 64-bit
  // state is biased by < 2^-53 for the n used here (all far below 2^32).
  std::uint64_t uniform_int(std::uint64_t n) {
    return next_u64() % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller.  The second variate of the pair is
  // discarded to keep the draw count predictable.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Gamma(shape, 1) via Marsaglia-Tsang, with the usual boost for shape < 1.
  double gamma(double shape) {
    if (shape < 1.0) {
      double u = uniform();
      if (u <= 0.0) u = 0x1.0p-53;
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u <= 0.0) u = 0x1.0p-53;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  // Dirichlet(alpha * 1_k) sample.
  std::vector<double> dirichlet(double alpha, std::size_t k) {
    std::vector<double> out(k);
    double total = 0.0;
    for (auto& v : out) {
      v = gamma(alpha);
      total += v;
    }
    if (total <= 0.0) {
      for (auto& v : out) v = 1.0 / static_cast<double>(k);
      return out;
    }
    for (auto& v : out) v /= total;
    return out;
  }

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // k distinct indices drawn from [0, n), in shuffled order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    shuffle(idx);
    idx.resize(k < n ? k : n);
    return idx;
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

// Derives an independent stream seed from a parent seed and a domain tag.
// Used to give every stochastic stage (partitioning, init, sampling, ...)
// its own stream while keeping a single user-facing master seed.
inline std::uint64_t derive_seed(std::uint64_t parent, const std::string& domain,
                                 std::uint64_t index = 0) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a offset basis
  for (unsigned char c : domain) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return Rng::mix(parent ^ Rng::mix(h ^ Rng::mix(index)));
}

}  // namespace mmfgl
