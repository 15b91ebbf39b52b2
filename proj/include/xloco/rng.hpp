#pragma once

#include <cmath>
#include <cstdint>

namespace xloco {

/// Counter-based random stream (splitmix64 over a key/counter pair).
///
/// Every consumer owns its own stream, seeded as global_seed ^ stream_id, so
/// parallel environments draw independently and runs are bit-reproducible
/// regardless of scheduling. Distributions are implemented here rather than
/// through <random> so the byte-level sequence is ours, not libstdc++'s.
class RandomStream {
 public:
  RandomStream() : RandomStream(0) {}
  explicit RandomStream(std::uint64_t seed) : key_(seed), counter_(0) {}

  static RandomStream for_stream(std::uint64_t global_seed, std::uint64_t stream_id) {
    // golden-ratio mix keeps nearby stream ids decorrelated
    return RandomStream(global_seed ^ (stream_id * 0x9E3779B97F4A7C15ull + 0x632BE59BD9B4E019ull));
  }

  std::uint64_t next_u64() {
    std::uint64_t z = key_ + (++counter_) * 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal, Box-Muller; one value cached per pair.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    // avoid log(0)
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform01() < p; }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace xloco
