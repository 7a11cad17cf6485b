#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace mmtod {

// Seeded RNG wrapper. All randomness in the project flows through explicit
// Rng instances so runs are reproducible and state can be checkpointed.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }
  // uniform in [0, 1)
  double uniform() {
    return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  // inclusive integer range
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }

  // Fisher-Yates over [0, n)
  std::vector<int> permutation(int n);

  // Derive an independent stream (e.g. per-epoch, per-image).
  Rng fork() { return Rng(engine_()); }

  std::string serialize_state() const;
  void restore_state(const std::string& s);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace mmtod
