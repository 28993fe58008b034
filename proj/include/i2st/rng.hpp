#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace i2st {

// Stateless mixer, used to derive independent per-sample seeds.
std::uint64_t splitmix64(std::uint64_t x);

// Deterministic RNG built on std::mt19937_64. Only the engine comes from
// <random>; the distributions are hand-rolled because the standard leaves
// distribution output unspecified and we need identical streams on every
// platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next() { return gen_(); }

  // Uniform double in [0, 1), 53 bits of entropy.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); n > 0. Rejection sampling, no modulo bias.
  int uniform_int(int n);

  // Standard normal via Box-Muller. No cached spare, so the engine state is
  // the whole RNG state.
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<std::size_t>(i)],
                v[static_cast<std::size_t>(uniform_int(i + 1))]);
    }
  }

  // Textual engine state (the mt19937_64 stream format is pinned by the
  // standard), used by checkpoints.
  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 gen_;
};

}  // namespace i2st
