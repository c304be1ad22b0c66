#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>

namespace coforge {

// xoshiro256** with a splitmix64 seeder. The full generator state is four
// u64 words, which is exactly what checkpoints persist, so a restored run
// continues the stream bit-for-bit. normal() deliberately keeps no cached
// spare for the same reason.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(uint64_t seed);

  static Rng from_state(const std::array<uint64_t, 4>& s);
  // Deterministic child stream for (seed, tag...) without consuming parent
  // state. Used for per-sample evaluation streams.
  static Rng derive(uint64_t seed, std::initializer_list<uint64_t> tags);

  const std::array<uint64_t, 4>& state() const { return s_; }

  uint64_t next_u64();
  // [0,1) with 53 random bits.
  double next_double();
  float uniform();                       // [0,1)
  float uniform(float lo, float hi);     // [lo,hi)
  float normal();                        // Box-Muller, no spare caching
  // Uniform integer in [0, n), n >= 1.
  uint64_t next_below(uint64_t n);
  bool bernoulli(float p);

  // In-place Fisher-Yates; std::shuffle is implementation-defined so we keep
  // our own for cross-platform determinism.
  template <typename T>
  void shuffle(T* v, size_t n) {
    for (size_t i = n; i > 1; --i) {
      size_t j = static_cast<size_t>(next_below(i));
      T tmp = v[i - 1];
      v[i - 1] = v[j];
      v[j] = tmp;
    }
  }

 private:
  std::array<uint64_t, 4> s_{};
};

}  // namespace coforge
