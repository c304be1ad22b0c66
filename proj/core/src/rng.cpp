#include "coforge/rng.hpp"

#include <cmath>

namespace coforge {

namespace {

uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(uint64_t seed) {
  uint64_t sm = seed;
  for (auto& w : s_) w = splitmix64(sm);
}

Rng Rng::from_state(const std::array<uint64_t, 4>& s) {
  Rng r;
  r.s_ = s;
  return r;
}

Rng Rng::derive(uint64_t seed, std::initializer_list<uint64_t> tags) {
  uint64_t sm = seed;
  uint64_t acc = splitmix64(sm);
  for (uint64_t t : tags) {
    sm = acc ^ (t + 0x9e3779b97f4a7c15ULL);
    acc = splitmix64(sm);
  }
  return Rng(acc);
}

uint64_t Rng::next_u64() {
  const uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

float Rng::uniform() { return static_cast<float>(next_double()); }

float Rng::uniform(float lo, float hi) {
  return lo + (hi - lo) * static_cast<float>(next_double());
}

float Rng::normal() {
  // Box-Muller; u1 in (0,1] so the log is finite.
  double u1 = 1.0 - next_double();
  double u2 = next_double();
  double r = std::sqrt(-2.0 * std::log(u1));
  return static_cast<float>(r * std::cos(2.0 * 3.14159265358979323846 * u2));
}

uint64_t Rng::next_below(uint64_t n) {
  // Rejection sampling on the top range to avoid modulo bias.
  const uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % n);
  uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return v % n;
}

bool Rng::bernoulli(float p) { return next_double() < static_cast<double>(p); }

}  // namespace coforge
