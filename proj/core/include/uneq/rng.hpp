#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace uneq {

// xoshiro256++ seeded through splitmix64. The whole generator state is four
// 64-bit words, which is exactly what the checkpoint trailer stores, so a
// restored run continues the stream bit-for-bit.
class Rng {
 public:
  Rng() : Rng(0, 0) {}

  Rng(uint64_t seed, uint64_t stream) {
    uint64_t x = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    for (auto& word : state_) word = splitmix64(x);
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in (0, 1].
  double next_unit() { return double((next_u64() >> 11) + 1) * 0x1.0p-53; }

  // Standard normal via Box-Muller. One draw per call and no cached spare, so
  // the serializable state stays exactly the four words above.
  double next_normal() {
    const double u1 = next_unit();
    const double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  std::array<uint64_t, 4> state() const { return state_; }
  void set_state(const std::array<uint64_t, 4>& s) { state_ = s; }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  static uint64_t splitmix64(uint64_t& x) {
    x += 0x9E3779B97F4A7C15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::array<uint64_t, 4> state_;
};

// Fixed sub-stream ids so every consumer of randomness derives from the one
// configured seed.
namespace rng_stream {
inline constexpr uint64_t kG1Init = 1;
inline constexpr uint64_t kG2Init = 2;
inline constexpr uint64_t kDiscInit = 3;
inline constexpr uint64_t kBatches = 4;
inline constexpr uint64_t kKeyframes = 5;
inline constexpr uint64_t kPreview = 6;
}  // namespace rng_stream

}  // namespace uneq
