#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace connectome {

// Deterministic counter-based generator (SplitMix64).
//
// The full algorithm is spelled out so an independent implementation can
// reproduce the streams exactly:
//
//   state   <- state + 0x9E3779B97F4A7C15            (per draw)
//   z       <- state
//   z       <- (z xor (z >> 30)) * 0xBF58476D1CE4E5B9
//   z       <- (z xor (z >> 27)) * 0x94D049BB133111EB
//   output  <- z xor (z >> 31)
//
// Child streams are derived from the *original* seed, never from the current
// state, so the set of children is independent of how many draws were made:
//
//   child_seed(seed, label) = mix64(seed xor fnv1a64(label))
//
// where fnv1a64 is the standard FNV-1a 64-bit hash of the label bytes and
// mix64 is the SplitMix64 finalizer above applied once.
//
// uniform() maps the top 53 bits of a draw to [0,1).
// gaussian() is Box-Muller on two uniform draws (u1 shifted into (0,1]),
// consuming exactly two draws per pair of variates; the second variate is
// cached. Integer draws are bit-exact across platforms; floating-point draws
// additionally depend on the platform's log/cos/sin being correctly rounded.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed), state_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix64(state_);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * kInv53;
  }

  double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

  // Uniform integer in [0, n). n must be > 0. Uses rejection-free modulo on
  // the full 64-bit draw; bias is below 2^-60 for any n we ever use.
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 =
        (static_cast<double>(next_u64() >> 11) + 1.0) * kInv53;  // (0, 1]
    const double u2 = static_cast<double>(next_u64() >> 11) * kInv53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * kPi * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double gaussian(double mean, double stddev) {
    return mean + stddev * gaussian();
  }

  // Independent child stream for a named purpose ("init", "shuffle/3", ...).
  SeededRng child(std::string_view label) const {
    return SeededRng(mix64(seed_ ^ fnv1a64(label)));
  }

  SeededRng child(std::string_view label, std::uint64_t index) const {
    return child(std::string(label) + "/" + std::to_string(index));
  }

  static std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001B3ULL;
    }
    return h;
  }

 private:
  static constexpr double kInv53 = 1.0 / 9007199254740992.0;  // 2^-53
  static constexpr double kPi = 3.14159265358979323846;

  std::uint64_t seed_;
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace connectome
