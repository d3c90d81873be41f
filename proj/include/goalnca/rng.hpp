#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace goalnca {

/// Counter-based random stream. Output i of a stream is a pure function of
/// (seed, stream id, i), so streams can be split per sample or per worker
/// without sharing state.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_(mix(seed ^ mix(stream + 0x632be59bd9b4e019ULL))) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept { return next_u64(); }

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return mix(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
  }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(next_u64());
    // Lemire's multiply-shift reduction; bias is < 2^-32 for the spans used here.
    const auto r = static_cast<unsigned __int128>(next_u64()) * span;
    return lo + static_cast<std::int64_t>(r >> 64);
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Standard normal via Box-Muller, one output per call.
  double normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * uniform());
  }

  /// Independent child stream; does not advance this stream.
  RngStream split(std::uint64_t child) const noexcept {
    RngStream s;
    s.key_ = mix(key_ ^ mix(child * 0xbf58476d1ce4e5b9ULL + 0x94d049bb133111ebULL));
    return s;
  }

  std::uint64_t counter() const noexcept { return counter_; }

  friend bool operator==(const RngStream&, const RngStream&) = default;

 private:
  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_ = mix(0x632be59bd9b4e019ULL);
  std::uint64_t counter_ = 0;
};

}  // namespace goalnca

