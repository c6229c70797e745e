#pragma once

// Monte Carlo Arithmetic: random perturbation of results (and optionally
// operands) at a virtual precision, plus ensemble statistics.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "mixprec/fpemu.hpp"

namespace mixprec {

enum class McaMode : std::uint8_t { random_rounding, full };

struct McaConfig {
  static constexpr int kMinPrecision = 1;
  static constexpr int kMaxPrecision = 53;

  /// Throws std::invalid_argument unless 1 <= t <= 53.
  McaConfig(McaMode mode, int t, std::uint64_t seed = 0);

  McaMode mode;
  int t;
  std::uint64_t seed;

  friend bool operator==(const McaConfig&, const McaConfig&) = default;
};

std::string_view to_string(McaMode mode);

/// Counter-based stream of uniform variates in the open interval (-1/2, 1/2).
///
/// Draw k (k = 0, 1, ...) of stream (seed, id) is
///   key = splitmix64_mix(seed ^ splitmix64_mix(id + 0x9e3779b97f4a7c15))
///   u   = splitmix64_mix(key + (k + 1) * 0x9e3779b97f4a7c15)
///   xi  = ((u >> 12) + 0.5) * 2^-52 - 0.5
/// which is exactly SplitMix64 seeded with `key`. Streams with different ids
/// are independent; the same (seed, id) always replays the same sequence.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed = 0, std::uint64_t stream_id = 0);

  double next_xi();

  /// Child stream keyed by `tag`: key' = splitmix64_mix(key ^ splitmix64_mix(tag + gamma)),
  /// drawn from counter 0. The parent is not advanced.
  RandomStream fork(std::uint64_t tag) const;

  std::uint64_t draws() const { return counter_; }
  std::uint64_t key() const { return key_; }

 private:
  struct FromKey {};
  RandomStream(FromKey, std::uint64_t key) : key_(key) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64_mix(std::uint64_t z);

/// floor(log2|x|) + 1, taken from the binary representation. Throws
/// std::domain_error for zero, infinities and NaN.
int magnitude_exponent(double x);

/// x + 2^(e_x - t) * xi in binary64. Zero, infinities and NaN are returned
/// unchanged.
double perturb(double x, int t, double xi);

/// perturb() with xi drawn from `rng`; consumes a draw only when x is finite
/// and nonzero.
double inexact(double x, int t, RandomStream& rng);

/// Random rounding perturbs the result only; full MCA perturbs both operands
/// and the result.
double mca_op(double a, double b, ArithOp op, const McaConfig& cfg, RandomStream& rng);

/// Significant bits -log2|sigma/mu| of an ensemble (Bessel-corrected sigma).
/// Returns 53 when sigma == 0, 0 when mu == 0 or a sample is not finite; never
/// exceeds 53.
/// Throws std::invalid_argument for fewer than two samples.
double significant_bits(std::span<const double> samples);

struct SampleStats {
  std::size_t n = 0;
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::optional<double> s2;
};

/// Throws std::invalid_argument on empty input.
SampleStats summarize(std::span<const double> samples);

}  // namespace mixprec
