#include "mixprec/mca.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

namespace mixprec {

namespace {

constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ULL;
constexpr double kFullSignificance = 53.0;

bool perturbable(double x) { return std::isfinite(x) && x != 0.0; }

bool all_equal(std::span<const double> samples) {
  return std::adjacent_find(samples.begin(), samples.end(), std::not_equal_to<>{}) ==
         samples.end();
}

double mean_of(std::span<const double> samples) {
  if (all_equal(samples)) return samples.front();
  double sum = 0.0;
  for (double s : samples) sum += s;
  return sum / static_cast<double>(samples.size());
}

double bessel_stddev(std::span<const double> samples, double mean) {
  if (samples.size() < 2 || all_equal(samples)) return 0.0;
  double acc = 0.0;
  for (double s : samples) acc += (s - mean) * (s - mean);
  return std::sqrt(acc / static_cast<double>(samples.size() - 1));
}

double significant_bits_from(double mean, double stddev) {
  if (!std::isfinite(mean) || !std::isfinite(stddev)) return 0.0;
  if (stddev == 0.0) return kFullSignificance;
  if (mean == 0.0) return 0.0;
  return std::min(kFullSignificance, -std::log2(std::fabs(stddev / mean)));
}

}  // namespace

McaConfig::McaConfig(McaMode mode_, int t_, std::uint64_t seed_)
    : mode(mode_), t(t_), seed(seed_) {
  if (t < kMinPrecision || t > kMaxPrecision) {
    throw std::invalid_argument("mca: virtual precision must be in [1, 53], got " +
                                std::to_string(t));
  }
}

std::string_view to_string(McaMode mode) {
  return mode == McaMode::random_rounding ? "rr" : "full";
}

std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

RandomStream::RandomStream(std::uint64_t seed, std::uint64_t stream_id)
    : key_(splitmix64_mix(seed ^ splitmix64_mix(stream_id + kGoldenGamma))) {}

double RandomStream::next_xi() {
  ++counter_;
  const std::uint64_t u = splitmix64_mix(key_ + counter_ * kGoldenGamma);
  return (static_cast<double>(u >> 12) + 0.5) * 0x1p-52 - 0.5;
}

RandomStream RandomStream::fork(std::uint64_t tag) const {
  return RandomStream(FromKey{}, splitmix64_mix(key_ ^ splitmix64_mix(tag + kGoldenGamma)));
}

int magnitude_exponent(double x) {
  if (!perturbable(x)) {
    throw std::domain_error("magnitude_exponent: argument must be finite and nonzero");
  }
  int exponent = 0;
  std::frexp(x, &exponent);  // |x| = m * 2^exponent with m in [1/2, 1)
  return exponent;
}

double perturb(double x, int t, double xi) {
  if (!perturbable(x)) return x;
  return x + std::ldexp(xi, magnitude_exponent(x) - t);
}

double inexact(double x, int t, RandomStream& rng) {
  if (!perturbable(x)) return x;
  return perturb(x, t, rng.next_xi());
}

double mca_op(double a, double b, ArithOp op, const McaConfig& cfg, RandomStream& rng) {
  if (cfg.mode == McaMode::full) {
    a = inexact(a, cfg.t, rng);
    b = inexact(b, cfg.t, rng);
  }
  return inexact(apply_ieee(op, a, b), cfg.t, rng);
}

double significant_bits(std::span<const double> samples) {
  if (samples.size() < 2) {
    throw std::invalid_argument("significant_bits: need at least two samples");
  }
  const double mean = mean_of(samples);
  return significant_bits_from(mean, bessel_stddev(samples, mean));
}

SampleStats summarize(std::span<const double> samples) {
  if (samples.empty()) throw std::invalid_argument("summarize: empty sample set");
  SampleStats stats;
  stats.n = samples.size();
  stats.mean = mean_of(samples);
  stats.stddev = bessel_stddev(samples, stats.mean);
  const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
  stats.min = *lo;
  stats.max = *hi;
  // Rounding in the mean can push it a hair outside [min, max].
  stats.mean = std::clamp(stats.mean, stats.min, stats.max);
  if (stats.n >= 2) stats.s2 = significant_bits_from(stats.mean, stats.stddev);
  return stats;
}

}  // namespace mixprec
