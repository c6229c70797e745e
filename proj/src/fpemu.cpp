#include "mixprec/fpemu.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <stdexcept>

namespace mixprec {

namespace {

constexpr std::uint64_t kSignMask = 0x8000000000000000ULL;
constexpr std::uint64_t kExpMask = 0x7ff0000000000000ULL;
constexpr int kFractionBits = 52;
constexpr int kBinary64Bias = 1023;

bool parse_int(std::string_view text, int& out) {
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last;
}

// Rounds |x| to a multiple of 2^quantum_exp, ties to even. Only used when the
// scaled value fits comfortably in the binary64 significand.
double round_to_quantum(double magnitude, int quantum_exp) {
  const double scaled = std::ldexp(magnitude, -quantum_exp);
  return std::ldexp(std::nearbyint(scaled), quantum_exp);
}

}  // namespace

char op_symbol(ArithOp op) {
  switch (op) {
    case ArithOp::add: return '+';
    case ArithOp::sub: return '-';
    case ArithOp::mul: return '*';
    case ArithOp::div: return '/';
  }
  return '?';
}

VprecFormat::VprecFormat(int t, int r) : t_(t), r_(r) {
  if (t < kMinMantissa || t > kMaxMantissa) {
    throw std::invalid_argument("vprec: pseudo-mantissa bits must be in [1, 52], got " +
                                std::to_string(t));
  }
  if (r < kMinExponent || r > kMaxExponent) {
    throw std::invalid_argument("vprec: exponent bits must be in [2, 11], got " +
                                std::to_string(r));
  }
}

VprecFormat VprecFormat::parse(std::string_view text) {
  const auto rpos = text.find('r');
  int t = 0;
  int r = 0;
  if (text.size() < 4 || text.front() != 't' || rpos == std::string_view::npos ||
      !parse_int(text.substr(1, rpos - 1), t) || !parse_int(text.substr(rpos + 1), r)) {
    throw std::invalid_argument("vprec: malformed format '" + std::string(text) +
                                "', expected t<bits>r<bits>");
  }
  return VprecFormat(t, r);
}

std::string VprecFormat::to_string() const {
  return "t" + std::to_string(t_) + "r" + std::to_string(r_);
}

FormatBounds format_bounds(const VprecFormat& fmt) {
  return {fmt.emin(), fmt.emax(), std::ldexp(1.0, fmt.emin() - fmt.mantissa_bits())};
}

double vprec_round(double x, const VprecFormat& fmt) {
  const auto bits = std::bit_cast<std::uint64_t>(x);
  const std::uint64_t sign = bits & kSignMask;
  std::uint64_t mag = bits & ~kSignMask;
  const auto biased = static_cast<int>(mag >> kFractionBits);

  if (biased == 0x7ff || mag == 0) {
    return x;  // NaN, Inf, signed zero
  }

  const int t = fmt.mantissa_bits();
  const int exponent = biased - kBinary64Bias;

  if (biased == 0 || exponent < fmt.emin()) {
    // Subnormal in the emulated format: fixed quantum 2^(emin - t).
    const double rounded = round_to_quantum(std::fabs(x), fmt.emin() - t);
    return std::copysign(rounded, x);
  }

  const int drop = kFractionBits - t;
  if (drop > 0) {
    const std::uint64_t half = std::uint64_t{1} << (drop - 1);
    const std::uint64_t lsb = (mag >> drop) & 1U;
    mag += half - 1 + lsb;
    mag &= ~((std::uint64_t{1} << drop) - 1);
  }

  const int rounded_exponent = static_cast<int>(mag >> kFractionBits) - kBinary64Bias;
  if (rounded_exponent > fmt.emax()) {
    mag = kExpMask;  // infinity
  }
  return std::bit_cast<double>(sign | mag);
}

}  // namespace mixprec
