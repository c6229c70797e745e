#pragma once

// Reduced-precision emulation inside binary64: every result is computed at
// full width and then rounded to a narrower (mantissa, exponent) budget.

#include <cstdint>
#include <string>
#include <string_view>

namespace mixprec {

enum class ArithOp : std::uint8_t { add, sub, mul, div };

char op_symbol(ArithOp op);

/// Native binary64 evaluation of `a op b`.
inline double apply_ieee(ArithOp op, double a, double b) {
  switch (op) {
    case ArithOp::add: return a + b;
    case ArithOp::sub: return a - b;
    case ArithOp::mul: return a * b;
    case ArithOp::div: return a / b;
  }
  return a + b;
}

/// An emulated floating-point format: `t` explicit fraction bits and `r`
/// exponent bits. binary32 is t23r8, binary16 is t10r5, binary64 is t52r11.
class VprecFormat {
 public:
  static constexpr int kMinMantissa = 1;
  static constexpr int kMaxMantissa = 52;
  static constexpr int kMinExponent = 2;
  static constexpr int kMaxExponent = 11;

  /// Throws std::invalid_argument when t or r is outside the emulatable range.
  VprecFormat(int t, int r);

  /// Parses the "t<t>r<r>" form, e.g. "t23r8".
  static VprecFormat parse(std::string_view text);

  int mantissa_bits() const { return t_; }
  int exponent_bits() const { return r_; }
  int bias() const { return (1 << (r_ - 1)) - 1; }
  int emax() const { return bias(); }
  int emin() const { return 1 - bias(); }

  std::string to_string() const;

  friend bool operator==(const VprecFormat&, const VprecFormat&) = default;

 private:
  int t_;
  int r_;
};

struct FormatBounds {
  int emin;
  int emax;
  double min_subnormal;  // 2^(emin - t)
};

FormatBounds format_bounds(const VprecFormat& fmt);

/// Rounds x to the nearest value of `fmt` (ties to even) with gradual
/// underflow and overflow to infinity. NaN and infinities pass through.
double vprec_round(double x, const VprecFormat& fmt);

/// Computes `a op b` in binary64 and rounds the result to `fmt`.
inline double vprec_op(double a, double b, ArithOp op, const VprecFormat& fmt) {
  return vprec_round(apply_ieee(op, a, b), fmt);
}

}  // namespace mixprec
