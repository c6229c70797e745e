#pragma once

// Preconditioned conjugate gradient over the spectral-element operator, in
// double, native single, or mixed (double setup, single loop) storage.

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mixprec/context.hpp"
#include "mixprec/sem.hpp"

namespace mixprec {

enum class Preconditioner { none, jacobi };
enum class Variant { double_precision, single_precision, mixed };

std::string_view to_string(Preconditioner p);
std::string_view to_string(Variant v);
Preconditioner parse_preconditioner(std::string_view text);
Variant parse_variant(std::string_view text);

struct CgConfig {
  int miter = 1000;
  double tol = 1.0e-10;
  Preconditioner precond = Preconditioner::none;
  Variant variant = Variant::double_precision;

  /// Throws std::invalid_argument unless tol > 0 and miter >= 1.
  void validate() const;
};

struct CgIteration {
  int iteration = 0;
  double residual = 0.0;
  double rtz1 = 0.0;
  double beta = 0.0;
  double alpha = 0.0;
  double pap = 0.0;
  double rtr = 0.0;

  friend bool operator==(const CgIteration&, const CgIteration&) = default;
};

struct CgTrace {
  std::vector<CgIteration> records;
  int iterations = 0;
  bool converged = false;

  double final_residual() const;
  std::vector<double> residuals() const;
  /// iteration,residual,rtz1,beta,alpha,pap,rtr
  std::string to_csv() const;

  friend bool operator==(const CgTrace&, const CgTrace&) = default;
};

struct CgResult {
  Field<double> x;  // converted back to binary64 for every variant
  CgTrace trace;
};

enum class DefectKind { nonpositive_pap, nan_residual };

/// Raised when the loop meets pap <= 0 or a NaN residual. Carries the trace
/// up to the failing iteration.
class SolverDefect : public std::runtime_error {
 public:
  SolverDefect(DefectKind kind, std::string message, CgTrace partial)
      : std::runtime_error(std::move(message)), kind_(kind), trace_(std::move(partial)) {}
  DefectKind kind() const { return kind_; }
  const CgTrace& trace() const { return trace_; }

 private:
  DefectKind kind_;
  CgTrace trace_;
};

/// Manufactured right-hand side sin(pi x) sin(pi y) sin(pi z), masked.
Field<double> make_rhs(const Mesh& mesh, Context& ctx);

/// z <- r (none) or z <- r / diag(A) (jacobi).
template <class Real>
void solve_m(std::span<Real> z, std::span<const Real> r, const SemCoefficients<Real>& coef,
             Preconditioner precond, Context& ctx);

/// Solves A x = f from x = 0. The loop body follows Nekbone's cg.f kernel
/// sequence; convergence is sqrt(rtr) <= tol.
CgResult cg_solve(const Mesh& mesh, std::span<const double> f, const CgConfig& cfg,
                  Context& ctx);

struct AccuracyMetrics {
  std::vector<double> ae;
  double mae = 0.0;
};

/// Per-iteration |r_m - r_d| over the common prefix and its mean.
/// Throws std::invalid_argument if either trace is empty.
AccuracyMetrics accuracy_metrics(const CgTrace& mixed, const CgTrace& reference);

/// (t_double - t_mixed) / t_double. Throws std::invalid_argument if
/// t_double <= 0.
double gain(double t_double, double t_mixed);

}  // namespace mixprec
