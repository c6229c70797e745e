#include "mixprec/cg.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace mixprec {

namespace {

template <class Real>
struct LoopOutput {
  Field<Real> x;
  CgTrace trace;
};

template <class Real>
Real scalar_div(Real a, Real b, Context& ctx) {
  return ctx.run<Real>(kernel::cg, [&](auto& ar) { return ar.div(a, b); });
}

template <class Real>
LoopOutput<Real> cg_loop(const Mesh& mesh, const SemCoefficients<Real>& coef,
                         std::span<const Real> f, const CgConfig& cfg, Context& ctx) {
  const std::size_t n = mesh.size();
  LoopOutput<Real> out;
  out.x.assign(n, Real(0));
  Field<Real> r(f.begin(), f.end());
  Field<Real> z(n), p(n, Real(0)), w(n);
  const std::span<const Real> c(coef.c);
  AxOperator<Real> ax_op(mesh, coef);

  auto& trace = out.trace;
  Real rtz1 = 1;
  for (int iter = 1; iter <= cfg.miter; ++iter) {
    solve_m<Real>(z, r, coef, cfg.precond, ctx);
    const Real rtz2 = rtz1;
    rtz1 = glsc3<Real>(r, c, z, ctx);
    const Real beta = iter == 1 ? Real(0) : scalar_div(rtz1, rtz2, ctx);
    add2s1<Real>(p, z, beta, ctx);
    ax_op.apply(w, p, ctx);
    const Real pap = glsc3<Real>(w, c, p, ctx);

    CgIteration rec;
    rec.iteration = iter;
    rec.rtz1 = rtz1;
    rec.beta = beta;
    rec.pap = pap;

    Real alpha = 0;
    if (pap > 0) {
      alpha = scalar_div(rtz1, pap, ctx);
    } else if (!(pap == 0 && rtz1 == 0)) {
      trace.records.push_back(rec);
      trace.iterations = iter;
      throw SolverDefect(DefectKind::nonpositive_pap,
                         "cg: pap <= 0 at iteration " + std::to_string(iter) +
                             " (operator not SPD or arithmetic breakdown)",
                         trace);
    }
    const Real alphm = -alpha;
    add2s2<Real>(out.x, p, alpha, ctx);
    add2s2<Real>(r, w, alphm, ctx);
    const Real rtr = glsc3<Real>(r, c, r, ctx);

    rec.alpha = alpha;
    rec.rtr = rtr;
    rec.residual = std::sqrt(static_cast<double>(rtr));
    trace.records.push_back(rec);
    trace.iterations = iter;
    if (std::isnan(rec.residual)) {
      throw SolverDefect(DefectKind::nan_residual,
                         "cg: NaN residual at iteration " + std::to_string(iter), trace);
    }
    if (rec.residual <= cfg.tol) {
      trace.converged = true;
      break;
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(Preconditioner p) {
  return p == Preconditioner::none ? "none" : "jacobi";
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::double_precision: return "double";
    case Variant::single_precision: return "single";
    case Variant::mixed: return "mixed";
  }
  return "double";
}

Preconditioner parse_preconditioner(std::string_view text) {
  if (text == "none") return Preconditioner::none;
  if (text == "jacobi") return Preconditioner::jacobi;
  throw std::invalid_argument("unknown preconditioner '" + std::string(text) + "'");
}

Variant parse_variant(std::string_view text) {
  if (text == "double") return Variant::double_precision;
  if (text == "single") return Variant::single_precision;
  if (text == "mixed") return Variant::mixed;
  throw std::invalid_argument("unknown variant '" + std::string(text) + "'");
}

void CgConfig::validate() const {
  if (!(tol > 0.0)) throw std::invalid_argument("cg: tol must be positive");
  if (miter < 1) throw std::invalid_argument("cg: miter must be >= 1");
}

double CgTrace::final_residual() const {
  return records.empty() ? std::nan("") : records.back().residual;
}

std::vector<double> CgTrace::residuals() const {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& rec : records) out.push_back(rec.residual);
  return out;
}

std::string CgTrace::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "iteration,residual,rtz1,beta,alpha,pap,rtr\n";
  for (const auto& r : records) {
    out << r.iteration << ',' << r.residual << ',' << r.rtz1 << ',' << r.beta << ',' << r.alpha
        << ',' << r.pap << ',' << r.rtr << '\n';
  }
  return out.str();
}

Field<double> make_rhs(const Mesh& mesh, Context& ctx) {
  ctx.bind_points(mesh.global_id);
  Field<double> f(mesh.size());
  constexpr double pi = std::numbers::pi;
  ctx.run<double>(kernel::init_rhs, [&](auto& ar) {
    ar.key_points(f.size());
    for (std::size_t q = 0; q < f.size(); ++q) {
      ar.at_point(q);
      f[q] = ar.mul(ar.mul(std::sin(pi * mesh.x[q]), std::sin(pi * mesh.y[q])),
                    std::sin(pi * mesh.z[q]));
    }
  });
  ctx.charge_traffic(kernel::init_rhs, 3 * sizeof(double) * f.size(), sizeof(double) * f.size());
  apply_mask<double>(f, mesh, ctx);
  return f;
}

template <class Real>
void solve_m(std::span<Real> z, std::span<const Real> r, const SemCoefficients<Real>& coef,
             Preconditioner precond, Context& ctx) {
  if (z.size() != r.size() || r.size() != coef.diagonal.size()) {
    throw std::invalid_argument("solveM: length mismatch");
  }
  if (precond == Preconditioner::none) {
    ctx.run<Real>(kernel::solve_m, [&](auto&) { std::copy(r.begin(), r.end(), z.begin()); });
    ctx.charge_traffic(kernel::solve_m, sizeof(Real) * r.size(), sizeof(Real) * z.size());
    return;
  }
  ctx.run<Real>(kernel::solve_m, [&](auto& ar) {
    ar.key_points(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
      ar.at_point(i);
      z[i] = ar.div(r[i], coef.diagonal[i]);
    }
  });
  ctx.charge_traffic(kernel::solve_m, 2 * sizeof(Real) * r.size(), sizeof(Real) * z.size());
}

template void solve_m<double>(std::span<double>, std::span<const double>,
                              const SemCoefficients<double>&, Preconditioner, Context&);
template void solve_m<float>(std::span<float>, std::span<const float>,
                             const SemCoefficients<float>&, Preconditioner, Context&);

CgResult cg_solve(const Mesh& mesh, std::span<const double> f, const CgConfig& cfg,
                  Context& ctx) {
  cfg.validate();
  if (f.size() != mesh.size()) throw std::invalid_argument("cg: rhs does not match mesh");
  ctx.bind_points(mesh.global_id);

  if (cfg.variant == Variant::double_precision) {
    auto out = cg_loop<double>(mesh, mesh.coef, f, cfg, ctx);
    return {std::move(out.x), std::move(out.trace)};
  }
  // Setup stays in binary64; the loop's operands are converted once here.
  const auto coef = cast_coefficients<float>(mesh.coef);
  const Field<float> f_single(f.begin(), f.end());
  auto out = cg_loop<float>(mesh, coef, f_single, cfg, ctx);
  return {Field<double>(out.x.begin(), out.x.end()), std::move(out.trace)};
}

AccuracyMetrics accuracy_metrics(const CgTrace& mixed, const CgTrace& reference) {
  if (mixed.records.empty() || reference.records.empty()) {
    throw std::invalid_argument("accuracy_metrics: empty trace");
  }
  const std::size_t common = std::min(mixed.records.size(), reference.records.size());
  AccuracyMetrics m;
  m.ae.reserve(common);
  double sum = 0.0;
  for (std::size_t i = 0; i < common; ++i) {
    m.ae.push_back(std::fabs(mixed.records[i].residual - reference.records[i].residual));
    sum += m.ae.back();
  }
  m.mae = sum / static_cast<double>(common);
  return m;
}

double gain(double t_double, double t_mixed) {
  if (!(t_double > 0.0)) throw std::invalid_argument("gain: baseline time must be positive");
  return (t_double - t_mixed) / t_double;
}

}  // namespace mixprec
