#include "mixprec/sem.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace mixprec {

namespace {

constexpr int kMaxNewtonSteps = 100;
constexpr double kNewtonTolerance = 1e-14;

void require_same_size(std::size_t a, std::size_t b, std::string_view what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": length mismatch (" + std::to_string(a) +
                                " vs " + std::to_string(b) + ")");
  }
}

template <class Real>
std::uint64_t bytes_of(std::size_t count) {
  return static_cast<std::uint64_t>(count) * sizeof(Real);
}

// Local diagonal of G^T g G for one point, before assembly.
double local_diagonal(const SemCoefficients<double>& coef, std::size_t base, int i, int j, int k) {
  const int n = coef.nx1;
  const auto at = [&](int a, int b, int c) { return base + a + n * (b + n * c); };
  const auto d = [&](int row, int col) { return coef.d[row * n + col]; };
  const auto& g = coef.g;
  double sum = 0.0;
  for (int l = 0; l < n; ++l) {
    sum += d(l, i) * d(l, i) * g[0][at(l, j, k)];
    sum += d(l, j) * d(l, j) * g[3][at(i, l, k)];
    sum += d(l, k) * d(l, k) * g[5][at(i, j, l)];
  }
  const std::size_t self = at(i, j, k);
  sum += 2.0 * d(i, i) * d(j, j) * g[1][self];
  sum += 2.0 * d(i, i) * d(k, k) * g[2][self];
  sum += 2.0 * d(j, j) * d(k, k) * g[4][self];
  return sum;
}

}  // namespace

GllRule gll_setup(int nx1) {
  if (nx1 < 2 || nx1 > 32) {
    throw std::invalid_argument("gll_setup: nx1 must be in [2, 32], got " + std::to_string(nx1));
  }
  const int order = nx1 - 1;
  GllRule rule;
  rule.points = nx1;
  rule.nodes.resize(nx1);
  rule.weights.resize(nx1);

  // Newton iteration on (1 - x^2) P_N'(x) starting from Chebyshev-Lobatto points.
  std::vector<double> p_n(nx1), p_nm1(nx1);
  for (int i = 0; i < nx1; ++i) {
    rule.nodes[i] = -std::cos(std::numbers::pi * i / order);
  }
  bool converged = false;
  for (int step = 0; step < kMaxNewtonSteps && !converged; ++step) {
    double max_update = 0.0;
    for (int i = 0; i < nx1; ++i) {
      const double x = rule.nodes[i];
      double prev = 1.0;
      double curr = x;
      for (int m = 2; m <= order; ++m) {
        const double next = ((2.0 * m - 1.0) * x * curr - (m - 1.0) * prev) / m;
        prev = curr;
        curr = next;
      }
      p_n[i] = curr;
      p_nm1[i] = order == 1 ? 1.0 : prev;
      const double update = (x * p_n[i] - p_nm1[i]) / (nx1 * p_n[i]);
      rule.nodes[i] = x - update;
      max_update = std::max(max_update, std::fabs(update));
    }
    converged = max_update <= kNewtonTolerance;
  }
  if (!converged) throw std::runtime_error("gll_setup: Newton iteration did not converge");

  for (int i = 0; i < nx1 / 2; ++i) {
    const double half = 0.5 * (rule.nodes[order - i] - rule.nodes[i]);
    rule.nodes[i] = -half;
    rule.nodes[order - i] = half;
  }
  if (nx1 % 2 == 1) rule.nodes[order / 2] = 0.0;

  // Legendre values at the symmetrised nodes for weights and D.
  for (int i = 0; i < nx1; ++i) {
    const double x = rule.nodes[i];
    double prev = 1.0;
    double curr = x;
    for (int m = 2; m <= order; ++m) {
      const double next = ((2.0 * m - 1.0) * x * curr - (m - 1.0) * prev) / m;
      prev = curr;
      curr = next;
    }
    p_n[i] = curr;
    rule.weights[i] = 2.0 / (order * nx1 * curr * curr);
  }

  rule.derivative.assign(static_cast<std::size_t>(nx1) * nx1, 0.0);
  for (int i = 0; i < nx1; ++i) {
    double row_sum = 0.0;
    for (int j = 0; j < nx1; ++j) {
      if (i == j) continue;
      const double value = p_n[i] / (p_n[j] * (rule.nodes[i] - rule.nodes[j]));
      rule.derivative[i * nx1 + j] = value;
      row_sum += value;
    }
    // Negative-sum diagonal keeps D * 1 = 0 to rounding.
    rule.derivative[i * nx1 + i] = -row_sum;
  }
  return rule;
}

template <class Real>
SemCoefficients<Real> cast_coefficients(const SemCoefficients<double>& source) {
  const auto convert = [](const std::vector<double>& v) {
    return std::vector<Real>(v.begin(), v.end());
  };
  SemCoefficients<Real> out;
  out.nx1 = source.nx1;
  out.d = convert(source.d);
  out.dt = convert(source.dt);
  for (std::size_t m = 0; m < source.g.size(); ++m) out.g[m] = convert(source.g[m]);
  out.c = convert(source.c);
  out.diagonal = convert(source.diagonal);
  return out;
}

std::size_t Mesh::interior_dofs() const {
  const std::size_t gx = static_cast<std::size_t>(ex) * (nx1 - 1) + 1;
  const std::size_t gy = static_cast<std::size_t>(ey) * (nx1 - 1) + 1;
  const std::size_t gz = static_cast<std::size_t>(ez) * (nx1 - 1) + 1;
  return (gx - 2) * (gy - 2) * (gz - 2);
}

std::size_t Mesh::masked_points() const {
  std::size_t count = 0;
  for (double m : mask) count += m == 0.0 ? 1 : 0;
  return count;
}

Mesh setup_box_mesh(int ex, int ey, int ez, int nx1) {
  if (ex < 1 || ey < 1 || ez < 1) {
    throw std::invalid_argument("setup_box_mesh: element counts must be >= 1");
  }
  Mesh mesh;
  mesh.ex = ex;
  mesh.ey = ey;
  mesh.ez = ez;
  mesh.nx1 = nx1;
  mesh.gll = gll_setup(nx1);

  const int n = nx1;
  const std::size_t npts = mesh.size();
  const std::size_t gx = static_cast<std::size_t>(ex) * (n - 1) + 1;
  const std::size_t gy = static_cast<std::size_t>(ey) * (n - 1) + 1;
  const std::size_t gz = static_cast<std::size_t>(ez) * (n - 1) + 1;
  mesh.global_count = gx * gy * gz;

  const double hx = 1.0 / ex;
  const double hy = 1.0 / ey;
  const double hz = 1.0 / ez;
  const double jacobian = hx * hy * hz / 8.0;
  const double rx = 2.0 / hx;
  const double sy = 2.0 / hy;
  const double tz = 2.0 / hz;

  auto& coef = mesh.coef;
  coef.nx1 = n;
  coef.d = mesh.gll.derivative;
  coef.dt.resize(coef.d.size());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) coef.dt[j * n + i] = coef.d[i * n + j];
  }
  for (auto& g : coef.g) g.assign(npts, 0.0);

  mesh.x.resize(npts);
  mesh.y.resize(npts);
  mesh.z.resize(npts);
  mesh.global_id.resize(npts);
  mesh.mask.resize(npts);

  const auto& xi = mesh.gll.nodes;
  const auto& w = mesh.gll.weights;
  std::size_t p = 0;
  for (int c = 0; c < ez; ++c) {
    for (int b = 0; b < ey; ++b) {
      for (int a = 0; a < ex; ++a) {
        for (int k = 0; k < n; ++k) {
          for (int j = 0; j < n; ++j) {
            for (int i = 0; i < n; ++i, ++p) {
              mesh.x[p] = (a + 0.5 * (xi[i] + 1.0)) * hx;
              mesh.y[p] = (b + 0.5 * (xi[j] + 1.0)) * hy;
              mesh.z[p] = (c + 0.5 * (xi[k] + 1.0)) * hz;
              const std::size_t gi = static_cast<std::size_t>(a) * (n - 1) + i;
              const std::size_t gj = static_cast<std::size_t>(b) * (n - 1) + j;
              const std::size_t gk = static_cast<std::size_t>(c) * (n - 1) + k;
              mesh.global_id[p] = static_cast<std::uint32_t>(gi + gx * (gj + gy * gk));
              const bool boundary = gi == 0 || gi == gx - 1 || gj == 0 || gj == gy - 1 ||
                                    gk == 0 || gk == gz - 1;
              mesh.mask[p] = boundary ? 0.0 : 1.0;
              const double weight = w[i] * w[j] * w[k] * jacobian;
              coef.g[0][p] = weight * rx * rx;
              coef.g[3][p] = weight * sy * sy;
              coef.g[5][p] = weight * tz * tz;
            }
          }
        }
      }
    }
  }

  std::vector<std::uint32_t> copies(mesh.global_count, 0);
  for (auto id : mesh.global_id) ++copies[id];
  mesh.multiplicity.resize(npts);
  coef.c.resize(npts);
  for (std::size_t q = 0; q < npts; ++q) {
    mesh.multiplicity[q] = static_cast<int>(copies[mesh.global_id[q]]);
    coef.c[q] = 1.0 / mesh.multiplicity[q];
  }

  // CSR groups of shared points, members in ascending local order.
  std::vector<std::uint32_t> group_of(mesh.global_count, UINT32_MAX);
  std::vector<std::uint32_t> group_sizes;
  for (auto id : mesh.global_id) {
    if (copies[id] < 2 || group_of[id] != UINT32_MAX) continue;
    group_of[id] = static_cast<std::uint32_t>(group_sizes.size());
    group_sizes.push_back(copies[id]);
  }
  mesh.gs_offsets.assign(group_sizes.size() + 1, 0);
  for (std::size_t gidx = 0; gidx < group_sizes.size(); ++gidx) {
    mesh.gs_offsets[gidx + 1] = mesh.gs_offsets[gidx] + group_sizes[gidx];
  }
  mesh.gs_members.resize(mesh.gs_offsets.back());
  std::vector<std::uint32_t> fill(mesh.gs_offsets.begin(), mesh.gs_offsets.end() - 1);
  for (std::size_t q = 0; q < npts; ++q) {
    const auto group = group_of[mesh.global_id[q]];
    if (group != UINT32_MAX) mesh.gs_members[fill[group]++] = static_cast<std::uint32_t>(q);
  }

  // Assembled diagonal for the Jacobi preconditioner.
  coef.diagonal.resize(npts);
  const std::size_t per_element = mesh.points_per_element();
  for (int e = 0; e < mesh.elements(); ++e) {
    const std::size_t base = per_element * e;
    for (int k = 0; k < n; ++k) {
      for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
          coef.diagonal[base + i + n * (j + n * k)] = local_diagonal(coef, base, i, j, k);
        }
      }
    }
  }
  std::vector<double> assembled(mesh.global_count, 0.0);
  for (std::size_t q = 0; q < npts; ++q) assembled[mesh.global_id[q]] += coef.diagonal[q];
  for (std::size_t q = 0; q < npts; ++q) {
    if (mesh.mask[q] == 0.0) {
      coef.diagonal[q] = 1.0;
      continue;
    }
    coef.diagonal[q] = assembled[mesh.global_id[q]];
    if (!(coef.diagonal[q] > 0.0)) {
      throw std::runtime_error("setup_box_mesh: non-positive operator diagonal at interior point");
    }
  }
  return mesh;
}

template <class Real>
void mxm(std::span<const Real> a, int n1, std::span<const Real> b, int n2, std::span<Real> c,
         int n3, Context& ctx) {
  if (n1 < 0 || n2 < 0 || n3 < 0 || a.size() != static_cast<std::size_t>(n1) * n2 ||
      b.size() != static_cast<std::size_t>(n2) * n3 ||
      c.size() != static_cast<std::size_t>(n1) * n3) {
    throw std::invalid_argument("mxm: nonconforming dimensions");
  }
  ctx.run<Real>(kernel::mxm, [&](auto& ar) {
    for (int i = 0; i < n1; ++i) {
      const Real* row = a.data() + static_cast<std::size_t>(i) * n2;
      for (int j = 0; j < n3; ++j) {
        Real sum = 0;
        if (n2 > 0) {
          sum = ar.mul(row[0], b[j]);
          for (int k = 1; k < n2; ++k) sum = ar.add(sum, ar.mul(row[k], b[k * n3 + j]));
        }
        c[static_cast<std::size_t>(i) * n3 + j] = sum;
      }
    }
  });
  ctx.charge_traffic(kernel::mxm, bytes_of<Real>(a.size() + b.size()), bytes_of<Real>(c.size()));
}

template <class Real>
void local_grad3(std::span<const Real> u, std::span<Real> ur, std::span<Real> us,
                 std::span<Real> ut, const SemCoefficients<Real>& coef, Context& ctx) {
  const int n = coef.nx1;
  const int n2 = n * n;
  const std::span<const Real> d(coef.d);
  const std::span<const Real> dt(coef.dt);
  mxm<Real>(u, n2, dt, n, ur, n, ctx);
  for (int k = 0; k < n; ++k) {
    mxm<Real>(d, n, u.subspan(k * n2, n2), n, us.subspan(k * n2, n2), n, ctx);
  }
  mxm<Real>(d, n, u, n, ut, n2, ctx);
}

template <class Real>
void local_grad3_t(std::span<Real> u, std::span<const Real> ur, std::span<const Real> us,
                   std::span<const Real> ut, const SemCoefficients<Real>& coef,
                   std::span<Real> scratch, Context& ctx) {
  const int n = coef.nx1;
  const int n2 = n * n;
  const std::span<const Real> d(coef.d);
  const std::span<const Real> dt(coef.dt);
  mxm<Real>(ur, n2, d, n, u, n, ctx);
  for (int k = 0; k < n; ++k) {
    mxm<Real>(dt, n, us.subspan(k * n2, n2), n, scratch.subspan(k * n2, n2), n, ctx);
  }
  add2<Real>(u, scratch, ctx);
  mxm<Real>(dt, n, ut, n, scratch, n2, ctx);
  add2<Real>(u, scratch, ctx);
}

template <class Real>
void gather_scatter(std::span<Real> f, const Mesh& mesh, Context& ctx) {
  require_same_size(f.size(), mesh.size(), "gather_scatter");
  const auto& offsets = mesh.gs_offsets;
  const auto& members = mesh.gs_members;
  ctx.run<Real>(kernel::gs, [&](auto& ar) {
    for (std::size_t g = 0; g + 1 < offsets.size(); ++g) {
      Real sum = f[members[offsets[g]]];
      for (auto m = offsets[g] + 1; m < offsets[g + 1]; ++m) sum = ar.add(sum, f[members[m]]);
      for (auto m = offsets[g]; m < offsets[g + 1]; ++m) f[members[m]] = sum;
    }
  });
  ctx.charge_traffic(kernel::gs, bytes_of<Real>(members.size()), bytes_of<Real>(members.size()));
}

template <class Real>
void apply_mask(std::span<Real> f, const Mesh& mesh, Context& ctx) {
  require_same_size(f.size(), mesh.size(), "apply_mask");
  std::size_t zeroed = 0;
  ctx.run<Real>(kernel::mask, [&](auto&) {
    for (std::size_t q = 0; q < f.size(); ++q) {
      if (mesh.mask[q] == 0.0) {
        f[q] = Real(0);
        ++zeroed;
      }
    }
  });
  ctx.charge_traffic(kernel::mask, bytes_of<Real>(f.size()), bytes_of<Real>(zeroed));
}

template <class Real>
Real glsc3(std::span<const Real> a, std::span<const Real> b, std::span<const Real> c,
           Context& ctx) {
  require_same_size(a.size(), b.size(), "glsc3");
  require_same_size(a.size(), c.size(), "glsc3");
  const Real result = ctx.run<Real>(kernel::glsc3, [&](auto& ar) {
    if (a.empty()) return Real(0);
    Real sum = ar.mul(ar.mul(a[0], b[0]), c[0]);
    for (std::size_t i = 1; i < a.size(); ++i) sum = ar.add(sum, ar.mul(ar.mul(a[i], b[i]), c[i]));
    return sum;
  });
  ctx.charge_traffic(kernel::glsc3, bytes_of<Real>(3 * a.size()), 0);
  return result;
}

template <class Real>
void add2s1(std::span<Real> a, std::span<const Real> b, Real beta, Context& ctx) {
  require_same_size(a.size(), b.size(), "add2s1");
  ctx.run<Real>(kernel::add2s1, [&](auto& ar) {
    ar.key_points(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      ar.at_point(i);
      a[i] = ar.add(ar.mul(beta, a[i]), b[i]);
    }
  });
  ctx.charge_traffic(kernel::add2s1, bytes_of<Real>(2 * a.size()), bytes_of<Real>(a.size()));
}

template <class Real>
void add2s2(std::span<Real> a, std::span<const Real> b, Real alpha, Context& ctx) {
  require_same_size(a.size(), b.size(), "add2s2");
  ctx.run<Real>(kernel::add2s2, [&](auto& ar) {
    ar.key_points(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      ar.at_point(i);
      a[i] = ar.add(a[i], ar.mul(alpha, b[i]));
    }
  });
  ctx.charge_traffic(kernel::add2s2, bytes_of<Real>(2 * a.size()), bytes_of<Real>(a.size()));
}

template <class Real>
void add2(std::span<Real> a, std::span<const Real> b, Context& ctx) {
  require_same_size(a.size(), b.size(), "add2");
  ctx.run<Real>(kernel::add2, [&](auto& ar) {
    ar.key_points(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      ar.at_point(i);
      a[i] = ar.add(a[i], b[i]);
    }
  });
  ctx.charge_traffic(kernel::add2, bytes_of<Real>(2 * a.size()), bytes_of<Real>(a.size()));
}

template <class Real>
AxOperator<Real>::AxOperator(const Mesh& mesh, const SemCoefficients<Real>& coef)
    : mesh_(mesh),
      coef_(coef),
      ur_(mesh.points_per_element()),
      us_(mesh.points_per_element()),
      ut_(mesh.points_per_element()),
      scratch_(mesh.points_per_element()) {
  if (coef.nx1 != mesh.nx1 || coef.c.size() != mesh.size()) {
    throw std::invalid_argument("AxOperator: coefficients do not match mesh");
  }
}

template <class Real>
void AxOperator<Real>::apply(std::span<Real> w, std::span<const Real> p, Context& ctx) {
  require_same_size(p.size(), mesh_.size(), "ax");
  require_same_size(w.size(), mesh_.size(), "ax");
  const std::size_t m = mesh_.points_per_element();
  const auto& g = coef_.g;
  for (int e = 0; e < mesh_.elements(); ++e) {
    const std::size_t base = m * e;
    local_grad3<Real>(p.subspan(base, m), ur_, us_, ut_, coef_, ctx);
    ctx.run<Real>(kernel::ax, [&](auto& ar) {
      for (std::size_t q = 0; q < m; ++q) {
        const std::size_t at = base + q;
        const Real r = ur_[q];
        const Real s = us_[q];
        const Real t = ut_[q];
        ur_[q] = ar.add(ar.add(ar.mul(g[0][at], r), ar.mul(g[1][at], s)), ar.mul(g[2][at], t));
        us_[q] = ar.add(ar.add(ar.mul(g[1][at], r), ar.mul(g[3][at], s)), ar.mul(g[4][at], t));
        ut_[q] = ar.add(ar.add(ar.mul(g[2][at], r), ar.mul(g[4][at], s)), ar.mul(g[5][at], t));
      }
    });
    ctx.charge_traffic(kernel::ax, bytes_of<Real>(9 * m), bytes_of<Real>(3 * m));
    local_grad3_t<Real>(w.subspan(base, m), ur_, us_, ut_, coef_, scratch_, ctx);
  }
  gather_scatter<Real>(w, mesh_, ctx);
  apply_mask<Real>(w, mesh_, ctx);
}

Field<double> ax(std::span<const double> p, const Mesh& mesh, Context& ctx) {
  Field<double> w(mesh.size());
  AxOperator<double> op(mesh, mesh.coef);
  op.apply(w, p, ctx);
  return w;
}

#define MIXPREC_INSTANTIATE_SEM(Real)                                                          \
  template SemCoefficients<Real> cast_coefficients<Real>(const SemCoefficients<double>&);      \
  template void mxm<Real>(std::span<const Real>, int, std::span<const Real>, int,              \
                          std::span<Real>, int, Context&);                                     \
  template void local_grad3<Real>(std::span<const Real>, std::span<Real>, std::span<Real>,     \
                                  std::span<Real>, const SemCoefficients<Real>&, Context&);    \
  template void local_grad3_t<Real>(std::span<Real>, std::span<const Real>,                    \
                                    std::span<const Real>, std::span<const Real>,              \
                                    const SemCoefficients<Real>&, std::span<Real>, Context&);  \
  template void gather_scatter<Real>(std::span<Real>, const Mesh&, Context&);                  \
  template void apply_mask<Real>(std::span<Real>, const Mesh&, Context&);                      \
  template Real glsc3<Real>(std::span<const Real>, std::span<const Real>,                      \
                            std::span<const Real>, Context&);                                  \
  template void add2s1<Real>(std::span<Real>, std::span<const Real>, Real, Context&);          \
  template void add2s2<Real>(std::span<Real>, std::span<const Real>, Real, Context&);          \
  template void add2<Real>(std::span<Real>, std::span<const Real>, Context&);                  \
  template class AxOperator<Real>;

MIXPREC_INSTANTIATE_SEM(double)
MIXPREC_INSTANTIATE_SEM(float)

#undef MIXPREC_INSTANTIATE_SEM

}  // namespace mixprec
