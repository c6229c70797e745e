#pragma once

// Spectral-element building blocks: GLL discretisation, the matrix-free
// tensor-product Laplacian, direct-stiffness gather-scatter and the CG vector
// kernels. Every floating-point operation runs through a Context under the
// kernel's own name.
//
// Fields are element-major: point (i, j, k) of element e lives at
// e * nx1^3 + i + nx1 * (j + nx1 * k), with i running along r (fastest).

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "mixprec/context.hpp"

namespace mixprec {

namespace kernel {
inline constexpr std::string_view mxm = "mxm";
inline constexpr std::string_view add2 = "add2";
inline constexpr std::string_view ax = "ax";
inline constexpr std::string_view gs = "gs";
inline constexpr std::string_view mask = "mask";
inline constexpr std::string_view glsc3 = "glsc3";
inline constexpr std::string_view add2s1 = "add2s1";
inline constexpr std::string_view add2s2 = "add2s2";
inline constexpr std::string_view solve_m = "solveM";
inline constexpr std::string_view cg = "cg";
inline constexpr std::string_view init_rhs = "init_rhs";
}  // namespace kernel

template <class Real>
using Field = std::vector<Real>;

/// Gauss-Lobatto-Legendre nodes and weights on [-1, 1] (ascending) and the
/// row-major Lagrange derivative matrix D(i, j) = l_j'(x_i).
struct GllRule {
  int points = 0;
  std::vector<double> nodes;
  std::vector<double> weights;
  std::vector<double> derivative;
};

/// Requires 2 <= nx1 <= 32. Throws std::runtime_error if the Newton iteration
/// fails to converge.
GllRule gll_setup(int nx1);

/// Operator data at a given storage width. Geometric factors g[0..5] are
/// g11, g12, g13, g22, g23, g33 with quadrature weights and Jacobian folded in.
template <class Real>
struct SemCoefficients {
  int nx1 = 0;
  std::vector<Real> d;   // derivative matrix, row-major nx1 x nx1
  std::vector<Real> dt;  // its transpose
  std::array<std::vector<Real>, 6> g;
  std::vector<Real> c;         // inverse multiplicity
  std::vector<Real> diagonal;  // assembled diagonal of the operator, 1 on masked points
};

template <class Real>
SemCoefficients<Real> cast_coefficients(const SemCoefficients<double>& source);

/// Affine box mesh of the unit cube with homogeneous Dirichlet boundary.
struct Mesh {
  int ex = 0, ey = 0, ez = 0, nx1 = 0;
  GllRule gll;

  std::vector<double> x, y, z;  // physical coordinates per point

  std::vector<std::uint32_t> global_id;
  std::size_t global_count = 0;
  // Groups of coincident points with two or more copies, stored CSR-style.
  std::vector<std::uint32_t> gs_offsets;
  std::vector<std::uint32_t> gs_members;

  std::vector<double> mask;  // 0 on the Dirichlet boundary, 1 elsewhere
  std::vector<int> multiplicity;
  SemCoefficients<double> coef;

  int elements() const { return ex * ey * ez; }
  std::size_t points_per_element() const {
    return static_cast<std::size_t>(nx1) * nx1 * nx1;
  }
  std::size_t size() const { return points_per_element() * elements(); }
  std::size_t interior_dofs() const;
  std::size_t masked_points() const;
};

/// Throws std::invalid_argument for element counts < 1 or nx1 outside [2, 32].
Mesh setup_box_mesh(int ex, int ey, int ez, int nx1);

/// C (n1 x n3) = A (n1 x n2) * B (n2 x n3), row-major.
template <class Real>
void mxm(std::span<const Real> a, int n1, std::span<const Real> b, int n2, std::span<Real> c,
         int n3, Context& ctx);

/// Reference-space gradient of one element's values: ur along r, us along s,
/// ut along t.
template <class Real>
void local_grad3(std::span<const Real> u, std::span<Real> ur, std::span<Real> us,
                 std::span<Real> ut, const SemCoefficients<Real>& coef, Context& ctx);

/// Adjoint of local_grad3. `scratch` must hold nx1^3 values.
template <class Real>
void local_grad3_t(std::span<Real> u, std::span<const Real> ur, std::span<const Real> us,
                   std::span<const Real> ut, const SemCoefficients<Real>& coef,
                   std::span<Real> scratch, Context& ctx);

template <class Real>
void gather_scatter(std::span<Real> f, const Mesh& mesh, Context& ctx);

template <class Real>
void apply_mask(std::span<Real> f, const Mesh& mesh, Context& ctx);

/// Sum of a[i] * b[i] * c[i], accumulated left to right.
template <class Real>
Real glsc3(std::span<const Real> a, std::span<const Real> b, std::span<const Real> c,
           Context& ctx);

/// a <- beta * a + b
template <class Real>
void add2s1(std::span<Real> a, std::span<const Real> b, Real beta, Context& ctx);

/// a <- a + alpha * b
template <class Real>
void add2s2(std::span<Real> a, std::span<const Real> b, Real alpha, Context& ctx);

/// a <- a + b
template <class Real>
void add2(std::span<Real> a, std::span<const Real> b, Context& ctx);

/// Matrix-free stiffness operator w = mask(gs(sum_e G_e^T g G_e p)).
template <class Real>
class AxOperator {
 public:
  AxOperator(const Mesh& mesh, const SemCoefficients<Real>& coef);

  void apply(std::span<Real> w, std::span<const Real> p, Context& ctx);

 private:
  const Mesh& mesh_;
  const SemCoefficients<Real>& coef_;
  std::vector<Real> ur_, us_, ut_, scratch_;
};

/// Convenience binary64 form of AxOperator::apply.
Field<double> ax(std::span<const double> p, const Mesh& mesh, Context& ctx);

}  // namespace mixprec
