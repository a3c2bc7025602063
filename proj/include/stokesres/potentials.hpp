#pragma once

// Layer potentials and boundary operators.
//
// Unknowns are density values at the panel nodes. On panel l the density is reconstructed as
//   f(p) = f_l + sum_a c_a m_a(tau),   c = fit (f_nb - f_l)
// (see PanelStencil), and every integral runs over the carried surface y = map(l, p).
// Operators (collocation at nodes, W = diag(panel surface areas)):
//   double layer  D_lambda f (x) = int [ -n_i(y) d_i Gamma(x-y) + Phi(x-y) n(y)^T ] f(y)
//   conormal      K_lambda f (x) = p.v. int [ n_j(x) d_j Gamma(x-y) - n(x) Phi(x-y)^T ] f(y)
// The double layer of Gamma(lambda) is the adjoint of K at conj(lambda), so
//   assemble_Kstar(s) = D_{conj lambda},   assemble_K(s) = W^{-1} assemble_Kstar(s)^H W.
// Traces: u_+- = (-+1/2 + D_lambda) f,  (du/dnu)_+- = (+-1/2 + K_lambda) f,  "+" = interior.

#include "stokesres/common.hpp"
#include "stokesres/geometry.hpp"
#include "stokesres/kernels.hpp"
#include "stokesres/quadrature.hpp"

#include <array>
#include <cmath>
#include <memory>
#include <vector>

namespace stokesres {

/// Complex 3-vector density sampled at the panel nodes.
struct DensityField {
  MeshPtr mesh;
  CVector values; ///< length 3N, node-major

  DensityField() = default;
  DensityField(MeshPtr m, CVector v) : mesh(std::move(m)), values(std::move(v)) {
    if (!mesh) throw DomainError("density: null mesh");
    if (values.size() != 3 * static_cast<Eigen::Index>(mesh->size()))
      throw DomainError("density: length must equal 3 x triangle count");
  }
  static DensityField zero(MeshPtr m) {
    const auto n = static_cast<Eigen::Index>(m->size());
    return DensityField(std::move(m), CVector::Zero(3 * n));
  }
  CVec3 node(std::size_t i) const { return values.segment<3>(3 * static_cast<Eigen::Index>(i)); }
  void set_node(std::size_t i, const CVec3& v) { values.segment<3>(3 * static_cast<Eigen::Index>(i)) = v; }
  std::size_t size() const { return mesh ? mesh->size() : 0; }
};

/// Samples g(node, node normal) at every node.
template <class F>
DensityField sample_density(MeshPtr m, F&& g) {
  DensityField f = DensityField::zero(m);
  for (std::size_t i = 0; i < m->size(); ++i) f.set_node(i, g(m->node(i), m->node_normal(i)));
  return f;
}

/// Piecewise polynomial reconstruction of a density.
class DensityReconstruction {
public:
  using Coefficients = Eigen::Matrix<cplx, kMaxBasis, 3>;

  explicit DensityReconstruction(const DensityField& f) : field_(f), coef_(f.size()) {
    const SurfaceMesh& m = *f.mesh;
    for (std::size_t l = 0; l < m.size(); ++l) {
      Coefficients& c = coef_[l];
      c.setZero();
      const PanelStencil& st = m.stencil(l);
      const CVec3 fl = f.node(l);
      for (std::size_t j = 0; j < st.neighbors.size(); ++j) {
        const CVec3 d = f.node(static_cast<std::size_t>(st.neighbors[j])) - fl;
        for (int a = 0; a < st.basis; ++a) c.row(a) += st.fit(a, static_cast<Eigen::Index>(j)) * d.transpose();
      }
    }
  }

  const DensityField& field() const { return field_; }
  const SurfaceMesh& mesh() const { return *field_.mesh; }

  /// Density at the facet point p of panel l.
  CVec3 at(std::size_t l, const Vec3& p) const {
    const Monomials mo = monomials(mesh().facet_coords(l, p));
    return field_.node(l) + coef_[l].transpose() * mo.cast<cplx>();
  }

  bool panel_is_zero(std::size_t l) const { return field_.node(l).isZero(0.0) && coef_[l].isZero(0.0); }

private:
  DensityField field_;
  std::vector<Coefficients> coef_;
};

enum class Side { interior, exterior, boundary_limit };
enum class Representation { single_layer, double_layer };
enum class OperatorKind { single_layer, K, K_star };
enum class TraceKind { velocity_double_layer, conormal_single_layer, pressure };

/// Velocity, gradient (grad_u(i,j) = d_j u_i) and pressure at a point.
struct FieldSample {
  CVec3 u = CVec3::Zero();
  CMat3 grad_u = CMat3::Zero();
  cplx phi = 0.0;
  Vec3 location = Vec3::Zero();
  Side side = Side::interior;

  /// Conormal derivative du/dn - phi n for the normal n.
  CVec3 conormal(const Vec3& n) const { return grad_u * n.cast<cplx>() - phi * n.cast<cplx>(); }
};

/// Dense discretized boundary operator.
struct BoundaryOperatorMatrix {
  CMatrix entries;
  OperatorKind kind;
  SpectralParameter spectral;
  RVector weights; ///< panel surface areas
};

/// Tuning of the panel quadrature.
struct QuadratureControl {
  double eta = 3.0;     ///< leaf accepted when dist(x, leaf) > eta * diam
  double kappa = 2.0;   ///< and |k| diam <= kappa
  int max_level = 16;   ///< recursion cap
  int polar_order = 10; ///< Gauss order per direction of the self-panel polar rule
  int pv_order = 32;    ///< Gauss order per edge of the principal-value angular integral
};

/// Unconjugated product a^T b of a real and a complex 3-vector.
inline cplx rdot(const Vec3& a, const CVec3& b) { return a(0) * b(0) + a(1) * b(1) + a(2) * b(2); }

inline RVector mesh_weights(const SurfaceMesh& m) {
  return Eigen::Map<const RVector>(m.weights().data(), static_cast<Eigen::Index>(m.size()));
}

namespace detail {

/// Adaptive 4-to-1 subdivision of a facet triangle with the 7-point rule at the leaves;
/// leaf(p, w) receives facet points and facet-area weights. `far` decides acceptance.
template <class Far, class F>
void subdivide(const Vec3& a, const Vec3& b, const Vec3& c, int level, const QuadratureControl& ctl, Far& far,
               F& leaf) {
  const double diam = std::sqrt(std::max({(b - a).squaredNorm(), (c - b).squaredNorm(), (a - c).squaredNorm()}));
  if (level >= ctl.max_level || far((a + b + c) / 3.0, diam)) {
    const quad::TriRule& r = quad::tri7();
    const double A = 0.5 * (b - a).cross(c - a).norm();
    for (std::size_t q = 0; q < r.size(); ++q) leaf(a + r.xi[q] * (b - a) + r.eta[q] * (c - a), r.w[q] * A);
    return;
  }
  const Vec3 ab = 0.5 * (a + b), bc = 0.5 * (b + c), ca = 0.5 * (c + a);
  subdivide(a, ab, ca, level + 1, ctl, far, leaf);
  subdivide(ab, b, bc, level + 1, ctl, far, leaf);
  subdivide(ca, bc, c, level + 1, ctl, far, leaf);
  subdivide(ab, bc, ca, level + 1, ctl, far, leaf);
}

/// Integrates over panel l for a target x off the panel; leaf(sp, w, p) receives the surface
/// point, the surface-area weight and the facet point.
template <class F>
void integrate_panel(const SurfaceMesh& m, std::size_t l, const Vec3& x, double kabs, const QuadratureControl& ctl,
                     F&& leaf) {
  auto far = [&](const Vec3& g, double diam) {
    return (x - m.map(l, g).y).norm() > ctl.eta * diam && kabs * diam <= ctl.kappa;
  };
  auto facet_leaf = [&](const Vec3& p, double w) {
    const SurfacePoint sp = m.map(l, p);
    leaf(sp, w * sp.jacobian, p);
  };
  const auto v = m.corners(l);
  subdivide(v[0], v[1], v[2], 0, ctl, far, facet_leaf);
}

/// Polar rule about the facet centroid of panel l, whose image is the node: each of the three
/// sub-triangles is swept as p = g + sigma (e(t) - g). Integrands with a 1/|y - x| singularity
/// become smooth.
template <class F>
void integrate_self(const SurfaceMesh& m, std::size_t l, int order, F&& leaf) {
  const quad::Rule1D& r = quad::gl01(order);
  const Vec3& g = m.centroid(l);
  const auto v = m.corners(l);
  for (int e = 0; e < 3; ++e) {
    const Vec3& a = v[e];
    const Vec3& b = v[(e + 1) % 3];
    const double A = 0.5 * (a - g).cross(b - g).norm();
    for (int it = 0; it < order; ++it) {
      const Vec3 edge = a + r.x[it] * (b - a);
      for (int is = 0; is < order; ++is) {
        const double sg = r.x[is];
        const Vec3 p = g + sg * (edge - g);
        const SurfacePoint sp = m.map(l, p);
        leaf(sp, 2.0 * A * sg * r.w[is] * r.w[it] * sp.jacobian, p);
      }
    }
  }
}

/// Principal value at the node of panel l of int K(x - y) dsigma(y) for a kernel K that is odd
/// and homogeneous of degree -2 near the node. `full(sp)` is K(x - y(p)); `homog(r)` is the
/// homogeneous leading kernel. With y(g + v) ~ x + L v, the leading part contributes
/// J(g) int K(-L e(theta)) log R(theta) dtheta and the rest is integrated by the polar rule.
template <class Full, class Homog>
auto self_principal_value(const SurfaceMesh& m, std::size_t l, const QuadratureControl& ctl, Full&& full,
                          Homog&& homog) {
  const Vec3& g = m.centroid(l);
  const Mat3 L = m.tangent_map(l);
  const double J0 = m.map(l, g).jacobian;
  const auto v = m.corners(l);
  using T = decltype(homog(Vec3::UnitX()));
  T acc = T::Zero();
  const quad::Rule1D& r = quad::gl01(ctl.pv_order);
  for (int e = 0; e < 3; ++e) {
    const Vec3& a = v[e];
    const Vec3& b = v[(e + 1) % 3];
    const double A = 0.5 * (a - g).cross(b - g).norm();
    for (int it = 0; it < ctl.pv_order; ++it) {
      const Vec3 d = a + r.x[it] * (b - a) - g;
      const double R = d.norm();
      acc += homog(-(L * (d / R))) * (J0 * std::log(R) * 2.0 * A / (R * R) * r.w[it]);
    }
  }
  integrate_self(m, l, ctl.polar_order, [&](const SurfacePoint& sp, double w, const Vec3& p) {
    acc += w * full(sp);
    acc -= (w / sp.jacobian * J0) * homog(-(L * (p - g)));
  });
  return acc;
}

/// Moments int K m_a dsigma, a = 0 (constant) and a = 1..basis (monomials).
template <class Block>
using Moments = std::array<Block, kMaxBasis + 1>;

template <class Block>
void clear(Moments<Block>& mom) {
  for (auto& b : mom) b.setZero();
}

template <class Block>
void add_moments(Moments<Block>& mom, const Block& k, double w, const Eigen::Vector2d& tau, int basis,
                 bool with_constant = true) {
  if (with_constant) mom[0] += w * k;
  if (basis == 0) return;
  const Monomials mo = monomials(tau);
  for (int a = 0; a < basis; ++a) mom[a + 1] += (w * mo(a)) * k;
}

/// Adds the moments of panel l to the row block starting at `row`.
template <class Block>
void scatter_moments(CMatrix& M, Eigen::Index row, const SurfaceMesh& m, std::size_t l, const Moments<Block>& mom) {
  constexpr int R = Block::RowsAtCompileTime;
  const PanelStencil& st = m.stencil(l);
  const auto col = [](std::size_t t) { return 3 * static_cast<Eigen::Index>(t); };
  M.block<R, 3>(row, col(l)) += mom[0];
  for (std::size_t j = 0; j < st.neighbors.size(); ++j) {
    Block acc = Block::Zero();
    for (int a = 0; a < st.basis; ++a) acc += st.fit(a, static_cast<Eigen::Index>(j)) * mom[a + 1];
    M.block<R, 3>(row, col(static_cast<std::size_t>(st.neighbors[j]))) += acc;
    M.block<R, 3>(row, col(l)) -= acc;
  }
}

/// Gamma(lambda) - Gamma(0) part of the double-layer kernel (the pressure term cancels).
inline CMat3 double_layer_remainder(const Vec3& r, const Vec3& n, cplx k) {
  const auto p = kernels::radial_profile(k, r.norm(), true);
  const double rn = r.dot(n) / p.r;
  CMat3 d = (-p.dC * rn) * (r * r.transpose()).cast<cplx>();
  d.diagonal().array() -= p.dA * rn;
  d -= p.C * (n * r.transpose() + r * n.transpose()).cast<cplx>();
  return d;
}

/// Double-layer matrix with kernel Gamma(k). The static self block of the constant moment is
/// calibrated so that constants satisfy D_0 c = -c/2; the remainder D_k - D_0 and all higher
/// moments of the self panel use the polar rule.
inline CMatrix double_layer_matrix(const SurfaceMesh& m, cplx k, const QuadratureControl& ctl) {
  const auto N = static_cast<Eigen::Index>(m.size());
  CMatrix M = CMatrix::Zero(3 * N, 3 * N);
  const double kabs = std::abs(k);
#pragma omp parallel for schedule(dynamic)
  for (Eigen::Index i = 0; i < N; ++i) {
    const Vec3 x = m.node(static_cast<std::size_t>(i));
    CMat3 rowsum0 = CMat3::Zero();
    Moments<CMat3> mom;
    for (Eigen::Index l = 0; l < N; ++l) {
      const auto lu = static_cast<std::size_t>(l);
      const int basis = m.stencil(lu).basis;
      clear(mom);
      if (l == i) {
        integrate_self(m, lu, ctl.polar_order, [&](const SurfacePoint& sp, double w, const Vec3& p) {
          const Vec3 r = x - sp.y;
          const Eigen::Vector2d tau = m.facet_coords(lu, p);
          mom[0] += w * double_layer_remainder(r, sp.n, k);
          add_moments(mom, kernels::double_layer_kernel(r, sp.n, kernels::radial_profile(k, r.norm())), w, tau,
                      basis, false);
        });
      } else {
        CMat3 acc0 = CMat3::Zero();
        integrate_panel(m, lu, x, kabs, ctl, [&](const SurfacePoint& sp, double w, const Vec3& p) {
          const Vec3 r = x - sp.y;
          const double rn = r.norm();
          const CMat3 d = kernels::double_layer_kernel(r, sp.n, kernels::radial_profile(k, rn));
          add_moments(mom, d, w, m.facet_coords(lu, p), basis);
          acc0 += w * kernels::double_layer_kernel(r, sp.n, kernels::radial_profile(0.0, rn));
        });
        rowsum0 += acc0;
      }
      scatter_moments(M, 3 * i, m, lu, mom);
    }
    M.block<3, 3>(3 * i, 3 * i) += -0.5 * CMat3::Identity() - rowsum0;
  }
  return M;
}

} // namespace detail

/// Single layer u(x) = int Gamma(x - y) f, phi(x) = int Phi(x - y) . f, off the boundary.
inline FieldSample single_layer_eval(const DensityReconstruction& f, const SpectralParameter& s, const Vec3& x,
                                     bool with_gradient = true, const QuadratureControl& ctl = {}) {
  if (s.dim != 3) throw DomainError("potentials: only d = 3 is supported");
  const SurfaceMesh& m = f.mesh();
  FieldSample out;
  out.location = x;
  const double kabs = std::abs(s.k);
  for (std::size_t l = 0; l < m.size(); ++l) {
    if (f.panel_is_zero(l)) continue;
    detail::integrate_panel(m, l, x, kabs, ctl, [&](const SurfacePoint& sp, double w, const Vec3& p) {
      const Vec3 r = x - sp.y;
      const double rn = r.norm();
      if (rn == 0.0) throw DomainError("single_layer_eval: point lies on the boundary");
      const CVec3 fy = f.at(l, p);
      const auto pr = kernels::radial_profile(s.k, rn);
      const cplx rf = rdot(r, fy);
      out.u += w * (pr.A * fy + pr.C * rf * r.cast<cplx>());
      out.phi += w * rdot(kernels::phi3(r), fy);
      if (with_gradient) {
        // d_j u_i = A' rh_j f_i + C' rh_j r_i (r.f) + C (r_i f_j + (r.f) delta_ij)
        const Vec3 rh = r / rn;
        CMat3 gr = (pr.dA * fy + pr.dC * rf * r.cast<cplx>()) * rh.cast<cplx>().transpose();
        gr += pr.C * r.cast<cplx>() * fy.transpose();
        gr.diagonal().array() += pr.C * rf;
        out.grad_u += w * gr;
      }
    });
  }
  return out;
}

/// Double layer u_j(x) = int [-n_i d_i Gamma_jk(x-y) + Phi_j(x-y) n_k] f_k and its pressure
///   phi(x) = int [ n_i d_i d_k G0(x-y) + lambda G0(x-y) n_k ] f_k.
inline FieldSample double_layer_eval(const DensityReconstruction& f, const SpectralParameter& s, const Vec3& x,
                                     bool with_gradient = true, const QuadratureControl& ctl = {}) {
  if (s.dim != 3) throw DomainError("potentials: only d = 3 is supported");
  const SurfaceMesh& m = f.mesh();
  FieldSample out;
  out.location = x;
  const double kabs = std::abs(s.k);
  for (std::size_t l = 0; l < m.size(); ++l) {
    if (f.panel_is_zero(l)) continue;
    detail::integrate_panel(m, l, x, kabs, ctl, [&](const SurfacePoint& sp, double w, const Vec3& p) {
      const Vec3 r = x - sp.y;
      const double rn = r.norm();
      if (rn == 0.0) throw DomainError("double_layer_eval: point lies on the boundary");
      const Vec3& n = sp.n;
      const CVec3 fy = f.at(l, p);
      const cplx nf = rdot(n, fy);
      const auto pr = kernels::radial_profile(s.k, rn);
      out.u += w * (kernels::double_layer_kernel(r, n, pr) * fy);
      const Vec3 rh = r / rn;
      const Mat3 hessG0 = (3.0 * rh * rh.transpose() - Mat3::Identity()) / (4.0 * kPi * rn * rn * rn);
      out.phi += w * (rdot(hessG0 * n, fy) + s.lambda * nf / (4.0 * kPi * rn));
      if (with_gradient) {
        const auto H = kernels::hess_gamma_from_profile(r, pr);
        const Mat3 dPhi = kernels::grad_phi3(r); // dPhi(m, j) = d_m Phi_j
        for (int mm = 0; mm < 3; ++mm) {
          CMat3 t = CMat3::Zero();
          for (int i = 0; i < 3; ++i) t -= n(i) * H[mm][i];
          out.grad_u.col(mm) += w * (t * fy + dPhi.row(mm).transpose().cast<cplx>() * nf);
        }
      }
    });
  }
  return out;
}

inline FieldSample evaluate(Representation rep, const DensityReconstruction& f, const SpectralParameter& s,
                            const Vec3& x, bool with_gradient = true, const QuadratureControl& ctl = {}) {
  return rep == Representation::single_layer ? single_layer_eval(f, s, x, with_gradient, ctl)
                                             : double_layer_eval(f, s, x, with_gradient, ctl);
}

inline FieldSample single_layer_eval(const DensityField& f, const SpectralParameter& s, const Vec3& x,
                                     bool with_gradient = true, const QuadratureControl& ctl = {}) {
  return single_layer_eval(DensityReconstruction(f), s, x, with_gradient, ctl);
}

inline FieldSample double_layer_eval(const DensityField& f, const SpectralParameter& s, const Vec3& x,
                                     bool with_gradient = true, const QuadratureControl& ctl = {}) {
  return double_layer_eval(DensityReconstruction(f), s, x, with_gradient, ctl);
}

inline FieldSample evaluate(Representation rep, const DensityField& f, const SpectralParameter& s, const Vec3& x,
                            bool with_gradient = true, const QuadratureControl& ctl = {}) {
  return evaluate(rep, DensityReconstruction(f), s, x, with_gradient, ctl);
}

/// Matrix mapping node densities to the velocity of the potential at off-boundary points
/// (3P x 3N); reuses one kernel pass for many densities.
inline CMatrix potential_matrix(Representation rep, const SurfaceMesh& m, const SpectralParameter& s,
                                const std::vector<Vec3>& points, const QuadratureControl& ctl = {}) {
  if (s.dim != 3) throw DomainError("potentials: only d = 3 is supported");
  const auto P = static_cast<Eigen::Index>(points.size());
  const auto N = static_cast<Eigen::Index>(m.size());
  CMatrix E = CMatrix::Zero(3 * P, 3 * N);
  const double kabs = std::abs(s.k);
  const bool single = rep == Representation::single_layer;
  bool on_boundary = false;
#pragma omp parallel for schedule(dynamic)
  for (Eigen::Index i = 0; i < P; ++i) {
    const Vec3& x = points[static_cast<std::size_t>(i)];
    detail::Moments<CMat3> mom;
    for (Eigen::Index l = 0; l < N; ++l) {
      const auto lu = static_cast<std::size_t>(l);
      detail::clear(mom);
      detail::integrate_panel(m, lu, x, kabs, ctl, [&](const SurfacePoint& sp, double w, const Vec3& p) {
        const Vec3 r = x - sp.y;
        const double rn = r.norm();
        if (rn == 0.0) {
#pragma omp atomic write
          on_boundary = true;
          return;
        }
        const auto pr = kernels::radial_profile(s.k, rn);
        detail::add_moments(mom, single ? kernels::gamma_from_profile(r, pr) : kernels::double_layer_kernel(r, sp.n, pr),
                            w, m.facet_coords(lu, p), m.stencil(lu).basis);
      });
      detail::scatter_moments(E, 3 * i, m, lu, mom);
    }
  }
  if (on_boundary) throw DomainError("potential_matrix: point lies on the boundary");
  return E;
}

/// Principal value of the static double layer over panel t at its own node.
inline CMat3 static_double_layer_self_pv(const SurfaceMesh& m, std::size_t t, const QuadratureControl& ctl = {}) {
  const Vec3 x = m.node(t);
  const Vec3& nx = m.node_normal(t);
  return detail::self_principal_value(
      m, t, ctl,
      [&](const SurfacePoint& sp) -> CMat3 {
        const Vec3 r = x - sp.y;
        return kernels::double_layer_kernel(r, sp.n, kernels::radial_profile(0.0, r.norm()));
      },
      [&](const Vec3& r) -> CMat3 {
        return kernels::double_layer_kernel(r, nx, kernels::radial_profile(0.0, r.norm()));
      });
}

/// K*_lambda: the double-layer operator of Gamma(conj lambda), the adjoint of K_lambda.
inline BoundaryOperatorMatrix assemble_Kstar(const SurfaceMesh& m, const SpectralParameter& s,
                                             const QuadratureControl& ctl = {}) {
  if (s.dim != 3) throw DomainError("potentials: only d = 3 is supported");
  return {detail::double_layer_matrix(m, conjugate(s).k, ctl), OperatorKind::K_star, s, mesh_weights(m)};
}

/// Double-layer operator of Gamma(lambda) itself (= K*_{conj lambda}), the operator in the
/// velocity trace formula.
inline BoundaryOperatorMatrix assemble_double_layer(const SurfaceMesh& m, const SpectralParameter& s,
                                                    const QuadratureControl& ctl = {}) {
  return assemble_Kstar(m, conjugate(s), ctl);
}

/// Static (lambda = 0) double-layer operator, calibrated so it maps constants c to -c/2.
inline CMatrix assemble_static_double_layer(const SurfaceMesh& m, const QuadratureControl& ctl = {}) {
  return detail::double_layer_matrix(m, 0.0, ctl);
}

/// Applies W^{-1} A^H W with W = diag(weights) repeated over the 3 components.
inline CMatrix weighted_adjoint(const CMatrix& A, const RVector& w) {
  const Eigen::Index n = A.rows();
  CMatrix B = A.adjoint();
  for (Eigen::Index i = 0; i < n; ++i) B.row(i) /= w(i / 3);
  for (Eigen::Index j = 0; j < n; ++j) B.col(j) *= w(j / 3);
  return B;
}

/// K_lambda = W^{-1} (K*_lambda)^H W.
inline BoundaryOperatorMatrix assemble_K(const SurfaceMesh& m, const SpectralParameter& s,
                                         const QuadratureControl& ctl = {}) {
  BoundaryOperatorMatrix ks = assemble_Kstar(m, s, ctl);
  return {weighted_adjoint(ks.entries, ks.weights), OperatorKind::K, s, ks.weights};
}

/// Single-layer operator S f (x_i) = int Gamma(x_i - y) f(y).
inline BoundaryOperatorMatrix assemble_S(const SurfaceMesh& m, const SpectralParameter& s,
                                         const QuadratureControl& ctl = {}) {
  if (s.dim != 3) throw DomainError("potentials: only d = 3 is supported");
  const auto N = static_cast<Eigen::Index>(m.size());
  CMatrix M = CMatrix::Zero(3 * N, 3 * N);
  const double kabs = std::abs(s.k);
#pragma omp parallel for schedule(dynamic)
  for (Eigen::Index i = 0; i < N; ++i) {
    const Vec3 x = m.node(static_cast<std::size_t>(i));
    detail::Moments<CMat3> mom;
    for (Eigen::Index l = 0; l < N; ++l) {
      const auto lu = static_cast<std::size_t>(l);
      const int basis = m.stencil(lu).basis;
      detail::clear(mom);
      auto leaf = [&](const SurfacePoint& sp, double w, const Vec3& p) {
        const Vec3 r = x - sp.y;
        detail::add_moments(mom, kernels::gamma_from_profile(r, kernels::radial_profile(s.k, r.norm())), w,
                            m.facet_coords(lu, p), basis);
      };
      if (l == i)
        detail::integrate_self(m, lu, ctl.polar_order, leaf);
      else
        detail::integrate_panel(m, lu, x, kabs, ctl, leaf);
      detail::scatter_moments(M, 3 * i, m, lu, mom);
    }
  }
  return {M, OperatorKind::single_layer, s, mesh_weights(m)};
}

/// Principal-value pressure operator: (P f)_i = p.v. int Phi(x_i - y) . f(y). Size N x 3N.
inline CMatrix assemble_pressure_pv(const SurfaceMesh& m, const QuadratureControl& ctl = {}) {
  using Row = Eigen::Matrix<cplx, 1, 3>;
  const auto N = static_cast<Eigen::Index>(m.size());
  CMatrix P = CMatrix::Zero(N, 3 * N);
  auto phi_row = [](const Vec3& r) -> Row { return kernels::phi3(r).transpose().cast<cplx>(); };
#pragma omp parallel for schedule(dynamic)
  for (Eigen::Index i = 0; i < N; ++i) {
    const Vec3 x = m.node(static_cast<std::size_t>(i));
    detail::Moments<Row> mom;
    for (Eigen::Index l = 0; l < N; ++l) {
      const auto lu = static_cast<std::size_t>(l);
      const int basis = m.stencil(lu).basis;
      detail::clear(mom);
      if (l == i) {
        mom[0] = detail::self_principal_value(
            m, lu, ctl, [&](const SurfacePoint& sp) { return phi_row(x - sp.y); }, phi_row);
        detail::integrate_self(m, lu, ctl.polar_order, [&](const SurfacePoint& sp, double w, const Vec3& p) {
          detail::add_moments(mom, phi_row(x - sp.y), w, m.facet_coords(lu, p), basis, false);
        });
      } else {
        detail::integrate_panel(m, lu, x, 0.0, ctl, [&](const SurfacePoint& sp, double w, const Vec3& p) {
          detail::add_moments(mom, phi_row(x - sp.y), w, m.facet_coords(lu, p), basis);
        });
      }
      detail::scatter_moments(P, i, m, lu, mom);
    }
  }
  return P;
}

/// Single-layer pressure trace: phi_+- = -+ (1/2) n.f + p.v. int Phi . f.
inline CVector pressure_trace(const DensityField& f, Side side, const QuadratureControl& ctl = {}) {
  if (side == Side::boundary_limit) throw DomainError("pressure_trace: side must be interior or exterior");
  const double sg = (side == Side::interior) ? 1.0 : -1.0;
  const SurfaceMesh& m = *f.mesh;
  CVector out = assemble_pressure_pv(m, ctl) * f.values;
  for (std::size_t i = 0; i < m.size(); ++i)
    out(static_cast<Eigen::Index>(i)) -= sg * 0.5 * rdot(m.node_normal(i), f.node(i));
  return out;
}

/// One-sided boundary traces through the assembled operators ("interior" is the + side).
/// For TraceKind::pressure the single-layer pressure trace is returned in the first component
/// of every node.
inline DensityField boundary_trace(const DensityField& f, const SpectralParameter& s, TraceKind which, Side side,
                                   const QuadratureControl& ctl = {}) {
  if (side == Side::boundary_limit) throw DomainError("boundary_trace: side must be interior or exterior");
  const double sg = (side == Side::interior) ? 1.0 : -1.0;
  switch (which) {
  case TraceKind::velocity_double_layer: {
    const auto D = assemble_double_layer(*f.mesh, s, ctl);
    return DensityField(f.mesh, D.entries * f.values - sg * 0.5 * f.values);
  }
  case TraceKind::conormal_single_layer: {
    const auto K = assemble_K(*f.mesh, s, ctl);
    return DensityField(f.mesh, K.entries * f.values + sg * 0.5 * f.values);
  }
  case TraceKind::pressure: {
    const CVector p = pressure_trace(f, side, ctl);
    DensityField out = DensityField::zero(f.mesh);
    for (std::size_t i = 0; i < f.size(); ++i) out.set_node(i, CVec3(p(static_cast<Eigen::Index>(i)), 0.0, 0.0));
    return out;
  }
  }
  throw DomainError("boundary_trace: unknown trace kind");
}

/// Quadratic extrapolation to t = 0 from samples at 2h, h, h/2, with the gap to the linear
/// extrapolant from (h, h/2) as error estimate.
template <class T>
struct Extrapolated {
  T value;
  double error;
};

template <class T>
Extrapolated<T> richardson(const T& v2h, const T& vh, const T& vh2) {
  const T quad = (1.0 / 3.0) * v2h - 2.0 * vh + (8.0 / 3.0) * vh2;
  const T lin = 2.0 * vh2 - vh;
  return {quad, (quad - lin).norm()};
}

/// Point at distance t from node i along the normal, on the given side.
inline Vec3 off_node_point(const SurfaceMesh& m, std::size_t i, double t, Side side) {
  const double sg = (side == Side::interior) ? -1.0 : 1.0;
  return m.node(i) + sg * t * m.node_normal(i);
}

inline FieldSample sample_off_node(Representation rep, const DensityReconstruction& f, const SpectralParameter& s,
                                   std::size_t i, double t, Side side, const QuadratureControl& ctl = {},
                                   bool with_gradient = true) {
  if (side == Side::boundary_limit) throw DomainError("sample_off_node: side must be interior or exterior");
  FieldSample fs = evaluate(rep, f, s, off_node_point(f.mesh(), i, t, side), with_gradient, ctl);
  fs.side = side;
  return fs;
}

/// Extrapolated one-sided limits of velocity, gradient, conormal derivative and pressure.
/// Without gradients, grad_u and conormal are zero and only u and phi are meaningful.
struct NodeTrace {
  Extrapolated<CVec3> u;
  Extrapolated<CMat3> grad_u;
  Extrapolated<CVec3> conormal;
  Extrapolated<Eigen::Matrix<cplx, 1, 1>> phi;
};

inline NodeTrace extrapolated_trace(Representation rep, const DensityReconstruction& f, const SpectralParameter& s,
                                    std::size_t i, double h, Side side, const QuadratureControl& ctl = {},
                                    bool with_gradient = true) {
  const Vec3& n = f.mesh().node_normal(i);
  std::array<FieldSample, 3> fs;
  const std::array<double, 3> ts{2.0 * h, h, 0.5 * h};
  for (int j = 0; j < 3; ++j) fs[j] = sample_off_node(rep, f, s, i, ts[j], side, ctl, with_gradient);
  using S1 = Eigen::Matrix<cplx, 1, 1>;
  return {richardson<CVec3>(fs[0].u, fs[1].u, fs[2].u),
          richardson<CMat3>(fs[0].grad_u, fs[1].grad_u, fs[2].grad_u),
          richardson<CVec3>(fs[0].conormal(n), fs[1].conormal(n), fs[2].conormal(n)),
          richardson<S1>(S1(fs[0].phi), S1(fs[1].phi), S1(fs[2].phi))};
}

/// Lower bound for the nontangential maximal function at every node: max |u| over
/// depths t_j = depth_max 2^{-j}, j < depth_count, along the inward normal.
inline RVector nt_maximal_sample(const DensityField& f, const SpectralParameter& s, Representation rep,
                                 int depth_count, double depth_max = -1.0, const QuadratureControl& ctl = {}) {
  if (depth_count < 3) throw DomainError("nt_maximal_sample: depth_count must be >= 3");
  const SurfaceMesh& m = *f.mesh;
  if (depth_max <= 0.0) depth_max = 0.125 * m.diameter();
  RVector out = RVector::Zero(static_cast<Eigen::Index>(m.size()));
  if (f.values.isZero(0.0)) return out;
  const DensityReconstruction rec(f);
  for (std::size_t i = 0; i < m.size(); ++i) {
    double best = 0.0;
    for (int j = 0; j < depth_count; ++j) {
      const double t = depth_max * std::pow(0.5, j);
      best = std::max(best, evaluate(rep, rec, s, off_node_point(m, i, t, Side::interior), false, ctl).u.norm());
    }
    out(static_cast<Eigen::Index>(i)) = best;
  }
  return out;
}

} // namespace stokesres
