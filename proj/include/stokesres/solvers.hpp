#pragma once

// Dirichlet, Neumann and interior resolvent solves.
//
// Dirichlet: u = double layer of Gamma(lambda), (-1/2 I + D_lambda) f = g. The operator is
// singular modulo n, so the system is bordered:
//   [ D - I/2   n ] [f]   [g]
//   [ w n^T/|S| 0 ] [m] = [0]
// Neumann: u = single layer, (1/2 I + K_lambda) f = g.
// Resolvent: u = u0 + w with u0 the volume potential of the forcing and w the Dirichlet
// solution for -u0 on the boundary.

#include "stokesres/common.hpp"
#include "stokesres/geometry.hpp"
#include "stokesres/linalg.hpp"
#include "stokesres/potentials.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace stokesres {

/// Target-centered rule for the volume potential: Gauss in cos(polar angle), trapezoid in
/// azimuth, and composite Gauss along each ray with panels growing geometrically from half of
/// min(1/|k|, max_panel) up to max_panel.
struct LocalVolumeRule {
  int n_polar = 12;
  int n_azimuth = 24;
  int n_radial = 5;
  double max_panel = 0.25;
};

struct SolverOptions {
  QuadratureControl quadrature;
  double tau0 = 0.1;               ///< Neumann hypothesis |lambda| r0^2 >= tau0
  double max_condition = 1e12;     ///< larger condition numbers are reported as singular
  double residual_tol = 1e-10;     ///< dense solve residual target
  bool normalize_pressure = true;  ///< shift the pressure so its boundary mean vanishes
  double trace_step = 0.0;         ///< Richardson base distance; 0 selects default_trace_step
  bool local_volume = true;        ///< target-centered volume potential when the domain allows it
  LocalVolumeRule volume_rule;
};

/// Base distance of the normal trace extrapolation: a quarter of the mesh size.
inline double default_trace_step(const SurfaceMesh& m) { return 0.25 * m.h(); }

struct MeshInfo {
  std::string file;
  double h = 0.0;
  std::size_t n_tri = 0;
};

/// Norms, ratios, residuals and conditioning of one solve.
struct SolveReport {
  cplx lambda = 0.0;
  double theta = 0.0;
  MeshInfo mesh;
  std::map<std::string, double> norms;
  std::map<std::string, double> ratios;
  double condition_number = 0.0;
  std::map<std::string, double> residuals;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["lambda"] = {lambda.real(), lambda.imag()};
    j["theta"] = theta;
    j["mesh"] = {{"file", mesh.file}, {"h", mesh.h}, {"n_tri", mesh.n_tri}};
    j["norms"] = norms;
    j["ratios"] = ratios;
    j["condition_number"] = condition_number;
    j["residuals"] = residuals;
    return j;
  }
};

inline MeshInfo mesh_info(const SurfaceMesh& m, std::string file = "") { return {std::move(file), m.h(), m.size()}; }

/// L2(boundary) norm of a node-sampled vector field.
inline double boundary_l2(const SurfaceMesh& m, const CVector& v) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) s += m.weight(i) * v.segment<3>(3 * static_cast<Eigen::Index>(i)).squaredNorm();
  return std::sqrt(s);
}

/// Weighted pairing <f, n>_W = sum_i w_i n_i . f_i.
inline cplx normal_moment(const SurfaceMesh& m, const CVector& f) {
  cplx s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i)
    s += m.weight(i) * rdot(m.node_normal(i), f.segment<3>(3 * static_cast<Eigen::Index>(i)));
  return s;
}

/// Node-sampled outward normal field.
inline CVector normal_field(const SurfaceMesh& m) {
  CVector n(3 * static_cast<Eigen::Index>(m.size()));
  for (std::size_t i = 0; i < m.size(); ++i) n.segment<3>(3 * static_cast<Eigen::Index>(i)) = m.node_normal(i).cast<cplx>();
  return n;
}

/// Removes the W-orthogonal projection onto n; returns the removed coefficient.
inline cplx project_out_normal(const SurfaceMesh& m, CVector& g) {
  const cplx c = normal_moment(m, g) / m.surface_area();
  g -= c * normal_field(m);
  return c;
}

/// Layer-potential solution: evaluates (u, grad u, phi) anywhere off the boundary.
class LayerSolution {
public:
  LayerSolution(Representation rep, const SpectralParameter& s, const DensityField& f, const QuadratureControl& ctl)
      : rep_(rep), s_(s), rec_(std::make_shared<const DensityReconstruction>(f)), ctl_(ctl) {}

  FieldSample operator()(const Vec3& x, bool with_gradient = true) const {
    FieldSample fs = evaluate(rep_, *rec_, s_, x, with_gradient, ctl_);
    fs.phi -= pressure_offset_;
    return fs;
  }

  /// Extrapolated interior limits at node i.
  NodeTrace trace(std::size_t i, double step) const {
    NodeTrace t = extrapolated_trace(rep_, *rec_, s_, i, step, Side::interior, ctl_);
    t.phi.value(0) -= pressure_offset_;
    t.conormal.value += pressure_offset_ * mesh().node_normal(i).cast<cplx>();
    return t;
  }

  Representation representation() const { return rep_; }
  const SpectralParameter& spectral() const { return s_; }
  const DensityField& density() const { return rec_->field(); }
  const DensityReconstruction& reconstruction() const { return *rec_; }
  const SurfaceMesh& mesh() const { return rec_->mesh(); }
  const QuadratureControl& quadrature() const { return ctl_; }
  cplx pressure_offset() const { return pressure_offset_; }
  void set_pressure_offset(cplx c) { pressure_offset_ = c; }

private:
  Representation rep_;
  SpectralParameter s_;
  std::shared_ptr<const DensityReconstruction> rec_;
  QuadratureControl ctl_;
  cplx pressure_offset_ = 0.0;
};

/// Interior boundary traces of a solution at every node.
struct BoundaryTraces {
  std::vector<CVec3> u;
  std::vector<CMat3> grad_u;
  std::vector<cplx> phi;
  std::vector<CVec3> conormal;
  double max_error = 0.0; ///< largest Richardson error estimate of u and phi
};

inline BoundaryTraces boundary_traces(const LayerSolution& sol, double step) {
  const SurfaceMesh& m = sol.mesh();
  const std::size_t N = m.size();
  BoundaryTraces bt;
  bt.u.resize(N);
  bt.grad_u.resize(N);
  bt.phi.resize(N);
  bt.conormal.resize(N);
  std::vector<double> err(N, 0.0);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < N; ++i) {
    const NodeTrace t = sol.trace(i, step);
    bt.u[i] = t.u.value;
    bt.grad_u[i] = t.grad_u.value;
    bt.phi[i] = t.phi.value(0);
    bt.conormal[i] = t.conormal.value;
    err[i] = std::max(t.u.error, t.phi.error);
  }
  for (double e : err) bt.max_error = std::max(bt.max_error, e);
  return bt;
}

/// Area-weighted boundary mean of the extrapolated interior pressure.
inline cplx boundary_pressure_mean(const LayerSolution& sol, double step) {
  const SurfaceMesh& m = sol.mesh();
  const std::size_t N = m.size();
  std::vector<cplx> phi(N);
  const LayerSolution raw = [&] {
    LayerSolution r = sol;
    r.set_pressure_offset(0.0);
    return r;
  }();
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < N; ++i) {
    std::array<cplx, 3> v;
    const std::array<double, 3> ts{2.0 * step, step, 0.5 * step};
    for (int j = 0; j < 3; ++j) v[j] = raw(off_node_point(m, i, ts[j], Side::interior), false).phi;
    phi[i] = v[0] / 3.0 - 2.0 * v[1] + 8.0 / 3.0 * v[2];
  }
  cplx s = 0.0;
  for (std::size_t i = 0; i < N; ++i) s += m.weight(i) * phi[i];
  return s / m.surface_area();
}

struct DirichletProblem {
  MeshPtr mesh;
  SpectralParameter spectral;
  DensityField g;
};

struct NeumannProblem {
  MeshPtr mesh;
  SpectralParameter spectral;
  DensityField g;
};

struct SolveResult {
  DensityField density;
  LayerSolution field;
  SolveReport report;
};

namespace detail {

inline void check_problem(const MeshPtr& m, const SpectralParameter& s, const DensityField& g) {
  if (!m) throw DomainError("solve: null mesh");
  if (s.dim != 3) throw DomainError("solve: only d = 3 is supported");
  if (g.mesh.get() != m.get() && (!g.mesh || g.mesh->size() != m->size()))
    throw DomainError("solve: data do not live on the problem mesh");
  if (!g.values.allFinite()) throw DomainError("solve: data not finite");
}

inline double safe_ratio(double a, double b) { return b > 0.0 ? a / b : (a > 0.0 ? INFINITY : 0.0); }

inline void finish_pressure(LayerSolution& sol, const SolverOptions& opt, SolveReport& rep) {
  if (!opt.normalize_pressure) return;
  const double step = opt.trace_step > 0.0 ? opt.trace_step : default_trace_step(sol.mesh());
  const cplx c = boundary_pressure_mean(sol, step);
  sol.set_pressure_offset(c);
  rep.norms["pressure_offset"] = std::abs(c);
}

} // namespace detail

/// Bordered Dirichlet system matrix for a given double-layer operator.
inline CMatrix bordered_dirichlet_matrix(const SurfaceMesh& m, const CMatrix& D) {
  const auto N = static_cast<Eigen::Index>(m.size());
  CMatrix A = CMatrix::Zero(3 * N + 1, 3 * N + 1);
  A.topLeftCorner(3 * N, 3 * N) = D;
  A.topLeftCorner(3 * N, 3 * N).diagonal().array() -= 0.5;
  const double area = m.surface_area();
  for (Eigen::Index i = 0; i < N; ++i) {
    const Vec3& n = m.node_normal(static_cast<std::size_t>(i));
    const double w = m.weight(static_cast<std::size_t>(i)) / area;
    for (int c = 0; c < 3; ++c) {
      A(3 * N, 3 * i + c) = w * n(c);
      A(3 * i + c, 3 * N) = n(c);
    }
  }
  return A;
}

/// Dirichlet solve with a pre-assembled double-layer operator, so several right-hand sides
/// can share one assembly.
inline SolveResult solve_dirichlet_with(const DirichletProblem& p, const CMatrix& D, const SolverOptions& opt = {}) {
  detail::check_problem(p.mesh, p.spectral, p.g);
  const SurfaceMesh& m = *p.mesh;
  const auto N = static_cast<Eigen::Index>(m.size());
  SolveReport rep;
  rep.lambda = p.spectral.lambda;
  rep.theta = p.spectral.theta;
  rep.mesh = mesh_info(m);

  CVector g = p.g.values;
  const double g_norm_raw = boundary_l2(m, g);
  const cplx c = project_out_normal(m, g);
  rep.norms["compatibility_projection"] = std::abs(c) * std::sqrt(m.surface_area());
  rep.ratios["compatibility_projection_relative"] =
      detail::safe_ratio(std::abs(c) * std::sqrt(m.surface_area()), g_norm_raw);

  const CMatrix A = bordered_dirichlet_matrix(m, D);
  CVector b = CVector::Zero(3 * N + 1);
  b.head(3 * N) = g;
  const DenseSolveResult sol = dense_solve(A, b, opt.residual_tol);
  rep.condition_number = sol.condition;
  if (!(sol.condition <= opt.max_condition)) {
    std::ostringstream os;
    os << "singular system: condition number " << sol.condition << " exceeds " << opt.max_condition;
    throw NumericalError(os.str());
  }
  const CVector f = sol.x.col(0).head(3 * N);
  const CVector trace = D * f - 0.5 * f;
  const double gn = boundary_l2(m, g);
  rep.norms["g_L2"] = gn;
  rep.norms["density_L2"] = boundary_l2(m, f);
  rep.ratios["density_over_data"] = detail::safe_ratio(rep.norms["density_L2"], gn);
  rep.residuals["linear_system"] = sol.residual;
  rep.residuals["boundary_trace"] = detail::safe_ratio(boundary_l2(m, trace - g), gn);
  rep.residuals["bordered_multiplier"] = std::abs(sol.x(3 * N, 0));
  rep.residuals["density_normal_moment"] = std::abs(normal_moment(m, f));
  DensityField fd(p.mesh, f);
  LayerSolution field(Representation::double_layer, p.spectral, fd, opt.quadrature);
  detail::finish_pressure(field, opt, rep);
  return {std::move(fd), std::move(field), std::move(rep)};
}

/// Dirichlet solve, assembling the operator: u = double layer with (-1/2 I + K*_{conj lambda}) f = g.
inline SolveResult solve_dirichlet(const DirichletProblem& p, const SolverOptions& opt = {}) {
  if (!p.mesh) throw DomainError("solve: null mesh");
  const CMatrix D = assemble_double_layer(*p.mesh, p.spectral, opt.quadrature).entries;
  return solve_dirichlet_with(p, D, opt);
}

/// Neumann solve with a pre-assembled K_lambda.
inline SolveResult solve_neumann_with(const NeumannProblem& p, const CMatrix& K, const SolverOptions& opt = {}) {
  detail::check_problem(p.mesh, p.spectral, p.g);
  const SurfaceMesh& m = *p.mesh;
  const double r0 = m.diameter();
  if (std::abs(p.spectral.lambda) * r0 * r0 < opt.tau0) {
    std::ostringstream os;
    os << "lambda outside Neumann hypothesis: |lambda| r0^2 = " << std::abs(p.spectral.lambda) * r0 * r0
       << " < tau0 = " << opt.tau0;
    throw DomainError(os.str());
  }
  SolveReport rep;
  rep.lambda = p.spectral.lambda;
  rep.theta = p.spectral.theta;
  rep.mesh = mesh_info(m);
  CMatrix A = K;
  A.diagonal().array() += 0.5;
  const DenseSolveResult sol = dense_solve(A, p.g.values, opt.residual_tol);
  rep.condition_number = sol.condition;
  if (!(sol.condition <= opt.max_condition)) {
    std::ostringstream os;
    os << "singular system: condition number " << sol.condition << " exceeds " << opt.max_condition;
    throw NumericalError(os.str());
  }
  const CVector f = sol.x.col(0);
  const double gn = boundary_l2(m, p.g.values);
  rep.norms["g_L2"] = gn;
  rep.norms["density_L2"] = boundary_l2(m, f);
  rep.ratios["density_over_data"] = detail::safe_ratio(rep.norms["density_L2"], gn);
  rep.residuals["linear_system"] = sol.residual;
  rep.residuals["boundary_trace"] = detail::safe_ratio(boundary_l2(m, A * f - p.g.values), gn);
  DensityField fd(p.mesh, f);
  LayerSolution field(Representation::single_layer, p.spectral, fd, opt.quadrature);
  detail::finish_pressure(field, opt, rep);
  return {std::move(fd), std::move(field), std::move(rep)};
}

/// Neumann solve, assembling the operator: u = single layer with (1/2 I + K_lambda) f = g.
inline SolveResult solve_neumann(const NeumannProblem& p, const SolverOptions& opt = {}) {
  if (!p.mesh) throw DomainError("solve: null mesh");
  const CMatrix K = assemble_K(*p.mesh, p.spectral, opt.quadrature).entries;
  return solve_neumann_with(p, K, opt);
}

// ---------------------------------------------------------------------------------------------
// Volume potential and the interior resolvent problem.

using VectorField = std::function<CVec3(const Vec3&)>;

struct ResolventProblem {
  MeshPtr mesh;
  SpectralParameter spectral;
  VectorField forcing;             ///< callable forcing; preferred when set
  std::vector<CVec3> samples;      ///< forcing at the volume nodes when no callable is given
  VolumeQuadrature volume;
  double r0 = 0.0;                 ///< domain diameter; 0 takes the mesh diameter
};

/// Velocity and pressure of the Newtonian potential at a set of points.
struct VolumePotential {
  std::vector<CVec3> u;
  std::vector<cplx> phi;
};

namespace detail {

/// Boundary integrals that give the static volume integrals over Omega at x:
///   int 1/|x-y| dy = 1/2 int n.(y-x)/|y-x|,   int d_i d_k |x-y| dy = int n_i (y-x)_k/|y-x|,
///   int Phi(x-y) dy = int G0(x-y) n(y).
struct StaticVolumeMoments {
  double inv_r = 0.0;
  Mat3 hess_r = Mat3::Zero();
  Vec3 phi = Vec3::Zero();
};

inline StaticVolumeMoments static_volume_moments(const SurfaceMesh& m, const Vec3& x, long self_panel,
                                                 const QuadratureControl& ctl) {
  StaticVolumeMoments s;
  auto leaf = [&](const SurfacePoint& sp, double w, const Vec3&) {
    const Vec3 d = sp.y - x;
    const double r = d.norm();
    if (r == 0.0) return;
    s.inv_r += 0.5 * w * sp.n.dot(d) / r;
    s.hess_r += (w / r) * sp.n * d.transpose();
    s.phi += (w / (4.0 * kPi * r)) * sp.n;
  };
  for (std::size_t l = 0; l < m.size(); ++l) {
    if (static_cast<long>(l) == self_panel)
      integrate_self(m, l, ctl.polar_order, leaf);
    else
      integrate_panel(m, l, x, 0.0, ctl, leaf);
  }
  return s;
}

} // namespace detail

/// u0(x) = int Gamma(x-y) f(y) dy, phi0(x) = int Phi(x-y).f(y) dy at the targets, by the
/// volume rule after subtracting the static singular part with f frozen at x; the frozen part
/// is integrated through boundary integrals. self_panels[i] >= 0 marks a target lying on the
/// node of that panel.
inline VolumePotential volume_potential(const SurfaceMesh& m, const SpectralParameter& s, const VolumeQuadrature& vq,
                                        const std::vector<CVec3>& f_nodes, const std::vector<Vec3>& targets,
                                        const std::vector<CVec3>& f_targets, const std::vector<long>& self_panels,
                                        const QuadratureControl& ctl = {}) {
  const std::size_t T = targets.size(), Q = vq.size();
  if (f_nodes.size() != Q || f_targets.size() != T || self_panels.size() != T)
    throw DomainError("volume_potential: size mismatch");
  VolumePotential out;
  out.u.assign(T, CVec3::Zero());
  out.phi.assign(T, 0.0);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t t = 0; t < T; ++t) {
    const Vec3& x = targets[t];
    const CVec3& fx = f_targets[t];
    const auto sm = detail::static_volume_moments(m, x, self_panels[t], ctl);
    const Mat3 int_gamma0 = (2.0 * sm.inv_r * Mat3::Identity() - sm.hess_r) / (8.0 * kPi);
    CVec3 u = int_gamma0.cast<cplx>() * fx;
    cplx phi = rdot(sm.phi, fx);
    for (std::size_t q = 0; q < Q; ++q) {
      const Vec3 r = x - vq.nodes[q];
      const double rn = r.norm();
      if (rn == 0.0) continue;
      const double w = vq.weights[q];
      const CVec3 df = f_nodes[q] - fx;
      const auto pd = kernels::radial_profile(s.k, rn, true);
      const auto p0 = kernels::radial_profile(0.0, rn);
      u += w * (kernels::gamma_from_profile(r, pd) * f_nodes[q] + kernels::gamma_from_profile(r, p0) * df);
      phi += w * rdot(kernels::phi3(r), df);
    }
    out.u[t] = u;
    out.phi[t] = phi;
  }
  return out;
}

/// Distance from an interior point along a unit direction to the boundary of a convex
/// domain: exact for sphere charts, the intersection of the facet half-spaces otherwise.
class ConvexRayExit {
public:
  static std::optional<ConvexRayExit> from_mesh(const SurfaceMesh& m) {
    ConvexRayExit e;
    if (m.chart().kind == SurfaceChart::Kind::sphere) {
      e.sphere_ = true;
      e.center_ = m.chart().center;
      e.radius_ = m.chart().radius;
      return e;
    }
    const double tol = 1e-9 * m.diameter();
    for (std::size_t t = 0; t < m.size(); ++t) {
      const Vec3& n = m.normal(t);
      const double off = n.dot(m.centroid(t));
      bool dup = false;
      for (const auto& [pn, po] : e.planes_)
        if ((pn - n).norm() < 1e-9 && std::abs(po - off) < tol) dup = true;
      if (!dup) e.planes_.emplace_back(n, off);
    }
    for (const auto& [pn, po] : e.planes_)
      for (const auto& v : m.vertices())
        if (pn.dot(v) - po > tol) return std::nullopt;
    return e;
  }

  double operator()(const Vec3& x, const Vec3& dir) const {
    if (sphere_) {
      const Vec3 d = x - center_;
      const double b = d.dot(dir), c = d.squaredNorm() - radius_ * radius_;
      return std::max(0.0, -b + std::sqrt(std::max(0.0, b * b - c)));
    }
    double t = INFINITY;
    for (const auto& [n, off] : planes_) {
      const double nd = n.dot(dir);
      if (nd > 1e-14) t = std::min(t, (off - n.dot(x)) / nd);
    }
    return std::max(0.0, t);
  }

private:
  bool sphere_ = false;
  Vec3 center_ = Vec3::Zero();
  double radius_ = 0.0;
  std::vector<std::pair<Vec3, double>> planes_;
};

/// Volume potentials of several callable forcings at once. The static singular part with f
/// frozen at x goes through boundary integrals as in volume_potential; the remainder
///   (Gamma - Gamma0)(x-y) f(y) + Gamma0(x-y) (f(y) - f(x))
/// is integrated in spherical coordinates about x, where the r^2 Jacobian makes it smooth.
inline std::vector<VolumePotential> local_volume_potential(const SurfaceMesh& m, const SpectralParameter& s,
                                                           const ConvexRayExit& exit,
                                                           const std::vector<VectorField>& forcings,
                                                           const std::vector<Vec3>& targets,
                                                           const std::vector<long>& self_panels,
                                                           const LocalVolumeRule& rule = {},
                                                           const QuadratureControl& ctl = {}) {
  const std::size_t T = targets.size(), F = forcings.size();
  if (self_panels.size() != T) throw DomainError("volume_potential: size mismatch");
  const quad::Rule1D& gp = quad::gl01(rule.n_polar);
  const quad::Rule1D& gr = quad::gl01(rule.n_radial);
  std::vector<Vec3> dirs;
  std::vector<double> dw;
  for (int i = 0; i < rule.n_polar; ++i) {
    const double ct = 2.0 * gp.x[i] - 1.0, st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
    for (int j = 0; j < rule.n_azimuth; ++j) {
      const double ph = 2.0 * kPi * (j + 0.5) / rule.n_azimuth;
      dirs.emplace_back(st * std::cos(ph), st * std::sin(ph), ct);
      dw.push_back(2.0 * gp.w[i] * 2.0 * kPi / rule.n_azimuth);
    }
  }
  const double ell = std::min(1.0 / std::abs(s.k), rule.max_panel);
  std::vector<VolumePotential> out(F);
  for (auto& o : out) {
    o.u.assign(T, CVec3::Zero());
    o.phi.assign(T, 0.0);
  }
#pragma omp parallel for schedule(dynamic)
  for (std::size_t t = 0; t < T; ++t) {
    const Vec3& x = targets[t];
    std::vector<CVec3> fx(F), u(F);
    std::vector<cplx> phi(F);
    const auto sm = detail::static_volume_moments(m, x, self_panels[t], ctl);
    const Mat3 int_gamma0 = (2.0 * sm.inv_r * Mat3::Identity() - sm.hess_r) / (8.0 * kPi);
    for (std::size_t f = 0; f < F; ++f) {
      fx[f] = forcings[f](x);
      u[f] = int_gamma0.cast<cplx>() * fx[f];
      phi[f] = rdot(sm.phi, fx[f]);
    }
    for (std::size_t d = 0; d < dirs.size(); ++d) {
      const Vec3& w = dirs[d];
      const double R = exit(x, w);
      double a = 0.0, step = 0.5 * ell;
      while (a < R) {
        const double b = std::min(R, a + step);
        for (int q = 0; q < rule.n_radial; ++q) {
          const double rho = a + (b - a) * gr.x[q];
          const double wt = dw[d] * (b - a) * gr.w[q] * rho * rho;
          const Vec3 y = x + rho * w;
          const Vec3 r = -rho * w;
          const auto pd = kernels::radial_profile(s.k, rho, true);
          const auto p0 = kernels::radial_profile(0.0, rho);
          const CMat3 gd = kernels::gamma_from_profile(r, pd);
          const CMat3 g0 = kernels::gamma_from_profile(r, p0);
          const Vec3 ph = kernels::phi3(r);
          for (std::size_t f = 0; f < F; ++f) {
            const CVec3 fy = forcings[f](y);
            const CVec3 df = fy - fx[f];
            u[f] += wt * (gd * fy + g0 * df);
            phi[f] += wt * rdot(ph, df);
          }
        }
        a = b;
        step = std::min(2.0 * step, rule.max_panel);
      }
    }
    for (std::size_t f = 0; f < F; ++f) {
      out[f].u[t] = u[f];
      out[f].phi[t] = phi[f];
    }
  }
  return out;
}

inline double lp_norm(const VolumeQuadrature& vq, const std::vector<CVec3>& v, double p) {
  double s = 0.0;
  for (std::size_t q = 0; q < vq.size(); ++q) s += vq.weights[q] * std::pow(v[q].norm(), p);
  return std::pow(s, 1.0 / p);
}

/// True when x lies inside the surface (exact sphere test for sphere charts, solid angle otherwise).
inline bool inside_surface(const SurfaceMesh& m, const Vec3& x) {
  if (m.chart().kind == SurfaceChart::Kind::sphere) return (x - m.chart().center).norm() < m.chart().radius;
  double omega = 0.0;
  for (std::size_t t = 0; t < m.size(); ++t) {
    const auto v = m.corners(t);
    const Vec3 a = v[0] - x, b = v[1] - x, c = v[2] - x;
    const double la = a.norm(), lb = b.norm(), lc = c.norm();
    const double num = a.dot(b.cross(c));
    const double den = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
    omega += 2.0 * std::atan2(num, den);
  }
  return omega > 2.0 * kPi;
}

struct ResolventResult {
  std::vector<CVec3> u;    ///< velocity at the volume nodes
  std::vector<cplx> phi;   ///< pressure at the volume nodes (boundary-mean normalization not applied)
  std::map<double, double> ratios; ///< p -> (|lambda| + r0^-2) ||u||_p / ||f||_p
  SolveReport report;
};

inline std::string p_key(double p) {
  std::ostringstream os;
  os << p;
  return os.str();
}

namespace detail {

inline void check_volume_rule(const SurfaceMesh& m, const VolumeQuadrature& vq) {
  if (vq.size() == 0) throw DomainError("resolvent: empty volume quadrature");
  for (std::size_t q = 0; q < vq.size(); ++q) {
    if (!(vq.weights[q] > 0.0)) throw DomainError("resolvent: volume weights must be positive");
    if (!inside_surface(m, vq.nodes[q])) throw DomainError("resolvent: volume node outside the domain");
  }
}

/// Volume nodes followed by boundary nodes; boundary targets carry their panel index.
inline std::pair<std::vector<Vec3>, std::vector<long>> resolvent_targets(const SurfaceMesh& m,
                                                                         const VolumeQuadrature& vq) {
  std::vector<Vec3> targets(vq.nodes);
  std::vector<long> self(vq.size(), -1);
  for (std::size_t i = 0; i < m.size(); ++i) {
    targets.push_back(m.node(i));
    self.push_back(static_cast<long>(i));
  }
  return {targets, self};
}

/// Dirichlet correction for -u0 on the boundary, then the L^p norms and ratios.
inline ResolventResult finish_resolvent(const ResolventProblem& p, const std::vector<CVec3>& f,
                                        const VolumePotential& vp, const std::vector<double>& ps,
                                        const SolverOptions& opt, const CMatrix* D_pre) {
  const SurfaceMesh& m = *p.mesh;
  const VolumeQuadrature& vq = p.volume;
  const std::size_t Q = vq.size(), N = m.size();
  DensityField g = DensityField::zero(p.mesh);
  for (std::size_t i = 0; i < N; ++i) g.set_node(i, -vp.u[Q + i]);
  SolverOptions dopt = opt;
  dopt.normalize_pressure = false;
  const DirichletProblem dp{p.mesh, p.spectral, g};
  SolveResult corr = D_pre ? solve_dirichlet_with(dp, *D_pre, dopt) : solve_dirichlet(dp, dopt);

  ResolventResult res;
  res.u.resize(Q);
  res.phi.resize(Q);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t q = 0; q < Q; ++q) {
    const FieldSample w = corr.field(vq.nodes[q], false);
    res.u[q] = vp.u[q] + w.u;
    res.phi[q] = vp.phi[q] + w.phi;
  }
  const double r0 = p.r0 > 0.0 ? p.r0 : m.diameter();
  SolveReport& rep = res.report;
  rep = corr.report;
  rep.norms.clear();
  rep.ratios.clear();
  rep.norms["boundary_data_L2"] = corr.report.norms.at("g_L2");
  rep.norms["r0"] = r0;
  rep.norms["volume_nodes"] = static_cast<double>(Q);
  const double scale = std::abs(p.spectral.lambda) + 1.0 / (r0 * r0);
  for (double pp : ps) {
    if (!(pp >= 1.0)) throw DomainError("resolvent: p must be >= 1");
    const double un = lp_norm(vq, res.u, pp), fn = lp_norm(vq, f, pp);
    rep.norms["u_L" + p_key(pp)] = un;
    rep.norms["f_L" + p_key(pp)] = fn;
    const double ratio = safe_ratio(scale * un, fn);
    rep.ratios["p=" + p_key(pp)] = ratio;
    res.ratios[pp] = ratio;
  }
  return res;
}

} // namespace detail

/// Interior resolvent solve with zero Dirichlet data; reports L^p norms for each p.
/// Callable forcings on convex domains use the target-centered volume potential; otherwise
/// the volume rule itself integrates the remainder.
inline ResolventResult solve_resolvent(const ResolventProblem& p, const std::vector<double>& ps,
                                       const SolverOptions& opt = {}, const CMatrix* D_pre = nullptr) {
  if (!p.mesh) throw DomainError("resolvent: null mesh");
  const SurfaceMesh& m = *p.mesh;
  const VolumeQuadrature& vq = p.volume;
  detail::check_volume_rule(m, vq);
  const std::size_t Q = vq.size(), N = m.size();
  std::vector<CVec3> f(Q);
  if (p.forcing) {
    for (std::size_t q = 0; q < Q; ++q) f[q] = p.forcing(vq.nodes[q]);
  } else {
    if (p.samples.size() != Q) throw DomainError("resolvent: forcing samples do not match the volume nodes");
    f = p.samples;
  }
  for (const auto& v : f)
    if (!v.allFinite()) throw DomainError("resolvent: forcing not finite");

  const auto [targets, self] = detail::resolvent_targets(m, vq);
  const std::optional<ConvexRayExit> exit =
      (p.forcing && opt.local_volume) ? ConvexRayExit::from_mesh(m) : std::nullopt;
  VolumePotential vp;
  if (exit) {
    vp = local_volume_potential(m, p.spectral, *exit, {p.forcing}, targets, self, opt.volume_rule, opt.quadrature)[0];
  } else {
    std::vector<CVec3> ft(f);
    for (std::size_t i = 0; i < N; ++i) {
      const Vec3& x = m.node(i);
      if (p.forcing) {
        ft.push_back(p.forcing(x));
      } else {
        std::size_t best = 0;
        for (std::size_t q = 1; q < Q; ++q)
          if ((vq.nodes[q] - x).squaredNorm() < (vq.nodes[best] - x).squaredNorm()) best = q;
        ft.push_back(f[best]);
      }
    }
    vp = volume_potential(m, p.spectral, vq, f, targets, ft, self, opt.quadrature);
  }
  return detail::finish_resolvent(p, f, vp, ps, opt, D_pre);
}

/// Resolvent solves for several callable forcings sharing mesh, lambda and volume rule; on
/// convex domains the kernel evaluations of the volume potential are shared.
inline std::vector<ResolventResult> solve_resolvent_batch(const MeshPtr& mesh, const SpectralParameter& s,
                                                          const std::vector<VectorField>& forcings,
                                                          const VolumeQuadrature& vq, double r0,
                                                          const std::vector<double>& ps, const SolverOptions& opt = {},
                                                          const CMatrix* D_pre = nullptr) {
  if (!mesh) throw DomainError("resolvent: null mesh");
  for (const auto& f : forcings)
    if (!f) throw DomainError("resolvent: empty forcing");
  const std::optional<ConvexRayExit> exit = opt.local_volume ? ConvexRayExit::from_mesh(*mesh) : std::nullopt;
  std::vector<ResolventResult> out;
  if (!exit) {
    for (const auto& f : forcings) out.push_back(solve_resolvent({mesh, s, f, {}, vq, r0}, ps, opt, D_pre));
    return out;
  }
  detail::check_volume_rule(*mesh, vq);
  const auto [targets, self] = detail::resolvent_targets(*mesh, vq);
  const auto vps = local_volume_potential(*mesh, s, *exit, forcings, targets, self, opt.volume_rule, opt.quadrature);
  for (std::size_t k = 0; k < forcings.size(); ++k) {
    std::vector<CVec3> f(vq.size());
    for (std::size_t q = 0; q < vq.size(); ++q) f[q] = forcings[k](vq.nodes[q]);
    for (const auto& v : f)
      if (!v.allFinite()) throw DomainError("resolvent: forcing not finite");
    out.push_back(detail::finish_resolvent({mesh, s, forcings[k], {}, vq, r0}, f, vps[k], ps, opt, D_pre));
  }
  return out;
}

/// Exterior Stokeslet u = Gamma(x - x0) e, phi = Phi(x - x0) . e; a solution away from x0.
struct StokesletField {
  SpectralParameter spectral;
  Vec3 source = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();

  FieldSample operator()(const Vec3& x, bool with_gradient = true) const {
    const Vec3 r = x - source;
    const double rn = r.norm();
    if (rn == 0.0) throw DomainError("stokeslet: evaluation at the source");
    const auto prof = kernels::radial_profile(spectral.k, rn);
    const CVec3 e = direction.cast<cplx>();
    FieldSample fs;
    fs.location = x;
    fs.u = kernels::gamma_from_profile(r, prof) * e;
    fs.phi = kernels::phi3(r).dot(direction);
    if (with_gradient) {
      const auto dg = kernels::grad_gamma_from_profile(r, prof);
      for (int j = 0; j < 3; ++j) fs.grad_u.col(j) = dg[j] * e;
    }
    return fs;
  }
};

/// Deterministic interior sample: uniform points of the bounding ball about the solid centroid,
/// kept when inside the surface and then pulled halfway toward the centroid.
inline std::vector<Vec3> interior_sample(const SurfaceMesh& m, std::size_t count, std::uint32_t seed = 7) {
  const Vec3 c = m.solid_centroid();
  double R = 0.0;
  for (const Vec3& v : m.vertices()) R = std::max(R, (v - c).norm());
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  std::vector<Vec3> pts;
  while (pts.size() < count) {
    const Vec3 p(U(rng), U(rng), U(rng));
    if (p.norm() >= 1.0) continue;
    const Vec3 y = c + R * p;
    if (inside_surface(m, y)) pts.push_back(c + 0.5 * (y - c));
  }
  return pts;
}

/// Relative l2 error of the velocity over a point set.
template <class Approx, class Exact>
double relative_point_error(const std::vector<Vec3>& pts, const Approx& approx, const Exact& exact) {
  double num = 0.0, den = 0.0;
  for (const Vec3& x : pts) {
    const CVec3 ue = exact(x, false).u;
    num += (approx(x, false).u - ue).squaredNorm();
    den += ue.squaredNorm();
  }
  return detail::safe_ratio(std::sqrt(num), std::sqrt(den));
}

} // namespace stokesres
