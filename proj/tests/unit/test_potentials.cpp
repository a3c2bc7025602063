#include "stokesres/verification.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace stokesres;

namespace {

constexpr double kTheta = 0.785;

CVec3 smooth_density(const Vec3& x, const Vec3&) { return CVec3(std::sin(x(0)) + 0.5, x(1) * x(2), cplx(1.0, x(0))); }

CVector random_vector(Eigen::Index n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> N;
  CVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = cplx(N(rng), N(rng));
  return v;
}

} // namespace

TEST(DoubleLayer, ConstantDensityReproducesGaussIdentity) {
  // the static double layer of a constant c is -c inside and 0 outside
  const MeshPtr m = share(make_icosphere(2));
  const auto s = make_spectral(1e-10, kTheta);
  DensityField f = DensityField::zero(m);
  const CVec3 c(1.0, -2.0, cplx(0.5, 1.0));
  for (std::size_t i = 0; i < m->size(); ++i) f.set_node(i, c);
  for (const Vec3 x : {Vec3(0.1, 0.2, -0.3), Vec3(0.0, 0.0, 0.0), Vec3(-0.5, 0.1, 0.2)})
    EXPECT_LT((double_layer_eval(f, s, x).u + c).norm(), 1e-6 * c.norm());
  for (const Vec3 x : {Vec3(2.0, 0.0, 0.0), Vec3(1.5, -1.0, 0.5)})
    EXPECT_LT(double_layer_eval(f, s, x).u.norm(), 1e-6 * c.norm());
}

TEST(DoubleLayer, StaticOperatorCalibration) {
  const SurfaceMesh m = make_icosphere(1);
  const CMatrix D0 = assemble_static_double_layer(m);
  CVector c(3 * static_cast<Eigen::Index>(m.size()));
  for (std::size_t i = 0; i < m.size(); ++i) c.segment<3>(3 * static_cast<Eigen::Index>(i)) = CVec3(1.0, 2.0, 3.0);
  EXPECT_LT((D0 * c + 0.5 * c).norm() / c.norm(), 1e-12);
}

TEST(Operators, WeightedAdjointIsAdjointInTheWeightedPairing) {
  const SurfaceMesh m = make_icosphere(1);
  const auto s = make_spectral(cplx(0.0, 10.0), kTheta);
  const BoundaryOperatorMatrix ks = assemble_Kstar(m, s);
  const BoundaryOperatorMatrix k = assemble_K(m, s);
  const Eigen::Index n = ks.entries.rows();
  const CVector x = random_vector(n, 1), y = random_vector(n, 2);
  auto pair = [&](const CVector& a, const CVector& b) {
    cplx r = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) r += ks.weights(i / 3) * std::conj(a(i)) * b(i);
    return r;
  };
  const cplx lhs = pair(k.entries * x, y), rhs = pair(x, ks.entries * y);
  EXPECT_LT(std::abs(lhs - rhs), 1e-12 * std::abs(lhs));
  EXPECT_LT((weighted_adjoint(k.entries, k.weights) - ks.entries).norm(), 1e-12 * ks.entries.norm());
}

TEST(Operators, DoubleLayerOfLambdaIsKstarOfConjugate) {
  const SurfaceMesh m = make_icosphere(1);
  const auto s = make_spectral(cplx(3.0, 4.0), kTheta);
  EXPECT_EQ((assemble_double_layer(m, s).entries - assemble_Kstar(m, conjugate(s)).entries).norm(), 0.0);
}

// The traces through assembled operators agree with the extrapolated off-surface limits.
TEST(Traces, AssembledAndExtrapolatedTracesAgree) {
  const MeshPtr m = share(make_icosphere(2));
  const auto s = make_spectral(cplx(0.0, 10.0), kTheta);
  const DensityField f = sample_density(m, smooth_density);
  const DensityReconstruction rec(f);
  const double step = default_trace_step(*m);
  const DensityField d_in = boundary_trace(f, s, TraceKind::velocity_double_layer, Side::interior);
  const DensityField d_out = boundary_trace(f, s, TraceKind::velocity_double_layer, Side::exterior);
  const DensityField k_in = boundary_trace(f, s, TraceKind::conormal_single_layer, Side::interior);
  const DensityField k_out = boundary_trace(f, s, TraceKind::conormal_single_layer, Side::exterior);
  const CMatrix S = assemble_S(*m, s).entries;
  const CVector sf = S * f.values;
  const CVector p_in = pressure_trace(f, Side::interior), p_out = pressure_trace(f, Side::exterior);
  double fmax = 0.0, sfmax = 0.0;
  for (std::size_t i = 0; i < m->size(); ++i) {
    fmax = std::max(fmax, f.node(i).norm());
    sfmax = std::max(sfmax, sf.segment<3>(3 * static_cast<Eigen::Index>(i)).norm());
  }
  for (std::size_t i : {0ul, 17ul, 101ul, 250ul}) {
    const auto din = extrapolated_trace(Representation::double_layer, rec, s, i, step, Side::interior);
    const auto dout = extrapolated_trace(Representation::double_layer, rec, s, i, step, Side::exterior);
    const auto sin_ = extrapolated_trace(Representation::single_layer, rec, s, i, step, Side::interior);
    const auto sout = extrapolated_trace(Representation::single_layer, rec, s, i, step, Side::exterior);
    EXPECT_LT((din.u.value - d_in.node(i)).norm(), 2e-2 * fmax) << "node " << i;
    EXPECT_LT((dout.u.value - d_out.node(i)).norm(), 2e-2 * fmax) << "node " << i;
    EXPECT_LT((sin_.conormal.value - k_in.node(i)).norm(), 2e-2 * fmax) << "node " << i;
    EXPECT_LT((sout.conormal.value - k_out.node(i)).norm(), 2e-2 * fmax) << "node " << i;
    const CVec3 si = sf.segment<3>(3 * static_cast<Eigen::Index>(i));
    EXPECT_LT((sin_.u.value - si).norm(), 1e-2 * sfmax) << "node " << i;
    EXPECT_LT((sout.u.value - si).norm(), 1e-2 * sfmax) << "node " << i;
    EXPECT_LT(std::abs(sin_.phi.value(0) - p_in(static_cast<Eigen::Index>(i))), 2e-2 * fmax) << "node " << i;
    EXPECT_LT(std::abs(sout.phi.value(0) - p_out(static_cast<Eigen::Index>(i))), 2e-2 * fmax) << "node " << i;
  }
}

TEST(Traces, JumpsAreExactThroughOperators) {
  const MeshPtr m = share(make_icosphere(1));
  const auto s = make_spectral(cplx(2.0, -1.0), kTheta);
  const DensityField f = sample_density(m, smooth_density);
  const CVector dl = boundary_trace(f, s, TraceKind::velocity_double_layer, Side::interior).values -
                     boundary_trace(f, s, TraceKind::velocity_double_layer, Side::exterior).values;
  const CVector sl = boundary_trace(f, s, TraceKind::conormal_single_layer, Side::interior).values -
                     boundary_trace(f, s, TraceKind::conormal_single_layer, Side::exterior).values;
  EXPECT_LT((dl + f.values).norm(), 1e-12 * f.values.norm());
  EXPECT_LT((sl - f.values).norm(), 1e-12 * f.values.norm());
  EXPECT_THROW(boundary_trace(f, s, TraceKind::pressure, Side::boundary_limit), DomainError);
}

TEST(Operators, UnrestrictedExteriorOperatorHasNormalNullVector) {
  const MeshPtr m = share(make_icosphere(1));
  const EstimateReport r = operator_conditioning_scan(m, kTheta, {cplx(1.0, 0.0), cplx(0.0, 10.0)}, {}, 1e-2, 10.0);
  EXPECT_TRUE(r.passed) << r.to_json().dump();
  for (const auto& row : r.rows) {
    EXPECT_GT(row.get("sigma_min_restricted"), 10.0 * row.get("sigma_min_unrestricted"));
    EXPECT_GT(row.get("sigma_min_interior"), 0.05);
  }
}

TEST(Potentials, SolveHomogeneousPdeOffTheBoundary) {
  // residual of (-Delta + lambda) u + grad phi and div u. The Laplacian differences the
  // computed gradient once; second differences of u would amplify quadrature noise by 1/h^2.
  const MeshPtr m = share(make_icosphere(1));
  const auto s = make_spectral(cplx(1.0, 3.0), kTheta);
  const DensityField f = sample_density(m, smooth_density);
  const DensityReconstruction rec(f);
  for (Representation rep : {Representation::single_layer, Representation::double_layer}) {
    const Vec3 x(0.1, -0.2, 0.15);
    const double h = 3e-3;
    const FieldSample c = evaluate(rep, rec, s, x, true);
    CVec3 lap = CVec3::Zero(), gphi = CVec3::Zero();
    for (int a = 0; a < 3; ++a) {
      const Vec3 e = h * Vec3::Unit(a);
      const FieldSample p = evaluate(rep, rec, s, x + e, true), q = evaluate(rep, rec, s, x - e, true);
      lap += (p.grad_u.col(a) - q.grad_u.col(a)) / (2.0 * h);
      gphi(a) = (p.phi - q.phi) / (2.0 * h);
      // the computed gradient matches differences of u
      EXPECT_LT(((p.u - q.u) / (2.0 * h) - c.grad_u.col(a)).norm(), 1e-4 * c.grad_u.norm());
    }
    const CVec3 res = -lap + s.lambda * c.u + gphi;
    const double scale = lap.norm() + std::abs(s.lambda) * c.u.norm() + gphi.norm();
    EXPECT_LT(res.norm(), 1e-4 * scale);
    EXPECT_LT(std::abs(c.grad_u.trace()), 1e-8 * c.grad_u.norm());
  }
}

TEST(Density, RejectsWrongLength) {
  const MeshPtr m = share(make_icosphere(0));
  EXPECT_THROW(DensityField(m, CVector::Zero(5)), DomainError);
  EXPECT_THROW(DensityField(nullptr, CVector::Zero(3)), DomainError);
}
