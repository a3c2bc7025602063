#include "stokesres/verification.hpp"

#include <gtest/gtest.h>

#include <Eigen/LU>
#include <random>

using namespace stokesres;

namespace {

constexpr double kTheta = 0.785;

CMatrix random_matrix(Eigen::Index n, Eigen::Index m, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> N;
  CMatrix A(n, m);
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index i = 0; i < n; ++i) A(i, j) = cplx(N(rng), N(rng));
  return A;
}

StokesletField oracle(const SpectralParameter& s) {
  return {s, 2.0 * Vec3(1.6, 0.3, -0.4).normalized(), Vec3(0.3, -0.5, 0.8).normalized()};
}

std::vector<Vec3> ball_points(std::size_t n) {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  std::vector<Vec3> pts;
  while (pts.size() < n) {
    const Vec3 p(U(rng), U(rng), U(rng));
    if (p.norm() < 1.0) pts.push_back(0.5 * p);
  }
  return pts;
}

} // namespace

TEST(DenseSolve, IdentityAndIndependentLu) {
  const CMatrix I = CMatrix::Identity(7, 7);
  const CMatrix b = random_matrix(7, 2, 3);
  const DenseSolveResult r0 = dense_solve(I, b);
  EXPECT_LT((r0.x - b).norm(), 1e-15 * b.norm());
  EXPECT_NEAR(r0.condition, 1.0, 1e-12);

  const CMatrix A = random_matrix(40, 40, 4) + 10.0 * CMatrix::Identity(40, 40);
  const CMatrix B = random_matrix(40, 3, 5);
  const DenseSolveResult r = dense_solve(A, B);
  const CMatrix ref = Eigen::PartialPivLU<CMatrix>(A).solve(B);
  EXPECT_LT((r.x - ref).norm(), 1e-12 * ref.norm());
  EXPECT_LT(r.residual, 1e-13);
  EXPECT_FALSE(r.rank_deficient);
  // 1-norm condition estimate within a factor 3 of the exact value
  const double exact = A.cwiseAbs().colwise().sum().maxCoeff() * A.inverse().cwiseAbs().colwise().sum().maxCoeff();
  EXPECT_GT(r.condition, exact / 3.0);
  EXPECT_LT(r.condition, exact * 3.0);
}

TEST(DenseSolve, RankDeficientFallsBackToSvd) {
  CMatrix A = random_matrix(12, 12, 6);
  A.col(11) = A.col(3);
  const CVector x_true = random_matrix(12, 1, 7);
  const CMatrix b = A * x_true;
  const DenseSolveResult r = dense_solve(A, b);
  EXPECT_TRUE(r.rank_deficient);
  EXPECT_LT(r.residual, 1e-12);
  EXPECT_LT(r.smallest_sigma(0), 1e-12 * A.norm());
  // null vector is (e_3 - e_11)/sqrt 2 up to phase
  CVector nv = CVector::Zero(12);
  nv(3) = 1.0 / std::sqrt(2.0);
  nv(11) = -1.0 / std::sqrt(2.0);
  EXPECT_NEAR(std::abs(nv.dot(r.smallest_vectors.col(0))), 1.0, 1e-10);
}

TEST(DenseSolve, RejectsShapeMismatch) {
  EXPECT_THROW(dense_solve(CMatrix::Zero(3, 4), CMatrix::Zero(3, 1)), DomainError);
  EXPECT_THROW(dense_solve(CMatrix::Identity(3, 3), CMatrix::Zero(4, 1)), DomainError);
}

TEST(Svd, ReconstructsMatrix) {
  const CMatrix A = random_matrix(9, 6, 8);
  const SVDResult s = svd(A);
  EXPECT_LT((s.U * s.sigma.asDiagonal() * s.V.adjoint() - A).norm(), 1e-13 * A.norm());
  for (Eigen::Index i = 1; i < s.sigma.size(); ++i) EXPECT_GE(s.sigma(i - 1), s.sigma(i));
}

TEST(Dirichlet, StokesletOracle) {
  const MeshPtr m = share(make_icosphere(2));
  const auto pts = ball_points(50);
  for (const cplx lam : {cplx(1.0, 0.0), cplx(0.0, 10.0)}) {
    const auto s = make_spectral(lam, kTheta);
    const StokesletField exact = oracle(s);
    const DensityField g = sample_density(m, [&](const Vec3& x, const Vec3&) { return exact(x, false).u; });
    const SolveResult r = solve_dirichlet({m, s, g});
    EXPECT_LT(relative_point_error(pts, r.field, exact), 5e-3) << "lambda " << lam;
    EXPECT_LT(r.report.residuals.at("linear_system"), 1e-10);
    // compatible data leave trace - g = -mu n, with mu the bordered multiplier
    double wsum = 0.0;
    for (std::size_t i = 0; i < m->size(); ++i) wsum += m->weight(i);
    const double predicted = r.report.residuals.at("bordered_multiplier") * std::sqrt(wsum) / r.report.norms.at("g_L2");
    EXPECT_NEAR(r.report.residuals.at("boundary_trace"), predicted, 1e-6 * predicted + 1e-14);
    EXPECT_LT(r.report.residuals.at("boundary_trace"), 1e-4);
    EXPECT_LT(r.report.residuals.at("density_normal_moment"), 1e-9 * r.report.norms.at("density_L2"));
  }
}

TEST(Neumann, StokesletOracle) {
  const MeshPtr m = share(make_icosphere(2));
  const auto pts = ball_points(50);
  for (const cplx lam : {cplx(1.0, 0.0), cplx(0.0, 10.0)}) {
    const auto s = make_spectral(lam, kTheta);
    const StokesletField exact = oracle(s);
    const DensityField g = sample_density(m, [&](const Vec3& x, const Vec3& n) { return exact(x).conormal(n); });
    const SolveResult r = solve_neumann({m, s, g});
    EXPECT_LT(relative_point_error(pts, r.field, exact), 5e-3) << "lambda " << lam;
    EXPECT_LT(r.report.residuals.at("boundary_trace"), 1e-10);
  }
}

TEST(Neumann, HypothesisIsEnforced) {
  const MeshPtr m = share(make_icosphere(1));
  const auto s = make_spectral(0.01, kTheta);
  EXPECT_THROW(solve_neumann({m, s, DensityField::zero(m)}), DomainError);
}

TEST(Solvers, ZeroDataGiveZeroField) {
  const MeshPtr m = share(make_icosphere(1));
  const auto s = make_spectral(cplx(0.0, 10.0), kTheta);
  const SolveResult d = solve_dirichlet({m, s, DensityField::zero(m)});
  const SolveResult n = solve_neumann({m, s, DensityField::zero(m)});
  EXPECT_EQ(d.density.values.norm(), 0.0);
  EXPECT_EQ(n.density.values.norm(), 0.0);
  EXPECT_EQ(d.field(Vec3(0.1, 0.2, 0.3)).u.norm(), 0.0);
  EXPECT_EQ(n.field(Vec3(0.1, 0.2, 0.3)).u.norm(), 0.0);
}

TEST(Solvers, LinearInTheData) {
  const MeshPtr m = share(make_icosphere(1));
  const auto s = make_spectral(cplx(2.0, 1.0), kTheta);
  const DensityField g = sample_density(m, [](const Vec3& x, const Vec3&) { return CVec3(x(1), -x(0), cplx(0.0, x(2))); });
  DensityField g10 = g;
  g10.values *= cplx(0.0, 10.0);
  const CMatrix D = assemble_double_layer(*m, s).entries;
  const SolveResult a = solve_dirichlet_with({m, s, g}, D), b = solve_dirichlet_with({m, s, g10}, D);
  EXPECT_LT((b.density.values - cplx(0.0, 10.0) * a.density.values).norm(), 1e-12 * b.density.values.norm());
}

TEST(Solvers, RejectsForeignData) {
  const MeshPtr m1 = share(make_icosphere(1)), m0 = share(make_icosphere(0));
  const auto s = make_spectral(1.0, kTheta);
  EXPECT_THROW(solve_dirichlet({m1, s, DensityField::zero(m0)}), DomainError);
  DensityField bad = DensityField::zero(m1);
  bad.values(0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(solve_dirichlet({m1, s, bad}), DomainError);
}

TEST(Solvers, InteriorSampleIsInside) {
  const SurfaceMesh cube = make_cube(2);
  for (const Vec3& x : interior_sample(cube, 20)) {
    EXPECT_TRUE(inside_surface(cube, x));
    EXPECT_TRUE((x.array() > 0.2).all() && (x.array() < 0.8).all());
  }
  EXPECT_FALSE(inside_surface(cube, Vec3(1.5, 0.5, 0.5)));
}

TEST(Resolvent, ZeroForcingGivesZero) {
  const MeshPtr m = share(make_icosphere(1));
  const auto s = make_spectral(cplx(0.0, 10.0), kTheta);
  const VolumeQuadrature vq = ball_volume_rule(Vec3::Zero(), 1.0, 3, 3, 6);
  const VectorField zero = [](const Vec3&) { return CVec3::Zero().eval(); };
  const ResolventResult r = solve_resolvent({m, s, zero, {}, vq, 2.0}, {2.0, 3.0});
  for (const auto& u : r.u) EXPECT_EQ(u.norm(), 0.0);
  EXPECT_EQ(r.ratios.at(2.0), 0.0);
}

// Particular solution psi = curl(gaussian a) plus a Dirichlet correction, against the
// volume-potential route.
TEST(Resolvent, AgreesWithParticularSolutionRoute) {
  const MeshPtr m = share(make_icosphere(1));
  const cplx lam(0.0, 10.0);
  const auto s = make_spectral(lam, kTheta);
  const Vec3 c(0.2, -0.1, 0.15), a(0.3, 0.8, -0.5);
  const double sg = 0.35;
  auto psi = [&](const Vec3& x) { return std::exp(-(x - c).squaredNorm() / (2 * sg * sg)); };
  auto particular = [&](const Vec3& x) {
    const Vec3 gp = -(x - c) / (sg * sg) * psi(x);
    return CVec3(gp.cross(a).cast<cplx>());
  };
  const VectorField force = [&](const Vec3& x) {
    const double r2 = (x - c).squaredNorm(), ps = psi(x), s2 = sg * sg;
    const Vec3 glap = ps * (2.0 * (x - c) / (s2 * s2) - (r2 / (s2 * s2) - 3.0 / s2) * (x - c) / s2);
    const Vec3 gp = -(x - c) / s2 * ps;
    return CVec3((-glap.cross(a)).cast<cplx>() + lam * gp.cross(a).cast<cplx>());
  };
  const VolumeQuadrature vq = ball_volume_rule(Vec3::Zero(), 1.0, 6, 6, 12);
  const ResolventResult res = solve_resolvent({m, s, force, {}, vq, 2.0}, {2.0});
  SolverOptions o;
  o.normalize_pressure = false;
  const DensityField g = sample_density(m, [&](const Vec3& x, const Vec3&) { return CVec3(-particular(x)); });
  const SolveResult corr = solve_dirichlet({m, s, g}, o);
  double num = 0.0, den = 0.0;
  for (std::size_t q = 0; q < vq.size(); ++q) {
    const CVec3 ub = particular(vq.nodes[q]) + corr.field(vq.nodes[q], false).u;
    num += vq.weights[q] * (res.u[q] - ub).squaredNorm();
    den += vq.weights[q] * ub.squaredNorm();
  }
  EXPECT_LT(std::sqrt(num / den), 2e-2);
  EXPECT_GT(res.ratios.at(2.0), 0.0);
  EXPECT_TRUE(std::isfinite(res.ratios.at(2.0)));
}
