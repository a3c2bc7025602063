#include "stokesres/kernels.hpp"
#include "stokesres/verification.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace stokesres;

namespace {

constexpr double kTheta = 0.785;

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double a : v) x(i++) = a;
  return x;
}

double rel(cplx a, cplx b) { return std::abs(a - b) / std::abs(b); }

// Stokeslet in R^3 written out directly.
Eigen::Matrix3d stokeslet3(const Vec3& x) {
  const double r = x.norm();
  return (Eigen::Matrix3d::Identity() / r + x * x.transpose() / (r * r * r)) / (8.0 * kPi);
}

} // namespace

TEST(Spectral, WaveNumberBranch) {
  EXPECT_LT(std::abs(make_spectral(1.0, kTheta).k - kI), 1e-15);
  EXPECT_LT(std::abs(make_spectral(cplx(0.0, 4.0), kTheta).k - cplx(-std::sqrt(2.0), std::sqrt(2.0))), 1e-14);
  // Im k > 0 everywhere in the sector
  for (double a : {-2.3, -1.0, 0.0, 1.0, 2.3}) EXPECT_GT(make_spectral(std::polar(5.0, a), kTheta).k.imag(), 0.0);
}

TEST(Spectral, RejectsOutsideSector) {
  EXPECT_THROW(make_spectral(-1.0, kTheta), DomainError);
  EXPECT_THROW(make_spectral(0.0, kTheta), DomainError);
  EXPECT_THROW(make_spectral(std::polar(1.0, 2.4), kTheta), DomainError);
  EXPECT_THROW(make_spectral(1.0, 0.0), DomainError);
  EXPECT_THROW(make_spectral(1.0, kTheta, 8), DomainError);
}

TEST(Kernels, HelmholtzAtUnitDistance) {
  const auto s = make_spectral(1.0, kTheta);
  EXPECT_LT(rel(eval_G(vec({1.0, 0.0, 0.0}), s), std::exp(-1.0) / (4.0 * kPi)), 1e-15);
}

TEST(Kernels, HelmholtzHighPrecisionReference) {
  {
    const auto s = make_spectral(cplx(2.0, 3.0), kTheta, 4);
    EXPECT_LT(std::abs(s.k - cplx(-0.89597747612983812, 1.67414922803554)), 1e-14);
    EXPECT_LT(rel(eval_G(vec({0.3, 0.4, 0.5, 0.2}), s), cplx(0.021702620739037943, -0.011644338612499575)), 1e-12);
  }
  {
    const auto s = make_spectral(cplx(-1.0, 4.0), kTheta, 5);
    EXPECT_LT(rel(eval_G(vec({0.3, -0.4, 0.5, 0.2, 0.1}), s), cplx(0.022395664520078947, -0.016494968867531887)),
              1e-12);
  }
  {
    const auto s = make_spectral(cplx(0.0, 4.0), kTheta, 3);
    EXPECT_LT(rel(eval_G(vec({0.3, -0.2, 0.5}), s), cplx(0.034738754107159376, -0.041325718543494226)), 1e-13);
  }
}

TEST(Kernels, StokesResolventHighPrecisionReference) {
  const auto s = make_spectral(cplx(0.0, 4.0), kTheta);
  const KernelValue kv = eval_Gamma(vec({0.3, -0.2, 0.5}), s);
  const cplx ref[3][3] = {
      {{0.017547354050471829, -0.026197738569390176},
       {-0.0091829705797654165, 0.0022135752975370505},
       {0.022957426449413541, -0.0055339382438426263}},
      {{-0.0091829705797654165, 0.0022135752975370505},
       {0.0098948785673339821, -0.0243530924881093},
       {-0.015304950966275694, 0.0036892921625617509}},
      {{0.022957426449413541, -0.0055339382438426263},
       {-0.015304950966275694, 0.0036892921625617509},
       {0.04203527559651294, -0.032100606029488977}},
  };
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) EXPECT_LT(rel(kv.Gamma(i, k), ref[i][k]), 1e-11) << i << k;
  EXPECT_LT(rel(kv.gradGamma[0](0, 1), cplx(-0.0069576221651210985, 0.0045080019050987453)), 1e-10);
}

TEST(Kernels, PressureKernel) {
  const auto s = make_spectral(cplx(3.0, 1.0), kTheta);
  const KernelValue kv = eval_Gamma(vec({1.0, 0.0, 0.0}), s);
  EXPECT_NEAR(kv.Phi(0), 1.0 / (4.0 * kPi), 1e-15);
  EXPECT_EQ(kv.Phi(1), 0.0);
  EXPECT_EQ(kv.Phi(2), 0.0);
}

TEST(Kernels, ZeroParameterLimitIsStokeslet) {
  const auto s = make_spectral(1e-12, kTheta);
  for (const Vec3 x : {Vec3(0.3, -0.2, 0.5), Vec3(1.0, 2.0, -0.5), Vec3(0.01, 0.0, 0.02)}) {
    const KernelValue kv = eval_Gamma(x, s);
    EXPECT_LT((kv.Gamma.real() - stokeslet3(x)).norm() / stokeslet3(x).norm(), 1e-5);
  }
}

TEST(Kernels, DifferenceKernelMatchesDirectSubtraction) {
  for (int d = 3; d <= 7; ++d) {
    const auto s = make_spectral(cplx(2.0, -1.5), kTheta, d);
    Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(d, 0.4, -0.3);
    const KernelValue full = eval_Gamma(x, s);
    Eigen::MatrixXcd G0;
    std::vector<Eigen::MatrixXcd> dG0;
    kernels::stokeslet_generic(x, G0, dG0);
    const auto [diff, ddiff] = eval_Gamma_diff(x, s);
    EXPECT_LT((diff - (full.Gamma - G0)).norm() / full.Gamma.norm(), 1e-10) << "d " << d;
    for (int j = 0; j < d; ++j)
      EXPECT_LT((ddiff[j] - (full.gradGamma[j] - dG0[j])).norm() / full.gradGamma[j].norm(), 1e-9) << "d " << d;
  }
}

TEST(Kernels, GenericPathAgreesWithThreeDimensionalProfile) {
  const auto s = make_spectral(cplx(-3.0, 6.0), kTheta);
  const Eigen::VectorXd x = vec({0.2, 0.7, -0.4});
  const KernelValue kv = eval_Gamma(x, s);
  Eigen::MatrixXcd G;
  std::vector<Eigen::MatrixXcd> dG;
  kernels::gamma_generic(x, s, false, G, dG);
  EXPECT_LT((G - kv.Gamma).norm() / kv.Gamma.norm(), 1e-10);
  for (int j = 0; j < 3; ++j) EXPECT_LT((dG[j] - kv.gradGamma[j]).norm() / kv.gradGamma[j].norm(), 1e-9);
}

// Properties over random points and parameters in every supported dimension.
TEST(KernelProperties, SymmetryParityConjugationDivergence) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (int d = 3; d <= 7; ++d)
    for (int n = 0; n < 20; ++n) {
      Eigen::VectorXd x(d);
      for (int a = 0; a < d; ++a) x(a) = U(rng);
      const cplx lam = std::polar(std::pow(10.0, 2.0 * U(rng)), 2.3 * U(rng));
      const auto s = make_spectral(lam, kTheta, d);
      const KernelValue kv = eval_Gamma(x, s);
      const double scale = kv.Gamma.norm();
      EXPECT_LT((kv.Gamma - kv.Gamma.transpose()).norm(), 1e-13 * scale);
      EXPECT_LT((eval_Gamma(-x, s).Gamma - kv.Gamma).norm(), 1e-13 * scale);
      EXPECT_LT((eval_Gamma(x, conjugate(s)).Gamma - kv.Gamma.conjugate()).norm(), 1e-12 * scale);
      // sum_k d_k Gamma_ik = 0
      double gscale = 0.0;
      Eigen::VectorXcd div = Eigen::VectorXcd::Zero(d);
      for (int k = 0; k < d; ++k) {
        div += kv.gradGamma[k].col(k);
        gscale += kv.gradGamma[k].squaredNorm();
      }
      EXPECT_LT(div.norm(), 1e-9 * std::sqrt(gscale)) << "d " << d << " lambda " << lam;
    }
}

TEST(KernelProperties, GradientsMatchCentralDifferences) {
  const auto s = make_spectral(cplx(1.0, 2.0), kTheta);
  const Vec3 x(0.4, -0.3, 0.6);
  const double h = 1e-5;
  const KernelValue kv = eval_Gamma(x, s);
  for (int j = 0; j < 3; ++j) {
    const Vec3 e = h * Vec3::Unit(j);
    const Eigen::MatrixXcd fd = (eval_Gamma(x + e, s).Gamma - eval_Gamma(x - e, s).Gamma) / (2.0 * h);
    EXPECT_LT((fd - kv.gradGamma[j]).norm() / kv.gradGamma[j].norm(), 1e-8);
    const cplx gfd = (eval_G(x + e, s) - eval_G(x - e, s)) / (2.0 * h);
    EXPECT_LT(std::abs(gfd - kv.gradG(j)) / kv.gradG.norm(), 1e-8);
  }
}

TEST(KernelProperties, PoleIsRejected) {
  const auto s = make_spectral(1.0, kTheta);
  EXPECT_THROW(eval_Gamma(Eigen::VectorXd::Zero(3), s), DomainError);
  EXPECT_THROW(eval_G(vec({1.0, 0.0}), s), DomainError);
}

TEST(KernelProperties, SmallSweepPasses) {
  const EstimateReport r = kernel_sweep_report(60, 3, kTheta);
  EXPECT_TRUE(r.passed) << r.to_json().dump();
}

TEST(KernelProperties, ExpansionOrdersInEveryDimension) {
  for (int d = 4; d <= 7; ++d) {
    const EstimateReport r = expansion_report(d, 0.3);
    EXPECT_TRUE(r.passed) << "d " << d << " slope " << r.extra.at("slope");
  }
}
