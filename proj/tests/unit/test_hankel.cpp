#include "stokesres/hankel.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace stokesres;
using namespace stokesres::hankel;

namespace {

struct Reference {
  double nu;
  cplx z;
  cplx value; // z^nu H^(1)_nu(z), 40-digit arithmetic
};

const Reference kReference[] = {
    {0.5, {0.0, 1.0}, {0.0, -0.2935253263474798}},
    {1.0, {0.7, 0.4}, {0.24352558812653856, -0.56390838146952849}},
    {1.5, {0.7, 0.4}, {0.19602627882699492, -0.81387982528299884}},
    {2.0, {3.0, 2.0}, {0.95373565261072207, 0.31889628985992273}},
    {2.5, {3.0, 2.0}, {2.3058810177910166, 0.10759857741904969}},
    {1.0, {6.0, 0.5}, {-0.98691370733714386, -0.68150700449246574}},
    {2.0, {-5.0, 1.5}, {0.62758528680212711, 2.3350929804041708}},
    {0.5, {-0.1, 0.052}, {-0.075619305229722733, -0.75367072675855416}},
};

double rel(cplx a, cplx b) { return std::abs(a - b) / std::abs(b); }

} // namespace

TEST(Hankel, MatchesHighPrecisionReference) {
  for (const auto& r : kReference) EXPECT_LT(rel(hankel_zH(r.nu, r.z), r.value), 1e-12) << "nu " << r.nu << " z " << r.z;
}

TEST(Hankel, HalfOrderClosedForm) {
  // z^{1/2} H_{1/2}(z) = -i sqrt(2/pi) e^{iz}
  for (const cplx z : {cplx(0.3, 0.1), cplx(2.0, 5.0), cplx(-7.0, 0.5), cplx(12.0, 3.0)}) {
    const cplx expect = -kI * std::sqrt(2.0 / kPi) * std::exp(kI * z);
    EXPECT_LT(rel(hankel_zH(0.5, z), expect), 1e-13);
  }
}

TEST(Hankel, SeriesAndIntegralPathsAgree) {
  for (int twice = 0; twice <= 5; ++twice) {
    const Order o{twice};
    for (const cplx z : {cplx(0.2, 0.3), cplx(1.0, 1.0), cplx(-2.0, 0.5), cplx(3.9, 0.2), cplx(5.0, 3.0),
                         cplx(-8.0, 2.0), cplx(0.5, 9.0), cplx(20.0, 5.0)})
      EXPECT_LT(rel(zH(o, z), zH_integral(o, z)), 1e-10) << "nu " << o.value() << " z " << z;
  }
}

TEST(Hankel, SmallArgumentLimit) {
  // z^nu H_nu(z) -> -i 2^nu Gamma(nu) / pi as z -> 0 for nu > 0
  for (double nu : {1.0, 1.5, 2.0, 2.5}) {
    const cplx limit = -kI * std::pow(2.0, nu) * std::tgamma(nu) / kPi;
    EXPECT_LT(rel(hankel_zH(nu, cplx(1e-4, 1e-4)), limit), 1e-6) << "nu " << nu;
  }
}

TEST(Hankel, RejectsUnsupportedOrders) {
  EXPECT_THROW(hankel_zH(0.3, cplx(1.0, 1.0)), DomainError);
  EXPECT_THROW(hankel_zH(5.0, cplx(1.0, 1.0)), DomainError);
}

TEST(Hankel, DecaysInTheUpperHalfPlane) {
  // |z^nu H_nu(z)| ~ sqrt(2/pi) |z|^{nu-1/2} e^{-Im z}
  const cplx z(3.0, 30.0);
  const double scale = std::sqrt(2.0 / kPi) * std::pow(std::abs(z), 0.5) * std::exp(-z.imag());
  EXPECT_NEAR(std::abs(hankel_zH(1.0, z)) / scale, 1.0, 0.05);
}
