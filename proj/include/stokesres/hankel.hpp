#pragma once

// Scaled Hankel functions F_nu(z) = z^nu H^(1)_nu(z) for integer and half-integer orders.

#include "stokesres/common.hpp"
#include "stokesres/quadrature.hpp"

#include <cmath>
#include <map>
#include <mutex>

namespace stokesres::hankel {

/// Order nu stored as 2*nu so half-integers are exact.
struct Order {
  int twice;
  static Order from_double(double nu) {
    const double t = 2.0 * nu;
    const double r = std::round(t);
    if (std::abs(t - r) > 1e-12 || std::abs(r) > 9.0)
      throw DomainError("hankel: order must be an integer or half-integer with |nu| <= 9/2");
    return Order{static_cast<int>(r)};
  }
  double value() const { return 0.5 * twice; }
  bool is_half() const { return (twice % 2) != 0; }
};

/// Expansion constants of F_nu near z = 0 for the dimension d (nu = d/2 - 1).
struct HankelConstants {
  double nu;
  cplx a_d; ///< limit of F_nu at z -> 0
  cplx b_d; ///< coefficient of z^2
};

inline HankelConstants constants(int dim) {
  if (dim < 3 || dim > 7) throw DomainError("hankel: dimension must be in 3..7");
  const double nu = 0.5 * dim - 1.0;
  const cplx a = std::pow(2.0, nu) * std::tgamma(nu) / (kI * kPi);
  const cplx b = std::pow(2.0, nu) * std::tgamma(nu - 1.0) / (4.0 * kPi * kI);
  return {nu, a, b};
}

namespace detail {

inline double factorial(int n) { return std::tgamma(n + 1.0); }

inline double digamma_int(int m) { // psi(m), m >= 1
  double s = -0.57721566490153286061;
  for (int j = 1; j < m; ++j) s += 1.0 / j;
  return s;
}

/// Half-integer nu = n + 1/2, n >= 0: sqrt(2/pi) z^{n+1} h_n(z) in closed form.
inline cplx closed_half(int n, cplx z) {
  cplx sum = 0.0;
  for (int m = 0; m <= n; ++m) {
    const double c = factorial(n + m) / (factorial(m) * factorial(n - m) * std::pow(2.0, m));
    sum += std::pow(kI, m) * c * std::pow(z, n - m);
  }
  return std::sqrt(2.0 / kPi) * std::pow(-kI, n + 1) * std::exp(kI * z) * sum;
}

/// Ascending series. drop_constant removes the z^0 term (requires nu > 0).
inline cplx series(Order o, cplx z, bool drop_constant) {
  constexpr int kMaxTerms = 200;
  constexpr double kTol = 1e-17;
  if (o.is_half()) {
    const int n = (o.twice - 1) / 2; // nu = n + 1/2
    const double nu = o.value();
    // z^nu J_nu
    cplx sj = 0.0;
    const cplx z2 = z * z;
    cplx zp = std::pow(z, 2 * n + 1); // z^{2 nu}
    for (int k = 0; k < kMaxTerms; ++k) {
      const cplx t = (k % 2 ? -1.0 : 1.0) * zp / (std::pow(2.0, nu + 2 * k) * factorial(k) * std::tgamma(k + nu + 1.0));
      sj += t;
      if (std::abs(t) < kTol * std::abs(sj) && k > 2) break;
      zp *= z2;
    }
    // z^nu J_{-nu}
    cplx sm = 0.0;
    cplx zq = 1.0;
    for (int k = 0; k < kMaxTerms; ++k) {
      if (!(drop_constant && k == 0)) {
        const cplx t = (k % 2 ? -1.0 : 1.0) * zq * std::pow(2.0, nu - 2 * k) / (factorial(k) * std::tgamma(k - nu + 1.0));
        sm += t;
        if (std::abs(t) < kTol * std::abs(sm) && k > 2) break;
      }
      zq *= z2;
    }
    const double sgn = (n % 2 == 0) ? 1.0 : -1.0;
    return sj - kI * sgn * sm;
  }
  const int n = o.twice / 2;
  const cplx h = 0.5 * z;
  const cplx h2 = h * h;
  const cplx zn = std::pow(z, n);
  // z^n J_n and the digamma-weighted companion series
  cplx sj = 0.0, sp = 0.0;
  cplx term = zn * std::pow(h, n) / factorial(n); // k = 0
  for (int k = 0; k < kMaxTerms; ++k) {
    sj += term;
    sp += (digamma_int(k + 1) + digamma_int(n + k + 1)) * term;
    if (std::abs(term) < kTol * std::abs(sj) && k > 2) break;
    term *= -h2 / ((k + 1.0) * (n + k + 1.0));
  }
  cplx fin = 0.0;
  for (int k = drop_constant ? 1 : 0; k < n; ++k)
    fin += factorial(n - k - 1) / factorial(k) * std::pow(h2, k);
  const cplx zy = -std::pow(2.0, n) / kPi * fin + 2.0 / kPi * std::log(h) * sj - sp / kPi;
  return sj + kI * zy;
}

struct LaguerreCache {
  std::mutex mtx;
  std::map<int, quad::Rule1D> rules;
};

inline const quad::Rule1D& laguerre_rule(int twice_nu) {
  static LaguerreCache c;
  std::lock_guard<std::mutex> lock(c.mtx);
  auto it = c.rules.find(twice_nu);
  if (it == c.rules.end())
    it = c.rules.emplace(twice_nu, quad::gauss_laguerre(64, 0.5 * twice_nu - 0.5)).first;
  return it->second;
}

/// Integer nu >= 0, moderate and large |z|: fixed Laguerre rule on the steepest-descent ray.
inline cplx steepest_descent(Order o, cplx z) {
  const double nu = o.value();
  const double az = std::abs(z);
  const double alpha = 0.5 * kPi - std::arg(z);
  const cplx rot = std::polar(1.0, alpha);
  const quad::Rule1D& r = laguerre_rule(o.twice);
  cplx s = 0.0;
  for (std::size_t i = 0; i < r.x.size(); ++i)
    s += r.w[i] * std::pow(1.0 + r.x[i] * rot / (2.0 * az), nu - 0.5);
  const cplx integral = std::polar(1.0, alpha * (nu + 0.5)) * std::pow(2.0 * az, -(nu + 0.5)) * s;
  return std::pow(2.0, nu + 1.0) * std::exp(kI * (z - nu * kPi)) * std::pow(z, o.twice) /
         (kI * std::sqrt(kPi) * std::tgamma(nu + 0.5)) * integral;
}

} // namespace detail

/// z^nu H^(1)_nu(z) for Im z > 0.
/// Half-integer orders use the terminating closed form, integer orders the ascending
/// series for |z| <= 4 and a 64-node Laguerre rule along the steepest-descent ray beyond.
/// Negative orders use H_{-mu} = e^{i mu pi} H_mu.
inline cplx zH(Order o, cplx z) {
  if (!(z.imag() > 0.0)) throw DomainError("hankel_zH: requires Im z > 0");
  if (o.twice < 0 && o.twice != -1) {
    const Order m{-o.twice};
    return std::polar(1.0, m.value() * kPi) * std::pow(z, o.twice) * zH(m, z);
  }
  if (o.is_half()) {
    if (o.twice == -1) return std::sqrt(2.0 / kPi) * std::exp(kI * z) / z;
    return detail::closed_half((o.twice - 1) / 2, z);
  }
  if (std::abs(z) <= 4.0) return detail::series(o, z, false);
  return detail::steepest_descent(o, z);
}

inline cplx hankel_zH(double nu, cplx z) { return zH(Order::from_double(nu), z); }

/// F_nu(z) - F_nu(0) for nu > 0 by the ascending series (small |z| only).
inline cplx zH_minus_limit(Order o, cplx z) {
  if (o.twice <= 0) throw DomainError("hankel: limit subtraction requires nu > 0");
  if (!(z.imag() > 0.0)) throw DomainError("hankel_zH: requires Im z > 0");
  return detail::series(o, z, true);
}

/// Reference path: the integral representation
///   H_nu(z) = 2^{nu+1} e^{i(z - nu pi)} z^nu / (i sqrt(pi) Gamma(nu+1/2)) int_0^inf e^{2zis} s^{nu-1/2}(1+s)^{nu-1/2} ds
/// integrated along the real s axis (s = v^2) by adaptive Gauss-Kronrod. Valid for nu > -1/2.
/// Slow; meant for cross-checking the fast path.
inline cplx zH_integral(Order o, cplx z, double rel_tol = 1e-13) {
  if (!(z.imag() > 0.0)) throw DomainError("hankel_zH: requires Im z > 0");
  if (o.twice <= -1) throw DomainError("hankel: integral representation requires nu > -1/2");
  const double nu = o.value();
  const double y = z.imag();
  const double vmax = std::sqrt((80.0 + 4.0 * nu * std::log1p(1.0 / y)) / (2.0 * y));
  auto integrand = [&](double v) -> cplx {
    const double v2 = v * v;
    return 2.0 * std::exp(2.0 * kI * z * v2) * std::pow(v, o.twice) * std::pow(1.0 + v2, nu - 0.5);
  };
  // split at natural scales so the adaptive rule sees each feature
  std::vector<double> cuts{0.0};
  for (double c : {0.5, 1.0, 2.0, 1.0 / std::sqrt(y)})
    if (c < vmax) cuts.push_back(c);
  cuts.push_back(vmax);
  std::sort(cuts.begin(), cuts.end());
  cplx integral = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
    if (cuts[i + 1] > cuts[i]) integral += quad::adaptive_gk15(integrand, cuts[i], cuts[i + 1], 0.1 * rel_tol, 1e-300);
  return std::pow(2.0, nu + 1.0) * std::exp(kI * (z - nu * kPi)) * std::pow(z, o.twice) /
         (kI * std::sqrt(kPi) * std::tgamma(nu + 0.5)) * integral;
}

} // namespace stokesres::hankel
