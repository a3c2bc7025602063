#pragma once

// Fundamental solutions of the Stokes resolvent system and their derivatives.
//
// d = 3 fast path. With s = i k r and E = e^s,
//   Gamma_ik = a(s)/(4 pi r) delta_ik + b(s)/(4 pi r^3) x_i x_k
//   a(s) = E - ((s-1)E + 1)/s^2          = sum_m (m+1)^2/(m+2)! s^m
//   b(s) = (3 - (s^2 - 3s + 3)E)/s^2     = sum_m -(m+1)(m-1)/(m+2)! s^m
// so a(0) = b(0) = 1/2 recovers the Stokeslet. Derivatives in r follow from the
// moments alpha_j = s^j a^(j)(s), beta_j = s^j b^(j)(s), which are summed from the
// series for |s| < 1/2 and from the closed forms otherwise.

#include "stokesres/common.hpp"
#include "stokesres/hankel.hpp"

#include <array>
#include <cmath>
#include <vector>

namespace stokesres {

/// lambda in the sector Sigma_theta together with k = sqrt(-lambda), Im k > 0.
struct SpectralParameter {
  cplx lambda;
  double theta;
  cplx k;
  int dim;
};

/// Builds the spectral parameter; k = sqrt(|lambda|) e^{i(pi + arg lambda)/2}.
inline SpectralParameter make_spectral(cplx lambda, double theta, int dim = 3) {
  if (!(theta > 0.0 && theta < 0.5 * kPi)) throw DomainError("theta outside (0, pi/2)");
  if (dim < 3 || dim > 7) throw DomainError("dimension must be in 3..7");
  if (lambda == cplx(0.0, 0.0)) throw DomainError("lambda outside sector: lambda = 0");
  const double tau = std::arg(lambda);
  if (!(std::abs(tau) < kPi - theta)) throw DomainError("lambda outside sector");
  const cplx k = std::polar(std::sqrt(std::abs(lambda)), 0.5 * (kPi + tau));
  return {lambda, theta, k, dim};
}

/// Parameter for conj(lambda); the sector is symmetric so this is always valid.
inline SpectralParameter conjugate(const SpectralParameter& s) {
  return make_spectral(std::conj(s.lambda), s.theta, s.dim);
}

namespace kernels {

inline constexpr double kSeriesThreshold = 0.5; ///< |k| r below which series are summed
inline constexpr int kSeriesTerms = 22;

/// Radial moments of a and b at s = i k r.
struct RadialMoments {
  cplx a0, a1, a2;
  cplx b0, b1, b2;
};

/// Moments of a, b. With subtract_static the constants a(0) = b(0) = 1/2 are removed,
/// which gives the kernel of Gamma(lambda) - Gamma(0) without cancellation.
inline RadialMoments radial_moments(cplx s, bool subtract_static = false) {
  RadialMoments m{};
  if (std::abs(s) < kSeriesThreshold) {
    // coefficients alpha_m = (m+1)^2/(m+2)!, beta_m = -(m+1)(m-1)/(m+2)!
    cplx sp = 1.0;
    double fact = 2.0; // (m+2)!
    for (int j = 0; j < kSeriesTerms; ++j) {
      const double al = (j + 1.0) * (j + 1.0) / fact;
      const double be = -(j + 1.0) * (j - 1.0) / fact;
      if (!(subtract_static && j == 0)) {
        m.a0 += al * sp;
        m.b0 += be * sp;
      }
      m.a1 += double(j) * al * sp;
      m.b1 += double(j) * be * sp;
      m.a2 += double(j) * (j - 1.0) * al * sp;
      m.b2 += double(j) * (j - 1.0) * be * sp;
      sp *= s;
      fact *= (j + 3.0);
    }
    return m;
  }
  const cplx E = std::exp(s);
  const cplx s2 = s * s;
  const cplx n1 = (s - 1.0) * E + 1.0;
  const cplx n2 = 3.0 - (s2 - 3.0 * s + 3.0) * E;
  m.a0 = E - n1 / s2;
  m.a1 = s * E - E + 2.0 * n1 / s2;
  m.a2 = s2 * E - s * E + 3.0 * E - 6.0 * n1 / s2;
  m.b0 = n2 / s2;
  m.b1 = -(s - 1.0) * E - 2.0 * n2 / s2;
  m.b2 = -s2 * E + 3.0 * s * E - 3.0 * E + 6.0 * n2 / s2;
  if (subtract_static) {
    m.a0 -= 0.5;
    m.b0 -= 0.5;
  }
  return m;
}

/// Radial profile Gamma_ik = A delta_ik + C x_i x_k and its first two r-derivatives.
struct RadialProfile {
  double r;
  cplx A, dA, d2A;
  cplx C, dC, d2C;
};

inline RadialProfile radial_profile(cplx k, double r, bool subtract_static = false) {
  const RadialMoments m = radial_moments(kI * k * r, subtract_static);
  const double c = 1.0 / (4.0 * kPi);
  const double r2 = r * r, r3 = r2 * r;
  RadialProfile p;
  p.r = r;
  p.A = c * m.a0 / r;
  p.dA = c * (m.a1 - m.a0) / r2;
  p.d2A = c * (m.a2 - 2.0 * m.a1 + 2.0 * m.a0) / r3;
  p.C = c * m.b0 / r3;
  p.dC = c * (m.b1 - 3.0 * m.b0) / (r3 * r);
  p.d2C = c * (m.b2 - 6.0 * m.b1 + 12.0 * m.b0) / (r3 * r2);
  return p;
}

/// Gamma(x) for d = 3 from a profile.
inline CMat3 gamma_from_profile(const Vec3& x, const RadialProfile& p) {
  CMat3 g = p.C * (x * x.transpose()).cast<cplx>();
  g.diagonal().array() += p.A;
  return g;
}

/// dGamma[j](i,k) = d_j Gamma_ik for d = 3 from a profile.
inline std::array<CMat3, 3> grad_gamma_from_profile(const Vec3& x, const RadialProfile& p) {
  const Vec3 xh = x / p.r;
  const CMat3 xx = (x * x.transpose()).cast<cplx>();
  std::array<CMat3, 3> d;
  for (int j = 0; j < 3; ++j) {
    CMat3 m = (p.dC * xh(j)) * xx;
    m.diagonal().array() += p.dA * xh(j);
    for (int i = 0; i < 3; ++i) {
      m(i, j) += p.C * x(i);
      m(j, i) += p.C * x(i);
    }
    d[j] = m;
  }
  return d;
}

/// Second derivatives H[m][j](i,k) = d_m d_j Gamma_ik for d = 3.
inline std::array<std::array<CMat3, 3>, 3> hess_gamma_from_profile(const Vec3& x, const RadialProfile& p) {
  const double r = p.r;
  const Vec3 xh = x / r;
  std::array<std::array<CMat3, 3>, 3> H;
  for (int mm = 0; mm < 3; ++mm)
    for (int j = 0; j < 3; ++j) {
      const double dmj = (mm == j) ? 1.0 : 0.0;
      const double proj = (dmj - xh(mm) * xh(j)) / r;
      CMat3 h;
      for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) {
          const double dik = (i == k) ? 1.0 : 0.0;
          const double dij = (i == j) ? 1.0 : 0.0;
          const double djk = (j == k) ? 1.0 : 0.0;
          const double dim_ = (i == mm) ? 1.0 : 0.0;
          const double dkm = (k == mm) ? 1.0 : 0.0;
          cplx v = (p.d2A * xh(mm) * xh(j) + p.dA * proj) * dik;
          v += (p.d2C * xh(mm) * xh(j) + p.dC * proj) * x(i) * x(k);
          v += p.dC * xh(j) * (dim_ * x(k) + dkm * x(i));
          v += p.dC * xh(mm) * (dij * x(k) + djk * x(i));
          v += p.C * (dij * dkm + djk * dim_);
          h(i, k) = v;
        }
      H[mm][j] = h;
    }
  return H;
}

/// Pressure kernel Phi(x) = x / (4 pi |x|^3), d = 3.
inline Vec3 phi3(const Vec3& x) {
  const double r = x.norm();
  return x / (4.0 * kPi * r * r * r);
}

/// d_j Phi_b = (delta_jb - 3 xh_j xh_b) / (4 pi r^3), d = 3.
inline Mat3 grad_phi3(const Vec3& x) {
  const double r = x.norm();
  const Vec3 xh = x / r;
  return (Mat3::Identity() - 3.0 * xh * xh.transpose()) / (4.0 * kPi * r * r * r);
}

/// Double-layer kernel D(x, y) with r = x - y and n = n(y):
///   D_jk = -n_i d_i Gamma_jk(r) + Phi_j(r) n_k.
inline CMat3 double_layer_kernel(const Vec3& r, const Vec3& n, const RadialProfile& p) {
  const double rn = r.dot(n) / p.r;
  CMat3 D = (-p.dC * rn) * (r * r.transpose()).cast<cplx>();
  D.diagonal().array() -= p.dA * rn;
  D -= p.C * (n * r.transpose() + r * n.transpose()).cast<cplx>();
  D += (phi3(r) * n.transpose()).cast<cplx>();
  return D;
}

/// Conormal single-layer kernel with r = x - y and n = n(x):
///   K_ik = n_j d_j Gamma_ik(r) - n_i Phi_k(r).
inline CMat3 conormal_kernel(const Vec3& r, const Vec3& n, const RadialProfile& p) {
  const double rn = r.dot(n) / p.r;
  CMat3 K = (p.dC * rn) * (r * r.transpose()).cast<cplx>();
  K.diagonal().array() += p.dA * rn;
  K += p.C * (n * r.transpose() + r * n.transpose()).cast<cplx>();
  K -= (n * phi3(r).transpose()).cast<cplx>();
  return K;
}

} // namespace kernels

/// Kernel values at one point: G, grad G, Gamma, grad Gamma (dGamma[j](i,k) = d_j Gamma_ik), Phi.
struct KernelValue {
  cplx G;
  Eigen::VectorXcd gradG;
  Eigen::MatrixXcd Gamma;
  std::vector<Eigen::MatrixXcd> gradGamma;
  Eigen::VectorXd Phi;
};

namespace kernels {

/// Surface area of the unit sphere in R^d.
inline double omega(int d) { return 2.0 * std::pow(kPi, 0.5 * d) / std::tgamma(0.5 * d); }

/// i / (4 (2 pi)^{(d-2)/2}), the prefactor of G in terms of F_nu.
inline cplx g_prefactor(int d) { return kI / (4.0 * std::pow(2.0 * kPi, 0.5 * (d - 2))); }

/// F_nu^{(m)}(z) for m = 0..3 via F_mu' = z F_{mu-1}.
struct FDerivs {
  cplx f0, f1, f2, f3;
};

inline FDerivs f_derivs(int d, cplx z, bool subtract_limit) {
  const hankel::Order o{d - 2};
  const hankel::Order o1{d - 4}, o2{d - 6}, o3{d - 8};
  const cplx F1 = hankel::zH(o1, z), F2 = hankel::zH(o2, z), F3 = hankel::zH(o3, z);
  FDerivs r;
  if (subtract_limit)
    r.f0 = (std::abs(z) < 0.5) ? hankel::zH_minus_limit(o, z) : hankel::zH(o, z) - hankel::constants(d).a_d;
  else
    r.f0 = hankel::zH(o, z);
  r.f1 = z * F1;
  r.f2 = F1 + z * z * F2;
  r.f3 = 3.0 * z * F2 + z * z * z * F3;
  return r;
}

/// Radial derivatives of g(r) = c r^{2-d} Q(kr), up to order 3.
inline std::array<cplx, 4> radial_derivs(int d, cplx k, double r, const FDerivs& f) {
  const double p0 = std::pow(r, 2 - d);
  const double p1 = (2.0 - d) * p0 / r;
  const double p2 = (2.0 - d) * (1.0 - d) * p0 / (r * r);
  const double p3 = (2.0 - d) * (1.0 - d) * (-double(d)) * p0 / (r * r * r);
  const cplx q0 = f.f0, q1 = k * f.f1, q2 = k * k * f.f2, q3 = k * k * k * f.f3;
  const cplx c = g_prefactor(d);
  return {c * p0 * q0, c * (p1 * q0 + p0 * q1), c * (p2 * q0 + 2.0 * p1 * q1 + p0 * q2),
          c * (p3 * q0 + 3.0 * p2 * q1 + 3.0 * p1 * q2 + p0 * q3)};
}

} // namespace kernels

/// Helmholtz fundamental solution G(x; lambda).
inline cplx eval_G(const Eigen::VectorXd& x, const SpectralParameter& s) {
  const double r = x.norm();
  if (r == 0.0) throw DomainError("eval_G: x = 0 is the pole");
  if (x.size() != s.dim) throw DomainError("eval_G: point dimension mismatch");
  if (s.dim == 3) return std::exp(kI * s.k * r) / (4.0 * kPi * r);
  return kernels::g_prefactor(s.dim) * std::pow(r, 2 - s.dim) * hankel::zH(hankel::Order{s.dim - 2}, s.k * r);
}

/// Gradient of G.
inline Eigen::VectorXcd eval_gradG(const Eigen::VectorXd& x, const SpectralParameter& s) {
  const double r = x.norm();
  if (r == 0.0) throw DomainError("eval_gradG: x = 0 is the pole");
  if (x.size() != s.dim) throw DomainError("eval_gradG: point dimension mismatch");
  cplx dg;
  if (s.dim == 3) {
    const cplx sk = kI * s.k * r;
    dg = (sk - 1.0) * std::exp(sk) / (4.0 * kPi * r * r);
  } else {
    const cplx z = s.k * r;
    const cplx F = hankel::zH(hankel::Order{s.dim - 2}, z);
    const cplx F1 = z * hankel::zH(hankel::Order{s.dim - 4}, z);
    dg = kernels::g_prefactor(s.dim) * ((2.0 - s.dim) * std::pow(r, 1 - s.dim) * F + std::pow(r, 2 - s.dim) * s.k * F1);
  }
  return (dg / r) * x.cast<cplx>();
}

namespace kernels {

/// Stokeslet Gamma(x; 0) = (delta/((d-2) r^{d-2}) + x x^T / r^d) / (2 omega_d) and its gradient.
inline void stokeslet_generic(const Eigen::VectorXd& x, Eigen::MatrixXcd& Gam, std::vector<Eigen::MatrixXcd>& dGam) {
  const int d = static_cast<int>(x.size());
  const double r = x.norm();
  const double c = 1.0 / (2.0 * omega(d));
  const double rd = std::pow(r, d);
  Gam = (c * (Eigen::MatrixXd::Identity(d, d) * (r * r / (d - 2.0)) + x * x.transpose()) / rd).cast<cplx>();
  dGam.assign(d, Eigen::MatrixXcd(d, d));
  for (int j = 0; j < d; ++j)
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) {
        const double dab = (a == b) ? 1.0 : 0.0, dja = (j == a) ? 1.0 : 0.0, djb = (j == b) ? 1.0 : 0.0;
        const double v = -dab * x(j) / rd + (dja * x(b) + djb * x(a)) / rd - d * x(a) * x(b) * x(j) / (rd * r * r);
        dGam[j](a, b) = c * v;
      }
}

/// Generic-d Gamma and grad Gamma from radial derivatives of G and h = G - G(.;0).
/// The difference Gamma - Gamma(0) is formed by subtracting the closed-form Stokeslet,
/// which is adequate at property-test accuracy.
inline void gamma_generic(const Eigen::VectorXd& x, const SpectralParameter& s, bool diff, Eigen::MatrixXcd& Gam,
                          std::vector<Eigen::MatrixXcd>& dGam) {
  const int d = s.dim;
  const double r = x.norm();
  const cplx z = s.k * r;
  const auto hd = radial_derivs(d, s.k, r, f_derivs(d, z, true));
  const auto g = radial_derivs(d, s.k, r, f_derivs(d, z, false));
  const Eigen::VectorXd xh = x / r;
  const cplx ik2 = 1.0 / (s.k * s.k); // -1/lambda
  const cplx h1 = hd[1], h2 = hd[2], h3 = hd[3];
  Gam.resize(d, d);
  dGam.assign(d, Eigen::MatrixXcd(d, d));
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) {
      const double dab = (a == b) ? 1.0 : 0.0;
      Gam(a, b) = g[0] * dab + ik2 * (h2 * xh(a) * xh(b) + (h1 / r) * (dab - xh(a) * xh(b)));
    }
  const cplx t1 = h3 - 3.0 * h2 / r + 3.0 * h1 / (r * r);
  const cplx t2 = h2 / r - h1 / (r * r);
  for (int j = 0; j < d; ++j)
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) {
        const double dab = (a == b) ? 1.0 : 0.0, dja = (j == a) ? 1.0 : 0.0, djb = (j == b) ? 1.0 : 0.0;
        const cplx third = t1 * xh(j) * xh(a) * xh(b) + t2 * (dja * xh(b) + djb * xh(a) + dab * xh(j));
        dGam[j](a, b) = g[1] * xh(j) * dab + ik2 * third;
      }
  if (diff) {
    Eigen::MatrixXcd G0;
    std::vector<Eigen::MatrixXcd> dG0;
    stokeslet_generic(x, G0, dG0);
    Gam -= G0;
    for (int j = 0; j < d; ++j) dGam[j] -= dG0[j];
  }
}

} // namespace kernels

/// Gamma, grad Gamma, G, grad G and Phi at x.
inline KernelValue eval_Gamma(const Eigen::VectorXd& x, const SpectralParameter& s) {
  const double r = x.norm();
  if (r == 0.0) throw DomainError("eval_Gamma: x = 0 is the pole");
  if (x.size() != s.dim) throw DomainError("eval_Gamma: point dimension mismatch");
  KernelValue kv;
  kv.G = eval_G(x, s);
  kv.gradG = eval_gradG(x, s);
  kv.Phi = x / (kernels::omega(s.dim) * std::pow(r, s.dim));
  if (s.dim == 3) {
    const Vec3 x3 = x;
    const auto p = kernels::radial_profile(s.k, r);
    kv.Gamma = kernels::gamma_from_profile(x3, p);
    const auto dg = kernels::grad_gamma_from_profile(x3, p);
    kv.gradGamma.assign(dg.begin(), dg.end());
  } else {
    kernels::gamma_generic(x, s, false, kv.Gamma, kv.gradGamma);
  }
  return kv;
}

/// Gamma(x; lambda) - Gamma(x; 0) and its gradient, without cancellation.
inline std::pair<Eigen::MatrixXcd, std::vector<Eigen::MatrixXcd>> eval_Gamma_diff(const Eigen::VectorXd& x,
                                                                                  const SpectralParameter& s) {
  const double r = x.norm();
  if (r == 0.0) throw DomainError("eval_Gamma_diff: x = 0 is the pole");
  if (x.size() != s.dim) throw DomainError("eval_Gamma_diff: point dimension mismatch");
  Eigen::MatrixXcd Gam;
  std::vector<Eigen::MatrixXcd> dGam;
  if (s.dim == 3) {
    const Vec3 x3 = x;
    const auto p = kernels::radial_profile(s.k, r, true);
    Gam = kernels::gamma_from_profile(x3, p);
    const auto dg = kernels::grad_gamma_from_profile(x3, p);
    dGam.assign(dg.begin(), dg.end());
  } else {
    kernels::gamma_generic(x, s, true, Gam, dGam);
  }
  return {Gam, dGam};
}

} // namespace stokesres
