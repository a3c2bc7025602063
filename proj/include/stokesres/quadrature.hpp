#pragma once

#include "stokesres/common.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <vector>

namespace stokesres::quad {

/// Nodes and weights of a 1D rule.
struct Rule1D {
  std::vector<double> x;
  std::vector<double> w;
};

/// Gauss-Legendre on [0, 1] by Newton iteration on P_n.
inline Rule1D gauss_legendre01(int n) {
  if (n < 1) throw DomainError("gauss_legendre01: n must be positive");
  Rule1D r;
  r.x.resize(n);
  r.w.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
      }
      dp = n * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    // recompute derivative at the converged root
    double p0 = 1.0, p1 = 0.0;
    for (int j = 0; j < n; ++j) {
      const double p2 = p1;
      p1 = p0;
      p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
    }
    dp = n * (z * p0 - p1) / (z * z - 1.0);
    const double w = 2.0 / ((1.0 - z * z) * dp * dp);
    r.x[i] = 0.5 * (1.0 - z);
    r.x[n - 1 - i] = 0.5 * (1.0 + z);
    r.w[i] = r.w[n - 1 - i] = 0.5 * w;
  }
  return r;
}

/// Cached Gauss-Legendre rule on [0, 1].
inline const Rule1D& gl01(int n) {
  static std::mutex mtx;
  static std::map<int, Rule1D> cache;
  std::lock_guard<std::mutex> lock(mtx);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, gauss_legendre01(n)).first;
  return it->second;
}

/// Generalized Gauss-Laguerre rule for weight u^a e^{-u} on [0, inf), Golub-Welsch.
inline Rule1D gauss_laguerre(int n, double a) {
  if (n < 1 || a <= -1.0) throw DomainError("gauss_laguerre: bad parameters");
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    J(i, i) = 2.0 * i + a + 1.0;
    if (i > 0) {
      const double b = std::sqrt(i * (i + a));
      J(i, i - 1) = J(i - 1, i) = b;
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  Rule1D r;
  r.x.resize(n);
  r.w.resize(n);
  const double mu0 = std::tgamma(a + 1.0);
  for (int i = 0; i < n; ++i) {
    r.x[i] = es.eigenvalues()(i);
    const double v = es.eigenvectors()(0, i);
    r.w[i] = mu0 * v * v;
  }
  return r;
}

/// Adaptive Gauss-Kronrod (7/15) on [a, b] for complex integrands.
/// Stops when the summed error estimate falls below max(abs_tol, rel_tol*|I|).
inline cplx adaptive_gk15(const std::function<cplx(double)>& f, double a, double b, double rel_tol,
                          double abs_tol = 0.0, int max_intervals = 20000) {
  static constexpr std::array<double, 8> xk = {
      0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
      0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
      0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
      0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
  static constexpr std::array<double, 8> wk = {
      0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
      0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
      0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
      0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
  static constexpr std::array<double, 4> wg = {
      0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
      0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

  struct Seg {
    double a, b;
    cplx val;
    double err;
  };
  auto eval = [&](double lo, double hi) {
    const double c = 0.5 * (lo + hi), h = 0.5 * (hi - lo);
    const cplx fc = f(c);
    cplx k = wk[7] * fc, g = wg[3] * fc;
    for (int j = 0; j < 7; ++j) {
      const cplx f1 = f(c - h * xk[j]), f2 = f(c + h * xk[j]);
      k += wk[j] * (f1 + f2);
      if (j % 2 == 1) g += wg[j / 2] * (f1 + f2);
    }
    return Seg{lo, hi, k * h, std::abs((k - g) * h)};
  };
  auto cmp = [](const Seg& x, const Seg& y) { return x.err < y.err; };
  std::vector<Seg> heap{eval(a, b)};
  cplx total = heap.front().val;
  double err = heap.front().err;
  while (err > std::max(abs_tol, rel_tol * std::abs(total)) &&
         static_cast<int>(heap.size()) < max_intervals) {
    std::pop_heap(heap.begin(), heap.end(), cmp);
    const Seg s = heap.back();
    heap.pop_back();
    const double m = 0.5 * (s.a + s.b);
    const Seg l = eval(s.a, m), r = eval(m, s.b);
    heap.push_back(l);
    std::push_heap(heap.begin(), heap.end(), cmp);
    heap.push_back(r);
    std::push_heap(heap.begin(), heap.end(), cmp);
    total = 0.0;
    err = 0.0;
    for (const auto& q : heap) {
      total += q.val;
      err += q.err;
    }
  }
  return total;
}

/// Point in barycentric-free form: reference-triangle coordinates (xi, eta) and weight.
/// Reference triangle has vertices (0,0), (1,0), (0,1) and area 1/2; weights sum to 1.
struct TriRule {
  std::vector<double> xi, eta, w;
  std::size_t size() const { return w.size(); }
};

/// Symmetric 7-point degree-5 rule.
inline const TriRule& tri7() {
  static const TriRule r = [] {
    TriRule t;
    auto add3 = [&t](double a, double b, double w) {
      // barycentric (a, b, b) and permutations
      const double bc[3][3] = {{a, b, b}, {b, a, b}, {b, b, a}};
      for (const auto& p : bc) {
        t.xi.push_back(p[1]);
        t.eta.push_back(p[2]);
        t.w.push_back(w);
      }
    };
    t.xi.push_back(1.0 / 3.0);
    t.eta.push_back(1.0 / 3.0);
    t.w.push_back(0.225);
    add3(0.059715871789769820, 0.470142064105115090, 0.132394152788506181);
    add3(0.797426985353087322, 0.101286507323456339, 0.125939180544827153);
    return t;
  }();
  return r;
}

/// Collapsed (Duffy) tensor Gauss rule; exact for total degree 2n-2.
inline TriRule collapsed_gauss(int n) {
  const Rule1D& g = gl01(n);
  TriRule t;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double u = g.x[i], v = g.x[j];
      t.xi.push_back(u);
      t.eta.push_back(v * (1.0 - u));
      t.w.push_back(2.0 * g.w[i] * g.w[j] * (1.0 - u));
    }
  return t;
}

inline const TriRule& tri_collapsed(int n) {
  static std::mutex mtx;
  static std::map<int, TriRule> cache;
  std::lock_guard<std::mutex> lock(mtx);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, collapsed_gauss(n)).first;
  return it->second;
}

} // namespace stokesres::quad
