#pragma once

#include "stokesres/common.hpp"
#include "stokesres/quadrature.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace stokesres {

using Triangle = std::array<int, 3>;

/// Surface carried by the facets. flat: the facets themselves. sphere: each facet is
/// mapped onto the sphere by central projection from its center.
struct SurfaceChart {
  enum class Kind { flat, sphere };
  Kind kind = Kind::flat;
  Vec3 center = Vec3::Zero();
  double radius = 0.0;

  static SurfaceChart flat() { return {}; }
  static SurfaceChart sphere(const Vec3& c, double r) {
    if (!(r > 0.0)) throw DomainError("chart: sphere radius must be positive");
    return {Kind::sphere, c, r};
  }
};

/// Point of the carried surface with unit outward normal and area element per facet area.
struct SurfacePoint {
  Vec3 y;
  Vec3 n;
  double jacobian;
};

/// Local data for reconstructing a smooth density on a panel from node values:
///   f(p) = f_t + sum_a c_a m_a(tau),  tau = frame (p - centroid) / scale,
/// with monomials m = (t1, t2, t1^2, t1 t2, t2^2, t1^3, t1^2 t2, t1 t2^2, t2^3) truncated
/// to `basis` terms and c = fit (f_nb - f_t) over the neighbor nodes.
struct PanelStencil {
  Eigen::Matrix<double, 2, 3> frame = Eigen::Matrix<double, 2, 3>::Zero();
  double scale = 1.0;
  std::vector<int> neighbors;
  int basis = 0;
  Eigen::MatrixXd fit;
};

inline constexpr int kMaxBasis = 9;
using Monomials = Eigen::Matrix<double, kMaxBasis, 1>;

inline Monomials monomials(const Eigen::Vector2d& t) {
  const double a = t(0), b = t(1);
  Monomials m;
  m << a, b, a * a, a * b, b * b, a * a * a, a * a * b, a * b * b, b * b * b;
  return m;
}

/// Closed, outward-oriented triangulated surface. Immutable once built.
class SurfaceMesh {
public:
  /// Validates and derives normals, areas, centroids, nodes and stencils. tags may be empty.
  static SurfaceMesh build(std::vector<Vec3> vertices, std::vector<Triangle> triangles, std::vector<int> tags = {},
                           SurfaceChart chart = SurfaceChart::flat()) {
    SurfaceMesh m;
    m.vertices_ = std::move(vertices);
    m.triangles_ = std::move(triangles);
    m.tags_ = tags.empty() ? std::vector<int>(m.triangles_.size(), 0) : std::move(tags);
    m.chart_ = chart;
    if (m.tags_.size() != m.triangles_.size()) throw DomainError("mesh: tag count differs from triangle count");
    m.derive();
    m.validate();
    m.derive_surface();
    m.derive_stencils();
    return m;
  }

  std::size_t size() const { return triangles_.size(); }
  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<Triangle>& triangles() const { return triangles_; }
  const Vec3& vertex(int i) const { return vertices_[i]; }
  const Vec3& normal(std::size_t t) const { return normals_[t]; }
  const Vec3& centroid(std::size_t t) const { return centroids_[t]; }
  double area(std::size_t t) const { return areas_[t]; }
  int tag(std::size_t t) const { return tags_[t]; }
  const std::vector<double>& areas() const { return areas_; }
  const std::vector<int>& tags() const { return tags_; }
  std::array<Vec3, 3> corners(std::size_t t) const {
    const Triangle& tr = triangles_[t];
    return {vertices_[tr[0]], vertices_[tr[1]], vertices_[tr[2]]};
  }
  double diameter() const { return diameter_; }
  /// Mesh size: maximal triangle diameter.
  double h() const { return h_; }
  double total_area() const { return total_area_; }
  double volume() const { return volume_; }
  /// Area-weighted centroid of the enclosed solid.
  Vec3 solid_centroid() const { return solid_centroid_; }
  const SurfaceChart& chart() const { return chart_; }
  bool is_curved() const { return chart_.kind != SurfaceChart::Kind::flat; }
  /// Collocation node of panel t: the facet centroid carried to the surface.
  const Vec3& node(std::size_t t) const { return nodes_[t]; }
  const Vec3& node_normal(std::size_t t) const { return node_normals_[t]; }
  /// Surface area of panel t (the quadrature weight of its node).
  double weight(std::size_t t) const { return weights_[t]; }
  const std::vector<double>& weights() const { return weights_; }
  double surface_area() const { return surface_area_; }
  /// Volume enclosed by the carried surface.
  double enclosed_volume() const { return enclosed_volume_; }
  const PanelStencil& stencil(std::size_t t) const { return stencils_[t]; }

  /// Carries the facet point p of panel t to the surface.
  SurfacePoint map(std::size_t t, const Vec3& p) const {
    if (chart_.kind == SurfaceChart::Kind::flat) return {p, normals_[t], 1.0};
    const Vec3 q = p - chart_.center;
    const double qn = q.norm();
    const Vec3 u = q / qn;
    const double R = chart_.radius;
    return {chart_.center + R * u, u, R * R * q.dot(normals_[t]) / (qn * qn * qn)};
  }

  /// Differential of map(t, .) at the facet centroid, applied to facet-plane vectors.
  Mat3 tangent_map(std::size_t t) const {
    if (chart_.kind == SurfaceChart::Kind::flat) return Mat3::Identity();
    const Vec3 q = centroids_[t] - chart_.center;
    const double qn = q.norm();
    const Vec3 u = q / qn;
    return (chart_.radius / qn) * (Mat3::Identity() - u * u.transpose());
  }

  /// Scaled facet-plane coordinates of a facet point p of panel t.
  Eigen::Vector2d facet_coords(std::size_t t, const Vec3& p) const {
    const PanelStencil& s = stencils_[t];
    return s.frame * (p - centroids_[t]) / s.scale;
  }

  /// Local coordinates in the chart of panel t of a surface point X.
  Eigen::Vector2d chart_coords(std::size_t t, const Vec3& X) const {
    const PanelStencil& s = stencils_[t];
    Vec3 p = X;
    if (chart_.kind == SurfaceChart::Kind::sphere) {
      const Vec3 q = X - chart_.center;
      const double d = normals_[t].dot(centroids_[t] - chart_.center);
      p = chart_.center + q * (d / normals_[t].dot(q));
    }
    return s.frame * (p - centroids_[t]) / s.scale;
  }

  int euler_characteristic() const {
    return static_cast<int>(vertices_.size()) - static_cast<int>(edge_count_) + static_cast<int>(triangles_.size());
  }

private:
  void derive() {
    const std::size_t n = triangles_.size();
    normals_.resize(n);
    areas_.resize(n);
    centroids_.resize(n);
    total_area_ = 0.0;
    volume_ = 0.0;
    h_ = 0.0;
    Vec3 mom = Vec3::Zero();
    for (std::size_t t = 0; t < n; ++t) {
      for (int v : triangles_[t])
        if (v < 0 || v >= static_cast<int>(vertices_.size())) throw DomainError("mesh: vertex index out of range");
      const auto [a, b, c] = corners(t);
      const Vec3 cr = (b - a).cross(c - a);
      const double A = 0.5 * cr.norm();
      if (!(A > 0.0)) throw DomainError("mesh: degenerate triangle " + std::to_string(t));
      areas_[t] = A;
      normals_[t] = cr / (2.0 * A);
      centroids_[t] = (a + b + c) / 3.0;
      total_area_ += A;
      const double dv = centroids_[t].dot(normals_[t]) * A / 3.0;
      volume_ += dv;
      // centroid of the tetrahedron (0, a, b, c) weighted by its signed volume
      mom += dv * (a + b + c) / 4.0;
      h_ = std::max({h_, (b - a).norm(), (c - b).norm(), (a - c).norm()});
    }
    solid_centroid_ = mom / volume_;
    diameter_ = 0.0;
    for (std::size_t i = 0; i < vertices_.size(); ++i)
      for (std::size_t j = i + 1; j < vertices_.size(); ++j)
        diameter_ = std::max(diameter_, (vertices_[i] - vertices_[j]).squaredNorm());
    diameter_ = std::sqrt(diameter_);
  }

  void validate() {
    std::map<std::pair<int, int>, int> directed;
    for (const auto& tr : triangles_)
      for (int e = 0; e < 3; ++e) {
        const int a = tr[e], b = tr[(e + 1) % 3];
        if (a == b) throw DomainError("mesh: repeated vertex in triangle");
        if (++directed[{a, b}] > 1)
          throw DomainError("non-manifold or inconsistently oriented edge (" + std::to_string(a + 1) + ", " +
                            std::to_string(b + 1) + ")");
      }
    edge_count_ = 0;
    for (const auto& [e, cnt] : directed) {
      if (!directed.count({e.second, e.first}))
        throw DomainError("non-manifold edge (" + std::to_string(e.first + 1) + ", " + std::to_string(e.second + 1) +
                          "): boundary edge");
      if (e.first < e.second) ++edge_count_;
    }
    Vec3 s = Vec3::Zero();
    for (std::size_t t = 0; t < size(); ++t) s += areas_[t] * normals_[t];
    if (s.norm() > 1e-12 * total_area_ * std::max(1.0, std::sqrt(double(size())) / 10.0))
      throw DomainError("mesh: orientation defect, sum of area-weighted normals is nonzero");
    if (!(volume_ > 0.0)) {
      std::ostringstream os;
      os << "negative signed volume (" << volume_ << ")";
      throw DomainError(os.str());
    }
  }

  void derive_surface() {
    const std::size_t n = triangles_.size();
    nodes_.resize(n);
    node_normals_.resize(n);
    weights_.resize(n);
    if (chart_.kind == SurfaceChart::Kind::flat) {
      nodes_ = centroids_;
      node_normals_ = normals_;
      weights_ = areas_;
      surface_area_ = total_area_;
      enclosed_volume_ = volume_;
      return;
    }
    const double R = chart_.radius;
    for (const Vec3& v : vertices_)
      if (std::abs((v - chart_.center).norm() - R) > 1e-9 * R)
        throw DomainError("mesh: vertex off the chart sphere");
    surface_area_ = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const SurfacePoint sp = map(t, centroids_[t]);
      nodes_[t] = sp.y;
      node_normals_[t] = sp.n;
      // spherical excess of the geodesic triangle (Van Oosterom and Strackee)
      const auto [a, b, c] = corners(t);
      const Vec3 ua = (a - chart_.center).normalized(), ub = (b - chart_.center).normalized(),
                 uc = (c - chart_.center).normalized();
      const double num = ua.dot(ub.cross(uc));
      const double den = 1.0 + ua.dot(ub) + ub.dot(uc) + uc.dot(ua);
      weights_[t] = 2.0 * std::atan2(std::abs(num), den) * R * R;
      surface_area_ += weights_[t];
    }
    enclosed_volume_ = 4.0 * kPi * R * R * R / 3.0;
    solid_centroid_ = chart_.center;
  }

  void derive_stencils() {
    const std::size_t n = triangles_.size();
    std::vector<std::vector<int>> around(vertices_.size());
    for (std::size_t t = 0; t < n; ++t)
      for (int v : triangles_[t]) around[v].push_back(static_cast<int>(t));
    stencils_.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
      PanelStencil& s = stencils_[t];
      const auto [a, b, c] = corners(t);
      const Vec3 t1 = (b - a).normalized();
      s.frame.row(0) = t1.transpose();
      s.frame.row(1) = normals_[t].cross(t1).transpose();
      s.scale = std::sqrt(areas_[t]);
      std::vector<int> nb;
      for (int v : triangles_[t])
        for (int u : around[v])
          if (u != static_cast<int>(t) && node_normals_[u].dot(node_normals_[t]) > kStencilCos &&
              std::find(nb.begin(), nb.end(), u) == nb.end())
            nb.push_back(u);
      std::sort(nb.begin(), nb.end());
      s.neighbors = nb;
      const int count = static_cast<int>(nb.size());
      Eigen::MatrixXd B(count, kMaxBasis);
      Eigen::VectorXd sw(count);
      for (int j = 0; j < count; ++j) {
        const Eigen::Vector2d tau = chart_coords(t, nodes_[nb[j]]);
        B.row(j) = monomials(tau).transpose();
        sw(j) = 1.0 / tau.norm();
      }
      for (int basis : {9, 5, 2}) {
        if (count < basis + (basis == 9 ? 2 : 1)) continue;
        const Eigen::MatrixXd Bw = sw.asDiagonal() * B.leftCols(basis);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(Bw, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const auto& sv = svd.singularValues();
        if (sv(basis - 1) < 1e-3 * sv(0)) continue;
        s.basis = basis;
        s.fit = svd.solve(Eigen::MatrixXd(sw.asDiagonal())) ;
        break;
      }
      if (s.basis == 0) s.fit.resize(0, count);
    }
  }

  static constexpr double kStencilCos = 0.7; ///< neighbors across sharper edges are not used

  std::vector<Vec3> vertices_;
  std::vector<Triangle> triangles_;
  std::vector<int> tags_;
  std::vector<Vec3> normals_, centroids_;
  std::vector<double> areas_;
  double diameter_ = 0.0, h_ = 0.0, total_area_ = 0.0, volume_ = 0.0;
  Vec3 solid_centroid_ = Vec3::Zero();
  std::size_t edge_count_ = 0;
  SurfaceChart chart_;
  std::vector<Vec3> nodes_, node_normals_;
  std::vector<double> weights_;
  double surface_area_ = 0.0, enclosed_volume_ = 0.0;
  std::vector<PanelStencil> stencils_;
};

using MeshPtr = std::shared_ptr<const SurfaceMesh>;

inline MeshPtr share(SurfaceMesh m) { return std::make_shared<const SurfaceMesh>(std::move(m)); }

/// Unit sphere by repeated 4-to-1 subdivision of the icosahedron. With exact_sphere the
/// panels carry the sphere itself; otherwise the flat facets are the surface.
inline SurfaceMesh make_icosphere(int subdivisions, bool exact_sphere = true) {
  if (subdivisions < 0) throw DomainError("icosphere: subdivisions must be >= 0");
  if (20.0 * std::pow(4.0, subdivisions) > 1e6) throw DomainError("icosphere: more than 1e6 triangles requested");
  if (subdivisions > 6) throw DomainError("icosphere: subdivisions must be <= 6");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1},  {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<Triangle> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                             {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                             {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int level = 0; level < subdivisions; ++level) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const int idx = static_cast<int>(v.size()) - 1;
      mid.emplace(key, idx);
      return idx;
    };
    std::vector<Triangle> g;
    g.reserve(4 * f.size());
    for (const auto& tr : f) {
      const int a = midpoint(tr[0], tr[1]), b = midpoint(tr[1], tr[2]), c = midpoint(tr[2], tr[0]);
      g.push_back({tr[0], a, c});
      g.push_back({tr[1], b, a});
      g.push_back({tr[2], c, b});
      g.push_back({a, b, c});
    }
    f = std::move(g);
  }
  return SurfaceMesh::build(std::move(v), std::move(f), {},
                            exact_sphere ? SurfaceChart::sphere(Vec3::Zero(), 1.0) : SurfaceChart::flat());
}

/// Unit cube [0,1]^3 with per_edge x per_edge squares per face, two triangles each.
inline SurfaceMesh make_cube(int per_edge) {
  if (per_edge < 1) throw DomainError("cube: per_edge must be >= 1");
  const int n = per_edge;
  std::map<std::array<int, 3>, int> index;
  std::vector<Vec3> v;
  auto vid = [&](std::array<int, 3> g) {
    auto it = index.find(g);
    if (it != index.end()) return it->second;
    v.emplace_back(double(g[0]) / n, double(g[1]) / n, double(g[2]) / n);
    const int id = static_cast<int>(v.size()) - 1;
    index.emplace(g, id);
    return id;
  };
  std::vector<Triangle> f;
  for (int axis = 0; axis < 3; ++axis)
    for (int side = 0; side < 2; ++side) {
      const int u = (axis + 1) % 3, w = (axis + 2) % 3; // (u, w, axis) is right-handed
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          auto g = [&](int a, int b) {
            std::array<int, 3> p{};
            p[axis] = side * n;
            p[u] = a;
            p[w] = b;
            return vid(p);
          };
          const int p00 = g(i, j), p10 = g(i + 1, j), p11 = g(i + 1, j + 1), p01 = g(i, j + 1);
          if (side == 1) {
            f.push_back({p00, p10, p11});
            f.push_back({p00, p11, p01});
          } else {
            f.push_back({p00, p11, p10});
            f.push_back({p00, p01, p11});
          }
        }
    }
  return SurfaceMesh::build(std::move(v), std::move(f));
}

/// Lipschitz graph eta over the disc, with bound M on its gradient.
struct GraphDomainSpec {
  std::function<double(double, double)> lipschitz_fn;
  double M = 0.0;
  double r = 1.0;
  std::string name = "custom";

  /// Height of the box region above the graph for d = 3.
  double height() const { return 30.0 * (M + 1.0) * r; }

  static GraphDomainSpec flat(double r) { return {[](double, double) { return 0.0; }, 0.0, r, "flat"}; }
  static GraphDomainSpec wedge(double M, double r) {
    return {[M](double x1, double) { return M * std::abs(x1); }, M, r, "wedge"};
  }
  static GraphDomainSpec tilted(double M, double r) {
    return {[M](double x1, double) { return M * x1; }, M, r, "tilted"};
  }
};

/// Largest finite-difference slope of eta sampled on the disc of radius r.
inline double sampled_max_slope(const GraphDomainSpec& spec, int samples = 64) {
  double worst = 0.0;
  const double hstep = 1e-6 * spec.r;
  for (int i = 0; i <= samples; ++i)
    for (int j = 0; j <= samples; ++j) {
      const double x = spec.r * (2.0 * i / samples - 1.0), y = spec.r * (2.0 * j / samples - 1.0);
      if (x * x + y * y > spec.r * spec.r) continue;
      const double gx = (spec.lipschitz_fn(x + hstep, y) - spec.lipschitz_fn(x - hstep, y)) / (2 * hstep);
      const double gy = (spec.lipschitz_fn(x, y + hstep) - spec.lipschitz_fn(x, y - hstep)) / (2 * hstep);
      worst = std::max(worst, std::hypot(gx, gy));
    }
  return worst;
}

/// Layout of the graph-domain surface mesh.
struct GraphMeshLayout {
  int rings = 4;     ///< radial rings on bottom and top discs
  int sectors = 16;  ///< angular sectors, multiple of 4
  int layers = 20;   ///< vertical layers on the side
  double grading = 1.0; ///< >1 clusters side layers towards the bottom
};

inline GraphMeshLayout graph_layout(int resolution) {
  if (resolution < 1) throw DomainError("graph domain: resolution must be >= 1");
  GraphMeshLayout l;
  l.rings = 2 * resolution;
  l.sectors = 8 * resolution;
  l.layers = 12 * resolution;
  l.grading = 2.0;
  return l;
}

/// Closed mesh of D(r): graph bottom (tag 1), cylindrical side (tag 2), flat top (tag 3).
inline SurfaceMesh make_graph_domain(const GraphDomainSpec& spec, const GraphMeshLayout& lay) {
  if (!(spec.r > 0.0)) throw DomainError("graph domain: r must be positive");
  if (!spec.lipschitz_fn) throw DomainError("graph domain: missing Lipschitz function");
  if (std::abs(spec.lipschitz_fn(0.0, 0.0)) > 1e-14) throw DomainError("graph domain: eta(0) must vanish");
  if (sampled_max_slope(spec) > spec.M * (1.0 + 1e-6) + 1e-9)
    throw DomainError("graph domain: sampled slope exceeds M");
  if (lay.sectors % 4 != 0 || lay.rings < 1 || lay.layers < 1) throw DomainError("graph domain: bad layout");
  const double H = spec.height();
  const double R = spec.r;
  const int nr = lay.rings, ns = lay.sectors, nz = lay.layers;
  std::vector<Vec3> v;
  std::vector<Triangle> f;
  std::vector<int> tags;
  auto eta = [&](double x, double y) { return spec.lipschitz_fn(x, y); };

  // disc vertex grid: center + rings; ring q at radius R q / nr
  auto disc = [&](bool top) {
    std::vector<std::vector<int>> ring(nr + 1);
    const double cx = 0.0, cy = 0.0;
    v.emplace_back(cx, cy, top ? H : eta(cx, cy));
    ring[0] = {static_cast<int>(v.size()) - 1};
    for (int q = 1; q <= nr; ++q)
      for (int a = 0; a < ns; ++a) {
        const double ang = 2.0 * kPi * a / ns, rad = R * q / nr;
        const double x = rad * std::cos(ang), y = rad * std::sin(ang);
        v.emplace_back(x, y, top ? H : eta(x, y));
        ring[q].push_back(static_cast<int>(v.size()) - 1);
      }
    const int tag = top ? 3 : 1;
    auto add = [&](int a, int b, int c) {
      if (top)
        f.push_back({a, b, c});
      else
        f.push_back({a, c, b});
      tags.push_back(tag);
    };
    for (int a = 0; a < ns; ++a) add(ring[0][0], ring[1][a], ring[1][(a + 1) % ns]);
    for (int q = 1; q < nr; ++q)
      for (int a = 0; a < ns; ++a) {
        const int i00 = ring[q][a], i01 = ring[q][(a + 1) % ns], i10 = ring[q + 1][a], i11 = ring[q + 1][(a + 1) % ns];
        add(i00, i10, i11);
        add(i00, i11, i01);
      }
    return ring[nr];
  };
  const std::vector<int> bottom_rim = disc(false);
  const std::vector<int> top_rim = disc(true);
  // side: layers between the bottom rim and the top rim
  std::vector<std::vector<int>> col(nz + 1);
  col[0] = bottom_rim;
  col[nz] = top_rim;
  for (int l = 1; l < nz; ++l)
    for (int a = 0; a < ns; ++a) {
      const Vec3& b = v[bottom_rim[a]];
      const double t = std::pow(double(l) / nz, lay.grading);
      v.emplace_back(b.x(), b.y(), b.z() + t * (H - b.z()));
      col[l].push_back(static_cast<int>(v.size()) - 1);
    }
  for (int l = 0; l < nz; ++l)
    for (int a = 0; a < ns; ++a) {
      const int i00 = col[l][a], i01 = col[l][(a + 1) % ns], i10 = col[l + 1][a], i11 = col[l + 1][(a + 1) % ns];
      f.push_back({i00, i01, i11});
      f.push_back({i00, i11, i10});
      tags.push_back(2);
      tags.push_back(2);
    }
  return SurfaceMesh::build(std::move(v), std::move(f), std::move(tags));
}

inline SurfaceMesh make_graph_domain(const GraphDomainSpec& spec, int resolution) {
  return make_graph_domain(spec, graph_layout(resolution));
}

/// Writes vertices with 17 significant digits and 1-indexed triangular faces.
inline void save_obj(const SurfaceMesh& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DomainError("cannot open " + path + " for writing");
  os << std::setprecision(17);
  for (const auto& p : m.vertices()) os << "v " << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  for (const auto& t : m.triangles()) os << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  if (!os) throw DomainError("write failed: " + path);
}

/// Sphere through all vertices when they lie on one to relative accuracy tol.
inline std::optional<SurfaceChart> detect_sphere(const std::vector<Vec3>& v, double tol = 1e-10) {
  if (v.size() < 12) return std::nullopt;
  // |p|^2 = 2 c.p + (R^2 - |c|^2) in least squares
  Eigen::MatrixXd A(v.size(), 4);
  Eigen::VectorXd b(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    A.row(i) << 2.0 * v[i].x(), 2.0 * v[i].y(), 2.0 * v[i].z(), 1.0;
    b(i) = v[i].squaredNorm();
  }
  const Eigen::Vector4d x = A.colPivHouseholderQr().solve(b);
  const Vec3 c = x.head<3>();
  const double r2 = x(3) + c.squaredNorm();
  if (!(r2 > 0.0)) return std::nullopt;
  const double R = std::sqrt(r2);
  for (const Vec3& p : v)
    if (std::abs((p - c).norm() - R) > tol * R) return std::nullopt;
  // snap a center at roundoff level to zero
  Vec3 cs = c;
  for (int k = 0; k < 3; ++k)
    if (std::abs(cs(k)) < 1e-12 * R) cs(k) = 0.0;
  return SurfaceChart::sphere(cs, R);
}

enum class ChartDetection { automatic, flat };

inline SurfaceMesh parse_obj(std::istream& is, ChartDetection detect = ChartDetection::automatic) {
  std::vector<Vec3> v;
  std::vector<Triangle> f;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key) || key[0] == '#') continue;
    if (key == "v") {
      Vec3 p;
      if (!(ls >> p.x() >> p.y() >> p.z())) throw DomainError("obj line " + std::to_string(lineno) + ": bad vertex");
      v.push_back(p);
    } else if (key == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) {
        const int i = std::stoi(tok.substr(0, tok.find('/')));
        idx.push_back(i < 0 ? static_cast<int>(v.size()) + i : i - 1);
      }
      if (idx.size() != 3) throw DomainError("non-triangular face at obj line " + std::to_string(lineno));
      f.push_back({idx[0], idx[1], idx[2]});
    }
  }
  if (f.empty()) throw DomainError("obj: no faces");
  SurfaceChart chart = SurfaceChart::flat();
  if (detect == ChartDetection::automatic)
    if (auto sph = detect_sphere(v)) chart = *sph;
  return SurfaceMesh::build(std::move(v), std::move(f), {}, chart);
}

/// Loads an OBJ; meshes whose vertices all lie on one sphere carry that sphere unless
/// detection is switched off.
inline SurfaceMesh load_obj(const std::string& path, ChartDetection detect = ChartDetection::automatic) {
  std::ifstream is(path);
  if (!is) throw DomainError("cannot open " + path);
  return parse_obj(is, detect);
}

/// Nodes and positive weights filling a solid.
struct VolumeQuadrature {
  std::vector<Vec3> nodes;
  std::vector<double> weights;
  std::size_t size() const { return nodes.size(); }
  double volume() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
  }
};

/// Cone rule for a domain star-shaped with respect to c: y = c + s (q - c), q on the
/// boundary triangle T, with volume element s^2 ((q_T - c) . n_T) dA ds. Exact for the
/// polyhedron; radial Gauss of order n_radial, triangle rule `tri` on each face.
inline VolumeQuadrature star_volume_rule(const SurfaceMesh& m, const Vec3& c, int n_radial,
                                         const quad::TriRule& tri = quad::tri7()) {
  const quad::Rule1D& g = quad::gl01(n_radial);
  VolumeQuadrature vq;
  for (std::size_t t = 0; t < m.size(); ++t) {
    const auto [a, b, cc] = m.corners(t);
    const double ht = (a - c).dot(m.normal(t));
    if (!(ht > 0.0)) throw DomainError("star_volume_rule: domain not strictly star-shaped about the center");
    for (std::size_t q = 0; q < tri.size(); ++q) {
      const Vec3 y = a + tri.xi[q] * (b - a) + tri.eta[q] * (cc - a);
      const double wa = tri.w[q] * m.area(t);
      for (int i = 0; i < n_radial; ++i) {
        const double s = g.x[i];
        vq.nodes.push_back(c + s * (y - c));
        vq.weights.push_back(wa * ht * s * s * g.w[i]);
      }
    }
  }
  return vq;
}

/// Product rule for the ball |y - c| < R: Gauss in r (weight r^2), Gauss-Legendre in cos(theta),
/// trapezoid in the azimuth.
inline VolumeQuadrature ball_volume_rule(const Vec3& c, double R, int n_r, int n_theta, int n_phi) {
  if (!(R > 0.0) || n_r < 1 || n_theta < 1 || n_phi < 1) throw DomainError("ball_volume_rule: bad parameters");
  const quad::Rule1D& gr = quad::gl01(n_r);
  const quad::Rule1D& gt = quad::gl01(n_theta);
  VolumeQuadrature vq;
  for (int i = 0; i < n_r; ++i) {
    const double r = R * gr.x[i];
    for (int j = 0; j < n_theta; ++j) {
      const double ct = 2.0 * gt.x[j] - 1.0, st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
      for (int k = 0; k < n_phi; ++k) {
        const double ph = 2.0 * kPi * (k + 0.5) / n_phi;
        vq.nodes.push_back(c + r * Vec3(st * std::cos(ph), st * std::sin(ph), ct));
        vq.weights.push_back(R * gr.w[i] * r * r * 2.0 * gt.w[j] * 2.0 * kPi / n_phi);
      }
    }
  }
  return vq;
}

/// Rule for {|x'| < rho, eta(x') < x3 < top}: polar Gauss on the disc with the angle split at
/// the coordinate axes (kinks of eta along x1 = 0 or x2 = 0 fall on panel edges), and a
/// composite Gauss rule in x3 = eta + s (top - eta) on panels graded towards the bottom.
inline VolumeQuadrature graph_volume_rule(const GraphDomainSpec& spec, double rho, double top, int n_rad, int n_ang,
                                          int z_panels, int n_z, double grading = 2.0) {
  if (!(rho > 0.0) || n_rad < 1 || n_ang < 1 || z_panels < 1 || n_z < 1) throw DomainError("graph_volume_rule: bad parameters");
  const quad::Rule1D& gr = quad::gl01(n_rad);
  const quad::Rule1D& ga = quad::gl01(n_ang);
  const quad::Rule1D& gz = quad::gl01(n_z);
  VolumeQuadrature vq;
  for (int i = 0; i < n_rad; ++i) {
    const double r = rho * gr.x[i];
    const double wr = rho * gr.w[i] * r;
    for (int q = 0; q < 4; ++q)
      for (int j = 0; j < n_ang; ++j) {
        const double ang = 0.5 * kPi * (q + ga.x[j]);
        const double wa = 0.5 * kPi * ga.w[j];
        const double x = r * std::cos(ang), y = r * std::sin(ang);
        const double eta = spec.lipschitz_fn(x, y);
        const double span = top - eta;
        if (!(span > 0.0)) throw DomainError("graph_volume_rule: top below the graph");
        for (int p = 0; p < z_panels; ++p) {
          const double s0 = std::pow(double(p) / z_panels, grading), s1 = std::pow(double(p + 1) / z_panels, grading);
          for (int k = 0; k < n_z; ++k) {
            const double sv = s0 + (s1 - s0) * gz.x[k];
            vq.nodes.emplace_back(x, y, eta + sv * span);
            vq.weights.push_back(wr * wa * (s1 - s0) * gz.w[k] * span);
          }
        }
      }
  }
  return vq;
}

/// Rule for the polyhedron produced by make_graph_domain: the rim polygon of the layout split
/// into sector triangles (0, P_a, P_{a+1}), times x3 from eta to the top on graded panels.
/// Matches the mesh solid exactly when eta is linear on each sector.
inline VolumeQuadrature graph_polyhedron_rule(const GraphDomainSpec& spec, const GraphMeshLayout& lay, int n_rad,
                                              int n_ang, int z_panels, int n_z, double grading = 2.0) {
  if (n_rad < 1 || n_ang < 1 || z_panels < 1 || n_z < 1) throw DomainError("graph_polyhedron_rule: bad parameters");
  const quad::Rule1D& gr = quad::gl01(n_rad);
  const quad::Rule1D& ga = quad::gl01(n_ang);
  const quad::Rule1D& gz = quad::gl01(n_z);
  const double top = spec.height();
  VolumeQuadrature vq;
  for (int a = 0; a < lay.sectors; ++a) {
    const double a0 = 2.0 * kPi * a / lay.sectors, a1 = 2.0 * kPi * (a + 1) / lay.sectors;
    const Eigen::Vector2d P(spec.r * std::cos(a0), spec.r * std::sin(a0)), Q(spec.r * std::cos(a1), spec.r * std::sin(a1));
    const double jac = std::abs(P.x() * Q.y() - P.y() * Q.x());
    for (int i = 0; i < n_rad; ++i)
      for (int j = 0; j < n_ang; ++j) {
        const double u = gr.x[i];
        const Eigen::Vector2d xy = u * (P + ga.x[j] * (Q - P));
        const double eta = spec.lipschitz_fn(xy.x(), xy.y());
        const double span = top - eta;
        if (!(span > 0.0)) throw DomainError("graph_polyhedron_rule: top below the graph");
        const double wxy = gr.w[i] * ga.w[j] * u * jac;
        for (int p = 0; p < z_panels; ++p) {
          const double s0 = std::pow(double(p) / z_panels, grading), s1 = std::pow(double(p + 1) / z_panels, grading);
          for (int k = 0; k < n_z; ++k) {
            const double sv = s0 + (s1 - s0) * gz.x[k];
            vq.nodes.emplace_back(xy.x(), xy.y(), eta + sv * span);
            vq.weights.push_back(wxy * (s1 - s0) * gz.w[k] * span);
          }
        }
      }
  }
  return vq;
}

/// Tensor Gauss rule on the box [lo, hi] with n points per direction and `cells` cells per axis.
inline VolumeQuadrature box_volume_rule(const Vec3& lo, const Vec3& hi, int cells, int n) {
  const quad::Rule1D& g = quad::gl01(n);
  VolumeQuadrature vq;
  const Vec3 d = (hi - lo) / cells;
  for (int i = 0; i < cells; ++i)
    for (int j = 0; j < cells; ++j)
      for (int k = 0; k < cells; ++k)
        for (int a = 0; a < n; ++a)
          for (int b = 0; b < n; ++b)
            for (int e = 0; e < n; ++e) {
              vq.nodes.emplace_back(lo.x() + d.x() * (i + g.x[a]), lo.y() + d.y() * (j + g.x[b]),
                                    lo.z() + d.z() * (k + g.x[e]));
              vq.weights.push_back(d.x() * d.y() * d.z() * g.w[a] * g.w[b] * g.w[e]);
            }
  return vq;
}

} // namespace stokesres
