#pragma once

// Command-line front end. Arguments are parsed into a RunConfig, which alone determines the
// run: `--print-config` emits its canonical JSON and `run --config FILE` replays one.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include "stokesres/common.hpp"
#include "stokesres/geometry.hpp"
#include "stokesres/kernels.hpp"
#include "stokesres/potentials.hpp"
#include "stokesres/solvers.hpp"
#include "stokesres/verification.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace stokesres::cli {

using json = nlohmann::json;

enum ExitCode : int { kSuccess = 0, kConfigError = 2, kNumericalFailure = 3 };

/// Configuration error detected before any numerical work.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Documented tolerance defaults; each is overridable as --tol-NAME.
inline const std::map<std::string, double>& default_tolerances() {
  static const std::map<std::string, double> t{
      {"residual", 1e-10},      // dense solve residual
      {"trace", 1e-2},          // relative boundary-trace residual of a solve
      {"interior", 1e-3},       // Stokeslet oracle error at interior points
      {"condition", 1e12},      // largest accepted condition number
      {"pde", 1e-5},            // kernel PDE residual
      {"div", 1e-7},            // kernel divergence
      {"hankel", 1e-10},        // Hankel path agreement
      {"slope", 0.3},           // expansion remainder order
      {"identity", 5e-2},       // energy and Rellich identity defects
      {"band", 0.2},            // estimate constant stability between levels
      {"resolvent-band", 0.25}, // resolvent constant stability between levels
      {"growth", 0.10},         // resolvent growth over the top decade
      {"null", 1e-3},           // unrestricted sigma_min
      {"angle", 8.0},           // null vector angle to n, degrees
  };
  return t;
}

struct QuadratureOrders {
  double eta = 3.0;
  int polar_order = 10;
  int pv_order = 32;
  int volume_order = 0; ///< 0 selects a per-command default
};

/// Everything a run depends on.
struct RunConfig {
  std::string command;
  std::vector<std::string> meshes; ///< OBJ paths or icosphere:N / cube:N, coarse to fine
  double theta = 0.785;
  std::vector<cplx> lambdas;
  std::vector<double> p;
  QuadratureOrders quadrature;
  std::string output;
  std::string dump;
  std::map<std::string, double> tolerances = default_tolerances();
  std::uint64_t seed = 7;
  // command specific
  int subdiv = 2;
  int per_edge = 4;
  std::vector<std::string> etas{"flat"};
  double slope_bound = 0.5;
  std::vector<double> radii{0.5};
  std::vector<int> resolutions{1};
  std::string data = "zero";
  int points = 50;
  int dim = 3;
  int samples = 1000;
  int forcings = 2;
  double r0 = 0.0;

  json to_json() const {
    json j;
    j["command"] = command;
    j["meshes"] = meshes;
    j["theta"] = theta;
    json lams = json::array();
    for (const cplx& l : lambdas) lams.push_back({l.real(), l.imag()});
    j["lambdas"] = lams;
    j["p"] = p;
    j["quadrature"] = {{"eta", quadrature.eta},
                       {"polar_order", quadrature.polar_order},
                       {"pv_order", quadrature.pv_order},
                       {"volume_order", quadrature.volume_order}};
    j["outputs"] = {{"output", output}, {"dump", dump}};
    j["tolerances"] = tolerances;
    j["seed"] = seed;
    j["options"] = {{"subdiv", subdiv},   {"per_edge", per_edge},       {"etas", etas},
                    {"M", slope_bound},   {"radii", radii},             {"resolutions", resolutions},
                    {"data", data},       {"points", points},           {"dim", dim},
                    {"samples", samples}, {"forcings", forcings},       {"r0", r0}};
    return j;
  }

  static RunConfig from_json(const json& j) {
    RunConfig c;
    try {
      c.command = j.at("command").get<std::string>();
      c.meshes = j.at("meshes").get<std::vector<std::string>>();
      c.theta = j.at("theta").get<double>();
      for (const auto& l : j.at("lambdas")) c.lambdas.emplace_back(l.at(0).get<double>(), l.at(1).get<double>());
      c.p = j.at("p").get<std::vector<double>>();
      const json& q = j.at("quadrature");
      c.quadrature = {q.at("eta").get<double>(), q.at("polar_order").get<int>(), q.at("pv_order").get<int>(),
                      q.at("volume_order").get<int>()};
      c.output = j.at("outputs").at("output").get<std::string>();
      c.dump = j.at("outputs").at("dump").get<std::string>();
      c.tolerances = j.at("tolerances").get<std::map<std::string, double>>();
      c.seed = j.at("seed").get<std::uint64_t>();
      const json& o = j.at("options");
      c.subdiv = o.at("subdiv").get<int>();
      c.per_edge = o.at("per_edge").get<int>();
      c.etas = o.at("etas").get<std::vector<std::string>>();
      c.slope_bound = o.at("M").get<double>();
      c.radii = o.at("radii").get<std::vector<double>>();
      c.resolutions = o.at("resolutions").get<std::vector<int>>();
      c.data = o.at("data").get<std::string>();
      c.points = o.at("points").get<int>();
      c.dim = o.at("dim").get<int>();
      c.samples = o.at("samples").get<int>();
      c.forcings = o.at("forcings").get<int>();
      c.r0 = o.at("r0").get<double>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("malformed config: ") + e.what());
    }
    c.validate();
    return c;
  }

  /// Canonical text: keys sorted, no whitespace.
  std::string canonical() const { return to_json().dump(); }

  /// Rejects lambda outside the sector and other inconsistent settings.
  void validate() const {
    if (!(theta > 0.0 && theta < 0.5 * kPi)) throw ConfigError("theta outside (0, pi/2)");
    for (const cplx& l : lambdas) {
      try {
        make_spectral(l, theta);
      } catch (const DomainError&) {
        std::ostringstream os;
        os << "lambda outside sector: (" << l.real() << ", " << l.imag() << ") with theta " << theta;
        throw ConfigError(os.str());
      }
    }
    for (double pp : p)
      if (!(pp >= 1.0)) throw ConfigError("p must be >= 1");
    for (const auto& [k, v] : tolerances)
      if (!(v > 0.0)) throw ConfigError("tolerance " + k + " must be positive");
  }

  double tol(const std::string& name) const {
    const auto it = tolerances.find(name);
    if (it == tolerances.end()) throw ConfigError("unknown tolerance " + name);
    return it->second;
  }

  QuadratureControl quadrature_control() const {
    QuadratureControl q;
    q.eta = quadrature.eta;
    q.polar_order = quadrature.polar_order;
    q.pv_order = quadrature.pv_order;
    return q;
  }

  SolverOptions solver_options() const {
    SolverOptions o;
    o.quadrature = quadrature_control();
    o.max_condition = tol("condition");
    o.residual_tol = tol("residual");
    return o;
  }
};

/// Lower-case hex SHA-256 of a string.
inline std::string sha256_hex(const std::string& text) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

/// Header embedded in every report.
inline json provenance(const RunConfig& c) {
  return {{"config", c.to_json()}, {"config_hash", sha256_hex(c.canonical())}, {"seed", c.seed}, {"version", kVersion}};
}

// ---------------------------------------------------------------------------------------------
// Helpers.

inline bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

inline int parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid " + what + ": " + s);
  }
}

inline double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid " + what + ": " + s);
  }
}

/// OBJ path, or a generator icosphere:N / cube:N.
inline MeshPtr load_mesh(const std::string& source) {
  if (starts_with(source, "icosphere:")) return share(make_icosphere(parse_int(source.substr(10), "subdivision")));
  if (starts_with(source, "cube:")) return share(make_cube(parse_int(source.substr(5), "per-edge count")));
  return share(load_obj(source));
}

/// Ball rule for sphere meshes, tensor Gauss for axis-aligned boxes, cone rule otherwise.
inline VolumeQuadrature default_volume_rule(const SurfaceMesh& m, int order) {
  if (m.chart().kind == SurfaceChart::Kind::sphere) {
    const int n = order > 0 ? order : 6;
    return ball_volume_rule(m.chart().center, m.chart().radius, n, n, 2 * n);
  }
  Vec3 lo = m.vertices().front(), hi = lo;
  for (const Vec3& v : m.vertices()) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const double box = (hi - lo).prod();
  if (std::abs(box - m.volume()) <= 1e-9 * box) return box_volume_rule(lo, hi, order > 0 ? order : 4, 3);
  return star_volume_rule(m, m.solid_centroid(), order > 0 ? order : 6);
}

inline GraphDomainSpec graph_spec(const std::string& eta, double M, double r) {
  if (eta == "flat") return GraphDomainSpec::flat(r);
  if (eta == "wedge") return GraphDomainSpec::wedge(M, r);
  if (eta == "tilted") return GraphDomainSpec::tilted(M, r);
  throw ConfigError("unknown graph function " + eta + " (flat, wedge, tilted)");
}

inline json complex_pairs(const CVector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back({v(i).real(), v(i).imag()});
  return a;
}

/// Density as one triple of [re, im] pairs per node.
inline json density_json(const DensityField& f) {
  json a = json::array();
  for (std::size_t i = 0; i < f.size(); ++i) a.push_back(complex_pairs(f.node(i)));
  return a;
}

inline DensityField density_from_json(const MeshPtr& m, const json& j) {
  if (!j.is_array() || j.size() != m->size()) throw ConfigError("data file: expected one triple per panel");
  DensityField f = DensityField::zero(m);
  for (std::size_t i = 0; i < m->size(); ++i) {
    CVec3 v;
    for (int c = 0; c < 3; ++c) v(c) = cplx(j[i].at(c).at(0).get<double>(), j[i].at(c).at(1).get<double>());
    f.set_node(i, v);
  }
  return f;
}

/// Stokeslet source and direction from "x0=a,b,c,e=d,e,f".
struct StokesletSpec {
  Vec3 source = Vec3(2.0, 0.0, 0.0);
  Vec3 direction = Vec3::UnitZ();
};

/// Source at distance 2 from the origin in a generic direction; used when a scan gets no data.
inline StokesletSpec default_oracle() {
  return {2.0 * Vec3(1.6, 0.3, -0.4).normalized(), Vec3(0.3, -0.5, 0.8)};
}

inline StokesletSpec parse_stokeslet(const std::string& body) {
  std::map<std::string, std::vector<double>> kv;
  std::string key;
  std::stringstream ss(body);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto eq = tok.find('=');
    if (eq != std::string::npos) {
      key = tok.substr(0, eq);
      tok = tok.substr(eq + 1);
    }
    if (key.empty()) throw ConfigError("stokeslet data: expected x0=...,e=...");
    kv[key].push_back(parse_double(tok, "stokeslet component"));
  }
  StokesletSpec s;
  for (const auto& [k, v] : kv) {
    if (v.size() != 3) throw ConfigError("stokeslet data: " + k + " needs three components");
    if (k == "x0")
      s.source = Vec3(v[0], v[1], v[2]);
    else if (k == "e")
      s.direction = Vec3(v[0], v[1], v[2]);
    else
      throw ConfigError("stokeslet data: unknown key " + k);
  }
  if (s.direction.norm() == 0.0) throw ConfigError("stokeslet data: zero direction");
  return s;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open " + path + " for writing");
  os << text;
  if (!os) throw ConfigError("write failed: " + path);
}

inline json error_json(int code, const std::string& kind, const std::string& message) {
  return {{"schema", "stokesres.error/1"}, {"exit_code", code}, {"kind", kind}, {"message", message}};
}

// ---------------------------------------------------------------------------------------------
// Commands.

inline int cmd_mesh_make(const RunConfig& c, std::ostream& out) {
  SurfaceMesh m = [&] {
    if (c.command == "mesh make icosphere") {
      if (c.subdiv < 0 || c.subdiv > 6) throw ConfigError("icosphere: subdivisions must be in 0..6");
      return make_icosphere(c.subdiv);
    }
    if (c.command == "mesh make cube") {
      if (c.per_edge < 1) throw ConfigError("cube: per-edge count must be >= 1");
      return make_cube(c.per_edge);
    }
    if (c.resolutions.size() != 1 || c.radii.size() != 1 || c.etas.size() != 1)
      throw ConfigError("graph: exactly one eta, r and resolution");
    const GraphDomainSpec spec = graph_spec(c.etas[0], c.slope_bound, c.radii[0]);
    if (sampled_max_slope(spec) > spec.M + 1e-9) throw ConfigError("graph: sampled slope exceeds M");
    return make_graph_domain(spec, c.resolutions[0]);
  }();
  if (c.output.empty()) throw ConfigError("mesh make: -o is required");
  save_obj(m, c.output);
  out << json{{"file", c.output}, {"n_tri", m.size()}, {"n_vertices", m.vertices().size()}}.dump() << '\n';
  return kSuccess;
}

inline int cmd_mesh_info(const RunConfig& c, std::ostream& out) {
  if (c.meshes.size() != 1) throw ConfigError("mesh info: exactly one mesh");
  const MeshPtr m = load_mesh(c.meshes[0]);
  json j{{"file", c.meshes[0]},
         {"n_tri", m->size()},
         {"n_vertices", m->vertices().size()},
         {"area", m->total_area()},
         {"volume", m->volume()},
         {"h", m->h()},
         {"diameter", m->diameter()},
         {"euler_characteristic", m->euler_characteristic()},
         {"sphere_chart", m->is_curved()}};
  if (m->is_curved()) {
    j["surface_area"] = m->surface_area();
    j["enclosed_volume"] = m->enclosed_volume();
  }
  out << j.dump() << '\n';
  return kSuccess;
}

inline int cmd_solve(const RunConfig& c, std::ostream& out) {
  if (c.meshes.size() != 1) throw ConfigError("solve: exactly one mesh");
  if (c.lambdas.size() != 1) throw ConfigError("solve: exactly one lambda");
  const bool dirichlet = c.command == "solve dirichlet";
  const MeshPtr m = load_mesh(c.meshes[0]);
  const SpectralParameter s = make_spectral(c.lambdas[0], c.theta);
  std::optional<StokesletField> oracle;
  DensityField g = DensityField::zero(m);
  if (starts_with(c.data, "stokeslet:")) {
    const StokesletSpec st = parse_stokeslet(c.data.substr(10));
    if (inside_surface(*m, st.source)) throw ConfigError("stokeslet source must lie outside the domain");
    oracle = StokesletField{s, st.source, st.direction};
    g = sample_density(m, [&](const Vec3& x, const Vec3& n) {
      const FieldSample f = (*oracle)(x, !dirichlet);
      return dirichlet ? f.u : f.conormal(n);
    });
  } else if (starts_with(c.data, "file:")) {
    std::ifstream is(c.data.substr(5));
    if (!is) throw ConfigError("cannot open " + c.data.substr(5));
    json j;
    try {
      is >> j;
    } catch (const json::exception& e) {
      throw ConfigError(std::string("data file: ") + e.what());
    }
    g = density_from_json(m, j.contains("data") ? j.at("data") : j);
  } else if (c.data != "zero") {
    throw ConfigError("data must be stokeslet:x0=...,e=..., file:PATH or zero");
  }

  const SolverOptions opt = c.solver_options();
  const SolveResult res = dirichlet ? solve_dirichlet({m, s, g}, opt) : solve_neumann({m, s, g}, opt);
  SolveReport rep = res.report;
  rep.mesh.file = c.meshes[0];
  bool ok = rep.residuals.at("linear_system") <= c.tol("residual") && rep.residuals.at("boundary_trace") <= c.tol("trace");
  json j = rep.to_json();
  j["schema"] = "stokesres.solve/1";
  j["problem"] = dirichlet ? "dirichlet" : "neumann";
  std::vector<Vec3> pts;
  if (oracle) {
    pts = interior_sample(*m, static_cast<std::size_t>(c.points), static_cast<std::uint32_t>(c.seed));
    const double err = relative_point_error(pts, res.field, *oracle);
    j["interior_error"] = err;
    j["residuals"]["interior_error"] = err;
    ok = ok && err <= c.tol("interior");
  }
  j["passed"] = ok;
  j.update(provenance(c));
  if (!c.dump.empty()) {
    json d{{"schema", "stokesres.dump/1"}, {"density", density_json(res.density)}, {"data", density_json(g)}};
    json ip = json::array();
    for (const Vec3& x : pts) ip.push_back({{"x", {x.x(), x.y(), x.z()}}, {"u", complex_pairs(res.field(x, false).u)}});
    d["interior"] = ip;
    write_text(c.dump, d.dump() + "\n");
  }
  if (!c.output.empty()) write_text(c.output, j.dump(2) + "\n");
  out << j.dump() << '\n';
  return ok ? kSuccess : kNumericalFailure;
}

/// Writes PREFIX.csv (first report) and PREFIX.json; with no prefix the CSV goes to `out`.
inline int emit_reports(const RunConfig& c, const std::vector<EstimateReport>& reports, std::ostream& out) {
  bool failed_rows = false;
  json j{{"schema", "stokesres.scan/1"}, {"command", c.command}};
  j.update(provenance(c));
  json rs = json::array();
  for (const auto& r : reports) {
    rs.push_back(r.to_json());
    for (const auto& row : r.rows)
      if (starts_with(row.status, "failed")) failed_rows = true;
  }
  j["reports"] = rs;
  if (c.output.empty()) {
    out << reports.front().to_csv();
  } else {
    write_text(c.output + ".csv", reports.front().to_csv());
    for (std::size_t i = 1; i < reports.size(); ++i)
      write_text(c.output + "." + reports[i].name + ".csv", reports[i].to_csv());
    write_text(c.output + ".json", j.dump(2) + "\n");
    json summary = json::array();
    for (const auto& r : reports)
      summary.push_back({{"name", r.name}, {"passed", r.passed}, {"empirical_constant", r.empirical_constant}});
    out << json{{"reports", summary}, {"config_hash", j["config_hash"]}}.dump() << '\n';
  }
  return failed_rows ? kNumericalFailure : kSuccess;
}

inline ScanOptions scan_options(const RunConfig& c) {
  ScanOptions o;
  o.solver = c.solver_options();
  o.keep_going = true;
  o.band = c.tol("resolvent-band");
  o.growth_noise = c.tol("growth");
  return o;
}

inline int cmd_scan_resolvent(const RunConfig& c, std::ostream& out) {
  if (c.meshes.empty()) throw ConfigError("scan resolvent: at least one mesh");
  if (c.lambdas.empty() || c.p.empty()) throw ConfigError("scan resolvent: empty lambda or p grid");
  std::vector<ScanLevel> levels;
  for (const auto& src : c.meshes) {
    const MeshPtr m = load_mesh(src);
    levels.push_back({m, default_volume_rule(*m, c.quadrature.volume_order), c.r0 > 0.0 ? c.r0 : m->diameter()});
  }
  const SurfaceMesh& m0 = *levels.front().mesh;
  const auto forcings = gaussian_curl_forcings(m0.solid_centroid(), 0.5 * m0.diameter(),
                                               static_cast<std::size_t>(c.forcings), c.seed);
  return emit_reports(c, {resolvent_scan(levels, c.theta, c.lambdas, c.p, forcings, scan_options(c))}, out);
}

inline int cmd_scan_conditioning(const RunConfig& c, std::ostream& out) {
  if (c.meshes.size() != 1) throw ConfigError("scan conditioning: exactly one mesh");
  const MeshPtr m = load_mesh(c.meshes[0]);
  return emit_reports(c, {operator_conditioning_scan(m, c.theta, c.lambdas, scan_options(c), c.tol("null"), c.tol("angle"))},
                      out);
}

/// Dirichlet solves of Stokeslet data on each mesh and lambda: Rellich estimates over the
/// grid, plus the energy and Rellich identities for the first lambda.
inline int cmd_scan_rellich(const RunConfig& c, std::ostream& out) {
  if (c.meshes.empty()) throw ConfigError("scan rellich: at least one mesh");
  if (c.data != "zero" && !starts_with(c.data, "stokeslet:")) throw ConfigError("scan rellich: data must be stokeslet:...");
  const StokesletSpec st = c.data == "zero" ? default_oracle() : parse_stokeslet(c.data.substr(10));
  std::vector<std::vector<SolutionSnapshot>> grid;
  std::vector<SolutionSnapshot> first;
  std::vector<RellichField> fields;
  const SolverOptions opt = c.solver_options();
  for (std::size_t l = 0; l < c.meshes.size(); ++l) {
    const MeshPtr m = load_mesh(c.meshes[l]);
    if (inside_surface(*m, st.source)) throw ConfigError("stokeslet source must lie outside the domain");
    const VolumeQuadrature vq = default_volume_rule(*m, c.quadrature.volume_order);
    fields.push_back(default_rellich_field(*m));
    std::vector<SolutionSnapshot> row;
    for (const cplx lam : c.lambdas) {
      const SpectralParameter s = make_spectral(lam, c.theta);
      const StokesletField field{s, st.source, st.direction};
      const DensityField g = sample_density(m, [&](const Vec3& x, const Vec3&) { return field(x, false).u; });
      const SolveResult res = solve_dirichlet({m, s, g}, opt);
      row.push_back(snapshot(res.field, vq, static_cast<int>(l)));
    }
    first.push_back(row.front());
    grid.push_back(std::move(row));
  }
  const double tol = c.tol("identity");
  return emit_reports(c,
                      {check_rellich_estimates(grid, opt.tau0, c.tol("band")), check_energy_identity(first, tol),
                       check_rellich_identities(first, fields, tol)},
                      out);
}

inline int cmd_scan_reverse_holder(const RunConfig& c, std::ostream& out) {
  if (c.lambdas.size() != 1) throw ConfigError("scan reverse-holder: exactly one lambda");
  const SpectralParameter s = make_spectral(c.lambdas[0], c.theta);
  std::vector<std::vector<ReverseHolderCase>> levels;
  const int nq = c.quadrature.volume_order > 0 ? c.quadrature.volume_order : 3;
  for (int res : c.resolutions) {
    std::vector<ReverseHolderCase> cases;
    for (const auto& eta : c.etas)
      for (double r : c.radii) {
        const GraphDomainSpec spec = graph_spec(eta, c.slope_bound, r);
        cases.push_back(reverse_holder_case(spec, res, s, c.solver_options(), nq));
      }
    levels.push_back(std::move(cases));
  }
  return emit_reports(c, {check_reverse_holder(levels, c.p.empty() ? 3.0 : c.p.front(), c.tol("band"))}, out);
}

inline int cmd_scan_kernel(const RunConfig& c, std::ostream& out) {
  if (c.dim == 3)
    return emit_reports(c,
                        {kernel_sweep_report(static_cast<std::size_t>(c.samples), c.seed, c.theta, c.tol("pde"),
                                             c.tol("div"), c.tol("hankel"))},
                        out);
  if (c.dim < 4 || c.dim > 7) throw ConfigError("kernel-check: dim must be in 3..7");
  return emit_reports(c, {expansion_report(c.dim, c.tol("slope"))}, out);
}

inline int execute(const RunConfig& c, std::ostream& out) {
  c.validate();
  if (starts_with(c.command, "mesh make")) return cmd_mesh_make(c, out);
  if (c.command == "mesh info") return cmd_mesh_info(c, out);
  if (c.command == "solve dirichlet" || c.command == "solve neumann") return cmd_solve(c, out);
  if (c.command == "scan resolvent") return cmd_scan_resolvent(c, out);
  if (c.command == "scan conditioning") return cmd_scan_conditioning(c, out);
  if (c.command == "scan rellich") return cmd_scan_rellich(c, out);
  if (c.command == "scan reverse-holder") return cmd_scan_reverse_holder(c, out);
  if (c.command == "scan kernel-check") return cmd_scan_kernel(c, out);
  throw ConfigError("unknown command: " + c.command);
}

// ---------------------------------------------------------------------------------------------
// Argument parsing.

/// Parsed command line: the config plus whether to print it instead of running.
struct Invocation {
  RunConfig config;
  bool print_config = false;
  bool help = false;
  std::string help_text;
};

inline Invocation parse(int argc, const char* const* argv) {
  CLI::App app{"Stokes resolvent boundary-integral solver"};
  app.require_subcommand(1);
  app.fallthrough();
  Invocation inv;
  RunConfig& c = inv.config;
  c.command.clear();

  // values that need post-processing
  std::vector<double> lre, lim, mags, args = default_lambda_args();
  std::string config_file;
  std::map<std::string, double> tol_overrides;
  bool have_args = false;

  auto add_tols = [&](CLI::App* a) {
    for (const auto& [name, v] : default_tolerances()) {
      std::ostringstream help;
      help << "tolerance override (default " << v << ")";
      a->add_option_function<double>(
          "--tol-" + name, [&tol_overrides, name = name](double x) { tol_overrides[name] = x; }, help.str());
    }
  };
  auto add_common = [&](CLI::App* a) {
    a->add_option("--theta", c.theta, "sector aperture in (0, pi/2)");
    a->add_option("--seed", c.seed, "random seed");
    a->add_option("--eta", c.quadrature.eta, "near-field acceptance factor");
    a->add_option("--polar-order", c.quadrature.polar_order, "self-panel polar Gauss order");
    a->add_option("--pv-order", c.quadrature.pv_order, "principal-value angular order");
    a->add_option("--volume-order", c.quadrature.volume_order, "volume rule order (0: default)");
    a->add_option("-o,--output", c.output, "output file or prefix");
    add_tols(a);
  };
  auto add_lambda = [&](CLI::App* a) {
    a->add_option("--lambda-re", lre, "real parts of explicit lambdas")->delimiter(',');
    a->add_option("--lambda-im", lim, "imaginary parts of explicit lambdas")->delimiter(',');
    a->add_option("--lambda-mags", mags, "grid magnitudes")->delimiter(',');
    a->add_option("--lambda-args", args, "grid arguments (radians)")->delimiter(',')->each([&](const std::string&) {
      have_args = true;
    });
  };
  auto tag = [&](CLI::App* a, std::string name) { a->callback([&c, name] { c.command = name; }); };

  // mesh
  CLI::App* mesh = app.add_subcommand("mesh", "mesh generation and inspection")->require_subcommand(1);
  CLI::App* make = mesh->add_subcommand("make", "generate a mesh as OBJ")->require_subcommand(1);
  CLI::App* ico = make->add_subcommand("icosphere", "unit sphere");
  ico->add_option("--subdiv", c.subdiv, "subdivisions (0..6)")->required();
  ico->add_option("-o,--output", c.output, "OBJ path")->required();
  tag(ico, "mesh make icosphere");
  CLI::App* cube = make->add_subcommand("cube", "unit cube");
  cube->add_option("--per-edge", c.per_edge, "squares per edge")->required();
  cube->add_option("-o,--output", c.output, "OBJ path")->required();
  tag(cube, "mesh make cube");
  CLI::App* graph = make->add_subcommand("graph", "graph domain D(r)");
  std::string eta_one = "flat";
  double r_one = 1.0;
  int res_one = 1;
  graph->add_option("--graph", eta_one, "flat, wedge or tilted");
  graph->add_option("--M", c.slope_bound, "Lipschitz bound");
  graph->add_option("--r", r_one, "radius");
  graph->add_option("--resolution", res_one, "mesh resolution");
  graph->add_option("-o,--output", c.output, "OBJ path")->required();
  graph->callback([&] {
    c.command = "mesh make graph";
    c.etas = {eta_one};
    c.radii = {r_one};
    c.resolutions = {res_one};
  });
  CLI::App* info = mesh->add_subcommand("info", "area, volume and mesh size of an OBJ");
  std::string info_file;
  info->add_option("file", info_file, "OBJ path")->required();
  info->callback([&] {
    c.command = "mesh info";
    c.meshes = {info_file};
  });

  // solve
  CLI::App* solve = app.add_subcommand("solve", "Dirichlet or Neumann solve")->require_subcommand(1);
  for (const std::string kind : {"dirichlet", "neumann"}) {
    CLI::App* s = solve->add_subcommand(kind, kind + " problem");
    s->add_option("--mesh", c.meshes, "OBJ path or icosphere:N / cube:N")->required();
    s->add_option("--lambda-re", lre, "real part of lambda")->required();
    s->add_option("--lambda-im", lim, "imaginary part of lambda");
    s->add_option("--data", c.data, "stokeslet:x0=a,b,c,e=d,e,f | file:PATH | zero");
    s->add_option("--points", c.points, "interior oracle points");
    s->add_option("--dump", c.dump, "write density and data as JSON");
    add_common(s);
    tag(s, "solve " + kind);
  }

  // scans
  CLI::App* scan = app.add_subcommand("scan", "verification scans")->require_subcommand(1);
  CLI::App* sres = scan->add_subcommand("resolvent", "resolvent constant over lambda x p");
  sres->add_option("--mesh", c.meshes, "meshes, coarse to fine")->required();
  sres->add_option("--p", c.p, "exponents")->delimiter(',');
  sres->add_option("--forcings", c.forcings, "number of random forcings");
  sres->add_option("--r0", c.r0, "length scale (0: mesh diameter)");
  add_lambda(sres);
  add_common(sres);
  tag(sres, "scan resolvent");
  CLI::App* scond = scan->add_subcommand("conditioning", "smallest singular values of the boundary operators");
  scond->add_option("--mesh", c.meshes, "mesh")->required();
  add_lambda(scond);
  add_common(scond);
  tag(scond, "scan conditioning");
  CLI::App* srel = scan->add_subcommand("rellich", "energy and Rellich identities and estimates");
  srel->add_option("--mesh", c.meshes, "meshes, coarse to fine")->required();
  srel->add_option("--data", c.data, "stokeslet:x0=a,b,c,e=d,e,f (default: a fixed exterior source)");
  add_lambda(srel);
  add_common(srel);
  tag(srel, "scan rellich");
  CLI::App* srh = scan->add_subcommand("reverse-holder", "reverse Hoelder ratio on graph domains");
  srh->add_option("--graph", c.etas, "flat, wedge, tilted")->delimiter(',');
  srh->add_option("--M", c.slope_bound, "Lipschitz bound");
  srh->add_option("--r", c.radii, "radii")->delimiter(',');
  srh->add_option("--resolutions", c.resolutions, "mesh resolutions, coarse to fine")->delimiter(',');
  srh->add_option("--p", c.p, "exponent")->delimiter(',');
  add_lambda(srh);
  add_common(srh);
  tag(srh, "scan reverse-holder");
  CLI::App* sker = scan->add_subcommand("kernel-check", "kernel properties (d = 3) or expansion order (d = 4..7)");
  sker->add_option("--dim", c.dim, "dimension");
  sker->add_option("--points", c.samples, "sample points for d = 3");
  add_common(sker);
  tag(sker, "scan kernel-check");

  // replay
  CLI::App* run = app.add_subcommand("run", "run a saved configuration");
  run->add_option("--config", config_file, "canonical config JSON")->required();
  run->callback([&] { c.command = "run"; });

  app.add_flag("--print-config", inv.print_config, "print the canonical config and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    inv.help = true;
    inv.help_text = app.help();
    return inv;
  } catch (const CLI::ParseError& e) {
    throw ConfigError(e.what());
  }

  if (c.command == "run") {
    std::ifstream is(config_file);
    if (!is) throw ConfigError("cannot open " + config_file);
    json j;
    try {
      is >> j;
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config file: ") + e.what());
    }
    inv.config = RunConfig::from_json(j.contains("config") ? j.at("config") : j);
    return inv;
  }

  for (const auto& [k, v] : tol_overrides) c.tolerances[k] = v;

  // lambdas: explicit pairs, or the magnitude x argument grid
  if (!lre.empty() || !lim.empty()) {
    if (lim.empty()) lim.assign(lre.size(), 0.0);
    if (lre.size() != lim.size()) throw ConfigError("--lambda-re and --lambda-im must have equal length");
    if (!mags.empty()) throw ConfigError("give explicit lambdas or a grid, not both");
    for (std::size_t i = 0; i < lre.size(); ++i) c.lambdas.emplace_back(lre[i], lim[i]);
  } else if (!mags.empty()) {
    for (double m : mags)
      if (!(m > 0.0)) throw ConfigError("lambda magnitudes must be positive");
    c.lambdas = lambda_grid(mags, args);
  } else if (c.command == "scan resolvent" || c.command == "scan conditioning") {
    c.lambdas = lambda_grid({1.0, 10.0, 100.0}, args);
  } else if (c.command == "scan rellich") {
    c.lambdas = lambda_grid({1.0, 10.0, 100.0}, have_args ? args : std::vector<double>{0.0});
  } else if (c.command == "scan reverse-holder") {
    c.lambdas = {cplx(1.0, 0.0)};
  }
  if (c.p.empty()) {
    if (c.command == "scan resolvent") c.p = {2.0, 8.0 / 3.0, 3.0};
    if (c.command == "scan reverse-holder") c.p = {3.0};
  }
  c.validate();
  return inv;
}

/// Full CLI: parse, run, map failures to exit codes with an error JSON on `out`.
inline int main(int argc, const char* const* argv, std::ostream& out) {
  Invocation inv;
  try {
    inv = parse(argc, argv);
  } catch (const ConfigError& e) {
    out << error_json(kConfigError, "config", e.what()).dump() << '\n';
    return kConfigError;
  } catch (const DomainError& e) {
    out << error_json(kConfigError, "config", e.what()).dump() << '\n';
    return kConfigError;
  }
  if (inv.help) {
    out << inv.help_text;
    return kSuccess;
  }
  if (inv.print_config) {
    out << inv.config.canonical() << '\n';
    return kSuccess;
  }
  try {
    return execute(inv.config, out);
  } catch (const ConfigError& e) {
    out << error_json(kConfigError, "config", e.what()).dump() << '\n';
    return kConfigError;
  } catch (const DomainError& e) {
    out << error_json(kConfigError, "domain", e.what()).dump() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    out << error_json(kNumericalFailure, "numerical", e.what()).dump() << '\n';
    return kNumericalFailure;
  }
}

} // namespace stokesres::cli
