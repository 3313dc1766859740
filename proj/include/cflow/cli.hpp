/*
  Batch front end: JSON experiment configs, command dispatch and report files.

  Output files per command (all under the output directory):
    flow                 trace.csv, final_state.json, manifest.json [, plot.dat]
    imcf                 trace.csv (volume-law columns first), final_state.json, manifest.json [, plot.dat]
    foliate              leaves.csv, foliation.json, manifest.json
    validate-identities  identities.csv, manifest.json
    validate-concavity   concavity.json, manifest.json
    check-barrier        barrier.json, manifest.json
    check-decay          decay.csv, decay.json, manifest.json
    cert-convex          convexity.json, manifest.json

  Exit codes: 0 success, 1 check failed, 2 MaxSteps, 3 admissibility or
  spacelike loss, 4 IMCF mean-curvature floor, 5 other numerical failure,
  64 configuration error, 74 IO error.
*/

#pragma once

#include "cflow/estimates.hpp"
#include "cflow/flow.hpp"
#include "cflow/foliation.hpp"
#include "cflow/identities.hpp"

#include <boost/version.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace cflow {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr int kOutputSchemaVersion = 1;
inline constexpr const char* kVersion = "0.1.0";

namespace exit_code {
inline constexpr int ok = 0, check_failed = 1, max_steps = 2, admissibility = 3, imcf_floor = 4, numerical = 5,
                     config = 64, io = 74;
}

inline int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::ConfigError:
    case ErrorCode::WrongSignature:
    case ErrorCode::UnsupportedModel:
    case ErrorCode::BadResolution:
    case ErrorCode::BadPrecondition: return exit_code::config;
    case ErrorCode::IoError: return exit_code::io;
    case ErrorCode::LostAdmissibility:
    case ErrorCode::LostSpacelike:
    case ErrorCode::OutsideCone:
    case ErrorCode::NotSpacelike: return exit_code::admissibility;
    case ErrorCode::MeanCurvatureFloor: return exit_code::imcf_floor;
    default: return exit_code::numerical;
  }
}

// ---------------------------------------------------------------------------
// Config

using Json = nlohmann::ordered_json;

struct InitialSpec {
  double value = 1.0;
  double amplitude = 0.0;
  std::array<int, 2> modes{1, 1};
  std::string shape = "sin";  // sin | cos | sin2, product over active axes
};

struct FSpec {
  std::string kind = "constant";  // constant | radial-power | linear-x0 | infinity
  double value = 0.0, c = 1.0, p = 1.0, a = 0.0, b = 0.0;
};

struct ConcavitySpec {
  std::string F = "K", phi = "sqrt";
  int n = 2;
  int samples = 10000;
  double spread_floor = 1e-2;
  double margin_floor = 0.05;
};

struct RegionSpec {
  double x0_lo = 0.0, x0_hi = 0.0;
  int samples = 64;
  double lambda_max = 65536.0;
};

struct ExperimentConfig {
  std::string command;
  std::uint64_t seed = kDefaultSeed;
  std::string model_id;
  std::string base = "circle";
  std::map<std::string, double> model_params;
  std::array<int, 2> resolution{64, 1};
  bool resolution_pair = false;
  int order = 4;
  std::string F = "H", phi = "id";
  FSpec f;
  InitialSpec initial;
  FlowConfig flow;
  bool newton = false;
  NewtonOptions newton_options;
  std::vector<double> taus;
  IdentityOptions identities;
  ConcavitySpec concavity;
  RegionSpec region;
  std::string plot_monitor;
  Json echo;  // the parsed document
};

namespace detail {

/// Line lookup for diagnostics: walks the key path through the raw text.
class LineIndex {
 public:
  explicit LineIndex(std::string text) : text_(std::move(text)) {}

  int line_of(const std::vector<std::string>& path) const {
    std::size_t pos = 0;
    for (const auto& key : path) {
      if (key.empty() || key[0] == '[') continue;
      const auto hit = text_.find('"' + key + '"', pos);
      if (hit == std::string::npos) break;
      pos = hit;
    }
    return line_at(pos);
  }
  int line_at(std::size_t byte) const {
    byte = std::min(byte, text_.size());
    return 1 + static_cast<int>(std::count(text_.begin(), text_.begin() + static_cast<long>(byte), '\n'));
  }

 private:
  std::string text_;
};

inline std::string join_path(const std::vector<std::string>& path) {
  std::string s;
  for (const auto& p : path) s += (p.size() && p[0] == '[') ? p : (s.empty() ? "" : ".") + p;
  return s.empty() ? "<root>" : s;
}

/// Strict object reader: every key must be consumed before finish().
class Reader {
 public:
  Reader(const Json& j, std::vector<std::string> path, const LineIndex& idx, std::string source)
      : j_(j), path_(std::move(path)), idx_(idx), source_(std::move(source)) {
    if (!j_.is_object()) error({}, "expected an object");
  }

  [[noreturn]] void error(const std::string& key, const std::string& msg) const {
    auto p = path_;
    if (!key.empty()) p.push_back(key);
    fail(ErrorCode::ConfigError,
         source_ + ":" + std::to_string(idx_.line_of(p)) + ": field '" + join_path(p) + "': " + msg);
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <class T>
  T req(const std::string& key) {
    if (!has(key)) error(key, "required field missing");
    return as<T>(key);
  }
  template <class T>
  T opt(const std::string& key, T def) {
    return has(key) ? as<T>(key) : def;
  }
  Reader child(const std::string& key) {
    if (!has(key)) error(key, "required section missing");
    used_.insert(key);
    auto p = path_;
    p.push_back(key);
    return Reader(j_.at(key), p, idx_, source_);
  }
  const Json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }
  std::vector<std::string> keys() const {
    std::vector<std::string> k;
    for (auto it = j_.begin(); it != j_.end(); ++it) k.push_back(it.key());
    return k;
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) error(it.key(), "unknown key");
  }
  const std::vector<std::string>& path() const { return path_; }

 private:
  template <class T>
  T as(const std::string& key) {
    used_.insert(key);
    const Json& v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) error(key, "expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) error(key, "expected an integer");
      if (std::is_unsigned_v<T> && v.get<long long>() < 0 && !v.is_number_unsigned()) error(key, "expected a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) error(key, "expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) error(key, "expected a string");
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      if (!v.is_array()) error(key, "expected an array of numbers");
      for (const auto& e : v)
        if (!e.is_number()) error(key, "expected an array of numbers");
    }
    return v.get<T>();
  }

  const Json& j_;
  std::vector<std::string> path_;
  const LineIndex& idx_;
  std::string source_;
  std::set<std::string> used_;
};

inline Topology topology_of(const std::string& base) {
  if (base == "circle") return Topology::Circle;
  if (base == "torus2") return Topology::Torus2;
  return Topology::SphereAxisym;
}

inline BaseKind base_kind_of(const std::string& base) {
  if (base == "circle") return BaseKind::Circle;
  if (base == "torus2") return BaseKind::Torus2;
  return BaseKind::Sphere;
}

inline const std::set<std::string>& commands() {
  static const std::set<std::string> c{"flow",        "imcf",          "foliate",      "validate-identities",
                                       "validate-concavity", "check-barrier", "check-decay", "cert-convex"};
  return c;
}

}  // namespace detail

/// Parses and validates a config document; errors carry "source:line: field 'path': message".
inline ExperimentConfig parse_config(const std::string& text, const std::string& source = "config") {
  detail::LineIndex idx(text);
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::ConfigError, source + ":" + std::to_string(idx.line_at(e.byte == 0 ? 0 : e.byte - 1)) +
                                     ": malformed JSON: " + e.what());
  }
  ExperimentConfig c;
  c.echo = doc;
  detail::Reader root(doc, {}, idx, source);

  const int ver = root.req<int>("schema_version");
  if (ver != kConfigSchemaVersion)
    root.error("schema_version", "unsupported version " + std::to_string(ver) + " (expected " +
                                     std::to_string(kConfigSchemaVersion) + ")");
  c.command = root.req<std::string>("command");
  if (!detail::commands().count(c.command)) root.error("command", "unknown command '" + c.command + "'");
  c.seed = root.opt<std::uint64_t>("seed", kDefaultSeed);

  auto guard = [](detail::Reader& r, const std::string& key, auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ConfigError && e.code() != ErrorCode::BadResolution) throw;
      const std::string msg = e.what();
      const std::string prefix = std::string(to_string(e.code())) + ": ";
      r.error(key, msg.rfind(prefix, 0) == 0 ? msg.substr(prefix.size()) : msg);
    }
  };

  const bool needs_model = c.command != "validate-concavity";
  if (root.has("model") || needs_model) {
    auto m = root.child("model");
    c.model_id = m.req<std::string>("id");
    c.base = m.opt<std::string>("base", "circle");
    if (c.base != "circle" && c.base != "torus2" && c.base != "sphere")
      m.error("base", "unknown base '" + c.base + "' (expected circle, torus2 or sphere)");
    if (m.has("params")) {
      auto p = m.child("params");
      for (const auto& k : p.keys()) c.model_params[k] = p.req<double>(k);
      p.finish();
    }
    guard(m, "id", [&] { make_model(c.model_id, detail::base_kind_of(c.base), c.model_params); });
    m.finish();
  }
  const bool needs_grid = needs_model && c.command != "check-decay" && c.command != "cert-convex";
  if (root.has("grid") || needs_grid) {
    auto g = root.child("grid");
    if (!g.has("resolution")) g.error("resolution", "required field missing");
    const Json& r = g.raw("resolution");
    if (r.is_number_integer()) {
      c.resolution = {r.get<int>(), 1};
    } else if (r.is_array() && r.size() == 2 && r[0].is_number_integer() && r[1].is_number_integer()) {
      c.resolution = {r[0].get<int>(), r[1].get<int>()};
      c.resolution_pair = true;
    } else {
      g.error("resolution", "expected an integer or a pair of integers");
    }
    c.order = g.opt<int>("order", 4);
    guard(g, "resolution", [&] {
      if (c.resolution_pair)
        make_grid(detail::topology_of(c.base), c.resolution, c.order);
      else
        make_grid(detail::topology_of(c.base), c.resolution[0], c.order);
    });
    g.finish();
  }
  if (root.has("curvature")) {
    auto k = root.child("curvature");
    c.F = k.opt<std::string>("F", "H");
    c.phi = k.opt<std::string>("phi", "id");
    guard(k, "F", [&] { parse_F(c.F); });
    guard(k, "phi", [&] { parse_phi(c.phi); });
    k.finish();
  }
  if (root.has("f")) {
    auto f = root.child("f");
    c.f.kind = f.req<std::string>("kind");
    if (c.f.kind == "constant") {
      c.f.value = f.req<double>("value");
    } else if (c.f.kind == "radial-power") {
      c.f.c = f.req<double>("c");
      c.f.p = f.req<double>("p");
    } else if (c.f.kind == "linear-x0") {
      c.f.a = f.req<double>("a");
      c.f.b = f.req<double>("b");
    } else if (c.f.kind != "infinity") {
      f.error("kind", "unknown f kind '" + c.f.kind + "' (expected constant, radial-power, linear-x0 or infinity)");
    }
    f.finish();
  }
  if (root.has("initial")) {
    auto i = root.child("initial");
    c.initial.value = i.req<double>("value");
    c.initial.amplitude = i.opt<double>("amplitude", 0.0);
    if (i.has("modes")) {
      const auto m = i.req<std::vector<double>>("modes");
      if (m.empty() || m.size() > 2) i.error("modes", "expected one or two mode numbers");
      for (std::size_t a = 0; a < m.size(); ++a) c.initial.modes[a] = static_cast<int>(m[a]);
    }
    c.initial.shape = i.opt<std::string>("shape", "sin");
    if (c.initial.shape != "sin" && c.initial.shape != "cos" && c.initial.shape != "sin2")
      i.error("shape", "unknown shape '" + c.initial.shape + "' (expected sin, cos or sin2)");
    i.finish();
  }
  if (root.has("flow")) {
    auto f = root.child("flow");
    FlowConfig& fc = c.flow;
    fc.cfl = f.opt("cfl", fc.cfl);
    fc.tol_stationary = f.opt("tol_stationary", fc.tol_stationary);
    fc.max_steps = f.opt<long>("max_steps", fc.max_steps);
    fc.dt_min = f.opt("dt_min", fc.dt_min);
    fc.dt_max = f.opt("dt_max", fc.dt_max);
    if (f.has("t_end")) fc.t_end = f.req<double>("t_end");
    fc.output_every = f.opt<int>("output_every", fc.output_every);
    fc.H_floor = f.opt("H_floor", fc.H_floor);
    guard(f, "", [&] { fc.validate(); });
    f.finish();
  }
  if (root.has("newton")) {
    auto n = root.child("newton");
    c.newton = n.opt<bool>("enabled", true);
    c.newton_options.tol = n.opt("tol", c.newton_options.tol);
    c.newton_options.max_iter = n.opt<int>("max_iter", c.newton_options.max_iter);
    n.finish();
  }
  if (root.has("foliation")) {
    auto f = root.child("foliation");
    c.taus = f.req<std::vector<double>>("taus");
    if (c.taus.empty()) f.error("taus", "need at least one tau");
    f.finish();
  }
  if (root.has("identities")) {
    auto i = root.child("identities");
    c.identities.dt_probe = i.opt("dt_probe", c.identities.dt_probe);
    const auto s = i.opt<std::string>("scheme", "forward");
    if (s == "forward")
      c.identities.scheme = ProbeScheme::Forward;
    else if (s == "central")
      c.identities.scheme = ProbeScheme::Central;
    else
      i.error("scheme", "unknown scheme '" + s + "' (expected forward or central)");
    c.identities.metric = i.opt("metric", true);
    c.identities.normal = i.opt("normal", true);
    c.identities.shape = i.opt("shape", true);
    c.identities.vtilde = i.opt("vtilde", true);
    if (!(c.identities.dt_probe > 0.0)) i.error("dt_probe", "must be positive");
    i.finish();
  }
  if (root.has("concavity")) {
    auto k = root.child("concavity");
    ConcavitySpec& s = c.concavity;
    s.F = k.opt("F", s.F);
    s.phi = k.opt("phi", s.phi);
    s.n = k.opt("n", s.n);
    s.samples = k.opt("samples", s.samples);
    s.spread_floor = k.opt("spread_floor", s.spread_floor);
    s.margin_floor = k.opt("margin_floor", s.margin_floor);
    guard(k, "F", [&] { parse_F(s.F); });
    guard(k, "phi", [&] { parse_phi(s.phi); });
    if (s.n < 1 || s.n > kMaxBase) k.error("n", "dimension must lie in 1..3");
    if (s.samples < 1) k.error("samples", "must be positive");
    if (!(s.spread_floor > 0.0)) k.error("spread_floor", "must be positive");
    k.finish();
  }
  if (root.has("region")) {
    auto r = root.child("region");
    c.region.x0_lo = r.req<double>("x0_lo");
    c.region.x0_hi = r.req<double>("x0_hi");
    c.region.samples = r.opt("samples", c.region.samples);
    c.region.lambda_max = r.opt("lambda_max", c.region.lambda_max);
    r.finish();
  }
  if (root.has("output")) {
    auto o = root.child("output");
    c.plot_monitor = o.opt<std::string>("plot_monitor", "");
    o.finish();
  }
  root.finish();

  auto need = [&](const char* section, bool ok) {
    if (!ok) root.error(section, "required section missing for command '" + c.command + "'");
  };
  if (c.command == "flow" || c.command == "check-barrier") {
    need("f", root.has("f"));
    need("initial", root.has("initial"));
  }
  if (c.command == "validate-identities") {
    need("f", root.has("f"));
    need("initial", root.has("initial"));
  }
  if (c.command == "imcf") need("initial", root.has("initial"));
  if (c.command == "foliate") {
    need("foliation", root.has("foliation"));
    need("initial", root.has("initial"));
  }
  if (c.command == "check-decay" || c.command == "cert-convex") need("region", root.has("region"));
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::ConfigError, path + ": cannot open config file");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config(text, path);
}

// ---------------------------------------------------------------------------
// Building blocks from a config

inline AmbientModel config_model(const ExperimentConfig& c) {
  return make_model(c.model_id, detail::base_kind_of(c.base), c.model_params);
}

inline BaseGrid config_grid(const ExperimentConfig& c) {
  const Topology t = detail::topology_of(c.base);
  return c.resolution_pair ? make_grid(t, c.resolution, c.order) : make_grid(t, c.resolution[0], c.order);
}

inline PrescribedCurvature config_f(const ExperimentConfig& c) {
  if (c.f.kind == "constant") return constant_f(c.f.value);
  if (c.f.kind == "radial-power") return radial_power_f(c.f.c, c.f.p);
  if (c.f.kind == "linear-x0") return linear_x0_f(c.f.a, c.f.b);
  return imcf_f();
}

inline Field config_initial(const ExperimentConfig& c, const BaseGrid& g) {
  const InitialSpec s = c.initial;
  const int axes = g.active_axes();
  return make_field(g, [&](const BasePoint& x) {
    double p = 1.0;
    for (int a = 0; a < axes; ++a) {
      const double kx = s.modes[a] * x[a];
      p *= s.shape == "sin" ? std::sin(kx) : (s.shape == "cos" ? std::cos(kx) : std::sin(kx) * std::sin(kx));
    }
    return s.value + s.amplitude * p;
  });
}

inline FlowProblem config_problem(const ExperimentConfig& c) {
  const AmbientModel m = config_model(c);
  return FlowProblem{m, config_grid(c), Composite{make_spec(parse_F(c.F), m.n), parse_phi(c.phi)}, config_f(c)};
}

// ---------------------------------------------------------------------------
// Reports

namespace detail {

inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline Json num_json(double v) { return std::isfinite(v) ? Json(v) : Json(num(v)); }

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + p.string());
  out << content;
  out.close();
  if (!out) fail(ErrorCode::IoError, "write failed for " + p.string());
}

inline std::string csv(const std::vector<std::string>& header, const std::vector<std::vector<double>>& rows) {
  std::string s;
  for (std::size_t i = 0; i < header.size(); ++i) s += (i ? "," : "") + header[i];
  s += "\n";
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) s += (i ? "," : "") + num(r[i]);
    s += "\n";
  }
  return s;
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

inline Json field_json(const Field& u) {
  Json a = Json::array();
  for (Eigen::Index k = 0; k < u.size(); ++k) a.push_back(num_json(u(k)));
  return a;
}

inline Json model_json(const ExperimentConfig& c) {
  Json p = Json::object();
  for (const auto& [k, v] : c.model_params) p[k] = v;
  return Json{{"id", c.model_id}, {"base", c.base}, {"params", p}};
}

inline Json grid_json(const BaseGrid& g) {
  return Json{{"topology", to_string(g.topology)}, {"resolution", {g.res[0], g.res[1]}}, {"order", g.order}};
}

}  // namespace detail

/// Column order of the trace CSV.
inline std::vector<std::string> trace_columns() {
  return {std::begin(FlowTrace::kColumns), std::end(FlowTrace::kColumns)};
}

inline std::vector<std::string> imcf_trace_columns() {
  return {"t",           "dt",          "volume",       "volume_law_error", "tau",       "volume_ratio", "tau_law",
          "sup_residual", "min_residual", "kappa_min", "kappa_max",        "vtilde_max", "cone_margin"};
}

inline std::string trace_csv(const FlowTrace& tr) {
  std::vector<std::vector<double>> rows;
  for (const auto& r : tr.rows)
    rows.push_back({r.t, r.dt, r.sup_residual, r.min_residual, r.kappa_min, r.kappa_max, r.vtilde_max, r.volume,
                    r.cone_margin});
  return detail::csv(trace_columns(), rows);
}

inline std::string imcf_trace_csv(const ImcfResult& res) {
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < res.run.trace.rows.size(); ++i) {
    const auto& r = res.run.trace.rows[i];
    const auto& l = res.law.rows[i];
    rows.push_back({r.t, r.dt, r.volume, l.law_error, l.tau, l.ratio, l.law, r.sup_residual, r.min_residual,
                    r.kappa_min, r.kappa_max, r.vtilde_max, r.cone_margin});
  }
  return detail::csv(imcf_trace_columns(), rows);
}

inline std::string leaves_csv(const FoliationResult& r) {
  std::vector<std::vector<double>> rows;
  for (const auto& l : r.leaves)
    rows.push_back({l.tau, l.u.minCoeff(), l.u.maxCoeff(), l.residual,
                    l.udot ? l.udot->min_udot : std::numeric_limits<double>::quiet_NaN(),
                    static_cast<double>(l.flow_steps), static_cast<double>(l.newton_iterations)});
  return detail::csv({"tau", "min_u", "max_u", "residual", "min_udot", "flow_steps", "newton_iterations"}, rows);
}

inline std::string identities_csv(const IdentityReport& r) {
  std::string s = "identity,residual,residual_half,ratio\n";
  for (const auto& row : r.rows)
    s += row.name + "," + detail::num(row.residual) + "," + detail::num(row.residual_half) + "," +
         detail::num(row.ratio) + "\n";
  return s;
}

/// Two columns: t and the chosen trace monitor.
inline std::string plot_data(const std::string& header_csv, const std::string& monitor) {
  std::istringstream in(header_csv);
  std::string line;
  std::getline(in, line);
  std::vector<std::string> cols;
  {
    std::istringstream h(line);
    std::string c;
    while (std::getline(h, c, ',')) cols.push_back(c);
  }
  const auto it = std::find(cols.begin(), cols.end(), monitor);
  if (it == cols.end()) fail(ErrorCode::ConfigError, "plot monitor '" + monitor + "' is not a trace column");
  const auto col = static_cast<std::size_t>(it - cols.begin());
  std::string out = "# t " + monitor + "\n";
  while (std::getline(in, line)) {
    std::vector<std::string> v;
    std::istringstream r(line);
    std::string c;
    while (std::getline(r, c, ',')) v.push_back(c);
    out += v[0] + " " + v[col] + "\n";
  }
  return out;
}

inline Json manifest_json(const ExperimentConfig& c, const std::optional<int>& resolution_override) {
  Json versions{{"cflow", kVersion},
                {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                              std::to_string(EIGEN_MINOR_VERSION)},
                {"boost", BOOST_LIB_VERSION},
                {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                      std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                      std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                {"compiler", __VERSION__}};
  Json overrides = Json::object();
  if (resolution_override) overrides["resolution"] = *resolution_override;
  return Json{{"schema_version", kOutputSchemaVersion},
              {"command", c.command},
              {"seed", c.seed},
              {"config", c.echo},
              {"overrides", overrides},
              {"versions", versions}};
}

// ---------------------------------------------------------------------------
// Commands

struct RunOptions {
  std::filesystem::path out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> resolution;
};

namespace detail {

inline int verdict_code(Verdict v) { return v == Verdict::MaxSteps ? exit_code::max_steps : exit_code::ok; }

inline Json final_state_json(const ExperimentConfig& c, const BaseGrid& g, const RunResult& R) {
  return Json{{"schema_version", kOutputSchemaVersion},
              {"model", model_json(c)},
              {"grid", grid_json(g)},
              {"t", R.t},
              {"steps", R.steps},
              {"verdict", to_string(R.verdict)},
              {"final_sup_residual", num_json(R.final_sup_residual)},
              {"u", field_json(R.u)}};
}

inline int cmd_flow(const ExperimentConfig& c, const std::filesystem::path& out) {
  const FlowProblem p = config_problem(c);
  const RunResult R = run(p, config_initial(c, p.grid), c.flow);
  const std::string trace = trace_csv(R.trace);
  write_file(out / "trace.csv", trace);
  Json state = final_state_json(c, p.grid, R);
  const auto& m = R.monitors;
  state["monitors"] = Json{{"upper_start", m.upper_start},         {"sign_min", num_json(m.sign_min)},
                           {"sign_ok", m.sign_ok},                 {"direction", m.direction},
                           {"monotone_violation", m.monotone_violation}, {"monotone_ok", m.monotone_ok},
                           {"gradient_running_max", m.gradient_running_max}, {"gradient_ok", m.gradient_ok}};
  int code = verdict_code(R.verdict);
  if (c.newton && R.verdict == Verdict::Converged) {
    const NewtonReport nr = newton_polish(p, R.u, c.newton_options);
    Json res = Json::array();
    for (double r : nr.residuals) res.push_back(num_json(r));
    state["newton"] = Json{{"iterations", nr.iterations}, {"final_residual", nr.final_residual}, {"residuals", res}};
    state["u"] = field_json(nr.u);
  }
  write_file(out / "final_state.json", dump(state));
  if (!c.plot_monitor.empty()) write_file(out / "plot.dat", plot_data(trace, c.plot_monitor));
  return code;
}

inline int cmd_imcf(const ExperimentConfig& c, const std::filesystem::path& out) {
  const AmbientModel m = config_model(c);
  const BaseGrid g = config_grid(c);
  const ImcfResult res = imcf_run(m, g, config_initial(c, g), c.flow);
  const std::string trace = imcf_trace_csv(res);
  write_file(out / "trace.csv", trace);
  Json state = final_state_json(c, g, res.run);
  state["volume_law"] = Json{{"volume0", res.law.volume0},
                             {"max_law_error", res.law.max_law_error},
                             {"max_tau_deviation", res.law.max_tau_deviation}};
  write_file(out / "final_state.json", dump(state));
  if (!c.plot_monitor.empty()) write_file(out / "plot.dat", plot_data(trace, c.plot_monitor));
  return verdict_code(res.run.verdict);
}

inline int cmd_foliate(const ExperimentConfig& c, const std::filesystem::path& out) {
  const AmbientModel m = config_model(c);
  const BaseGrid g = config_grid(c);
  SweepOptions opt;
  if (c.echo.contains("flow")) opt.flow = c.flow;
  opt.newton = c.newton_options;
  const FoliationResult r = cmc_sweep(m, g, c.taus, config_initial(c, g), opt);
  write_file(out / "leaves.csv", leaves_csv(r));
  Json leaves = Json::array();
  for (const auto& l : r.leaves) {
    Json e{{"tau", l.tau}, {"residual", l.residual}, {"u", field_json(l.u)}};
    if (l.udot) e["min_udot"] = l.udot->min_udot;
    else e["udot_error"] = l.udot_error;
    leaves.push_back(e);
  }
  Json rep{{"schema_version", kOutputSchemaVersion},
           {"model", model_json(c)},
           {"grid", grid_json(g)},
           {"ordering_ok", r.ordering_ok},
           {"ordering_min_gap", num_json(r.ordering_min_gap)},
           {"positivity_ok", r.positivity_ok},
           {"leaves", leaves}};
  write_file(out / "foliation.json", dump(rep));
  return r.ok() ? exit_code::ok : exit_code::check_failed;
}

inline int cmd_identities(const ExperimentConfig& c, const std::filesystem::path& out) {
  const FlowProblem p = config_problem(c);
  IdentityOptions o = c.identities;
  if (!p.model.lorentzian()) o.vtilde = false;
  if (!p.model.spaceform_K) o.shape = false;
  const IdentityReport r = identity_residuals(p, config_initial(c, p.grid), o);
  write_file(out / "identities.csv", identities_csv(r));
  return exit_code::ok;
}

inline int cmd_concavity(const ExperimentConfig& c, const std::filesystem::path& out) {
  const ConcavitySpec& k = c.concavity;
  SampleSpec s;
  s.G = Composite{make_spec(parse_F(k.F), k.n), parse_phi(k.phi)};
  s.count = k.samples;
  s.spread_floor = k.spread_floor;
  s.margin_floor = k.margin_floor;
  s.seed = c.seed;
  const ConcavityReport cr = run_concavity_battery(s);
  const GradientOrderReport gr = run_gradient_order_battery(s);
  Json rep{{"schema_version", kOutputSchemaVersion},
           {"F", k.F},
           {"phi", k.phi},
           {"n", k.n},
           {"seed", c.seed},
           {"concavity",
            {{"samples", cr.samples},
             {"pass_count", cr.pass_count},
             {"worst_gap", cr.worst_gap},
             {"decomposition_residual", cr.decomposition_residual}}},
           {"gradient_order", {{"samples", gr.samples}, {"pass_count", gr.pass_count}, {"worst", gr.worst}}}};
  bool ok = cr.ok() && gr.ok() && cr.decomposition_residual < 1e-5;
  if (s.G.F.kind == FKind::K) {
    const BoundaryRayReport br = boundary_rays(k.n, 100, c.seed);
    rep["boundary_rays"] = {{"rays", br.rays}, {"pass_count", br.pass_count}, {"max_end_value", br.max_end_value}};
    ok = ok && br.ok();
  }
  rep["pass"] = ok;
  write_file(out / "concavity.json", dump(rep));
  return ok ? exit_code::ok : exit_code::check_failed;
}

inline int cmd_barrier(const ExperimentConfig& c, const std::filesystem::path& out) {
  const FlowProblem p = config_problem(c);
  const BarrierReport r = barrier_classify(p.model, p.grid, config_initial(c, p.grid), p.G.F, p.f);
  Json rep{{"schema_version", kOutputSchemaVersion},
           {"kind", to_string(r.kind)},
           {"margin", r.margin},
           {"max_abs", r.max_abs},
           {"admissible_nodes", r.admissible_nodes}};
  write_file(out / "barrier.json", dump(rep));
  return exit_code::ok;
}

inline int cmd_decay(const ExperimentConfig& c, const std::filesystem::path& out) {
  const AmbientModel m = config_model(c);
  Json rep{{"schema_version", kOutputSchemaVersion}, {"model", model_json(c)}};
  try {
    const DecayReport d = slice_decay_check(m, c.region.x0_lo, c.region.x0_hi, c.region.samples, {}, c.seed);
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < d.tau.size(); ++i) rows.push_back({d.tau[i], d.phi[i], d.rescaled_time[i]});
    write_file(out / "decay.csv", csv({"tau", "phi", "rescaled_time"}, rows));
    rep["accepted"] = true;
    rep["identity_residual"] = d.identity_residual;
    rep["phi_integral"] = d.phi_integral;
    rep["diverges"] = d.diverges ? Json(*d.diverges) : Json(nullptr);
    rep["rescaled_min_ratio"] = d.rescaled_min_ratio;
    if (d.rescaled_closed_form_error) rep["rescaled_closed_form_error"] = *d.rescaled_closed_form_error;
    write_file(out / "decay.json", dump(rep));
    return exit_code::ok;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NonPositiveSliceH) throw;
    rep["accepted"] = false;
    rep["reason"] = to_string(e.code());
    rep["message"] = e.what();
    write_file(out / "decay.csv", csv({"tau", "phi", "rescaled_time"}, {}));
    write_file(out / "decay.json", dump(rep));
    return exit_code::check_failed;
  }
}

inline int cmd_convex(const ExperimentConfig& c, const std::filesystem::path& out) {
  const AmbientModel m = config_model(c);
  const ConvexityReport r = convexity_certificate(m, Region{c.region.x0_lo, c.region.x0_hi, {}},
                                                  c.region.lambda_max, c.seed);
  Json ladder = Json::array();
  for (const auto& [l, mg] : r.ladder) ladder.push_back({l, num_json(mg)});
  Json rep{{"schema_version", kOutputSchemaVersion},
           {"model", model_json(c)},
           {"success", r.success},
           {"lambda", r.lambda},
           {"margin", num_json(r.margin)},
           {"ladder", ladder}};
  write_file(out / "convexity.json", dump(rep));
  return r.success ? exit_code::ok : exit_code::check_failed;
}

}  // namespace detail

/// Runs one command, writing reports into opt.out_dir. Library errors propagate as cflow::Error.
inline int run_command(ExperimentConfig c, const RunOptions& opt) {
  if (opt.seed) c.seed = *opt.seed;
  if (opt.resolution) {
    if (*opt.resolution < 1) fail(ErrorCode::ConfigError, "--resolution must be positive");
    c.resolution = {*opt.resolution, c.resolution_pair ? *opt.resolution : 1};
  }
  std::error_code ec;
  std::filesystem::create_directories(opt.out_dir, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create " + opt.out_dir.string() + ": " + ec.message());
  int code = exit_code::ok;
  const auto& out = opt.out_dir;
  if (c.command == "flow") code = detail::cmd_flow(c, out);
  else if (c.command == "imcf") code = detail::cmd_imcf(c, out);
  else if (c.command == "foliate") code = detail::cmd_foliate(c, out);
  else if (c.command == "validate-identities") code = detail::cmd_identities(c, out);
  else if (c.command == "validate-concavity") code = detail::cmd_concavity(c, out);
  else if (c.command == "check-barrier") code = detail::cmd_barrier(c, out);
  else if (c.command == "check-decay") code = detail::cmd_decay(c, out);
  else if (c.command == "cert-convex") code = detail::cmd_convex(c, out);
  else fail(ErrorCode::ConfigError, "unknown command '" + c.command + "'");
  detail::write_file(out / "manifest.json", detail::dump(manifest_json(c, opt.resolution)));
  return code;
}

/// run_command with errors mapped to exit codes and reported on `err`.
inline int run_command_safe(const ExperimentConfig& c, const RunOptions& opt, std::ostream& err) {
  try {
    return run_command(c, opt);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  }
}

}  // namespace cflow
