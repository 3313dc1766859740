/*
  Warped-product model spacetimes

      ds^2 = e^{2 psi} ( sigma (dx^0)^2 + sigma_ij(x^0, x) dx^i dx^j )

  Every catalogue entry has psi = 0 and sigma_ij = S(x^0)^2 rho_ij(x) with rho
  the flat or round metric of the base.  Each model ships analytic jets (value,
  first and second partials) of psi and sigma_ij; connection and curvature are
  assembled algebraically from those jets.
*/

#pragma once

#include "cflow/core.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cflow {

enum class BaseKind { Circle, Torus2, Sphere };

inline int base_dim(BaseKind b) { return b == BaseKind::Circle ? 1 : 2; }

inline const char* to_string(BaseKind b) {
  switch (b) {
    case BaseKind::Circle: return "circle";
    case BaseKind::Torus2: return "torus2";
    case BaseKind::Sphere: return "sphere";
  }
  return "?";
}

/// Scalar jet in ambient coordinates (index 0 is x^0).
struct ScalarJet {
  double v = 0.0;
  std::array<double, kMaxAmbient> d{};
  T2 dd{};
};

/// sigma_ij jet: s[i][j], ds[a][i][j] = d_a s_ij, dds[a][b][i][j]; i, j are base indices.
struct MetricJet {
  T2 s{};
  T3 ds{};
  T4 dds{};
};

/// Scale-factor jet (S, S', S'') of the warping function.
struct ScaleJet {
  double s, ds, dds;
};

struct AmbientModel {
  std::string model_id;
  int signature = -1;
  int n = 1;
  BaseKind base = BaseKind::Circle;
  double x0_min = -std::numeric_limits<double>::infinity();
  double x0_max = std::numeric_limits<double>::infinity();
  std::optional<double> spaceform_K;
  double Lambda = 0.0;
  std::map<std::string, double> params;
  // Window for random sampling, strictly inside the range.
  double sample_lo = -1.0, sample_hi = 1.0;
  // Set when the slice mean curvature has a closed-form non-integrable lower bound.
  bool strong_decay_closed_form = false;
  std::function<ScalarJet(double, const BasePoint&)> psi;
  std::function<MetricJet(double, const BasePoint&)> sigma_metric;

  int dim() const { return n + 1; }
  bool lorentzian() const { return signature < 0; }
  bool in_range(double x0) const { return x0 > x0_min && x0 < x0_max; }
  double param(const std::string& key) const {
    auto it = params.find(key);
    return it == params.end() ? 0.0 : it->second;
  }
};

/// Full metric jet g, d_c g_ab = dg[c][a][b], d_c d_d g_ab = ddg[c][d][a][b].
struct AmbientJet {
  int N = 2;
  T2 g{};
  T3 dg{};
  T4 ddg{};
  ScalarJet psi;
};

inline AmbientJet ambient_jet(const AmbientModel& m, double x0, const BasePoint& x, bool second = true) {
  if (!m.in_range(x0)) fail(ErrorCode::OutOfRange, "x0 = " + std::to_string(x0) + " outside model range");
  AmbientJet J;
  const int N = m.dim();
  J.N = N;
  J.psi = m.psi(x0, x);
  const MetricJet S = m.sigma_metric(x0, x);
  const ScalarJet& p = J.psi;
  // E = e^{2 psi}; dE = 2E psi_a; ddE = E (4 psi_a psi_b + 2 psi_ab)
  const double E = std::exp(2.0 * p.v);
  std::array<double, kMaxAmbient> dE{};
  T2 ddE{};
  for (int a = 0; a < N; ++a) dE[a] = 2.0 * E * p.d[a];
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b) ddE[a][b] = E * (4.0 * p.d[a] * p.d[b] + 2.0 * p.dd[a][b]);

  // Components of the bracket: c_00 = sigma, c_ij = sigma_ij (ambient i+1, j+1).
  auto c = [&](int a, int b) -> double {
    if (a == 0 && b == 0) return m.signature;
    if (a == 0 || b == 0) return 0.0;
    return S.s[a - 1][b - 1];
  };
  auto dc = [&](int e, int a, int b) -> double {
    if (a == 0 || b == 0) return 0.0;
    return S.ds[e][a - 1][b - 1];
  };
  auto ddc = [&](int e, int f, int a, int b) -> double {
    if (a == 0 || b == 0) return 0.0;
    return S.dds[e][f][a - 1][b - 1];
  };
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b) {
      J.g[a][b] = E * c(a, b);
      for (int e = 0; e < N; ++e) {
        J.dg[e][a][b] = dE[e] * c(a, b) + E * dc(e, a, b);
        if (!second) continue;
        for (int f = 0; f < N; ++f)
          J.ddg[e][f][a][b] = ddE[e][f] * c(a, b) + dE[e] * dc(f, a, b) + dE[f] * dc(e, a, b) +
                              E * ddc(e, f, a, b);
      }
    }
  return J;
}

struct AmbientTensors {
  int N = 2;
  T2 g{};
  T2 ginv{};
  T3 dg{};
  T3 Gamma{};   // Gamma[a][b][c] = Gamma^a_bc
  T4 dGamma{};  // dGamma[e][a][b][c] = d_e Gamma^a_bc
  T4 Riem{};    // R_abcd, all indices down
  T2 Ric{};
  ScalarJet psi;
};

enum class TensorLevel { Connection, Curvature };

/// Connection and curvature at one spacetime point from the model jets.
inline AmbientTensors tensors_at(const AmbientModel& m, double x0, const BasePoint& x,
                                 TensorLevel level = TensorLevel::Curvature) {
  const AmbientJet J = ambient_jet(m, x0, x, level == TensorLevel::Curvature);
  const int N = J.N;
  AmbientTensors t;
  t.N = N;
  t.g = J.g;
  t.dg = J.dg;
  t.psi = J.psi;

  AMat G(N, N);
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b) G(a, b) = J.g[a][b];
  const AMat Gi = G.inverse();
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b) t.ginv[a][b] = Gi(a, b);

  // Christoffel of the first kind [bc, d] = 1/2 (d_b g_dc + d_c g_db - d_d g_bc)
  T3 first{};
  for (int b = 0; b < N; ++b)
    for (int c = 0; c < N; ++c)
      for (int d = 0; d < N; ++d)
        first[d][b][c] = 0.5 * (J.dg[b][d][c] + J.dg[c][d][b] - J.dg[d][b][c]);
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b)
      for (int c = 0; c < N; ++c) {
        double s = 0.0;
        for (int d = 0; d < N; ++d) s += t.ginv[a][d] * first[d][b][c];
        t.Gamma[a][b][c] = s;
      }
  if (level == TensorLevel::Connection) return t;

  // d_e g^{ad} = -g^{ap} d_e g_pq g^{qd}
  T3 dginv{};
  for (int e = 0; e < N; ++e)
    for (int a = 0; a < N; ++a)
      for (int d = 0; d < N; ++d) {
        double s = 0.0;
        for (int p = 0; p < N; ++p)
          for (int q = 0; q < N; ++q) s -= t.ginv[a][p] * J.dg[e][p][q] * t.ginv[q][d];
        dginv[e][a][d] = s;
      }
  for (int e = 0; e < N; ++e)
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b)
        for (int c = 0; c < N; ++c) {
          double s = 0.0;
          for (int d = 0; d < N; ++d) {
            const double dfirst =
                0.5 * (J.ddg[e][b][d][c] + J.ddg[e][c][d][b] - J.ddg[e][d][b][c]);
            s += dginv[e][a][d] * first[d][b][c] + t.ginv[a][d] * dfirst;
          }
          t.dGamma[e][a][b][c] = s;
        }

  // R^r_smn = d_m Gamma^r_ns - d_n Gamma^r_ms + Gamma^r_ml Gamma^l_ns - Gamma^r_nl Gamma^l_ms
  T4 up{};
  for (int r = 0; r < N; ++r)
    for (int s = 0; s < N; ++s)
      for (int mu = 0; mu < N; ++mu)
        for (int nu = 0; nu < N; ++nu) {
          double v = t.dGamma[mu][r][nu][s] - t.dGamma[nu][r][mu][s];
          for (int l = 0; l < N; ++l)
            v += t.Gamma[r][mu][l] * t.Gamma[l][nu][s] - t.Gamma[r][nu][l] * t.Gamma[l][mu][s];
          up[r][s][mu][nu] = v;
        }
  for (int a = 0; a < N; ++a)
    for (int s = 0; s < N; ++s)
      for (int mu = 0; mu < N; ++mu)
        for (int nu = 0; nu < N; ++nu) {
          double v = 0.0;
          for (int r = 0; r < N; ++r) v += t.g[a][r] * up[r][s][mu][nu];
          t.Riem[a][s][mu][nu] = v;
        }
  for (int s = 0; s < N; ++s)
    for (int nu = 0; nu < N; ++nu) {
      double v = 0.0;
      for (int r = 0; r < N; ++r) v += up[r][s][r][nu];
      t.Ric[s][nu] = v;
    }
  return t;
}

// ---------------------------------------------------------------------------
// Catalogue

namespace detail {

inline ScalarJet zero_psi(double, const BasePoint&) { return ScalarJet{}; }

/// sigma_ij = S(x0)^2 rho_ij(x) for the flat or round base metric.
inline std::function<MetricJet(double, const BasePoint&)> warped(std::function<ScaleJet(double)> S,
                                                                  BaseKind base) {
  return [S = std::move(S), base](double x0, const BasePoint& x) {
    const int n = base_dim(base);
    T2 rho{};
    T3 drho{};   // drho[a][i][j], a ambient
    T4 ddrho{};  // ddrho[a][b][i][j]
    for (int i = 0; i < n; ++i) rho[i][i] = 1.0;
    if (base == BaseKind::Sphere) {
      const double th = x[0];
      rho[1][1] = std::sin(th) * std::sin(th);
      drho[1][1][1] = std::sin(2.0 * th);
      ddrho[1][1][1][1] = 2.0 * std::cos(2.0 * th);
    }
    const ScaleJet sj = S(x0);
    const double s2 = sj.s * sj.s;
    const double ds2 = 2.0 * sj.s * sj.ds;
    const double dds2 = 2.0 * (sj.ds * sj.ds + sj.s * sj.dds);
    MetricJet J;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        J.s[i][j] = s2 * rho[i][j];
        J.ds[0][i][j] = ds2 * rho[i][j];
        J.dds[0][0][i][j] = dds2 * rho[i][j];
        for (int a = 1; a <= n; ++a) {
          J.ds[a][i][j] = s2 * drho[a][i][j];
          J.dds[0][a][i][j] = ds2 * drho[a][i][j];
          J.dds[a][0][i][j] = ds2 * drho[a][i][j];
          for (int b = 1; b <= n; ++b) J.dds[a][b][i][j] = s2 * ddrho[a][b][i][j];
        }
      }
    return J;
  };
}

inline void require_round(const std::string& id, BaseKind base) {
  if (base == BaseKind::Torus2)
    fail(ErrorCode::ConfigError, id + " requires a round base (circle or sphere)");
}

}  // namespace detail

inline AmbientModel make_lorentz_product(BaseKind base) {
  AmbientModel m;
  m.model_id = "lorentz-product";
  m.signature = -1;
  m.base = base;
  m.n = base_dim(base);
  if (base != BaseKind::Sphere) m.spaceform_K = 0.0;
  m.sample_lo = -1.0;
  m.sample_hi = 1.0;
  m.psi = detail::zero_psi;
  m.sigma_metric = detail::warped([](double) { return ScaleJet{1.0, 0.0, 0.0}; }, base);
  return m;
}

/// -dt^2 + (T - t)^2 rho; flat (Milne) when n = 1.
inline AmbientModel make_flrw_collapse(double T, BaseKind base) {
  if (!(T > 0.0)) fail(ErrorCode::ConfigError, "flrw-collapse requires T > 0");
  AmbientModel m;
  m.model_id = "flrw-collapse";
  m.signature = -1;
  m.base = base;
  m.n = base_dim(base);
  m.x0_max = T;
  m.params["T"] = T;
  if (m.n == 1) m.spaceform_K = 0.0;
  m.sample_lo = T - 2.0;
  m.sample_hi = T - 0.25;
  m.strong_decay_closed_form = true;
  m.psi = detail::zero_psi;
  m.sigma_metric = detail::warped([T](double t) { return ScaleJet{T - t, -1.0, 0.0}; }, base);
  return m;
}

/// -dt^2 + l^2 cosh^2(t/l) dOmega^2, curvature 1/l^2.
inline AmbientModel make_de_sitter(BaseKind base, double ell = 1.0) {
  detail::require_round("de-sitter", base);
  if (!(ell > 0.0)) fail(ErrorCode::ConfigError, "de-sitter requires ell > 0");
  AmbientModel m;
  m.model_id = "de-sitter";
  m.signature = -1;
  m.base = base;
  m.n = base_dim(base);
  m.params["ell"] = ell;
  m.spaceform_K = 1.0 / (ell * ell);
  m.Lambda = m.n / (ell * ell);
  m.sample_lo = -1.5 * ell;
  m.sample_hi = 1.5 * ell;
  m.psi = detail::zero_psi;
  m.sigma_metric = detail::warped(
      [ell](double t) {
        const double c = std::cosh(t / ell), s = std::sinh(t / ell);
        return ScaleJet{ell * c, s, c / ell};
      },
      base);
  return m;
}

/// dr^2 + r^2 dOmega^2.
inline AmbientModel make_euclidean_polar(BaseKind base) {
  detail::require_round("euclidean-polar", base);
  AmbientModel m;
  m.model_id = "euclidean-polar";
  m.signature = 1;
  m.base = base;
  m.n = base_dim(base);
  m.x0_min = 0.0;
  m.spaceform_K = 0.0;
  m.sample_lo = 0.5;
  m.sample_hi = 3.0;
  m.psi = detail::zero_psi;
  m.sigma_metric = detail::warped([](double r) { return ScaleJet{r, 1.0, 0.0}; }, base);
  return m;
}

/// dr^2 + sinh^2 r dOmega^2.
inline AmbientModel make_hyperbolic_polar(BaseKind base) {
  detail::require_round("hyperbolic-polar", base);
  AmbientModel m;
  m.model_id = "hyperbolic-polar";
  m.signature = 1;
  m.base = base;
  m.n = base_dim(base);
  m.x0_min = 0.0;
  m.spaceform_K = -1.0;
  m.sample_lo = 0.3;
  m.sample_hi = 2.0;
  m.psi = detail::zero_psi;
  m.sigma_metric = detail::warped(
      [](double r) { return ScaleJet{std::sinh(r), std::cosh(r), std::sinh(r)}; }, base);
  return m;
}

/// Catalogue lookup by id string plus parameter map.
inline AmbientModel make_model(const std::string& id, BaseKind base,
                               const std::map<std::string, double>& params = {}) {
  auto get = [&](const std::string& k, double def) {
    auto it = params.find(k);
    return it == params.end() ? def : it->second;
  };
  for (const auto& [k, v] : params) {
    const bool known = (id == "flrw-collapse" && k == "T") || (id == "de-sitter" && k == "ell");
    if (!known) fail(ErrorCode::ConfigError, "unknown parameter '" + k + "' for model " + id);
  }
  if (id == "lorentz-product") return make_lorentz_product(base);
  if (id == "flrw-collapse") {
    if (params.find("T") == params.end()) fail(ErrorCode::ConfigError, "flrw-collapse requires T");
    return make_flrw_collapse(get("T", 1.0), base);
  }
  if (id == "de-sitter") return make_de_sitter(base, get("ell", 1.0));
  if (id == "euclidean-polar") return make_euclidean_polar(base);
  if (id == "hyperbolic-polar") return make_hyperbolic_polar(base);
  fail(ErrorCode::ConfigError, "unknown model id '" + id + "'");
}

/// Uniform point of the model's sampling window.
inline std::pair<double, BasePoint> sample_point(const AmbientModel& m, Rng& rng) {
  const double x0 = rng.uniform(m.sample_lo, m.sample_hi);
  BasePoint x{};
  switch (m.base) {
    case BaseKind::Circle: x[0] = rng.uniform(0.0, 2.0 * kPi); break;
    case BaseKind::Torus2:
      x[0] = rng.uniform(0.0, 2.0 * kPi);
      x[1] = rng.uniform(0.0, 2.0 * kPi);
      break;
    case BaseKind::Sphere:
      x[0] = rng.uniform(0.15, kPi - 0.15);
      x[1] = rng.uniform(0.0, 2.0 * kPi);
      break;
  }
  return {x0, x};
}

// ---------------------------------------------------------------------------
// Checks on the closures

/// max |d_c g_ab - Gamma^d_ca g_db - Gamma^d_cb g_ad| / max|g|.
inline double metric_compatibility_residual(const AmbientTensors& t) {
  const int N = t.N;
  double worst = 0.0, scale = 0.0;
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b) scale = std::max(scale, std::abs(t.g[a][b]));
  for (int c = 0; c < N; ++c)
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b) {
        double v = t.dg[c][a][b];
        for (int d = 0; d < N; ++d) v -= t.Gamma[d][c][a] * t.g[d][b] + t.Gamma[d][c][b] * t.g[a][d];
        worst = std::max(worst, std::abs(v));
      }
  return worst / std::max(scale, 1e-300);
}

/// Pair symmetry, antisymmetry and first Bianchi defects, relative to max|R| (or 1).
inline double riemann_symmetry_residual(const AmbientTensors& t) {
  const int N = t.N;
  double worst = 0.0, scale = 1.0;
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b)
      for (int c = 0; c < N; ++c)
        for (int d = 0; d < N; ++d) scale = std::max(scale, std::abs(t.Riem[a][b][c][d]));
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b)
      for (int c = 0; c < N; ++c)
        for (int d = 0; d < N; ++d) {
          const double R = t.Riem[a][b][c][d];
          worst = std::max(worst, std::abs(R + t.Riem[b][a][c][d]));
          worst = std::max(worst, std::abs(R + t.Riem[a][b][d][c]));
          worst = std::max(worst, std::abs(R - t.Riem[c][d][a][b]));
          worst = std::max(worst, std::abs(R + t.Riem[a][c][d][b] + t.Riem[a][d][b][c]));
        }
  return worst / scale;
}

/// Max relative deviation of R_abcd from K (g_ac g_bd - g_ad g_bc).
inline double spaceform_residual(const AmbientModel& m, const std::vector<std::pair<double, BasePoint>>& samples) {
  if (!m.spaceform_K) fail(ErrorCode::NotASpaceForm, m.model_id + " is not a space form");
  const double K = *m.spaceform_K;
  double worst = 0.0;
  for (const auto& [x0, x] : samples) {
    const AmbientTensors t = tensors_at(m, x0, x);
    const int N = t.N;
    double dev = 0.0, scale = 1.0;
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b)
        for (int c = 0; c < N; ++c)
          for (int d = 0; d < N; ++d) {
            const double ref = K * (t.g[a][c] * t.g[b][d] - t.g[a][d] * t.g[b][c]);
            scale = std::max(scale, std::abs(ref));
            dev = std::max(dev, std::abs(t.Riem[a][b][c][d] - ref));
          }
    worst = std::max(worst, dev / scale);
  }
  return worst;
}

inline std::vector<std::pair<double, BasePoint>> sample_points(const AmbientModel& m, int count,
                                                               std::uint64_t seed = kDefaultSeed) {
  Rng rng(seed);
  std::vector<std::pair<double, BasePoint>> pts;
  pts.reserve(count);
  for (int i = 0; i < count; ++i) pts.push_back(sample_point(m, rng));
  return pts;
}

/// Closed x0 interval times a set of base points; an empty list means the whole base.
struct Region {
  double x0_lo = 0.0, x0_hi = 0.0;
  std::vector<BasePoint> base_points;

  void validate(const AmbientModel& m) const {
    if (!(x0_lo <= x0_hi)) fail(ErrorCode::OutOfRange, "region interval is empty");
    if (!m.in_range(x0_lo) || !m.in_range(x0_hi))
      fail(ErrorCode::OutOfRange, "region interval not inside the model range");
  }
};

namespace detail {

inline BasePoint random_base_point(BaseKind base, Rng& rng) {
  BasePoint x{};
  x[0] = base == BaseKind::Sphere ? rng.uniform(0.15, kPi - 0.15) : rng.uniform(0.0, 2.0 * kPi);
  if (base != BaseKind::Circle) x[1] = rng.uniform(0.0, 2.0 * kPi);
  return x;
}

/// Deterministic point cloud: `layers` x0 levels (one if degenerate) times base points.
inline std::vector<std::pair<double, BasePoint>> region_points(const AmbientModel& m, const Region& r,
                                                               int layers, int base_count, Rng& rng) {
  std::vector<BasePoint> base = r.base_points;
  if (base.empty())
    for (int i = 0; i < base_count; ++i) base.push_back(random_base_point(m.base, rng));
  std::vector<double> levels;
  if (r.x0_hi == r.x0_lo) {
    levels.push_back(r.x0_lo);
  } else {
    for (int k = 0; k < layers; ++k) levels.push_back(r.x0_lo + (r.x0_hi - r.x0_lo) * k / (layers - 1));
  }
  std::vector<std::pair<double, BasePoint>> pts;
  for (double x0 : levels)
    for (const auto& x : base) pts.emplace_back(x0, x);
  return pts;
}

}  // namespace detail

struct RicciScanReport {
  double min_value = 0.0;
  bool pass = false;
  std::uint64_t seed = kDefaultSeed;
  int samples = 0;
};

/// min over sampled unit timelike vectors of Ric(nu, nu), compared with -Lambda.
inline RicciScanReport ricci_timelike_scan(const AmbientModel& m, const Region& region, double Lambda,
                                           int n_samples, std::uint64_t seed = kDefaultSeed) {
  if (!m.lorentzian()) fail(ErrorCode::WrongSignature, "ricci_timelike_scan needs a Lorentzian model");
  if (n_samples < 1) fail(ErrorCode::BadPrecondition, "n_samples must be >= 1");
  region.validate(m);
  Rng rng(seed);
  RicciScanReport rep;
  rep.seed = seed;
  rep.samples = n_samples;
  rep.min_value = std::numeric_limits<double>::infinity();
  const int N = m.dim(), n = m.n;
  for (int s = 0; s < n_samples; ++s) {
    const double x0 = region.x0_lo == region.x0_hi ? region.x0_lo : rng.uniform(region.x0_lo, region.x0_hi);
    const BasePoint x = region.base_points.empty()
                            ? detail::random_base_point(m.base, rng)
                            : region.base_points[static_cast<std::size_t>(rng.uniform() * region.base_points.size())];
    const AmbientTensors t = tensors_at(m, x0, x);
    // Orthonormal spatial frame from the Cholesky factor of the spatial block.
    Mat gs(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) gs(i, j) = t.g[i + 1][j + 1];
    const Mat Linv = gs.llt().matrixL().solve(Mat::Identity(n, n));
    Vec dir(n);
    double norm = 0.0;
    do {
      for (int i = 0; i < n; ++i) dir(i) = rng.normal();
      norm = dir.norm();
    } while (norm < 1e-12);
    dir /= norm;
    const double beta = rng.uniform(0.0, 2.0);
    const Vec spatial = Linv.transpose() * dir;  // unit vector for g_s
    AVec nu = AVec::Zero(N);
    nu(0) = std::cosh(beta) / std::sqrt(-t.g[0][0]);
    for (int i = 0; i < n; ++i) nu(i + 1) = std::sinh(beta) * spatial(i);
    double val = 0.0;
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b) val += t.Ric[a][b] * nu(a) * nu(b);
    rep.min_value = std::min(rep.min_value, val);
  }
  rep.pass = rep.min_value >= -Lambda - 1e-10;
  return rep;
}

struct ConvexityReport {
  bool success = false;
  double lambda = 0.0;
  double margin = 0.0;  // min generalized eigenvalue of chi_ab e^{-lambda x0} against g_hat
  std::vector<std::pair<double, double>> ladder;  // (lambda, margin)
  std::uint64_t seed = kDefaultSeed;
};

/// Minimum over region points of the smallest eigenvalue of e^{-l x0} chi_ab relative to g_hat.
inline double convexity_margin(const AmbientModel& m, const std::vector<std::pair<double, BasePoint>>& pts,
                               double lambda) {
  const int N = m.dim();
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& [x0, x] : pts) {
    const AmbientTensors t = tensors_at(m, x0, x, TensorLevel::Connection);
    AMat chi(N, N), ghat(N, N);
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b) {
        // Hessian of the coordinate function x0 is -Gamma^0_ab.
        chi(a, b) = lambda * lambda * (a == 0 && b == 0 ? 1.0 : 0.0) - lambda * t.Gamma[0][a][b];
        ghat(a, b) = (a == 0 && b == 0) ? t.g[0][0] * m.signature : t.g[a][b];
      }
    Eigen::GeneralizedSelfAdjointEigenSolver<AMat> es(chi, ghat, Eigen::EigenvaluesOnly);
    worst = std::min(worst, es.eigenvalues()(0));
  }
  return worst;
}

inline ConvexityReport convexity_certificate(const AmbientModel& m, const Region& region,
                                             double lambda_max = 65536.0,
                                             std::uint64_t seed = kDefaultSeed) {
  region.validate(m);
  Rng rng(seed);
  const auto pts = detail::region_points(m, region, 10, 100, rng);
  ConvexityReport rep;
  rep.seed = seed;
  rep.margin = -std::numeric_limits<double>::infinity();
  for (double lam = 1.0; lam <= lambda_max; lam *= 2.0) {
    const double c = convexity_margin(m, pts, lam);
    rep.ladder.emplace_back(lam, c);
    if (c > 1e-12 * lam * lam) {
      rep.success = true;
      rep.lambda = lam;
      rep.margin = c;
      return rep;
    }
    if (c > rep.margin) {
      rep.margin = c;
      rep.lambda = lam;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Coordinate slices

/// Slice data at (x0, x): h_ij = -e^psi Gamma^0_ij, g_ij, and e^psi H.
struct SliceData {
  Mat g, h;
  double H = 0.0;
  double epsiH = 0.0;
  double logdet = 0.0;
};

inline SliceData coordinate_slice(const AmbientModel& m, double x0, const BasePoint& x) {
  const AmbientTensors t = tensors_at(m, x0, x, TensorLevel::Connection);
  const int n = m.n;
  SliceData s;
  s.g.resize(n, n);
  s.h.resize(n, n);
  const double ep = std::exp(t.psi.v);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      s.g(i, j) = t.g[i + 1][j + 1];
      s.h(i, j) = -ep * t.Gamma[0][i + 1][j + 1];
    }
  s.H = (s.g.inverse() * s.h).trace();
  s.epsiH = ep * s.H;
  s.logdet = std::log(s.g.determinant());
  return s;
}

struct DecayReport {
  double identity_residual = 0.0;  // max relative error of the log-det identity
  double phi_integral = 0.0;        // integral of phi over the interval
  std::optional<bool> diverges;     // closed-form divergence flag when shipped
  std::vector<double> tau;
  std::vector<double> phi;
  std::vector<double> rescaled_time;  // int_{tau_0}^{tau} phi
  double rescaled_min_ratio = 0.0;    // min of e^psi H / phi (>= 1 by construction)
  std::optional<double> rescaled_closed_form_error;
};

/// Checks d/dx0 log det g = -2 e^psi H along coordinate slices and builds phi(tau) = min_x e^psi H.
inline DecayReport slice_decay_check(const AmbientModel& m, double x0_lo, double x0_hi, int n_tau_samples,
                                     std::vector<BasePoint> base_points = {}, std::uint64_t seed = kDefaultSeed) {
  if (!m.lorentzian()) fail(ErrorCode::WrongSignature, "slice_decay_check needs a Lorentzian model");
  if (!(x0_lo < x0_hi) || !m.in_range(x0_lo) || !m.in_range(x0_hi))
    fail(ErrorCode::OutOfRange, "decay interval not inside the model range");
  if (n_tau_samples < 2) fail(ErrorCode::BadPrecondition, "need at least two tau samples");
  if (base_points.empty()) {
    Rng rng(seed);
    for (int i = 0; i < 16; ++i) base_points.push_back(detail::random_base_point(m.base, rng));
  }
  auto phi_of = [&](double s) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& x : base_points) {
      const SliceData sd = coordinate_slice(m, s, x);
      if (!(sd.H > 1e-14))
        fail(ErrorCode::NonPositiveSliceH, "slice mean curvature " + std::to_string(sd.H) + " at x0 = " +
                                               std::to_string(s));
      best = std::min(best, sd.epsiH);
    }
    return best;
  };
  using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
  DecayReport rep;
  // integrals accumulate interval by interval
  std::vector<double> rhs(base_points.size(), 0.0);
  double prev = x0_lo;
  for (int k = 0; k < n_tau_samples; ++k) {
    const double tau = x0_lo + (x0_hi - x0_lo) * k / (n_tau_samples - 1);
    rep.tau.push_back(tau);
    rep.phi.push_back(phi_of(tau));
    for (std::size_t b = 0; b < base_points.size() && k > 0; ++b) {
      const BasePoint& x = base_points[b];
      const double lhs = coordinate_slice(m, x0_lo, x).logdet - coordinate_slice(m, tau, x).logdet;
      rhs[b] += GK::integrate([&](double s) { return 2.0 * coordinate_slice(m, s, x).epsiH; }, prev, tau, 10, 1e-12);
      rep.identity_residual = std::max(rep.identity_residual, std::abs(lhs - rhs[b]) / std::max(1.0, std::abs(lhs)));
    }
    rep.rescaled_time.push_back(k == 0 ? 0.0 : rep.rescaled_time.back() + GK::integrate(phi_of, prev, tau, 10, 1e-12));
    prev = tau;
    double ratio = std::numeric_limits<double>::infinity();
    for (const auto& x : base_points) ratio = std::min(ratio, coordinate_slice(m, tau, x).epsiH / rep.phi.back());
    rep.rescaled_min_ratio = k == 0 ? ratio : std::min(rep.rescaled_min_ratio, ratio);
  }
  rep.phi_integral = rep.rescaled_time.back();
  if (m.strong_decay_closed_form) {
    rep.diverges = true;
    if (m.model_id == "flrw-collapse") {
      const double T = m.param("T");
      double err = 0.0;
      for (std::size_t k = 0; k < rep.tau.size(); ++k) {
        const double exact = m.n * std::log((T - x0_lo) / (T - rep.tau[k]));
        err = std::max(err, std::abs(rep.rescaled_time[k] - exact));
      }
      rep.rescaled_closed_form_error = err;
    }
  }
  return rep;
}

}  // namespace cflow
