/*
  Scalar graph flow du/dt = -e^{-psi} v (Phi(F) - Phi(f)) on a fixed grid,
  explicit Heun stepping, stationary detection, IMCF and barrier tests.
*/

#pragma once

#include "cflow/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace cflow {

// ---------------------------------------------------------------------------
// Prescribed curvature

struct PrescribedCurvature {
  std::string name = "constant";
  std::map<std::string, double> params;
  /// f and its ambient partial derivatives at (x0, x).
  std::function<ScalarJet(double, const BasePoint&)> f;
  /// Optional normal dependence f(x0, x, nu); replaces f in stepping when set.
  std::function<double(double, const BasePoint&, const AVec&)> f_nu;
  /// f = +infinity, so that Phi(f) = 0 for Phi = -1/r (inverse mean curvature flow).
  bool at_infinity = false;
};

inline PrescribedCurvature constant_f(double c) {
  PrescribedCurvature p;
  p.name = "constant";
  p.params["value"] = c;
  p.f = [c](double, const BasePoint&) {
    ScalarJet j;
    j.v = c;
    return j;
  };
  return p;
}

/// f = c (x0)^{-p}.
inline PrescribedCurvature radial_power_f(double c, double power) {
  PrescribedCurvature p;
  p.name = "radial-power";
  p.params["c"] = c;
  p.params["p"] = power;
  p.f = [c, power](double x0, const BasePoint&) {
    if (!(x0 > 0.0)) fail(ErrorCode::OutOfRange, "radial-power f needs x0 > 0");
    ScalarJet j;
    j.v = c * std::pow(x0, -power);
    j.d[0] = -power * j.v / x0;
    j.dd[0][0] = power * (power + 1.0) * j.v / (x0 * x0);
    return j;
  };
  return p;
}

/// f = a + b x0.
inline PrescribedCurvature linear_x0_f(double a, double b) {
  PrescribedCurvature p;
  p.name = "linear-x0";
  p.params["a"] = a;
  p.params["b"] = b;
  p.f = [a, b](double x0, const BasePoint&) {
    ScalarJet j;
    j.v = a + b * x0;
    j.d[0] = b;
    return j;
  };
  return p;
}

inline PrescribedCurvature imcf_f() {
  PrescribedCurvature p;
  p.name = "infinity";
  p.at_infinity = true;
  p.f = [](double, const BasePoint&) { return ScalarJet{}; };
  return p;
}

/// Phi(f) with ambient derivatives: ft_a = Phi' f_a, ft_ab = Phi' f_ab + Phi'' f_a f_b.
inline ScalarJet ftilde_jet(const PrescribedCurvature& f, const DeformSpec& phi, double x0, const BasePoint& x) {
  if (f.at_infinity) {
    if (phi.kind != PhiKind::NegInverse) fail(ErrorCode::BadPrecondition, "f = infinity needs Phi = -1/r");
    return ScalarJet{};
  }
  const ScalarJet j = f.f(x0, x);
  const PhiValue p = phi_eval(phi, j.v);
  ScalarJet t;
  t.v = p.phi;
  for (int a = 0; a < kMaxAmbient; ++a) {
    t.d[a] = p.dphi * j.d[a];
    for (int b = 0; b < kMaxAmbient; ++b) t.dd[a][b] = p.dphi * j.dd[a][b] + p.ddphi * j.d[a] * j.d[b];
  }
  return t;
}

// ---------------------------------------------------------------------------
// Problem, configuration, trace

struct FlowProblem {
  AmbientModel model;
  BaseGrid grid;
  Composite G;
  PrescribedCurvature f;
};

struct FlowConfig {
  double cfl = 0.25;
  double tol_stationary = 1e-8;
  long max_steps = 200000;
  double dt_min = 1e-12;
  double dt_max = 1e-3;
  std::optional<double> t_end;
  int output_every = 1;
  bool monitors = true;
  double H_floor = 1e-6;
  std::uint64_t seed = kDefaultSeed;
  int burn_in = 10;

  void validate() const {
    if (!(cfl > 0.0 && cfl <= 0.5)) fail(ErrorCode::ConfigError, "cfl must lie in (0, 0.5]");
    if (!(tol_stationary > 0.0) || !(dt_min > 0.0) || !(dt_max >= dt_min) || !(H_floor > 0.0))
      fail(ErrorCode::ConfigError, "tolerances and step bounds must be positive with dt_min <= dt_max");
    if (max_steps < 1 || output_every < 1) fail(ErrorCode::ConfigError, "max_steps and output_every must be >= 1");
    if (t_end && !(*t_end > 0.0)) fail(ErrorCode::ConfigError, "t_end must be positive");
  }
};

struct TraceRow {
  double t, dt, sup_residual, min_residual, kappa_min, kappa_max, vtilde_max, volume, cone_margin;
};

struct FlowTrace {
  std::vector<TraceRow> rows;
  static constexpr const char* kColumns[] = {"t",         "dt",        "sup_residual", "min_residual", "kappa_min",
                                            "kappa_max", "vtilde_max", "volume",       "cone_margin"};
};

enum class Verdict { Converged, MaxSteps, TimeLimit };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Converged: return "Converged";
    case Verdict::MaxSteps: return "MaxSteps";
    case Verdict::TimeLimit: return "TimeLimit";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Velocity

/// Geometry plus V = Phi(F) - Phi(f), du/dt and the principal diffusion bound at one state.
struct FlowEval {
  GraphGeometry geo;
  Field V;
  Field udot;
  Field F;  // F(kappa), before Phi
  Field f;  // f, before Phi (NaN at infinity)
  double lambda_max = 0.0;
};

/// F^{ij} of the composite Phi(F) at a node: Phi' F^{ij}.
inline Mat G_upper(const Composite& c, const NodeGeometry& ng) {
  if (c.F.kind == FKind::H) return phi_eval(c.phi, ng.H).dphi * ng.ginv;
  const EigenFrame fr = eigenframe(ng.g, ng.h);
  return upper_tensor(fr, G_eval(c, fr.kappa).grad);
}

inline double prescribed_value(const PrescribedCurvature& f, const NodeGeometry& ng, const BasePoint& x) {
  if (f.f_nu) return f.f_nu(ng.u, x, ng.nu);
  return f.f(ng.u, x).v;
}

/// Evaluates the flow velocity; errors keep their geometry/cone codes.
inline FlowEval flow_eval(const FlowProblem& p, const Field& u) {
  FlowEval e;
  e.geo = graph_geometry(p.model, p.grid, u);
  const Eigen::Index N = u.size();
  e.V.resize(N);
  e.udot.resize(N);
  e.F.resize(N);
  e.f.resize(N);
  const int axes = p.grid.active_axes();
  std::vector<double> lam(static_cast<std::size_t>(N));
  std::vector<int> bad(static_cast<std::size_t>(N), 0);
  parallel_for(static_cast<std::size_t>(N), [&](std::size_t s) {
    const auto k = static_cast<Eigen::Index>(s);
    const NodeGeometry& ng = e.geo.nodes[s];
    if (!admissible(ng.kappa, p.G.F.cone)) {
      bad[s] = 1;
      return;
    }
    const FValue fv = F_eval(p.G.F, ng.kappa);
    const PhiValue ph = phi_eval(p.G.phi, fv.F);
    double ft;
    if (p.f.at_infinity) {
      ft = ftilde_jet(p.f, p.G.phi, ng.u, BasePoint{}).v;
      e.f(k) = std::numeric_limits<double>::quiet_NaN();
    } else {
      const double fval = prescribed_value(p.f, ng, p.grid.coord(k));
      e.f(k) = fval;
      ft = phi_eval(p.G.phi, fval).phi;
    }
    e.F(k) = fv.F;
    e.V(k) = ph.phi - ft;
    const double scale = std::exp(-ng.psi) * ng.v;
    e.udot(k) = -scale * e.V(k);
    const Mat D = scale * G_upper(p.G, ng);
    lam[s] = axes == 1 ? D(0, 0) : Eigen::SelfAdjointEigenSolver<Mat>(D.topLeftCorner(axes, axes)).eigenvalues().maxCoeff();
  });
  for (Eigen::Index k = 0; k < N; ++k)
    if (bad[static_cast<std::size_t>(k)])
      fail(ErrorCode::LostAdmissibility, "node " + std::to_string(k) + " left " + to_string(p.G.F.cone));
  e.lambda_max = *std::max_element(lam.begin(), lam.end());
  return e;
}

/// Explicit parabolic step bound cfl h^2 / (lambda_max * active axes * rho), rho = 4/3 for order 4.
inline double stable_dt(const BaseGrid& g, double lambda_max, const FlowConfig& cfg) {
  const double rho = g.order == 4 ? 4.0 / 3.0 : 1.0;
  const double h = g.h_min();
  double dt = cfg.dt_max;
  if (lambda_max > 0.0) dt = std::min(dt, cfg.cfl * h * h / (lambda_max * g.active_axes() * rho));
  return dt;
}

struct StepResult {
  Field u;
  double dt = 0.0;
  int halvings = 0;
  FlowEval next;  // evaluation at u
};

/// One Heun step from a pre-evaluated state. Stage failures and cone-margin jumps halve dt.
inline StepResult heun_step(const FlowProblem& p, const Field& u, const FlowEval& e0, const FlowConfig& cfg,
                            double dt_cap = std::numeric_limits<double>::infinity()) {
  double dt = std::min(stable_dt(p.grid, e0.lambda_max, cfg), dt_cap);
  const bool guard = p.G.F.cone != Cone::All;
  const double margin0 = guard ? e0.geo.cone_margin(p.G.F.cone) : 0.0;
  const double kmin0 = e0.geo.kappa_min();
  StepResult r;
  for (;;) {
    if (dt < cfg.dt_min && r.halvings > 0) fail(ErrorCode::StepUnderflow, "dt = " + std::to_string(dt) + " below dt_min");
    try {
      const Field u1 = u + dt * e0.udot;
      const FlowEval e1 = flow_eval(p, u1);
      Field un = u + 0.5 * dt * (e0.udot + e1.udot);
      FlowEval en = flow_eval(p, un);
      if (guard && std::abs(en.geo.kappa_min() - kmin0) > 0.1 * margin0) {
        dt *= 0.5;
        ++r.halvings;
        continue;
      }
      r.u = std::move(un);
      r.dt = dt;
      r.next = std::move(en);
      return r;
    } catch (const Error& err) {
      const bool recoverable = err.code() == ErrorCode::LostAdmissibility || err.code() == ErrorCode::NotSpacelike ||
                               err.code() == ErrorCode::OutOfRange || err.code() == ErrorCode::NonPositiveArgument;
      if (!recoverable) throw;
      if (0.5 * dt < cfg.dt_min) {
        if (err.code() == ErrorCode::NotSpacelike) fail(ErrorCode::LostSpacelike, err.what());
        if (err.code() == ErrorCode::NonPositiveArgument) fail(ErrorCode::LostAdmissibility, err.what());
        throw;
      }
      dt *= 0.5;
      ++r.halvings;
    }
  }
}

inline FlowEval initial_eval(const FlowProblem& p, const Field& u) {
  try {
    return flow_eval(p, u);
  } catch (const Error& err) {
    if (err.code() == ErrorCode::LostAdmissibility) fail(ErrorCode::OutsideCone, err.what());
    throw;
  }
}

/// Single step (pre: admissible state); returns the new field and dt used.
inline StepResult step(const FlowProblem& p, const Field& u, const FlowConfig& cfg) {
  cfg.validate();
  return heun_step(p, u, initial_eval(p, u), cfg);
}

inline TraceRow trace_row(double t, double dt, const FlowEval& e, Cone cone) {
  TraceRow r;
  r.t = t;
  r.dt = dt;
  r.sup_residual = e.V.cwiseAbs().maxCoeff();
  r.min_residual = e.V.minCoeff();
  r.kappa_min = e.geo.kappa_min();
  r.kappa_max = e.geo.kappa_max();
  r.vtilde_max = e.geo.gradient_monitor();
  r.volume = e.geo.volume();
  r.cone_margin = e.geo.cone_margin(cone);
  return r;
}

struct FlowMonitors {
  bool upper_start = false;       // min(Phi - f~) >= 0 at t = 0
  double sign_min = 0.0;          // min over time of min(Phi - f~)
  bool sign_ok = true;            // upper start: sign_min >= -1e-8
  int direction = 0;              // -1 decreasing, +1 increasing, 0 undetermined
  double monotone_violation = 0;  // worst move against the direction
  bool monotone_ok = true;
  double gradient_running_max = 0;
  bool gradient_ok = true;
};

struct RunResult {
  Field u;
  double t = 0.0;
  long steps = 0;
  Verdict verdict = Verdict::MaxSteps;
  FlowTrace trace;
  FlowMonitors monitors;
  double final_sup_residual = 0.0;
};

/// Iterates until sup|V| < tol (Converged), t_end (TimeLimit) or max_steps.
inline RunResult run(const FlowProblem& p, const Field& u0, const FlowConfig& cfg) {
  cfg.validate();
  RunResult R;
  R.u = u0;
  FlowEval e = initial_eval(p, u0);
  FlowMonitors& mon = R.monitors;
  mon.upper_start = e.V.minCoeff() >= 0.0;
  mon.sign_min = e.V.minCoeff();
  if (e.V.minCoeff() >= 0.0 && e.V.maxCoeff() > 0.0) mon.direction = -1;
  if (e.V.maxCoeff() <= 0.0 && e.V.minCoeff() < 0.0) mon.direction = 1;
  mon.gradient_running_max = e.geo.gradient_monitor();
  R.trace.rows.push_back(trace_row(0.0, 0.0, e, p.G.F.cone));
  for (;;) {
    const double sup = e.V.cwiseAbs().maxCoeff();
    R.final_sup_residual = sup;
    if (sup < cfg.tol_stationary) {
      R.verdict = Verdict::Converged;
      break;
    }
    if (cfg.t_end && R.t >= *cfg.t_end - cfg.dt_min) {
      R.verdict = Verdict::TimeLimit;
      break;
    }
    if (R.steps >= cfg.max_steps) {
      R.verdict = Verdict::MaxSteps;
      break;
    }
    const double cap = cfg.t_end ? *cfg.t_end - R.t : std::numeric_limits<double>::infinity();
    StepResult s = heun_step(p, R.u, e, cfg, cap);
    if (cfg.monitors && mon.direction != 0) {
      const double worst = (mon.direction * (s.u - R.u)).minCoeff();
      if (worst < 0.0) mon.monotone_violation = std::max(mon.monotone_violation, -worst);
    }
    R.u = std::move(s.u);
    R.t += s.dt;
    ++R.steps;
    e = std::move(s.next);
    if (cfg.monitors) {
      mon.sign_min = std::min(mon.sign_min, e.V.minCoeff());
      const double gm = e.geo.gradient_monitor();
      if (R.steps > cfg.burn_in && gm > 2.0 * mon.gradient_running_max) mon.gradient_ok = false;
      mon.gradient_running_max = std::max(mon.gradient_running_max, gm);
    }
    if (R.steps % cfg.output_every == 0) R.trace.rows.push_back(trace_row(R.t, s.dt, e, p.G.F.cone));
  }
  if (R.trace.rows.back().t != R.t) R.trace.rows.push_back(trace_row(R.t, 0.0, e, p.G.F.cone));
  mon.sign_ok = !mon.upper_start || mon.sign_min >= -1e-8;
  mon.monotone_ok = mon.monotone_violation <= 1e-10;
  return R;
}

// ---------------------------------------------------------------------------
// Inverse mean curvature flow

struct VolumeLawRow {
  double t, volume, law_error, tau, ratio, law;
};

struct VolumeLawReport {
  std::vector<VolumeLawRow> rows;
  double max_law_error = 0.0;  // max | |M(t)| e^t / |M0| - 1 |
  double max_tau_deviation = 0.0;  // max | |M(tau)|/|M0| - (1 - tau)^n |
  double volume0 = 0.0;
};

struct ImcfResult {
  RunResult run;
  VolumeLawReport law;
};

inline FlowProblem imcf_problem(const AmbientModel& m, const BaseGrid& grid) {
  return FlowProblem{m, grid, Composite{make_spec(FKind::H, m.n), DeformSpec{PhiKind::NegInverse, 1.0}}, imcf_f()};
}

/// du/dt = e^{-psi} v / H until t_end (default 2).
inline ImcfResult imcf_run(const AmbientModel& m, const BaseGrid& grid, const Field& u0, FlowConfig cfg) {
  if (!m.lorentzian()) fail(ErrorCode::WrongSignature, "IMCF needs a Lorentzian model");
  if (!cfg.t_end) cfg.t_end = 2.0;
  cfg.tol_stationary = std::numeric_limits<double>::min();
  const FlowProblem p = imcf_problem(m, grid);
  auto check_floor = [&](const FlowEval& ev, double t) {
    const double hmin = ev.geo.H().minCoeff();
    if (!(hmin > cfg.H_floor))
      fail(ErrorCode::MeanCurvatureFloor, "min H = " + std::to_string(hmin) + " at t = " + std::to_string(t));
  };
  ImcfResult out;
  RunResult& R = out.run;
  R.u = u0;
  const GraphGeometry g0 = graph_geometry(m, grid, u0);
  if (!(g0.H().minCoeff() > cfg.H_floor))
    fail(ErrorCode::MeanCurvatureFloor, "min H = " + std::to_string(g0.H().minCoeff()) + " at t = 0");
  FlowEval e = flow_eval(p, u0);
  R.trace.rows.push_back(trace_row(0.0, 0.0, e, Cone::All));
  while (R.t < *cfg.t_end - cfg.dt_min) {
    if (R.steps >= cfg.max_steps) {
      R.verdict = Verdict::MaxSteps;
      break;
    }
    StepResult s = heun_step(p, R.u, e, cfg, *cfg.t_end - R.t);
    R.u = std::move(s.u);
    R.t += s.dt;
    ++R.steps;
    e = std::move(s.next);
    check_floor(e, R.t);
    if (R.steps % cfg.output_every == 0) R.trace.rows.push_back(trace_row(R.t, s.dt, e, Cone::All));
  }
  if (R.trace.rows.back().t != R.t) R.trace.rows.push_back(trace_row(R.t, 0.0, e, Cone::All));
  if (R.t >= *cfg.t_end - cfg.dt_min) R.verdict = Verdict::TimeLimit;
  R.final_sup_residual = e.V.cwiseAbs().maxCoeff();

  VolumeLawReport& L = out.law;
  L.volume0 = R.trace.rows.front().volume;
  const int n = m.n;
  for (const auto& row : R.trace.rows) {
    VolumeLawRow v;
    v.t = row.t;
    v.volume = row.volume;
    v.law_error = std::abs(row.volume * std::exp(row.t) / L.volume0 - 1.0);
    v.tau = 1.0 - std::exp(-row.t / n);
    v.ratio = row.volume / L.volume0;
    v.law = std::pow(1.0 - v.tau, n);
    L.max_law_error = std::max(L.max_law_error, v.law_error);
    L.max_tau_deviation = std::max(L.max_tau_deviation, std::abs(v.ratio - v.law));
    L.rows.push_back(v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Barriers and volume

enum class BarrierKind { Upper, Lower, Stationary, Neither };

inline const char* to_string(BarrierKind b) {
  switch (b) {
    case BarrierKind::Upper: return "upper";
    case BarrierKind::Lower: return "lower";
    case BarrierKind::Stationary: return "stationary";
    case BarrierKind::Neither: return "neither";
  }
  return "?";
}

struct BarrierReport {
  BarrierKind kind = BarrierKind::Neither;
  double margin = 0.0;     // min(F - f) for upper, min(f - F) over the admissible set for lower
  double max_abs = 0.0;    // max |F - f| over admissible nodes
  int admissible_nodes = 0;
};

/// Pointwise comparison of F and f; the lower test only looks at admissible nodes.
inline BarrierReport barrier_classify(const AmbientModel& m, const BaseGrid& grid, const Field& u, const CurvatureSpec& spec,
                                      const PrescribedCurvature& f) {
  const GraphGeometry G = graph_geometry(m, grid, u);
  BarrierReport r;
  double min_up = std::numeric_limits<double>::infinity();
  double min_lo = std::numeric_limits<double>::infinity();
  bool all_adm = true;
  for (Eigen::Index k = 0; k < G.size(); ++k) {
    const NodeGeometry& ng = G.nodes[k];
    if (!admissible(ng.kappa, spec.cone)) {
      all_adm = false;
      continue;
    }
    ++r.admissible_nodes;
    const double d = F_eval(spec, ng.kappa).F - prescribed_value(f, ng, grid.coord(k));
    min_up = std::min(min_up, d);
    min_lo = std::min(min_lo, -d);
    r.max_abs = std::max(r.max_abs, std::abs(d));
  }
  if (all_adm && r.max_abs < 1e-10) {
    r.kind = BarrierKind::Stationary;
    r.margin = 0.0;
  } else if (all_adm && min_up >= -1e-12) {
    r.kind = BarrierKind::Upper;
    r.margin = min_up;
  } else if (min_lo >= -1e-12) {
    r.kind = BarrierKind::Lower;
    r.margin = r.admissible_nodes > 0 ? min_lo : 0.0;
  }
  return r;
}

inline double volume(const AmbientModel& m, const BaseGrid& grid, const Field& u) {
  return graph_geometry(m, grid, u).volume();
}

}  // namespace cflow
