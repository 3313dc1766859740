/*
  Linearized prescribed-curvature operator, Newton polishing of stationary
  graphs, CMC sweeps with ordering and positivity certificates, and the
  mean-curvature time function.

  L phi = -G^{ij} phi_;ij - sigma {G^{ij} h_i^k h_kj + G^{ij} R(nu, x_i, nu, x_j) + ft_a nu^a} phi
  with G^{ij} = Phi' F^{ij}. A normal variation phi corresponds to the graph
  variation delta u = e^{-psi} v phi.
*/

#pragma once

#include "cflow/flow.hpp"
#include "cflow/krylov.hpp"

#include <boost/math/interpolators/pchip.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace cflow {

struct LinearizedOperator {
  GraphGeometry geo;
  TensorField G;     // G^{ij}
  TensorField flux;  // sqrt(g) G^{ij}
  Field sqrtg;
  std::array<Field, 2> drift;  // nabla_i G^{ij}
  Field c0;                    // sigma {G^{ij} h_i^k h_kj + G^{ij} R(nu, x_i, nu, x_j) + ft_a nu^a}
  Field residual_drift;        // sigma e^{-psi} v^{-1} u^k d_k (Phi(F) - ft); zero at stationary states
  Field graph_scale;           // e^{-psi} v

  Eigen::Index size() const { return sqrtg.size(); }

  /// Coefficient c in L = -G^{ij} D_ij + c.
  Field zero_order() const { return -c0; }

  /// -G^{ij} phi_;ij in divergence form.
  Field principal(const Field& phi) const {
    const BaseGrid& g = geo.grid;
    Field out = -div_flux(g, phi, flux).cwiseQuotient(sqrtg);
    for (int j = 0; j < g.active_axes(); ++j) out += drift[j].cwiseProduct(derivative(g, phi, j));
    return out;
  }

  /// Jacobi operator L phi.
  Field jacobi(const Field& phi) const { return principal(phi) - c0.cwiseProduct(phi); }

  /// Derivative of Phi(F) - ft along the graph variation e^{-psi} v phi.
  Field apply(const Field& phi) const { return jacobi(phi) + residual_drift.cwiseProduct(phi); }

  /// Weights of the d mu inner product.
  Field weight() const {
    const BaseGrid& g = geo.grid;
    return g.h[0] * (g.topology == Topology::Torus2 ? g.h[1] : 1.0) * g.azimuthal_factor() * sqrtg;
  }
};

/// Assembles L at the graph u for the composite G = Phi(F) and prescribed f.
inline LinearizedOperator linearize(const FlowProblem& p, const Field& u) {
  FlowEval e;
  try {
    e = flow_eval(p, u);
  } catch (const Error& err) {
    if (err.code() == ErrorCode::LostAdmissibility) fail(ErrorCode::OutsideCone, err.what());
    throw;
  }
  LinearizedOperator L;
  L.geo = e.geo;
  const GraphGeometry& geo = L.geo;
  const BaseGrid& grid = p.grid;
  const AmbientModel& m = p.model;
  const int n = m.n, N = m.dim(), sigma = m.signature;
  const Eigen::Index S = u.size();
  for (Eigen::Index k = 0; k < S; ++k)
    if (!admissible(geo.nodes[k].kappa, p.G.F.cone))
      fail(ErrorCode::OutsideCone, "node " + std::to_string(k) + " outside " + std::string(to_string(p.G.F.cone)));
  L.G.resize(static_cast<std::size_t>(S));
  L.flux.resize(static_cast<std::size_t>(S));
  L.sqrtg.resize(S);
  L.c0.resize(S);
  L.graph_scale.resize(S);
  parallel_for(static_cast<std::size_t>(S), [&](std::size_t s) {
    const auto k = static_cast<Eigen::Index>(s);
    const NodeGeometry& ng = geo.nodes[s];
    const Mat Gu = G_upper(p.G, ng);
    L.G[s] = Gu;
    L.sqrtg(k) = std::sqrt(ng.g.determinant());
    L.flux[s] = L.sqrtg(k) * Gu;
    L.graph_scale(k) = std::exp(-ng.psi) * ng.v;
    // G^{ij} h_i^k h_kj
    double hh = (Gu * ng.h * ng.ginv * ng.h).trace();
    // G^{ij} R(nu, x_i, nu, x_j)
    const BasePoint x = grid.coord(k);
    const AmbientTensors t = tensors_at(m, ng.u, x, TensorLevel::Curvature);
    double rr = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (Gu(i, j) == 0.0) continue;
        const AVec xi = ng.tangent(i), xj = ng.tangent(j);
        double r = 0.0;
        for (int a = 0; a < N; ++a)
          for (int b = 0; b < N; ++b) {
            if (xi(b) == 0.0) continue;
            for (int c = 0; c < N; ++c)
              for (int d = 0; d < N; ++d) {
                if (xj(d) == 0.0) continue;
                r += t.Riem[a][b][c][d] * ng.nu(a) * xi(b) * ng.nu(c) * xj(d);
              }
          }
        rr += Gu(i, j) * r;
      }
    double fa = 0.0;
    if (!p.f.at_infinity) {
      const ScalarJet ft = ftilde_jet(p.f, p.G.phi, ng.u, x);
      for (int a = 0; a < N; ++a) fa += ft.d[a] * ng.nu(a);
    }
    L.c0(k) = sigma * (hh + rr + fa);
  });
  // nabla_i G^{ij} = (1/sqrt g) d_i (sqrt g G^{ij}) + Gamma^j_ik G^{ik}; zero for G = g^{-1}.
  const bool parallel_G = p.G.F.kind == FKind::H && p.G.phi.kind == PhiKind::Identity;
  for (int j = 0; j < 2; ++j) L.drift[j] = Field::Zero(S);
  if (!parallel_G) {
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < grid.active_axes(); ++i) {
        Field fij(S);
        for (Eigen::Index k = 0; k < S; ++k) fij(k) = L.flux[k](i, j);
        L.drift[j] += derivative(grid, fij, i, grid.parity(1 + (i == 0) + (j == 0))).cwiseQuotient(L.sqrtg);
      }
      for (Eigen::Index k = 0; k < S; ++k) L.drift[j](k) += geo.nodes[k].chr[j].cwiseProduct(L.G[k]).sum();
    }
  }
  // Tangential part of the graph variation: xi^k = sigma e^{-psi} v^{-1} u^k phi.
  L.residual_drift = Field::Zero(S);
  for (int a = 0; a < grid.active_axes(); ++a) {
    const Field dR = derivative(grid, e.V, a);
    for (Eigen::Index k = 0; k < S; ++k) {
      const NodeGeometry& ng = geo.nodes[k];
      const double e2 = std::exp(2.0 * ng.psi);
      const Mat sig = ng.gbar.bottomRightCorner(n, n) / e2;
      const Vec up = sig.llt().solve(ng.du);
      L.residual_drift(k) += sigma * std::exp(-ng.psi) / ng.v * up(a) * dR(k);
    }
  }
  return L;
}

// ---------------------------------------------------------------------------
// Newton

struct NewtonReport {
  Field u;
  int iterations = 0;
  std::vector<double> residuals;  // sup |F - f| before each iteration and at the end
  std::vector<int> krylov_iterations;
  double final_residual = 0.0;
};

struct NewtonOptions {
  double tol = 1e-12;
  int max_iter = 20;
  double entry_tol = 1e-3;
  KrylovOptions krylov;
};

inline double sup_F_minus_f(const FlowEval& e) { return (e.F - e.f).cwiseAbs().maxCoeff(); }

/// Damped Newton on Phi(F) - ft = 0 with the linearized operator as Jacobian.
inline NewtonReport newton_polish(const FlowProblem& p, const Field& u0, const NewtonOptions& opt = {}) {
  if (p.f.at_infinity) fail(ErrorCode::BadPrecondition, "Newton needs a finite prescribed curvature");
  NewtonReport rep;
  rep.u = u0;
  FlowEval e = initial_eval(p, u0);
  double res = sup_F_minus_f(e);
  rep.residuals.push_back(res);
  if (!(res < opt.entry_tol))
    fail(ErrorCode::BadPrecondition, "Newton entered with sup|F - f| = " + std::to_string(res));
  while (res >= opt.tol) {
    if (rep.iterations >= opt.max_iter)
      fail(ErrorCode::NewtonStall, "no convergence in " + std::to_string(opt.max_iter) + " iterations");
    const LinearizedOperator L = linearize(p, rep.u);
    const LinearOperator A(L.size(), [&L](const Eigen::VectorXd& x) { return L.apply(x); });
    KrylovReport kr;
    const Field phi = gmres_solve(A, -e.V, &kr, opt.krylov);
    rep.krylov_iterations.push_back(kr.iterations);
    const Field du = L.graph_scale.cwiseProduct(phi);
    bool accepted = false;
    double alpha = 1.0;
    for (int tries = 0; tries < 3; ++tries, alpha *= 0.5) {
      try {
        Field un = rep.u + alpha * du;
        FlowEval en = flow_eval(p, un);
        const double rn = sup_F_minus_f(en);
        if (rn < res) {
          rep.u = std::move(un);
          e = std::move(en);
          res = rn;
          accepted = true;
          break;
        }
      } catch (const Error& err) {
        if (err.code() != ErrorCode::LostAdmissibility && err.code() != ErrorCode::NotSpacelike &&
            err.code() != ErrorCode::OutOfRange && err.code() != ErrorCode::NonPositiveArgument)
          throw;
      }
    }
    ++rep.iterations;
    if (!accepted)
      fail(ErrorCode::NewtonStall, "residual " + std::to_string(res) + " did not decrease over 3 damped tries");
    rep.residuals.push_back(res);
  }
  rep.final_residual = res;
  return rep;
}

// ---------------------------------------------------------------------------
// Time derivative of a CMC family

struct UdotReport {
  Field w;          // normal speed solving -Delta w + (|A|^2 + Ric(nu, nu)) w = 1
  Field udot;       // graph speed e^{-psi} v w
  double min_w = 0.0;
  double min_udot = 0.0;
  double residual = 0.0;  // sup |L w - 1|
  double min_coefficient = 0.0;
  int krylov_iterations = 0;
};

/// Solves L w = 1 for the Jacobi operator of L; requires a positive zero-order coefficient.
inline UdotReport lapse_solve(const LinearizedOperator& L, const KrylovOptions& kopt = {}) {
  UdotReport r;
  const Field c = L.zero_order();
  r.min_coefficient = c.minCoeff();
  if (!(r.min_coefficient > 0.0)) {
    Eigen::Index at = 0;
    c.minCoeff(&at);
    fail(ErrorCode::IndefiniteCoefficient,
         "|A|^2 + Ric(nu, nu) = " + std::to_string(r.min_coefficient) + " at node " + std::to_string(at));
  }
  const LinearOperator A(L.size(), [&L](const Eigen::VectorXd& x) { return L.jacobi(x); });
  const Field one = Field::Ones(L.size());
  KrylovReport kr;
  r.w = gmres_solve(A, one, &kr, kopt);
  r.krylov_iterations = kr.iterations;
  r.residual = (L.jacobi(r.w) - one).cwiseAbs().maxCoeff();
  r.udot = L.graph_scale.cwiseProduct(r.w);
  r.min_w = r.w.minCoeff();
  r.min_udot = r.udot.minCoeff();
  return r;
}

/// Lapse of the CMC family through the Lorentzian graph u.
inline UdotReport udot_positivity(const AmbientModel& m, const BaseGrid& grid, const Field& u,
                                  const KrylovOptions& kopt = {}) {
  if (!m.lorentzian()) fail(ErrorCode::WrongSignature, "udot positivity needs a Lorentzian model");
  const FlowProblem p{m, grid, Composite{make_spec(FKind::H, m.n), parse_phi("id")}, constant_f(0.0)};
  return lapse_solve(linearize(p, u), kopt);
}

// ---------------------------------------------------------------------------
// CMC sweep

struct Leaf {
  double tau = 0.0;
  Field u;
  double residual = 0.0;  // sup |H - tau|
  long flow_steps = 0;
  int newton_iterations = 0;
  std::optional<UdotReport> udot;
  std::string udot_error;
};

struct FoliationResult {
  std::vector<double> taus;  // ascending
  std::vector<Leaf> leaves;  // same order as taus
  bool ordering_ok = true;
  double ordering_min_gap = std::numeric_limits<double>::infinity();  // min over pairs and nodes of u(tau2) - u(tau1)
  bool positivity_ok = true;
  bool ok() const { return ordering_ok && positivity_ok; }
};

struct SweepOptions {
  FlowConfig flow;
  NewtonOptions newton;
  SweepOptions() { flow.tol_stationary = 1e-6; }
};

/// Leaves H = tau for ascending taus, solved in descending order from u_top with warm starts.
inline FoliationResult cmc_sweep(const AmbientModel& m, const BaseGrid& grid, std::vector<double> taus,
                                 const Field& u_top, const SweepOptions& opt = {}) {
  if (!m.lorentzian()) fail(ErrorCode::WrongSignature, "CMC sweeps need a Lorentzian model");
  if (taus.empty()) fail(ErrorCode::BadPrecondition, "empty tau list");
  const double gate = std::sqrt(m.n * m.Lambda);
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (taus[i] == 0.0) fail(ErrorCode::BadPrecondition, "tau = 0 requested: unsupported");
    if (!(taus[i] > gate))
      fail(ErrorCode::BadPrecondition,
           "tau = " + std::to_string(taus[i]) + " not above sqrt(n Lambda) = " + std::to_string(gate));
    if (i > 0 && !(taus[i] > taus[i - 1])) fail(ErrorCode::BadPrecondition, "tau list must be strictly ascending");
  }
  FoliationResult R;
  R.taus = taus;
  R.leaves.resize(taus.size());
  Field start = u_top;
  for (std::size_t idx = taus.size(); idx-- > 0;) {
    const double tau = taus[idx];
    const FlowProblem p{m, grid, Composite{make_spec(FKind::H, m.n), parse_phi("id")}, constant_f(tau)};
    Leaf& leaf = R.leaves[idx];
    leaf.tau = tau;
    try {
      const RunResult run_r = run(p, start, opt.flow);
      leaf.flow_steps = run_r.steps;
      const NewtonReport nr = newton_polish(p, run_r.u, opt.newton);
      leaf.u = nr.u;
      leaf.residual = nr.final_residual;
      leaf.newton_iterations = nr.iterations;
    } catch (const Error& err) {
      fail(err.code(), "tau = " + std::to_string(tau) + ": " + err.what());
    }
    try {
      leaf.udot = udot_positivity(m, grid, leaf.u, opt.newton.krylov);
      if (!(leaf.udot->min_w > 0.0)) R.positivity_ok = false;
    } catch (const Error& err) {
      if (err.code() != ErrorCode::IndefiniteCoefficient && err.code() != ErrorCode::LinearSolveFail) throw;
      leaf.udot_error = err.what();
      R.positivity_ok = false;
    }
    start = leaf.u;
  }
  for (std::size_t i = 0; i < taus.size(); ++i)
    for (std::size_t j = i + 1; j < taus.size(); ++j) {
      const double gap = (R.leaves[j].u - R.leaves[i].u).minCoeff();
      R.ordering_min_gap = std::min(R.ordering_min_gap, gap);
      if (!(gap > 0.0)) R.ordering_ok = false;
    }
  return R;
}

// ---------------------------------------------------------------------------
// Time function

/// Per-node inverse of tau -> u(tau, x): monotone cubic for >= 4 leaves, linear otherwise.
class TimeFunction {
 public:
  TimeFunction(std::vector<double> taus, std::vector<std::vector<double>> x0_per_node)
      : taus_(std::move(taus)), x0_(std::move(x0_per_node)) {
    if (taus_.size() >= 4) {
      for (const auto& col : x0_) {
        interp_.emplace_back(std::vector<double>(col), std::vector<double>(taus_));
      }
    }
  }

  std::size_t nodes() const { return x0_.size(); }
  const std::vector<double>& taus() const { return taus_; }
  const std::vector<double>& x0(std::size_t node) const { return x0_[node]; }
  double x0_min(std::size_t node) const { return x0_[node].front(); }
  double x0_max(std::size_t node) const { return x0_[node].back(); }

  /// tau at the point (x0, node); x0 must lie in the tabulated range.
  double operator()(std::size_t node, double x0) const {
    const auto& xs = x0_[node];
    if (x0 < xs.front() || x0 > xs.back()) fail(ErrorCode::OutOfRange, "x0 outside the tabulated leaves");
    if (taus_.size() == 1) return taus_.front();
    if (!interp_.empty()) return interp_[node](x0);
    const auto it = std::upper_bound(xs.begin(), xs.end(), x0);
    const std::size_t hi = std::min<std::size_t>(static_cast<std::size_t>(it - xs.begin()), xs.size() - 1);
    const std::size_t lo = hi - 1;
    const double s = (x0 - xs[lo]) / (xs[hi] - xs[lo]);
    return taus_[lo] + s * (taus_[hi] - taus_[lo]);
  }

 private:
  std::vector<double> taus_;
  std::vector<std::vector<double>> x0_;
  std::vector<boost::math::interpolators::pchip<std::vector<double>>> interp_;
};

struct TimeFunctionReport {
  bool monotone = true;
  double min_slope = std::numeric_limits<double>::infinity();  // min over nodes of du/dtau between leaves
  TimeFunction table;
};

inline TimeFunctionReport time_function(const FoliationResult& r) {
  const std::size_t L = r.leaves.size();
  if (L == 0) fail(ErrorCode::BadPrecondition, "empty foliation");
  const auto S = static_cast<std::size_t>(r.leaves.front().u.size());
  double min_slope = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> cols(S, std::vector<double>(L));
  for (std::size_t k = 0; k < S; ++k)
    for (std::size_t l = 0; l < L; ++l) cols[k][l] = r.leaves[l].u(static_cast<Eigen::Index>(k));
  for (std::size_t k = 0; k < S; ++k)
    for (std::size_t l = 1; l < L; ++l) {
      const double slope = (cols[k][l] - cols[k][l - 1]) / (r.taus[l] - r.taus[l - 1]);
      min_slope = std::min(min_slope, slope);
      if (!(slope > 0.0))
        fail(ErrorCode::NonMonotone, "du/dtau = " + std::to_string(slope) + " at node " + std::to_string(k));
    }
  return TimeFunctionReport{true, min_slope, TimeFunction(r.taus, std::move(cols))};
}

}  // namespace cflow
