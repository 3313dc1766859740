/*
  Property batteries for concave curvature functions: the concavity
  inequality with a finite-difference check of the second-variation
  decomposition, ordering of the gradient, and the boundary behaviour of
  K^{1/n} on the positive cone.
*/

#pragma once

#include "cflow/curvfunc.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace cflow {

struct SampleSpec {
  Composite G;
  int count = 10000;
  double spread_floor = 1e-2;  // kappa_n - kappa_1 >= floor
  std::uint64_t seed = kDefaultSeed;
  double kappa_lo = 0.05, kappa_hi = 5.0;  // sampling box; Gamma_2 draws extend below zero
  double margin_floor = 0.05;              // scale-free cone margin, see normalized_margin
  double min_norm = 0.5;                   // |kappa| floor, keeps the finite-difference steps relative

  void validate() const {
    if (!(spread_floor > 0.0)) fail(ErrorCode::ConfigError, "spread floor must be positive");
    if (count < 1 || G.F.n < 1 || G.F.n > kMaxBase) fail(ErrorCode::ConfigError, "bad sample count or dimension");
    if (!(kappa_hi > kappa_lo) || !(kappa_hi > 0.0)) fail(ErrorCode::ConfigError, "bad sampling box");
    if (!(margin_floor >= 0.0)) fail(ErrorCode::ConfigError, "margin floor must be non-negative");
  }
};

struct CurvatureSample {
  Vec kappa;  // ascending
  Mat eta;    // symmetric, orthonormal frame
};

/// Cone margin made invariant under kappa -> c kappa: kappa_1/|kappa| on the positive cone,
/// min(H/|kappa|, sigma_2/|kappa|^2) on Gamma_2, infinite on the whole space.
inline double normalized_margin(const Vec& kappa, Cone cone) {
  const double r = kappa.norm();
  switch (cone) {
    case Cone::All: return std::numeric_limits<double>::infinity();
    case Cone::GammaPlus: return kappa.minCoeff() / r;
    case Cone::Gamma2: return std::min(kappa.sum() / r, sigma2(kappa) / (r * r));
  }
  return 0.0;
}

/// Seeded admissible samples with spread above the floor.
inline std::vector<CurvatureSample> draw_samples(const SampleSpec& s) {
  s.validate();
  Rng rng(s.seed);
  const int n = s.G.F.n;
  const Cone cone = s.G.F.cone;
  const double lo = cone == Cone::Gamma2 ? -s.kappa_hi / 2 : (cone == Cone::All ? -s.kappa_hi : s.kappa_lo);
  std::vector<CurvatureSample> out;
  out.reserve(static_cast<std::size_t>(s.count));
  long tries = 0;
  while (static_cast<int>(out.size()) < s.count) {
    if (++tries > 1000L * s.count) fail(ErrorCode::DegenerateSpread, "sampling box yields too few admissible draws");
    CurvatureSample c;
    c.kappa.resize(n);
    for (int i = 0; i < n; ++i) c.kappa(i) = rng.uniform(lo, s.kappa_hi);
    std::sort(c.kappa.data(), c.kappa.data() + n);
    c.eta.resize(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) c.eta(i, j) = c.eta(j, i) = rng.normal();
    if (n > 1 && c.kappa(n - 1) - c.kappa(0) < s.spread_floor) continue;
    if (c.kappa.norm() < s.min_norm) continue;
    if (!admissible(c.kappa, cone) || normalized_margin(c.kappa, cone) < s.margin_floor) continue;
    out.push_back(std::move(c));
  }
  return out;
}

namespace detail {

inline double G_of_matrix(const Composite& c, const Mat& h) {
  Eigen::SelfAdjointEigenSolver<Mat> es(h, Eigen::EigenvaluesOnly);
  return G_eval(c, es.eigenvalues()).G;
}

// Central second differences of G(kappa), step 1e-4 max(1, |kappa|).
inline Mat fd_hessian(const Composite& c, const Vec& kappa) {
  const int n = static_cast<int>(kappa.size());
  const double s = 1e-4 * std::max(1.0, kappa.cwiseAbs().maxCoeff());
  auto G = [&](const Vec& k) { return G_eval(c, k).G; };
  Mat H(n, n);
  const double g0 = G(kappa);
  for (int i = 0; i < n; ++i) {
    Vec p = kappa, m = kappa;
    p(i) += s;
    m(i) -= s;
    H(i, i) = (G(p) - 2.0 * g0 + G(m)) / (s * s);
    for (int j = i + 1; j < n; ++j) {
      Vec pp = kappa, pm = kappa, mp = kappa, mm = kappa;
      pp(i) += s, pp(j) += s;
      pm(i) += s, pm(j) -= s;
      mp(i) -= s, mp(j) += s;
      mm(i) -= s, mm(j) -= s;
      H(i, j) = H(j, i) = (G(pp) - G(pm) - G(mp) + G(mm)) / (4.0 * s * s);
    }
  }
  return H;
}

// (G_i - G_j)/(k_i - k_j); near-equal pairs by a central difference of step 1e-6 |k_i|.
inline double difference_quotient(const Composite& c, const Vec& kappa, const Vec& grad, int i, int j) {
  const double gap = kappa(i) - kappa(j);
  const double scale = std::max(1.0, std::max(std::abs(kappa(i)), std::abs(kappa(j))));
  if (std::abs(gap) > 1e-9 * scale) return (grad(i) - grad(j)) / gap;
  const double s = 1e-6 * std::max(std::abs(kappa(i)), 1e-300);
  const Vec e = Vec::Unit(kappa.size(), i);
  const Vec kp = kappa + s * e, km = kappa - s * e;
  const Vec gp = G_eval(c, kp).grad, gm = G_eval(c, km).grad;
  return ((gp(i) - gp(j)) - (gm(i) - gm(j))) / (2.0 * s);
}

}  // namespace detail

struct DecompositionCheck {
  double formula = 0.0;  // sum G_ij eta_ii eta_jj + sum_{i != j} quotient eta_ij^2
  double direct = 0.0;   // d^2/ds^2 G(diag(kappa) + s eta) by central differences
};

inline DecompositionCheck decomposition_check(const Composite& c, const Vec& kappa, const Mat& eta) {
  const int n = static_cast<int>(kappa.size());
  const Mat H = detail::fd_hessian(c, kappa);
  const Vec grad = G_eval(c, kappa).grad;
  DecompositionCheck d;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      d.formula += H(i, j) * eta(i, i) * eta(j, j);
      if (i != j) d.formula += detail::difference_quotient(c, kappa, grad, i, j) * eta(i, j) * eta(i, j);
    }
  const double s = 1e-4 * std::max(1.0, kappa.cwiseAbs().maxCoeff());
  const Mat K = kappa.asDiagonal();
  d.direct = (detail::G_of_matrix(c, K + s * eta) - 2.0 * G_eval(c, kappa).G + detail::G_of_matrix(c, K - s * eta)) /
             (s * s);
  return d;
}

struct ConcavityReport {
  int samples = 0;
  int pass_count = 0;
  double worst_gap = -std::numeric_limits<double>::infinity();  // max of lhs - rhs
  double decomposition_residual = 0.0;                          // max |formula - direct| / max(1, |direct|)
  std::uint64_t seed = 0;
  bool ok() const { return pass_count == samples; }
};

inline ConcavityReport run_concavity_battery(const SampleSpec& s) {
  if (!s.G.degree_one()) fail(ErrorCode::BadPrecondition, "concavity battery needs a degree-one composite");
  const auto samples = draw_samples(s);
  const std::size_t N = samples.size();
  std::vector<double> gap(N), dec(N);
  std::vector<char> pass(N);
  parallel_for(N, [&](std::size_t i) {
    const GapResult g = concavity_gap(s.G, samples[i].kappa, samples[i].eta);
    gap[i] = g.lhs - g.rhs;
    pass[i] = g.pass;
    const DecompositionCheck d = decomposition_check(s.G, samples[i].kappa, samples[i].eta);
    dec[i] = std::abs(d.formula - d.direct) / std::max(1.0, std::abs(d.direct));
  });
  ConcavityReport r;
  r.samples = static_cast<int>(N);
  r.seed = s.seed;
  for (std::size_t i = 0; i < N; ++i) {
    r.pass_count += pass[i] ? 1 : 0;
    r.worst_gap = std::max(r.worst_gap, gap[i]);
    r.decomposition_residual = std::max(r.decomposition_residual, dec[i]);
  }
  return r;
}

struct GradientOrderReport {
  int samples = 0;
  int pass_count = 0;
  double worst = -std::numeric_limits<double>::infinity();  // max over samples of G_{i+1} - G_i
  bool ok() const { return pass_count == samples; }
};

/// G_1 >= ... >= G_n for ascending kappa, tolerance 1e-12.
inline GradientOrderReport run_gradient_order_battery(const SampleSpec& s) {
  const auto samples = draw_samples(s);
  GradientOrderReport r;
  r.samples = static_cast<int>(samples.size());
  for (const auto& c : samples) {
    const Vec g = G_eval(s.G, c.kappa).grad;
    double w = -std::numeric_limits<double>::infinity();
    for (int i = 0; i + 1 < s.G.F.n; ++i) w = std::max(w, g(i + 1) - g(i));
    if (s.G.F.n == 1) w = 0.0;
    r.worst = std::max(r.worst, w);
    if (w <= 1e-12) ++r.pass_count;
  }
  return r;
}

struct BoundaryRayReport {
  int rays = 0;
  int pass_count = 0;
  double max_end_value = 0.0;  // largest K^{1/n} at the innermost point
  bool ok() const { return pass_count == rays; }
};

/// K^{1/n} along kappa_1 = t -> 0 with the other curvatures fixed: decreasing and
/// bounded by (t prod_{i>1} kappa_i)^{1/n} at t = 1e-10.
inline BoundaryRayReport boundary_rays(int n, int rays, std::uint64_t seed = kDefaultSeed) {
  if (n < 1 || n > kMaxBase || rays < 1) fail(ErrorCode::ConfigError, "bad ray battery size");
  const Composite G{make_spec(FKind::K, n), DeformSpec{PhiKind::Power, static_cast<double>(n)}};
  Rng rng(seed);
  BoundaryRayReport r;
  r.rays = rays;
  for (int k = 0; k < rays; ++k) {
    Vec kappa(n);
    for (int i = 0; i < n; ++i) kappa(i) = rng.uniform(0.1, 5.0);
    double prev = std::numeric_limits<double>::infinity();
    bool ok = true;
    double end = 0.0;
    for (int e = 0; e <= 10; ++e) {
      const double t = std::pow(10.0, -e);
      Vec kk = kappa;
      kk(0) = t;
      std::sort(kk.data(), kk.data() + n);
      const double v = G_eval(G, kk).G;
      ok = ok && v < prev && v > 0.0;
      prev = v;
      end = v;
    }
    double rest = 1.0;
    for (int i = 1; i < n; ++i) rest *= kappa(i);
    ok = ok && end <= std::pow(1e-10 * rest, 1.0 / n) * (1 + 1e-12);
    r.max_end_value = std::max(r.max_end_value, end);
    if (ok) ++r.pass_count;
  }
  return r;
}

}  // namespace cflow
