/*
  Curvature functions of the principal curvatures, their cones, and the
  deformations Phi applied on top of them.
*/

#pragma once

#include "cflow/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

namespace cflow {

enum class FKind { H, K, H2 };
enum class Cone { All, GammaPlus, Gamma2 };
enum class PhiKind { Identity, Log, Power, NegInverse };

inline const char* to_string(FKind k) {
  switch (k) {
    case FKind::H: return "H";
    case FKind::K: return "K";
    case FKind::H2: return "H2";
  }
  return "?";
}

inline const char* to_string(Cone c) {
  switch (c) {
    case Cone::All: return "all";
    case Cone::GammaPlus: return "gamma_plus";
    case Cone::Gamma2: return "gamma_2";
  }
  return "?";
}

struct CurvatureSpec {
  FKind kind = FKind::H;
  Cone cone = Cone::All;
  int n = 1;
  int degree() const { return kind == FKind::H ? 1 : (kind == FKind::K ? n : 2); }
};

inline CurvatureSpec make_spec(FKind kind, int n) {
  CurvatureSpec s;
  s.kind = kind;
  s.n = n;
  s.cone = kind == FKind::H ? Cone::All : (kind == FKind::K ? Cone::GammaPlus : Cone::Gamma2);
  return s;
}

inline FKind parse_F(const std::string& s) {
  if (s == "H") return FKind::H;
  if (s == "K") return FKind::K;
  if (s == "H2") return FKind::H2;
  fail(ErrorCode::ConfigError, "unknown curvature function '" + s + "' (expected H, K or H2)");
}

struct DeformSpec {
  PhiKind kind = PhiKind::Identity;
  double k = 1.0;  // Power: r^{1/k}
};

inline DeformSpec parse_phi(const std::string& s) {
  if (s == "id") return {PhiKind::Identity, 1.0};
  if (s == "log") return {PhiKind::Log, 1.0};
  if (s == "sqrt") return {PhiKind::Power, 2.0};
  if (s == "neginv") return {PhiKind::NegInverse, 1.0};
  if (s.rfind("pow:1/", 0) == 0) {
    const std::string tail = s.substr(6);
    std::size_t used = 0;
    double k = 0.0;
    try {
      k = std::stod(tail, &used);
    } catch (...) {
      used = 0;
    }
    if (used != tail.size() || !(k >= 1.0)) fail(ErrorCode::ConfigError, "bad deformation '" + s + "' (need pow:1/k, k >= 1)");
    return {PhiKind::Power, k};
  }
  fail(ErrorCode::ConfigError, "unknown deformation '" + s + "' (expected id, log, sqrt, neginv or pow:1/k)");
}

inline std::string to_string(const DeformSpec& d) {
  switch (d.kind) {
    case PhiKind::Identity: return "id";
    case PhiKind::Log: return "log";
    case PhiKind::NegInverse: return "neginv";
    case PhiKind::Power: {
      if (d.k == 2.0) return "sqrt";
      std::string s = std::to_string(d.k);
      s.erase(s.find_last_not_of('0') + 1);
      if (!s.empty() && s.back() == '.') s.pop_back();
      return "pow:1/" + s;
    }
  }
  return "?";
}

struct PhiValue {
  double phi, dphi, ddphi;
};

/// (Phi, Phi', Phi''). The identity is defined for every real argument.
inline PhiValue phi_eval(const DeformSpec& d, double r) {
  if (d.kind == PhiKind::Identity) return {r, 1.0, 0.0};
  if (!(r > 0.0)) fail(ErrorCode::NonPositiveArgument, "deformation argument " + std::to_string(r) + " <= 0");
  switch (d.kind) {
    case PhiKind::Log: return {std::log(r), 1.0 / r, -1.0 / (r * r)};
    case PhiKind::NegInverse: return {-1.0 / r, 1.0 / (r * r), -2.0 / (r * r * r)};
    case PhiKind::Power: {
      const double a = 1.0 / d.k;
      const double p = std::pow(r, a);
      return {p, a * p / r, a * (a - 1.0) * p / (r * r)};
    }
    default: break;
  }
  return {r, 1.0, 0.0};
}

// ---------------------------------------------------------------------------
// Cones

inline constexpr double kConeTol = 1e-12;

inline double sigma2(const Vec& k) {
  double s = 0.0;
  for (int i = 0; i < k.size(); ++i)
    for (int j = i + 1; j < k.size(); ++j) s += k(i) * k(j);
  return s;
}

/// Distance-like margin to the cone boundary: min kappa (gamma_plus), min(H, H2) (gamma_2).
inline double cone_margin(const Vec& kappa, Cone cone) {
  switch (cone) {
    case Cone::All: return std::numeric_limits<double>::infinity();
    case Cone::GammaPlus: return kappa.minCoeff();
    case Cone::Gamma2: return std::min(kappa.sum(), sigma2(kappa));
  }
  return 0.0;
}

inline bool admissible(const Vec& kappa, Cone cone) { return cone == Cone::All || cone_margin(kappa, cone) > kConeTol; }

// ---------------------------------------------------------------------------
// F, gradient and kappa-Hessian

struct FValue {
  double F = 0.0;
  Vec grad;
};

inline FValue F_eval(const CurvatureSpec& spec, const Vec& kappa) {
  if (!admissible(kappa, spec.cone))
    fail(ErrorCode::OutsideCone, std::string("principal curvatures outside ") + to_string(spec.cone));
  const int n = static_cast<int>(kappa.size());
  FValue out;
  out.grad.resize(n);
  switch (spec.kind) {
    case FKind::H:
      out.F = kappa.sum();
      out.grad.setOnes();
      break;
    case FKind::K:
      out.F = kappa.prod();
      for (int i = 0; i < n; ++i) {
        double p = 1.0;
        for (int j = 0; j < n; ++j)
          if (j != i) p *= kappa(j);
        out.grad(i) = p;
      }
      break;
    case FKind::H2:
      out.F = sigma2(kappa);
      for (int i = 0; i < n; ++i) out.grad(i) = kappa.sum() - kappa(i);
      break;
  }
  return out;
}

inline Mat F_hessian(const CurvatureSpec& spec, const Vec& kappa) {
  const int n = static_cast<int>(kappa.size());
  Mat Hs = Mat::Zero(n, n);
  if (spec.kind == FKind::H) return Hs;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      if (spec.kind == FKind::H2) {
        Hs(i, j) = 1.0;
      } else {
        double p = 1.0;
        for (int l = 0; l < n; ++l)
          if (l != i && l != j) p *= kappa(l);
        Hs(i, j) = p;
      }
    }
  return Hs;
}

/// G = Phi(F(kappa)).
struct Composite {
  CurvatureSpec F;
  DeformSpec phi;

  /// Homogeneity degree when it exists (identity and powers).
  std::optional<double> degree() const {
    if (phi.kind == PhiKind::Identity) return F.degree();
    if (phi.kind == PhiKind::Power) return F.degree() / phi.k;
    return std::nullopt;
  }
  bool degree_one() const {
    const auto d = degree();
    return d && std::abs(*d - 1.0) < 1e-12;
  }
};

struct GValue {
  double G = 0.0;
  Vec grad;
  double F = 0.0;
  PhiValue phi{};
};

inline GValue G_eval(const Composite& c, const Vec& kappa) {
  const FValue f = F_eval(c.F, kappa);
  GValue g;
  g.F = f.F;
  g.phi = phi_eval(c.phi, f.F);
  g.G = g.phi.phi;
  g.grad = g.phi.dphi * f.grad;
  return g;
}

inline Mat G_hessian(const Composite& c, const Vec& kappa) {
  const FValue f = F_eval(c.F, kappa);
  const PhiValue p = phi_eval(c.phi, f.F);
  return p.ddphi * f.grad * f.grad.transpose() + p.dphi * F_hessian(c.F, kappa);
}

// ---------------------------------------------------------------------------
// Tensors in coordinates

/// kappa ascending and a g-orthonormal eigenbasis (columns) of h relative to g.
struct EigenFrame {
  Vec kappa;
  Mat V;  // V^T g V = I, V^T h V = diag(kappa)
};

inline EigenFrame eigenframe(const Mat& g, const Mat& h) {
  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(h, g);
  if (es.info() != Eigen::Success) fail(ErrorCode::DegenerateMetric, "generalized eigenproblem failed");
  return {es.eigenvalues(), es.eigenvectors()};
}

/// F^{ij} = V diag(F_i) V^T for the gradient of any symmetric function.
inline Mat upper_tensor(const EigenFrame& fr, const Vec& grad) {
  return fr.V * grad.asDiagonal() * fr.V.transpose();
}

inline Mat F_ij_tensor(const CurvatureSpec& spec, const Mat& g, const Mat& h) {
  if (spec.kind == FKind::H) {
    if (!(g.llt().info() == Eigen::Success)) fail(ErrorCode::DegenerateMetric, "metric not positive definite");
    return g.inverse();
  }
  const EigenFrame fr = eigenframe(g, h);
  return upper_tensor(fr, F_eval(spec, fr.kappa).grad);
}

/// Limit-aware divided difference (G_a - G_b)/(k_a - k_b) from the gradient and kappa-Hessian.
inline double gradient_quotient(const Vec& kappa, const Vec& grad, const Mat& hess, int a, int b) {
  const double gap = kappa(a) - kappa(b);
  const double scale = std::max(1.0, std::max(std::abs(kappa(a)), std::abs(kappa(b))));
  if (std::abs(gap) > 1e-9 * scale) return (grad(a) - grad(b)) / gap;
  return hess(a, a) - hess(a, b);
}

/// Second derivative of G in h along the lower-index symmetric tensors A and B.
inline double G_second_variation(const Composite& c, const EigenFrame& fr, const Mat& A, const Mat& B) {
  const GValue gv = G_eval(c, fr.kappa);
  const Mat hess = G_hessian(c, fr.kappa);
  const Mat Ah = fr.V.transpose() * A * fr.V;
  const Mat Bh = fr.V.transpose() * B * fr.V;
  const int n = static_cast<int>(fr.kappa.size());
  double s = 0.0;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      s += hess(a, b) * Ah(a, a) * Bh(b, b);
      if (a != b) s += gradient_quotient(fr.kappa, gv.grad, hess, a, b) * Ah(a, b) * Bh(a, b);
    }
  return s;
}

// ---------------------------------------------------------------------------
// Concavity inequality

struct GapResult {
  double lhs = 0.0, rhs = 0.0;
  bool pass = false;
};

/// Both sides of sum_{i != j} (G_i - G_j)/(k_i - k_j) eta_ij^2 <= 2/(k_n - k_1) sum_i (G_n - G_i) eta_ni^2
/// in an orthonormal frame. Near-repeated pairs use a central difference of the gradient gap.
inline GapResult concavity_gap(const Composite& c, const Vec& kappa, const Mat& eta) {
  if (!c.degree_one()) fail(ErrorCode::BadPrecondition, "concavity_gap needs a degree-one composite");
  const int n = static_cast<int>(kappa.size());
  const double spread = kappa(n - 1) - kappa(0);
  if (spread < 1e-12) fail(ErrorCode::DegenerateSpread, "kappa_n - kappa_1 < 1e-12");
  const Vec grad = G_eval(c, kappa).grad;
  GapResult r;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double gap = kappa(i) - kappa(j);
      const double scale = std::max(1.0, std::max(std::abs(kappa(i)), std::abs(kappa(j))));
      double q;
      if (std::abs(gap) > 1e-9 * scale) {
        q = (grad(i) - grad(j)) / gap;
      } else {
        const double s = 1e-6 * std::max(std::abs(kappa(i)), 1e-300);
        Vec kp = kappa, km = kappa;
        kp(i) += s;
        km(i) -= s;
        const Vec gp = G_eval(c, kp).grad, gm = G_eval(c, km).grad;
        q = ((gp(i) - gp(j)) - (gm(i) - gm(j))) / (2.0 * s);
      }
      r.lhs += q * eta(i, j) * eta(i, j);
    }
  for (int i = 0; i < n; ++i) r.rhs += (grad(n - 1) - grad(i)) * eta(n - 1, i) * eta(n - 1, i);
  r.rhs *= 2.0 / spread;
  r.pass = r.lhs <= r.rhs + 1e-10;
  return r;
}

}  // namespace cflow
