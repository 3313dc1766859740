/*
  Evolution identities of the normal flow x' = -sigma V nu, V = Phi(F) - ft,
  checked on a discrete state by probing the flow for a short time.

  Left sides are total time derivatives at fixed labels xi: a forward (or
  central) difference of the quantity at a fixed base node plus the transport
  along the tangential label velocity X^k = sigma V e^{-psi} v^{-1} u^k. Right sides use
  the ambient closures and grid derivatives.

    metric   g_ij'  = -2 sigma V h_ij
    normal   nu'    = g^{ij} V_i x_j
    shape    h^j_i' - G^{kl} h^j_{i;kl} = ...           (space forms)
    vtilde   vt'    - G^{ij} vt_;ij   = ...             (Lorentzian)

  G^{kl} = Phi' F^{kl}. Explicit occurrences of F are d0 F for F homogeneous of
  degree d0. eta = e^psi (-1, 0, ..., 0) with covariant derivatives from the
  psi jet and the connection.
*/

#pragma once

#include "cflow/flow.hpp"

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace cflow {

enum class ProbeScheme { Forward, Central };

struct IdentityOptions {
  double dt_probe = 1e-5;
  ProbeScheme scheme = ProbeScheme::Forward;  // Forward: O(dt) truncation; Central: O(dt^2)
  bool metric = true;
  bool normal = true;
  bool shape = true;   // needs a space form
  bool vtilde = true;  // needs a Lorentzian model
};

struct IdentityRow {
  std::string name;
  double residual = 0.0;       // max over nodes and components at dt_probe
  double residual_half = 0.0;  // same at dt_probe / 2
  double ratio = 0.0;          // residual / residual_half
};

struct IdentityReport {
  double dt_probe = 0.0;
  std::vector<IdentityRow> rows;

  const IdentityRow& row(const std::string& name) const {
    for (const auto& r : rows)
      if (r.name == name) return r;
    fail(ErrorCode::BadPrecondition, "no identity row '" + name + "'");
  }
};

namespace detail {

// Per node tensors at the base state; mixed tensors stored as M(j, i) = T^j_i.
struct IdentityNode {
  Vec X;                 // label velocity X^k
  AVec xdot;             // -sigma V nu
  Mat lie_g;             // (L_X g)_ij
  Mat lie_h;             // (L_X h)^j_i
  AVec nu_transport;     // X^k d_k nu + Gamma(xdot, nu)
  double vt_transport = 0.0;
  Mat rhs_g;
  AVec rhs_nu;
  Mat rhs_h;
  double rhs_vt = 0.0;
};

inline Field zero_field(const BaseGrid& g) { return Field::Zero(g.size()); }

}  // namespace detail

/// Residuals of the evolution identities at state u, probed with dt and dt / 2.
inline IdentityReport identity_residuals(const FlowProblem& p, const Field& u, const IdentityOptions& opt = {}) {
  const AmbientModel& m = p.model;
  const BaseGrid& grid = p.grid;
  if (!(opt.dt_probe > 0.0)) fail(ErrorCode::ConfigError, "dt_probe must be positive");
  if (p.f.f_nu) fail(ErrorCode::UnsupportedModel, "identity suite excludes normal-dependent f");
  if (opt.shape && !m.spaceform_K)
    fail(ErrorCode::UnsupportedModel, "shape identity needs a space form; " + m.model_id + " is not one");
  if (opt.vtilde && !m.lorentzian()) fail(ErrorCode::UnsupportedModel, "vtilde identity needs a Lorentzian model");

  const int n = m.n, N = m.dim(), sigma = m.signature, axes = grid.active_axes();
  const Eigen::Index S = u.size();
  const FlowEval e0 = initial_eval(p, u);
  const GraphGeometry& geo = e0.geo;
  const auto& nodes = geo.nodes;
  const double d0 = p.G.F.degree();
  const double KN = m.spaceform_K.value_or(0.0);

  // grid derivative of a component field with theta_count polar indices
  auto D = [&](const Field& f, int k, int theta_count) -> Field {
    if (k >= axes) return detail::zero_field(grid);
    return derivative(grid, f, k, grid.parity(theta_count));
  };
  auto th = [](int i) { return i == 0 ? 1 : 0; };
  auto component = [&](auto&& fn) {
    Field f(S);
    for (Eigen::Index k = 0; k < S; ++k) f(k) = fn(k);
    return f;
  };

  // Label velocity.
  std::vector<Vec> X(static_cast<std::size_t>(S));
  for (Eigen::Index k = 0; k < S; ++k) {
    const NodeGeometry& ng = nodes[k];
    const Mat sig = ng.gbar.bottomRightCorner(n, n) / std::exp(2.0 * ng.psi);
    X[k] = sigma * e0.V(k) * std::exp(-ng.psi) / ng.v * sig.llt().solve(ng.du);
  }
  // dX[a][l] = d_a X^l
  std::array<std::array<Field, 2>, 2> dX;
  for (int l = 0; l < n; ++l) {
    const Field Xl = component([&](Eigen::Index k) { return X[k](l); });
    for (int a = 0; a < n; ++a) dX[a][l] = D(Xl, a, th(l));
  }
  const Field V = e0.V;
  std::array<Field, 2> dV;
  for (int a = 0; a < n; ++a) dV[a] = D(V, a, 0);

  std::vector<detail::IdentityNode> I(static_cast<std::size_t>(S));
  for (Eigen::Index k = 0; k < S; ++k) {
    I[k].X = X[k];
    I[k].xdot = -sigma * V(k) * nodes[k].nu;
  }

  if (opt.metric) {
    std::array<std::array<std::array<Field, 2>, 2>, 2> dg;  // dg[a][i][j]
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const Field gij = component([&](Eigen::Index k) { return nodes[k].g(i, j); });
        for (int a = 0; a < n; ++a) dg[a][i][j] = D(gij, a, th(i) + th(j));
      }
    for (Eigen::Index k = 0; k < S; ++k) {
      const NodeGeometry& ng = nodes[k];
      Mat L = Mat::Zero(n, n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          for (int a = 0; a < n; ++a)
            L(i, j) += X[k](a) * dg[a][i][j](k) + ng.g(a, j) * dX[i][a](k) + ng.g(i, a) * dX[j][a](k);
      I[k].lie_g = L;
      I[k].rhs_g = -2.0 * sigma * V(k) * ng.h;
    }
  }

  if (opt.normal) {
    std::array<std::array<Field, kMaxAmbient>, 2> dnu;  // dnu[a][alpha]
    for (int al = 0; al < N; ++al) {
      const Field c = component([&](Eigen::Index k) { return nodes[k].nu(al); });
      for (int a = 0; a < n; ++a) dnu[a][al] = D(c, a, al == 1 ? 1 : 0);
    }
    for (Eigen::Index k = 0; k < S; ++k) {
      const NodeGeometry& ng = nodes[k];
      AVec tr = AVec::Zero(N), rhs = AVec::Zero(N);
      for (int al = 0; al < N; ++al) {
        for (int a = 0; a < n; ++a) tr(al) += X[k](a) * dnu[a][al](k);
        for (int b = 0; b < N; ++b)
          for (int c = 0; c < N; ++c) tr(al) += ng.Gamma[al][b][c] * I[k].xdot(b) * ng.nu(c);
      }
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) rhs += ng.ginv(i, j) * dV[i](k) * ng.tangent(j);
      I[k].nu_transport = tr;
      I[k].rhs_nu = rhs;
    }
  }

  if (opt.shape) {
    // h^j_i and its first covariant derivative T[a](j, i) = h^j_{i;a}
    std::array<std::array<std::array<Field, 2>, 2>, 2> dh;  // dh[a][j][i]
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        const Field c = component([&](Eigen::Index k) { return nodes[k].shape(j, i); });
        for (int a = 0; a < n; ++a) dh[a][j][i] = D(c, a, th(i) + th(j));
      }
    std::vector<std::array<Mat, 2>> T(static_cast<std::size_t>(S));
    for (Eigen::Index k = 0; k < S; ++k) {
      const NodeGeometry& ng = nodes[k];
      for (int a = 0; a < n; ++a) {
        Mat t(n, n);
        for (int j = 0; j < n; ++j)
          for (int i = 0; i < n; ++i) {
            double s = dh[a][j][i](k);
            for (int q = 0; q < n; ++q) s += ng.chr[j](a, q) * ng.shape(q, i) - ng.chr[q](a, i) * ng.shape(j, q);
            t(j, i) = s;
          }
        T[k][a] = t;
      }
    }
    // dT[b][a][j][i] = d_b h^j_{i;a}
    std::array<std::array<std::array<std::array<Field, 2>, 2>, 2>, 2> dT;
    for (int a = 0; a < n; ++a)
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
          const Field c = component([&](Eigen::Index k) { return T[k][a](j, i); });
          for (int b = 0; b < n; ++b) dT[b][a][j][i] = D(c, b, th(a) + th(i) + th(j));
        }
    for (Eigen::Index k = 0; k < S; ++k) {
      const NodeGeometry& ng = nodes[k];
      const BasePoint x = grid.coord(k);
      const Mat Gu = G_upper(p.G, ng);
      const EigenFrame fr = eigenframe(ng.g, ng.h);
      const GValue gv = G_eval(p.G, fr.kappa);
      const double dphi = gv.phi.dphi;
      const Mat& Sh = ng.shape;
      // G^{kl} h^j_{i;kl}
      Mat lap = Mat::Zero(n, n);
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
          if (Gu(a, b) == 0.0) continue;
          for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) {
              double s = dT[b][a][j][i](k);
              for (int q = 0; q < n; ++q)
                s += ng.chr[j](b, q) * T[k][a](q, i) - ng.chr[q](b, i) * T[k][a](j, q) -
                     ng.chr[q](b, a) * T[k][q](j, i);
              lap(j, i) += Gu(a, b) * s;
            }
        }
      // G^{kl,rs} h_{kl;i} h_{rs;}^j
      std::array<Mat, 2> A;
      for (int a = 0; a < n; ++a) {
        const Mat low = ng.g * T[k][a];  // h_{ml;a} with m lowered
        A[a] = 0.5 * (low + low.transpose());
      }
      Mat second = Mat::Zero(n, n);
      for (int j = 0; j < n; ++j) {
        Mat B = Mat::Zero(n, n);
        for (int q = 0; q < n; ++q) B += ng.ginv(j, q) * A[q];
        for (int i = 0; i < n; ++i) second(j, i) = G_second_variation(p.G, fr, A[i], B);
      }
      // ambient f terms
      Mat fhess = Mat::Zero(n, n);
      double f_nu = 0.0;
      if (!p.f.at_infinity) {
        const AmbientTensors t = tensors_at(m, ng.u, x, TensorLevel::Connection);
        const ScalarJet ft = ftilde_jet(p.f, p.G.phi, ng.u, x);
        AMat H(N, N);
        for (int al = 0; al < N; ++al)
          for (int be = 0; be < N; ++be) {
            double s = ft.dd[al][be];
            for (int ga = 0; ga < N; ++ga) s -= t.Gamma[ga][al][be] * ft.d[ga];
            H(al, be) = s;
          }
        AMat Xt = AMat::Zero(N, n);
        for (int i = 0; i < n; ++i) Xt.col(i) = ng.tangent(i);
        fhess = ng.ginv * (Xt.transpose() * H * Xt);
        for (int al = 0; al < N; ++al) f_nu += ft.d[al] * ng.nu(al);
      }
      const double GhhT = (Gu * ng.h * ng.ginv * ng.h).trace();
      const double Fd = d0 * gv.F;
      const Mat SS = Sh * Sh;
      const Mat Id = Mat::Identity(n, n);
      I[k].rhs_h = lap + sigma * GhhT * Sh - sigma * dphi * Fd * SS + sigma * V(k) * SS - fhess +
                   sigma * f_nu * Sh + second +
                   KN * (V(k) * Id + dphi * Fd * Id - (Gu.cwiseProduct(ng.g)).sum() * Sh);
      Mat L = Mat::Zero(n, n);
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i)
          for (int a = 0; a < n; ++a)
            L(j, i) += X[k](a) * dh[a][j][i](k) + Sh(j, a) * dX[i][a](k) - Sh(a, i) * dX[a][j](k);
      I[k].lie_h = L;
    }
  }

  if (opt.vtilde) {
    const Field vt = geo.map([](const NodeGeometry& g) { return g.vt; });
    std::array<Field, 2> dvt;
    std::array<std::array<Field, 2>, 2> ddvt;
    for (int a = 0; a < n; ++a) dvt[a] = D(vt, a, 0);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b)
        ddvt[a][b] = (a < axes && b < axes) ? derivative2(grid, vt, a, b) : detail::zero_field(grid);
    for (Eigen::Index k = 0; k < S; ++k) {
      const NodeGeometry& ng = nodes[k];
      const BasePoint x = grid.coord(k);
      const AmbientTensors t = tensors_at(m, ng.u, x, TensorLevel::Curvature);
      const Mat Gu = G_upper(p.G, ng);
      const GValue gv = G_eval(p.G, principal_curvatures(ng.g, ng.h));
      const double dphi = gv.phi.dphi;
      const double Fd = d0 * gv.F;

      // eta_a = -e^psi delta^0_a and its ambient covariant derivatives
      const double ep = std::exp(t.psi.v);
      std::array<double, kMaxAmbient> eta{};
      T2 deta{};   // deta[b][a] = d_b eta_a
      T3 ddeta{};  // ddeta[c][b][a] = d_c d_b eta_a
      eta[0] = -ep;
      for (int b = 0; b < N; ++b) {
        deta[b][0] = -ep * t.psi.d[b];
        for (int c = 0; c < N; ++c) ddeta[c][b][0] = -ep * (t.psi.d[b] * t.psi.d[c] + t.psi.dd[b][c]);
      }
      T2 eta2{};  // eta2[a][b] = nabla_b eta_a
      for (int a = 0; a < N; ++a)
        for (int b = 0; b < N; ++b) {
          double s = deta[b][a];
          for (int d = 0; d < N; ++d) s -= t.Gamma[d][a][b] * eta[d];
          eta2[a][b] = s;
        }
      T3 eta3{};  // eta3[a][b][c] = nabla_c nabla_b eta_a
      for (int a = 0; a < N; ++a)
        for (int b = 0; b < N; ++b)
          for (int c = 0; c < N; ++c) {
            double s = ddeta[c][b][a];
            for (int d = 0; d < N; ++d) {
              s -= t.dGamma[c][d][a][b] * eta[d] + t.Gamma[d][a][b] * deta[c][d];
              s -= t.Gamma[d][c][a] * eta2[d][b] + t.Gamma[d][c][b] * eta2[a][d];
            }
            eta3[a][b][c] = s;
          }

      AMat Xt = AMat::Zero(N, n);
      for (int i = 0; i < n; ++i) Xt.col(i) = ng.tangent(i);
      AMat E2(N, N);
      for (int a = 0; a < N; ++a)
        for (int b = 0; b < N; ++b) E2(a, b) = eta2[a][b];
      const Mat Etan = Xt.transpose() * E2 * Xt;  // x_i^a x_k^b eta_ab
      const double eta_nn = ng.nu.dot(E2 * ng.nu);

      // covariant Hessian of vt
      Mat hess(n, n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          double s = ddvt[i][j](k);
          for (int q = 0; q < n; ++q) s -= ng.chr[q](i, j) * dvt[q](k);
          hess(i, j) = s;
        }

      double rhs = -(Gu * ng.h * ng.ginv * ng.h).trace() * ng.vt;
      rhs += (V(k) - dphi * Fd) * eta_nn;
      // -2 G^{ij} h_j^k (x_i eta x_k)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          for (int q = 0; q < n; ++q) rhs -= 2.0 * Gu(i, j) * ng.shape(q, j) * Etan(i, q);
      // -G^{ij} eta_abc x_i^b x_j^c nu^a
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          if (Gu(i, j) == 0.0) continue;
          const AVec xi = ng.tangent(i), xj = ng.tangent(j);
          double s = 0.0;
          for (int a = 0; a < N; ++a)
            for (int b = 0; b < N; ++b)
              for (int c = 0; c < N; ++c) s += eta3[a][b][c] * xi(b) * xj(c) * ng.nu(a);
          rhs -= Gu(i, j) * s;
        }
      // -G^{ij} R(nu, x_i, x_k, x_j) eta(x_l) g^{kl}
      Vec eta_t(n);
      for (int l = 0; l < n; ++l) {
        double s = 0.0;
        for (int a = 0; a < N; ++a) s += eta[a] * Xt(a, l);
        eta_t(l) = s;
      }
      const Vec eta_up = ng.ginv * eta_t;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          if (Gu(i, j) == 0.0) continue;
          for (int q = 0; q < n; ++q) {
            if (eta_up(q) == 0.0) continue;
            double r = 0.0;
            for (int a = 0; a < N; ++a)
              for (int b = 0; b < N; ++b)
                for (int c = 0; c < N; ++c)
                  for (int d = 0; d < N; ++d)
                    r += t.Riem[a][b][c][d] * ng.nu(a) * Xt(b, i) * Xt(c, q) * Xt(d, j);
            rhs -= Gu(i, j) * r * eta_up(q);
          }
        }
      // -ft_b x_i^b (eta x_k) g^{ik}
      if (!p.f.at_infinity) {
        const ScalarJet ft = ftilde_jet(p.f, p.G.phi, ng.u, x);
        Vec ft_t(n);
        for (int i = 0; i < n; ++i) {
          double s = 0.0;
          for (int a = 0; a < N; ++a) s += ft.d[a] * Xt(a, i);
          ft_t(i) = s;
        }
        rhs -= ft_t.dot(eta_up);
      }
      I[k].rhs_vt = rhs + (Gu.cwiseProduct(hess)).sum();
      double tr = 0.0;
      for (int a = 0; a < n; ++a) tr += X[k](a) * dvt[a](k);
      I[k].vt_transport = tr;
    }
  }

  // Forward probes.
  auto probe = [&](double dt) {
    const bool central = opt.scheme == ProbeScheme::Central;
    const GraphGeometry geo1 = graph_geometry(m, grid, u + dt * e0.udot);
    const GraphGeometry geo_back = central ? graph_geometry(m, grid, u - dt * e0.udot) : GraphGeometry{};
    const auto& back = central ? geo_back.nodes : nodes;
    if (central) dt *= 2.0;
    double rg = 0.0, rn = 0.0, rh = 0.0, rv = 0.0;
    for (Eigen::Index k = 0; k < S; ++k) {
      const NodeGeometry& a = back[k];
      const NodeGeometry& b = geo1.nodes[k];
      const detail::IdentityNode& in = I[k];
      if (opt.metric) rg = std::max(rg, ((b.g - a.g) / dt + in.lie_g - in.rhs_g).cwiseAbs().maxCoeff());
      if (opt.normal) rn = std::max(rn, ((b.nu - a.nu) / dt + in.nu_transport - in.rhs_nu).cwiseAbs().maxCoeff());
      if (opt.shape) rh = std::max(rh, ((b.shape - a.shape) / dt + in.lie_h - in.rhs_h).cwiseAbs().maxCoeff());
      if (opt.vtilde) rv = std::max(rv, std::abs((b.vt - a.vt) / dt + in.vt_transport - in.rhs_vt));
    }
    return std::array<double, 4>{rg, rn, rh, rv};
  };
  const auto full = probe(opt.dt_probe);
  const auto half = probe(0.5 * opt.dt_probe);
  IdentityReport rep;
  rep.dt_probe = opt.dt_probe;
  const std::array<const char*, 4> names{"metric", "normal", "shape", "vtilde"};
  const std::array<bool, 4> on{opt.metric, opt.normal, opt.shape, opt.vtilde};
  for (int i = 0; i < 4; ++i) {
    if (!on[i]) continue;
    IdentityRow r;
    r.name = names[i];
    r.residual = full[i];
    r.residual_half = half[i];
    r.ratio = half[i] > 0.0 ? full[i] / half[i] : 0.0;
    rep.rows.push_back(r);
  }
  return rep;
}

}  // namespace cflow
