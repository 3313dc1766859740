/*
  Geometry of a graph hypersurface {x0 = u(x)} over the base grid.

  Tangents x_i = (u_i, e_i); normal nu = sigma e^{-psi} v^{-1} (1, -sigma u^i) with
  u^i = sigma^{ij} u_j and v^2 = 1 + sigma sigma^{ij} u_i u_j. The second fundamental
  form comes from the Gauss formula: h_ij = -<W_ij, nu>, W_ij = d_ij x + Gamma(x_i, x_j).
*/

#pragma once

#include "cflow/ambient.hpp"
#include "cflow/curvfunc.hpp"
#include "cflow/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace cflow {

/// Sorted eigenvalues of g^{-1} h. Closed form for n <= 2.
inline Vec principal_curvatures(const Mat& g, const Mat& h) {
  const int n = static_cast<int>(g.rows());
  Vec k(n);
  if (n == 1) {
    if (!(g(0, 0) > 0.0)) fail(ErrorCode::DegenerateMetric, "g_11 <= 0");
    k(0) = h(0, 0) / g(0, 0);
    return k;
  }
  if (n == 2) {
    const double det = g(0, 0) * g(1, 1) - g(0, 1) * g(1, 0);
    if (!(g(0, 0) > 0.0) || !(det > 0.0)) fail(ErrorCode::DegenerateMetric, "metric not positive definite");
    // A = g^{-1} h
    const double a = (g(1, 1) * h(0, 0) - g(0, 1) * h(1, 0)) / det;
    const double b = (g(1, 1) * h(0, 1) - g(0, 1) * h(1, 1)) / det;
    const double c = (g(0, 0) * h(1, 0) - g(1, 0) * h(0, 0)) / det;
    const double d = (g(0, 0) * h(1, 1) - g(1, 0) * h(0, 1)) / det;
    const double disc = std::sqrt(std::max(0.0, (a - d) * (a - d) + 4.0 * b * c));
    const double m = 0.5 * (a + d);
    k(0) = m - 0.5 * disc;
    k(1) = m + 0.5 * disc;
    return k;
  }
  Eigen::LLT<Mat> llt(g);
  if (llt.info() != Eigen::Success) fail(ErrorCode::DegenerateMetric, "metric not positive definite");
  return eigenframe(g, h).kappa;
}

struct NodeGeometry {
  double u = 0.0, psi = 0.0;
  double v = 1.0;   // sqrt(1 + sigma |Du|^2)
  double vt = 1.0;  // 1/v
  Vec du;
  Mat ddu;
  AVec nu;    // upper components
  AMat gbar;  // ambient metric at (u, x)
  T3 Gamma{};
  Mat g, ginv, h, shape;  // shape = g^{-1} h
  std::array<Mat, kMaxBase> chr;  // chr[k](i, j) = induced Gamma^k_ij
  Vec kappa;
  double H = 0.0, A2 = 0.0;
  double density = 0.0;  // v sqrt(det gbar_ij)

  /// Tangent x_i as an ambient vector.
  AVec tangent(int i) const {
    AVec t = AVec::Zero(du.size() + 1);
    t(0) = du(i);
    t(i + 1) = 1.0;
    return t;
  }
};

/// Geometry at one node from the jet (u, Du, D^2u) of the graph function.
inline NodeGeometry node_geometry(const AmbientModel& m, const BasePoint& x, double u, const Vec& du, const Mat& ddu) {
  const int n = m.n;
  const int N = n + 1;
  const int sigma = m.signature;
  const AmbientTensors t = tensors_at(m, u, x, TensorLevel::Connection);
  NodeGeometry ng;
  ng.u = u;
  ng.psi = t.psi.v;
  ng.du = du;
  ng.ddu = ddu;
  ng.Gamma = t.Gamma;
  ng.gbar.resize(N, N);
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b) ng.gbar(a, b) = t.g[a][b];

  const double e2 = std::exp(2.0 * ng.psi);
  const Mat sig = ng.gbar.bottomRightCorner(n, n) / e2;
  const Vec w = sig.llt().solve(du);  // u^i
  const double grad2 = du.dot(w);
  const double v2 = 1.0 + sigma * grad2;
  if (sigma < 0 && !(v2 > 0.0))
    fail(ErrorCode::NotSpacelike, "|Du| = " + std::to_string(std::sqrt(grad2)) + " >= 1");
  ng.v = std::sqrt(v2);
  ng.vt = 1.0 / ng.v;

  const double em = std::exp(-ng.psi);
  ng.nu.resize(N);
  ng.nu(0) = sigma * em / ng.v;
  for (int i = 0; i < n; ++i) ng.nu(i + 1) = -em / ng.v * w(i);

  AMat X = AMat::Zero(N, n);
  for (int i = 0; i < n; ++i) {
    X(0, i) = du(i);
    X(i + 1, i) = 1.0;
  }
  ng.g = X.transpose() * ng.gbar * X;
  Eigen::LLT<Mat> llt(ng.g);
  if (llt.info() != Eigen::Success) fail(ErrorCode::DegenerateMetric, "induced metric not positive definite");
  ng.ginv = llt.solve(Mat::Identity(n, n));

  // W_ij lowered: <W_ij, .> as an ambient covector
  const AVec nu_low = ng.gbar * ng.nu;
  const AMat XL = ng.gbar * X;  // lowered tangents
  ng.h.resize(n, n);
  Mat tang[kMaxBase];
  for (int l = 0; l < n; ++l) tang[l].resize(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      AVec W = AVec::Zero(N);
      W(0) = ddu(i, j);
      for (int a = 0; a < N; ++a)
        for (int b = 0; b < N; ++b) {
          const double xb = X(b, i);
          if (xb == 0.0) continue;
          for (int c = 0; c < N; ++c) W(a) += t.Gamma[a][b][c] * xb * X(c, j);
        }
      ng.h(i, j) = ng.h(j, i) = -W.dot(nu_low);
      for (int l = 0; l < n; ++l) tang[l](i, j) = tang[l](j, i) = W.dot(XL.col(l));
    }
  for (int k = 0; k < n; ++k) {
    ng.chr[k] = Mat::Zero(n, n);
    for (int l = 0; l < n; ++l) ng.chr[k] += ng.ginv(k, l) * tang[l];
  }
  ng.shape = ng.ginv * ng.h;
  ng.kappa = principal_curvatures(ng.g, ng.h);
  ng.H = ng.kappa.sum();
  ng.A2 = ng.kappa.squaredNorm();
  ng.density = ng.v * std::sqrt(ng.gbar.bottomRightCorner(n, n).determinant());
  return ng;
}

struct GraphGeometry {
  AmbientModel model;
  BaseGrid grid;
  Field u;
  std::vector<NodeGeometry> nodes;

  int n() const { return model.n; }
  int sigma() const { return model.signature; }
  Eigen::Index size() const { return u.size(); }

  template <class Fn>
  Field map(Fn&& fn) const {
    Field out(size());
    for (Eigen::Index k = 0; k < size(); ++k) out(k) = fn(nodes[k]);
    return out;
  }
  Field H() const { return map([](const NodeGeometry& g) { return g.H; }); }

  bool admissible(Cone cone) const {
    return std::all_of(nodes.begin(), nodes.end(), [&](const NodeGeometry& g) { return cflow::admissible(g.kappa, cone); });
  }
  double cone_margin(Cone cone) const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& g : nodes) m = std::min(m, cflow::cone_margin(g.kappa, cone));
    return m;
  }
  double kappa_min() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& g : nodes) m = std::min(m, g.kappa(0));
    return m;
  }
  double kappa_max() const {
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& g : nodes) m = std::max(m, g.kappa(g.kappa.size() - 1));
    return m;
  }
  /// max vtilde (Lorentzian) or max v (Riemannian).
  double gradient_monitor() const {
    double m = 0.0;
    for (const auto& g : nodes) m = std::max(m, sigma() < 0 ? g.vt : g.v);
    return m;
  }
  /// |M|, including the azimuthal factor on sphere-axisym.
  double volume() const { return grid.azimuthal_factor() * integrate(map([](const NodeGeometry& g) { return g.density; }), grid); }
  /// Same volume from sqrt(det g_ij).
  double volume_induced() const {
    return grid.azimuthal_factor() * integrate(map([](const NodeGeometry& g) { return std::sqrt(g.g.determinant()); }), grid);
  }
};

/// Grid derivatives of a scalar: du per axis, ddu per axis pair.
struct ScalarDerivatives {
  std::array<Field, 2> d;
  std::array<std::array<Field, 2>, 2> dd;
};

inline ScalarDerivatives scalar_derivatives(const BaseGrid& g, const Field& u) {
  ScalarDerivatives s;
  for (int a = 0; a < 2; ++a) s.d[a] = derivative(g, u, a);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      if (b < a) {
        s.dd[a][b] = s.dd[b][a];
        continue;
      }
      s.dd[a][b] = derivative2(g, u, a, b);
    }
  return s;
}

inline GraphGeometry graph_geometry(const AmbientModel& m, const BaseGrid& grid, const Field& u) {
  if (m.n != grid.n()) fail(ErrorCode::BadPrecondition, "model and grid dimensions differ");
  if (m.base != grid.base_kind()) fail(ErrorCode::BadPrecondition, "model base does not match grid topology");
  GraphGeometry G;
  G.model = m;
  G.grid = grid;
  G.u = u;
  G.nodes.resize(static_cast<std::size_t>(u.size()));
  const ScalarDerivatives sd = scalar_derivatives(grid, u);
  const int n = m.n;
  parallel_for(G.nodes.size(), [&](std::size_t k) {
    const auto idx = static_cast<Eigen::Index>(k);
    Vec du(n);
    Mat ddu(n, n);
    for (int i = 0; i < n; ++i) {
      du(i) = sd.d[i](idx);
      for (int j = 0; j < n; ++j) ddu(i, j) = sd.dd[i][j](idx);
    }
    G.nodes[k] = node_geometry(m, grid.coord(idx), u(idx), du, ddu);
  });
  return G;
}

/// F^{ij} at one node (eigenframe construction).
inline Mat F_ij_tensor(const CurvatureSpec& spec, const GraphGeometry& geo, Eigen::Index node) {
  const NodeGeometry& ng = geo.nodes[static_cast<std::size_t>(node)];
  if (!admissible(ng.kappa, spec.cone)) fail(ErrorCode::OutsideCone, "node " + std::to_string(node) + " outside cone");
  const EigenFrame fr = eigenframe(ng.g, ng.h);
  return upper_tensor(fr, F_eval(spec, fr.kappa).grad);
}

/// Recomputes h_ij from -e^psi v (u_;ij + Gamma^0_00 u_i u_j + Gamma^0_i0 u_j + Gamma^0_j0 u_i + Gamma^0_ij),
/// with u_;ij built from induced Christoffels of the discrete metric field; returns
/// max |difference| / max |h|.
inline double lorentz_graph_h_crosscheck(const AmbientModel& m, const BaseGrid& grid, const Field& u) {
  if (!m.lorentzian()) fail(ErrorCode::WrongSignature, "cross-check needs a Lorentzian model");
  const GraphGeometry G = graph_geometry(m, grid, u);
  const int n = m.n;
  // Discrete derivatives of g_ij: dg[a][i][j]
  std::array<std::array<std::array<Field, 2>, 2>, 2> dg;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      const Field gij = G.map([&](const NodeGeometry& ng) { return ng.g(i, j); });
      const int par = grid.parity((i == 0) + (j == 0));
      for (int a = 0; a < n; ++a) dg[a][i][j] = dg[a][j][i] = derivative(grid, gij, a, par);
    }
  double dev = 0.0, hmax = 0.0;
  for (Eigen::Index k = 0; k < G.size(); ++k) {
    const NodeGeometry& ng = G.nodes[k];
    const double scale = -std::exp(ng.psi) * ng.v;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double uij = ng.ddu(i, j);
        for (int c = 0; c < n; ++c) {
          double gam = 0.0;
          for (int l = 0; l < n; ++l)
            gam += 0.5 * ng.ginv(c, l) * (dg[i][j][l](k) + dg[j][i][l](k) - dg[l][i][j](k));
          uij -= gam * ng.du(c);
        }
        const auto& Gm = ng.Gamma[0];
        const double rhs = uij + Gm[0][0] * ng.du(i) * ng.du(j) + Gm[i + 1][0] * ng.du(j) +
                           Gm[j + 1][0] * ng.du(i) + Gm[i + 1][j + 1];
        dev = std::max(dev, std::abs(scale * rhs - ng.h(i, j)));
        hmax = std::max(hmax, std::abs(ng.h(i, j)));
      }
  }
  if (dev == 0.0) return 0.0;
  return dev / std::max(hmax, std::numeric_limits<double>::min());
}

}  // namespace cflow
