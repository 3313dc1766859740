/*
  Base-manifold grids and finite-difference calculus.

  circle, torus2: uniform periodic nodes on [0, 2pi) per axis.
  sphere-axisym:  cell-centred polar angle theta_k = (k + 1/2) pi / K; fields
                  depend on theta only and ghost values are reflections across
                  the poles with a parity sign.
*/

#pragma once

#include "cflow/ambient.hpp"
#include "cflow/core.hpp"

#include <Eigen/Dense>

#include <array>
#include <string>
#include <vector>

namespace cflow {

enum class Topology { Circle, Torus2, SphereAxisym };

inline const char* to_string(Topology t) {
  switch (t) {
    case Topology::Circle: return "circle";
    case Topology::Torus2: return "torus2";
    case Topology::SphereAxisym: return "sphere-axisym";
  }
  return "?";
}

using Field = Eigen::VectorXd;
using TensorField = std::vector<Mat>;

struct BaseGrid {
  Topology topology = Topology::Circle;
  std::array<int, 2> res{1, 1};
  std::array<double, 2> h{1.0, 1.0};
  int order = 4;

  int n() const { return topology == Topology::Circle ? 1 : 2; }
  /// Axes carrying grid variation.
  int active_axes() const { return topology == Topology::Torus2 ? 2 : 1; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(res[0]) * res[1]; }
  bool axisym() const { return topology == Topology::SphereAxisym; }
  BaseKind base_kind() const {
    switch (topology) {
      case Topology::Circle: return BaseKind::Circle;
      case Topology::Torus2: return BaseKind::Torus2;
      case Topology::SphereAxisym: return BaseKind::Sphere;
    }
    return BaseKind::Circle;
  }
  double h_min() const { return active_axes() == 2 ? std::min(h[0], h[1]) : h[0]; }
  /// Factor turning integrate() of an area density into a volume.
  double azimuthal_factor() const { return axisym() ? 2.0 * kPi : 1.0; }

  Eigen::Index index(int i0, int i1) const { return static_cast<Eigen::Index>(i0) * res[1] + i1; }

  BasePoint coord(Eigen::Index node) const {
    const int i0 = static_cast<int>(node / res[1]);
    const int i1 = static_cast<int>(node % res[1]);
    BasePoint x{};
    if (axisym()) {
      x[0] = (i0 + 0.5) * h[0];
    } else {
      x[0] = i0 * h[0];
      if (topology == Topology::Torus2) x[1] = i1 * h[1];
    }
    return x;
  }

  /// Parity of a tensor component with `theta_count` polar indices under theta -> -theta.
  int parity(int theta_count) const { return (axisym() && (theta_count % 2)) ? -1 : 1; }
};

inline BaseGrid make_grid(Topology topo, std::array<int, 2> resolution, int order) {
  if (order != 2 && order != 4) fail(ErrorCode::BadResolution, "stencil order must be 2 or 4");
  BaseGrid g;
  g.topology = topo;
  g.order = order;
  switch (topo) {
    case Topology::Circle:
      g.res = {resolution[0], 1};
      g.h = {2.0 * kPi / resolution[0], 1.0};
      break;
    case Topology::Torus2:
      g.res = resolution;
      g.h = {2.0 * kPi / resolution[0], 2.0 * kPi / resolution[1]};
      break;
    case Topology::SphereAxisym:
      g.res = {resolution[0], 1};
      g.h = {kPi / resolution[0], 2.0 * kPi};
      break;
  }
  for (int a = 0; a < g.active_axes(); ++a)
    if (g.res[a] < 8) fail(ErrorCode::BadResolution, "resolution must be >= 8 per axis");
  return g;
}

inline BaseGrid make_grid(Topology topo, int resolution, int order) {
  return make_grid(topo, {resolution, resolution}, order);
}

inline Field make_field(const BaseGrid& g, const std::function<double(const BasePoint&)>& fn) {
  Field f(g.size());
  for (Eigen::Index k = 0; k < g.size(); ++k) f(k) = fn(g.coord(k));
  return f;
}

namespace detail {

/// Node index and sign for a possibly out-of-range offset along an axis.
struct Tap {
  Eigen::Index node;
  double sign;
};

inline Tap tap(const BaseGrid& g, int i0, int i1, int axis, int offset, int parity) {
  if (axis == 0) {
    int j = i0 + offset;
    double s = 1.0;
    const int K = g.res[0];
    if (g.axisym()) {
      if (j < 0) {
        j = -1 - j;
        s = parity;
      } else if (j >= K) {
        j = 2 * K - 1 - j;
        s = parity;
      }
    } else {
      j = ((j % K) + K) % K;
    }
    return {g.index(j, i1), s};
  }
  const int K = g.res[1];
  const int j = (((i1 + offset) % K) + K) % K;
  return {g.index(i0, j), 1.0};
}

inline bool axis_active(const BaseGrid& g, int axis) { return axis < g.active_axes(); }

struct Stencil {
  std::vector<int> off;
  std::vector<double> w;
};

inline Stencil first_stencil(int order) {
  if (order == 2) return {{-1, 1}, {-0.5, 0.5}};
  return {{-2, -1, 1, 2}, {1.0 / 12, -8.0 / 12, 8.0 / 12, -1.0 / 12}};
}

inline Stencil second_stencil(int order) {
  if (order == 2) return {{-1, 0, 1}, {1.0, -2.0, 1.0}};
  return {{-2, -1, 0, 1, 2}, {-1.0 / 12, 16.0 / 12, -30.0 / 12, 16.0 / 12, -1.0 / 12}};
}

/// Face stencils for face i+1/2, offsets relative to node i.
inline Stencil face_derivative_stencil(int order) {
  if (order == 2) return {{0, 1}, {-1.0, 1.0}};
  return {{-1, 0, 1, 2}, {1.0 / 24, -27.0 / 24, 27.0 / 24, -1.0 / 24}};
}

inline Stencil face_interp_stencil(int order) {
  if (order == 2) return {{0, 1}, {0.5, 0.5}};
  return {{-1, 0, 1, 2}, {-1.0 / 16, 9.0 / 16, 9.0 / 16, -1.0 / 16}};
}

inline Field apply_stencil(const BaseGrid& g, const Field& f, int axis, const Stencil& st, double scale,
                           int parity) {
  Field out(g.size());
  parallel_for(static_cast<std::size_t>(g.size()), [&](std::size_t k) {
    const int i0 = static_cast<int>(k / g.res[1]);
    const int i1 = static_cast<int>(k % g.res[1]);
    // Weights sum to zero, so differencing against the centre keeps constants exact.
    const double f0 = f(k);
    double s = 0.0;
    for (std::size_t e = 0; e < st.off.size(); ++e) {
      const Tap t = tap(g, i0, i1, axis, st.off[e], parity);
      s += st.w[e] * (t.sign * f(t.node) - f0);
    }
    out(k) = s * scale;
  });
  return out;
}

/// Faces along an axis: periodic axes have one face per node (i+1/2); the
/// polar axis has K+1 faces starting at -1/2.
inline int face_count(const BaseGrid& g, int axis) { return g.axisym() ? g.res[0] + 1 : g.res[axis]; }
inline int face_first(const BaseGrid& g) { return g.axisym() ? -1 : 0; }

/// Node-to-face map along `axis`: out[face-major] for each transverse line.
inline Eigen::VectorXd to_faces(const BaseGrid& g, const Field& f, int axis, const Stencil& st, double scale,
                                int parity) {
  const int nf = face_count(g, axis);
  const int lines = axis == 0 ? g.res[1] : g.res[0];
  Eigen::VectorXd out(static_cast<Eigen::Index>(nf) * lines);
  for (int l = 0; l < lines; ++l)
    for (int fi = 0; fi < nf; ++fi) {
      const int i = fi + (axis == 0 ? face_first(g) : 0);
      double s = 0.0;
      for (std::size_t e = 0; e < st.off.size(); ++e) {
        const Tap t = axis == 0 ? tap(g, i, l, 0, st.off[e], parity) : tap(g, l, i, 1, st.off[e], parity);
        s += st.w[e] * t.sign * f(t.node);
      }
      out(static_cast<Eigen::Index>(l) * nf + fi) = s * scale;
    }
  return out;
}

/// Face-to-node map: the transpose of to_faces on periodic axes. On the polar axis
/// it gathers with ghost faces reflected by `parity`, i.e. the restriction of the
/// transpose on the doubled (reflected) grid; this stays symmetric and is
/// consistent next to the poles.
inline Field from_faces(const BaseGrid& g, const Eigen::VectorXd& q, int axis, const Stencil& st, double scale,
                        int parity) {
  const int nf = face_count(g, axis);
  const int lines = axis == 0 ? g.res[1] : g.res[0];
  Field out = Field::Zero(g.size());
  if (axis == 0 && g.axisym()) {
    const int K = g.res[0];
    for (int i = 0; i < K; ++i) {
      double s = 0.0;
      for (std::size_t e = 0; e < st.off.size(); ++e) {
        int j = i - st.off[e];  // face j sits at theta = (j + 1) h
        double sign = 1.0;
        if (j < -1) {
          j = -j - 2;
          sign = parity;
        } else if (j > K - 1) {
          j = 2 * K - j - 2;
          sign = parity;
        }
        s += st.w[e] * sign * q(j + 1);
      }
      out(g.index(i, 0)) = s * scale;
    }
    return out;
  }
  for (int l = 0; l < lines; ++l)
    for (int fi = 0; fi < nf; ++fi) {
      const int i = fi + (axis == 0 ? face_first(g) : 0);
      const double qv = q(static_cast<Eigen::Index>(l) * nf + fi) * scale;
      for (std::size_t e = 0; e < st.off.size(); ++e) {
        const Tap t = axis == 0 ? tap(g, i, l, 0, st.off[e], parity) : tap(g, l, i, 1, st.off[e], parity);
        out(t.node) += st.w[e] * t.sign * qv;
      }
    }
  return out;
}

}  // namespace detail

/// First derivative along `axis`; `parity` is the reflection sign of f on the polar axis.
inline Field derivative(const BaseGrid& g, const Field& f, int axis, int parity = 1) {
  if (!detail::axis_active(g, axis)) return Field::Zero(g.size());
  return detail::apply_stencil(g, f, axis, detail::first_stencil(g.order), 1.0 / g.h[axis], parity);
}

/// Second derivative d_a d_b f.
inline Field derivative2(const BaseGrid& g, const Field& f, int a, int b, int parity = 1) {
  if (!detail::axis_active(g, a) || !detail::axis_active(g, b)) return Field::Zero(g.size());
  if (a == b)
    return detail::apply_stencil(g, f, a, detail::second_stencil(g.order), 1.0 / (g.h[a] * g.h[a]), parity);
  const Field fb = derivative(g, f, b, parity);
  return derivative(g, fb, a, g.axisym() ? -parity : parity);
}

/// Conservative discretisation of d_i (a^{ij} d_j f) for a symmetric coefficient
/// field a. Exact on constants; self-adjoint in the plain nodal inner product on periodic
/// axes and on the polar axis at order 2 (order 4 there is symmetric up to truncation).
/// On sphere-axisym the polar coefficient is taken to be odd (it carries sin theta).
inline Field div_flux(const BaseGrid& g, const Field& f, const TensorField& a, int parity = 1) {
  const int axes = g.active_axes();
  const auto Dst = detail::face_derivative_stencil(g.order);
  const auto Ist = detail::face_interp_stencil(g.order);
  const int coef_parity = g.axisym() ? -1 : 1;
  Field out = Field::Zero(g.size());
  std::array<Field, 2> comp;
  for (int i = 0; i < axes; ++i) {
    Field aii(g.size());
    for (Eigen::Index k = 0; k < g.size(); ++k) aii(k) = a[k](i, i);
    const Eigen::VectorXd df = detail::to_faces(g, f, i, Dst, 1.0 / g.h[i], parity);
    const Eigen::VectorXd af = detail::to_faces(g, aii, i, Ist, 1.0, coef_parity);
    out -= detail::from_faces(g, af.cwiseProduct(df), i, Dst, 1.0 / g.h[i], parity);
  }
  if (axes == 2) {
    // Node-centred derivatives I^T D_face, so the cross block is the transpose pair.
    for (int i = 0; i < 2; ++i)
      comp[i] = detail::from_faces(g, detail::to_faces(g, f, i, Dst, 1.0 / g.h[i], parity), i, Ist, 1.0, -parity);
    for (int i = 0; i < 2; ++i) {
      const int j = 1 - i;
      Field w(g.size());
      for (Eigen::Index k = 0; k < g.size(); ++k) w(k) = a[k](i, j) * comp[j](k);
      const Eigen::VectorXd wf = detail::to_faces(g, w, i, Ist, 1.0, -parity);
      out -= detail::from_faces(g, wf, i, Dst, 1.0 / g.h[i], parity);
    }
  }
  return out;
}

/// Delta f = (1/sqrt g) d_i (sqrt g g^{ij} d_j f).
inline Field laplace_beltrami(const BaseGrid& g, const Field& f, const TensorField& metric, const Field& sqrt_det_g) {
  TensorField a(metric.size());
  for (std::size_t k = 0; k < metric.size(); ++k) {
    Eigen::LLT<Mat> llt(metric[k]);
    if (llt.info() != Eigen::Success || !(sqrt_det_g(k) > 0.0))
      fail(ErrorCode::DegenerateMetric, "metric not positive definite at node " + std::to_string(k));
    a[k] = sqrt_det_g(k) * llt.solve(Mat::Identity(metric[k].rows(), metric[k].cols()));
  }
  return div_flux(g, f, a).cwiseQuotient(sqrt_det_g);
}

/// h_1 h_2 ... sum(density); the polar grid integrates over theta only.
inline double integrate(const Field& density, const BaseGrid& g) {
  double w = g.h[0];
  if (g.topology == Topology::Torus2) w *= g.h[1];
  return w * density.sum();
}

}  // namespace cflow
