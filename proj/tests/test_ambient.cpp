#include "cflow/ambient.hpp"

#include <gtest/gtest.h>

using namespace cflow;

namespace {

// Independent connection from central differences of metric values only.
T3 fd_christoffel(const AmbientModel& m, double x0, const BasePoint& x, double eps = 1e-5) {
  const int N = m.dim();
  auto metric = [&](int a, double s) {
    double y0 = x0;
    BasePoint y = x;
    if (a == 0) y0 += s; else y[a - 1] += s;
    return ambient_jet(m, y0, y).g;
  };
  T3 dg{};
  for (int c = 0; c < N; ++c) {
    const T2 p = metric(c, eps), q = metric(c, -eps), p2 = metric(c, 2 * eps), q2 = metric(c, -2 * eps);
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b) dg[c][a][b] = (8 * (p[a][b] - q[a][b]) - (p2[a][b] - q2[a][b])) / (12 * eps);
  }
  const T2 g = ambient_jet(m, x0, x).g;
  AMat G(N, N);
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b) G(a, b) = g[a][b];
  const AMat Gi = G.inverse();
  T3 Gam{};
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b)
      for (int c = 0; c < N; ++c)
        for (int d = 0; d < N; ++d) Gam[a][b][c] += 0.5 * Gi(a, d) * (dg[b][d][c] + dg[c][d][b] - dg[d][b][c]);
  return Gam;
}

// psi = 0.3 sin x0 + 0.1 cos x1,  S = 1 + 0.2 x0^2 over the flat torus.
AmbientModel custom_model(int signature) {
  AmbientModel m;
  m.model_id = "custom";
  m.signature = signature;
  m.base = BaseKind::Torus2;
  m.n = 2;
  m.sample_lo = -1.0;
  m.sample_hi = 1.0;
  m.psi = [](double x0, const BasePoint& x) {
    ScalarJet j;
    j.v = 0.3 * std::sin(x0) + 0.1 * std::cos(x[0]);
    j.d[0] = 0.3 * std::cos(x0);
    j.d[1] = -0.1 * std::sin(x[0]);
    j.dd[0][0] = -0.3 * std::sin(x0);
    j.dd[1][1] = -0.1 * std::cos(x[0]);
    return j;
  };
  m.sigma_metric = detail::warped([](double t) { return ScaleJet{1.0 + 0.2 * t * t, 0.4 * t, 0.4}; }, m.base);
  return m;
}

std::vector<AmbientModel> all_models() {
  return {make_lorentz_product(BaseKind::Torus2), make_lorentz_product(BaseKind::Sphere),
          make_flrw_collapse(2.0, BaseKind::Torus2), make_flrw_collapse(2.0, BaseKind::Circle),
          make_de_sitter(BaseKind::Circle), make_de_sitter(BaseKind::Sphere, 1.3),
          make_euclidean_polar(BaseKind::Circle), make_euclidean_polar(BaseKind::Sphere),
          make_hyperbolic_polar(BaseKind::Sphere), custom_model(-1), custom_model(1)};
}

}  // namespace

TEST(Ambient, LorentzProductIsFlat) {
  const auto m = make_lorentz_product(BaseKind::Torus2);
  const auto t = tensors_at(m, 0.3, {1.0, 2.0, 0.0});
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      for (int c = 0; c < 3; ++c) {
        EXPECT_EQ(t.Gamma[a][b][c], 0.0);
        for (int d = 0; d < 3; ++d) EXPECT_EQ(t.Riem[a][b][c][d], 0.0);
      }
      EXPECT_EQ(t.g[a][b], a == b ? (a == 0 ? -1.0 : 1.0) : 0.0);
    }
}

TEST(Ambient, EuclideanPolarChristoffels) {
  const auto m = make_euclidean_polar(BaseKind::Circle);
  const auto t = tensors_at(m, 2.0, {0.7, 0.0, 0.0});
  EXPECT_NEAR(t.Gamma[0][1][1], -2.0, 1e-14);
  EXPECT_NEAR(t.Gamma[1][0][1], 0.5, 1e-14);
  EXPECT_NEAR(t.Gamma[1][1][0], 0.5, 1e-14);
  const T3 fd = fd_christoffel(m, 2.0, {0.7, 0.0, 0.0});
  EXPECT_NEAR(fd[0][1][1], -2.0, 1e-9);
  EXPECT_NEAR(fd[1][0][1], 0.5, 1e-9);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 2; ++c)
        for (int d = 0; d < 2; ++d) EXPECT_NEAR(t.Riem[a][b][c][d], 0.0, 1e-14);
}

TEST(Ambient, FlrwRicciClosedForm) {
  const double T = 2.0;
  for (auto base : {BaseKind::Circle, BaseKind::Torus2}) {
    const auto m = make_flrw_collapse(T, base);
    const int n = m.n;
    for (double x0 : {-1.0, 0.5, 1.7}) {
      const auto t = tensors_at(m, x0, {0.4, 1.1, 0.0});
      EXPECT_NEAR(t.Ric[0][0], 0.0, 1e-12);
      for (int i = 1; i <= n; ++i)
        for (int j = 1; j <= n; ++j) EXPECT_NEAR(t.Ric[i][j], i == j ? (n - 1) : 0.0, 1e-12);
      // Slice second fundamental form a delta and H = n / (T - x0).
      const SliceData s = coordinate_slice(m, x0, {0.4, 1.1, 0.0});
      EXPECT_NEAR(s.H, n / (T - x0), 1e-12);
    }
  }
}

TEST(Ambient, OutOfRange) {
  const auto m = make_flrw_collapse(2.0, BaseKind::Torus2);
  try {
    tensors_at(m, 2.0, {});
    FAIL() << "expected OutOfRange";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutOfRange);
  }
  EXPECT_THROW(tensors_at(make_euclidean_polar(BaseKind::Circle), -0.1, {}), Error);
}

TEST(Ambient, ConnectionMatchesFiniteDifferences) {
  for (const auto& m : all_models()) {
    const auto pts = sample_points(m, 20, 7);
    for (const auto& [x0, x] : pts) {
      const auto t = tensors_at(m, x0, x);
      const T3 fd = fd_christoffel(m, x0, x);
      for (int a = 0; a < m.dim(); ++a)
        for (int b = 0; b < m.dim(); ++b)
          for (int c = 0; c < m.dim(); ++c) ASSERT_NEAR(t.Gamma[a][b][c], fd[a][b][c], 1e-7) << m.model_id;
    }
  }
}

TEST(Ambient, ConnectionDerivativeMatchesFiniteDifferences) {
  const double eps = 1e-5;
  for (const auto& m : all_models()) {
    const auto pts = sample_points(m, 10, 11);
    for (const auto& [x0, x] : pts) {
      const auto t = tensors_at(m, x0, x);
      for (int e = 0; e < m.dim(); ++e) {
        double yp0 = x0, ym0 = x0;
        BasePoint yp = x, ym = x;
        if (e == 0) { yp0 += eps; ym0 -= eps; } else { yp[e - 1] += eps; ym[e - 1] -= eps; }
        const auto tp = tensors_at(m, yp0, yp, TensorLevel::Connection);
        const auto tm = tensors_at(m, ym0, ym, TensorLevel::Connection);
        for (int a = 0; a < m.dim(); ++a)
          for (int b = 0; b < m.dim(); ++b)
            for (int c = 0; c < m.dim(); ++c)
              ASSERT_NEAR(t.dGamma[e][a][b][c], (tp.Gamma[a][b][c] - tm.Gamma[a][b][c]) / (2 * eps), 1e-6)
                  << m.model_id;
      }
    }
  }
}

TEST(Ambient, MetricCompatibilityAndRiemannSymmetries) {
  for (const auto& m : all_models()) {
    for (const auto& [x0, x] : sample_points(m, 1000)) {
      const auto t = tensors_at(m, x0, x);
      ASSERT_LT(metric_compatibility_residual(t), 1e-9) << m.model_id;
      ASSERT_LT(riemann_symmetry_residual(t), 1e-10) << m.model_id;
      AMat G(t.N, t.N), Gi(t.N, t.N);
      for (int a = 0; a < t.N; ++a)
        for (int b = 0; b < t.N; ++b) {
          G(a, b) = t.g[a][b];
          Gi(a, b) = t.ginv[a][b];
          ASSERT_NEAR(t.Ric[a][b], t.Ric[b][a], 1e-12);
          for (int c = 0; c < t.N; ++c) ASSERT_EQ(t.Gamma[a][b][c], t.Gamma[a][c][b]);
        }
      ASSERT_LT((G * Gi - AMat::Identity(t.N, t.N)).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Ambient, MetricFormWithConformalFactor) {
  const auto m = custom_model(-1);
  const auto j = ambient_jet(m, 0.4, {0.9, 0.2, 0.0});
  const double E = std::exp(2 * (0.3 * std::sin(0.4) + 0.1 * std::cos(0.9)));
  const double S2 = std::pow(1.0 + 0.2 * 0.16, 2);
  EXPECT_NEAR(j.g[0][0], -E, 1e-14);
  EXPECT_NEAR(j.g[1][1], E * S2, 1e-14);
  EXPECT_EQ(j.g[0][1], 0.0);
}

TEST(Ambient, SpaceformResidual) {
  EXPECT_LT(spaceform_residual(make_euclidean_polar(BaseKind::Sphere), sample_points(make_euclidean_polar(BaseKind::Sphere), 100)), 1e-10);
  EXPECT_LT(spaceform_residual(make_euclidean_polar(BaseKind::Circle), sample_points(make_euclidean_polar(BaseKind::Circle), 100)), 1e-10);
  const auto ds = make_de_sitter(BaseKind::Sphere);
  EXPECT_DOUBLE_EQ(*ds.spaceform_K, 1.0);
  EXPECT_LT(spaceform_residual(ds, sample_points(ds, 100)), 1e-8);
  const auto hy = make_hyperbolic_polar(BaseKind::Sphere);
  EXPECT_LT(spaceform_residual(hy, sample_points(hy, 100)), 1e-8);
  const auto milne = make_flrw_collapse(2.0, BaseKind::Circle);
  EXPECT_LT(spaceform_residual(milne, sample_points(milne, 100)), 1e-10);
  try {
    spaceform_residual(make_flrw_collapse(2.0, BaseKind::Torus2), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotASpaceForm);
  }
  // A non-space-form really does deviate.
  auto fake = make_flrw_collapse(2.0, BaseKind::Torus2);
  fake.spaceform_K = 0.0;
  EXPECT_GT(spaceform_residual(fake, sample_points(fake, 10)), 1e-3);
}

TEST(Ambient, RicciTimelikeScan) {
  Region r{-0.5, 0.5, {}};
  const auto lp = ricci_timelike_scan(make_lorentz_product(BaseKind::Torus2), r, 0.0, 200);
  EXPECT_TRUE(lp.pass);
  EXPECT_NEAR(lp.min_value, 0.0, 1e-14);

  const auto ds = make_de_sitter(BaseKind::Sphere);
  const auto pass = ricci_timelike_scan(ds, r, ds.Lambda, 200);
  EXPECT_TRUE(pass.pass);
  EXPECT_NEAR(pass.min_value, -2.0, 1e-9);
  EXPECT_FALSE(ricci_timelike_scan(ds, r, 0.0, 200).pass);

  Region rf{0.0, 1.8, {}};
  const auto fl = ricci_timelike_scan(make_flrw_collapse(2.0, BaseKind::Torus2), rf, 0.0, 500);
  EXPECT_TRUE(fl.pass);
  EXPECT_GE(fl.min_value, -1e-12);

  try {
    ricci_timelike_scan(make_euclidean_polar(BaseKind::Circle), Region{1.0, 2.0, {}}, 0.0, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::WrongSignature);
  }
}

TEST(Ambient, ConvexityCertificate) {
  const auto ep = make_euclidean_polar(BaseKind::Sphere);
  const auto ok = convexity_certificate(ep, Region{1.0, 2.0, {}});
  EXPECT_TRUE(ok.success);
  EXPECT_GT(ok.margin, 0.0);
  EXPECT_EQ(ok.lambda, 1.0);
  // Closed form: eigenvalues lambda^2 and lambda / r against the reference metric.
  EXPECT_NEAR(ok.margin, 0.5, 1e-12);

  // Monotone along the ladder.
  Rng rng(kDefaultSeed);
  const auto pts = detail::region_points(ep, Region{1.0, 2.0, {}}, 10, 100, rng);
  double prev = convexity_margin(ep, pts, 1.0);
  for (double lam = 2.0; lam <= 1024.0; lam *= 2.0) {
    const double c = convexity_margin(ep, pts, lam);
    EXPECT_GT(c, 0.0);
    EXPECT_GE(c, prev);
    prev = c;
  }

  const auto lp = convexity_certificate(make_lorentz_product(BaseKind::Torus2), Region{-0.5, 0.5, {}});
  EXPECT_FALSE(lp.success);
  EXPECT_EQ(lp.ladder.size(), 17u);
  EXPECT_LE(lp.margin, 0.0 + 1e-12);

  const auto one = convexity_certificate(make_euclidean_polar(BaseKind::Circle), Region{1.0, 1.0, {{0.3, 0.0, 0.0}}});
  EXPECT_TRUE(one.success);
  EXPECT_EQ(one.lambda, 1.0);
}

TEST(Ambient, SliceDecay) {
  const double T = 2.0;
  const auto m = make_flrw_collapse(T, BaseKind::Torus2);
  const auto rep = slice_decay_check(m, 0.0, 1.9, 12);
  EXPECT_LT(rep.identity_residual, 1e-8);
  ASSERT_TRUE(rep.diverges.has_value());
  EXPECT_TRUE(*rep.diverges);
  for (std::size_t k = 0; k < rep.tau.size(); ++k) EXPECT_NEAR(rep.phi[k], 2.0 / (T - rep.tau[k]), 1e-12);
  ASSERT_TRUE(rep.rescaled_closed_form_error.has_value());
  EXPECT_LT(*rep.rescaled_closed_form_error, 1e-9);
  EXPECT_GE(rep.rescaled_min_ratio, 1.0 - 1e-12);

  try {
    slice_decay_check(make_lorentz_product(BaseKind::Torus2), -0.5, 0.5, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonPositiveSliceH);
  }

  const auto ds = make_de_sitter(BaseKind::Sphere);
  const auto drep = slice_decay_check(ds, -2.0, -0.1, 8);
  EXPECT_LT(drep.identity_residual, 1e-8);
  EXPECT_NEAR(drep.phi.front(), 2.0 * std::tanh(2.0), 1e-12);
}
