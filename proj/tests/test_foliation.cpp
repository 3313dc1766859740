#include "cflow/foliation.hpp"

#include <gtest/gtest.h>

using namespace cflow;

namespace {

FlowProblem mean_curvature_problem(const AmbientModel& m, const BaseGrid& g, PrescribedCurvature f) {
  return FlowProblem{m, g, Composite{make_spec(FKind::H, m.n), parse_phi("id")}, std::move(f)};
}

FlowProblem gauss_log_problem(const AmbientModel& m, const BaseGrid& g, PrescribedCurvature f) {
  return FlowProblem{m, g, Composite{make_spec(FKind::K, m.n), parse_phi("log")}, std::move(f)};
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::IoError;
}

Field random_field(const BaseGrid& g, Rng& rng) {
  Field f(g.size());
  for (Eigen::Index k = 0; k < f.size(); ++k) f(k) = rng.normal();
  return f;
}

// Phi(F) - ft along u + eps e^{-psi} v phi.
Field residual_along(const FlowProblem& p, const Field& u, const Field& dir, double eps) {
  return flow_eval(p, u + eps * dir).V;
}

FoliationResult table_result(const std::vector<double>& taus, const std::vector<double>& x0) {
  FoliationResult r;
  r.taus = taus;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    Leaf& l = r.leaves.emplace_back();
    l.tau = taus[i];
    l.u = Field::Constant(4, x0[i]);
  }
  return r;
}

}  // namespace

TEST(Linearize, LorentzProductSliceIsFlatLaplacian) {
  const auto m = make_lorentz_product(BaseKind::Torus2);
  const auto g = make_grid(Topology::Torus2, 32, 4);
  const auto L = linearize(mean_curvature_problem(m, g, constant_f(0.0)), Field::Constant(g.size(), 0.3));
  EXPECT_LT(L.zero_order().cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT(L.apply(Field::Constant(g.size(), 2.0)).cwiseAbs().maxCoeff(), 1e-12);
  const Field phi = make_field(g, [](const BasePoint& x) { return std::sin(x[0]) * std::cos(2 * x[1]); });
  EXPECT_LT((L.apply(phi) - 5.0 * phi).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Linearize, FlrwSliceCoefficient) {
  const auto m = make_flrw_collapse(2.0, BaseKind::Torus2);
  const auto g = make_grid(Topology::Torus2, 16, 4);
  const double tau = 4.0;
  const auto L = linearize(mean_curvature_problem(m, g, constant_f(tau)), Field::Constant(g.size(), 2.0 - 2.0 / tau));
  EXPECT_LT((L.zero_order().array() - tau * tau / 2.0).abs().maxCoeff(), 1e-11);
  EXPECT_LT(L.residual_drift.cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Linearize, EuclideanSphereCoefficient) {
  const auto m = make_euclidean_polar(BaseKind::Sphere);
  const auto g = make_grid(Topology::SphereAxisym, 32, 4);
  const double r0 = 1.5;
  const Field u = Field::Constant(g.size(), r0);
  const auto LH = linearize(mean_curvature_problem(m, g, constant_f(2.0 / r0)), u);
  EXPECT_LT((LH.zero_order().array() + 2.0 / (r0 * r0)).abs().maxCoeff(), 1e-11);
  // log K: G^{ij} = h^{ij} = r0 g^{ij}.
  const auto LK = linearize(gauss_log_problem(m, g, constant_f(1.0 / (r0 * r0))), u);
  EXPECT_LT((LK.zero_order().array() + 2.0 / r0).abs().maxCoeff(), 1e-11);
}

TEST(Linearize, OutsideConeRejected) {
  const auto m = make_euclidean_polar(BaseKind::Sphere);
  const auto g = make_grid(Topology::SphereAxisym, 16, 4);
  // A concave dimple on the sphere leaves the positive cone for K.
  const Field u = make_field(g, [](const BasePoint& x) { return 1.0 + 0.6 * std::exp(-20 * x[0] * x[0]); });
  EXPECT_EQ(code_of([&] { linearize(gauss_log_problem(m, g, constant_f(1.0)), u); }), ErrorCode::OutsideCone);
}

TEST(Linearize, MeanCurvatureOperatorIsSelfAdjointOnTorus) {
  const auto m = make_flrw_collapse(2.0, BaseKind::Torus2);
  const auto g = make_grid(Topology::Torus2, 24, 4);
  const Field u = make_field(g, [](const BasePoint& x) { return 1.6 + 0.03 * std::sin(x[0]) * std::cos(x[1]); });
  const auto L = linearize(mean_curvature_problem(m, g, constant_f(5.0)), u);
  const Field w = L.weight();
  Rng rng;
  for (int trial = 0; trial < 3; ++trial) {
    const Field a = random_field(g, rng), b = random_field(g, rng);
    const double lhs = w.dot(L.jacobi(a).cwiseProduct(b));
    const double rhs = w.dot(a.cwiseProduct(L.jacobi(b)));
    EXPECT_LT(std::abs(lhs - rhs), 1e-9 * std::max(1.0, std::abs(lhs))) << lhs << " vs " << rhs;
  }
}

TEST(Linearize, DirectionalDerivativeConsistency) {
  // One-sided quotient error splits into an O(eps) part (one-sided minus central) and a grid part (central).
  const auto m = make_flrw_collapse(2.0, BaseKind::Torus2);
  double grid_err[2] = {0, 0};
  for (int level = 0; level < 2; ++level) {
    const auto g = make_grid(Topology::Torus2, 16 << level, 4);
    const auto p = mean_curvature_problem(m, g, constant_f(5.0));
    const Field u = make_field(g, [](const BasePoint& x) { return 1.6 + 0.03 * std::sin(x[0]) * std::cos(x[1]); });
    const Field phi = make_field(g, [](const BasePoint& x) { return std::cos(x[0] + 2 * x[1]); });
    const auto L = linearize(p, u);
    const Field dir = L.graph_scale.cwiseProduct(phi);
    const Field lin = L.apply(phi);
    const Field R0 = flow_eval(p, u).V;
    double eps_part[2];
    const double eps[2] = {1e-4, 1e-5};
    for (int i = 0; i < 2; ++i) {
      const Field Rp = residual_along(p, u, dir, eps[i]);
      const Field Rm = residual_along(p, u, dir, -eps[i]);
      const Field one_sided = (Rp - R0) / eps[i];
      const Field central = (Rp - Rm) / (2 * eps[i]);
      eps_part[i] = (one_sided - central).cwiseAbs().maxCoeff();
      if (i == 0) grid_err[level] = (central - lin).cwiseAbs().maxCoeff() / lin.cwiseAbs().maxCoeff();
    }
    EXPECT_GT(eps_part[0] / eps_part[1], 8.0);
    EXPECT_LT(eps_part[0] / eps_part[1], 12.0);
  }
  EXPECT_LT(grid_err[1], 1e-4);
  EXPECT_GT(grid_err[0] / grid_err[1], 8.0);
}

TEST(Newton, StationaryInputReturnedUnchanged) {
  const auto m = make_flrw_collapse(2.0, BaseKind::Torus2);
  const auto g = make_grid(Topology::Torus2, 16, 4);
  const Field u = Field::Constant(g.size(), 1.5);
  const auto r = newton_polish(mean_curvature_problem(m, g, constant_f(4.0)), u);
  EXPECT_EQ(r.iterations, 0);
  EXPECT_EQ(r.u, u);
}

TEST(Newton, PolishesFlowOutput) {
  const auto m = make_euclidean_polar(BaseKind::Sphere);
  const auto g = make_grid(Topology::SphereAxisym, 32, 4);
  const auto p = gauss_log_problem(m, g, radial_power_f(1.5, 3.0));
  FlowConfig cfg;
  cfg.dt_max = 1e-2;
  cfg.tol_stationary = 1e-6;
  const Field u0 = make_field(g, [](const BasePoint& x) { return 1.7 + 0.02 * std::cos(x[0]); });
  const auto R = run(p, u0, cfg);
  ASSERT_EQ(R.verdict, Verdict::Converged);
  const auto nr = newton_polish(p, R.u);
  EXPECT_LE(nr.iterations, 4);
  EXPECT_LT(nr.final_residual, 1e-12);
  // quadratic contraction
  for (std::size_t i = 1; i < nr.residuals.size(); ++i)
    EXPECT_LT(nr.residuals[i], 100 * nr.residuals[i - 1] * nr.residuals[i - 1] + 1e-13);
  EXPECT_LT((nr.u.array() - 1.5).abs().maxCoeff(), 1e-10);
}

TEST(Newton, PerturbedSphereReturnsToRoundSolution) {
  const auto m = make_euclidean_polar(BaseKind::Sphere);
  const auto g = make_grid(Topology::SphereAxisym, 32, 4);
  const Field u0 = make_field(g, [](const BasePoint& x) { return 1.5 + 1e-4 * std::sin(x[0]) * std::sin(x[0]); });
  for (const auto& p : {mean_curvature_problem(m, g, constant_f(2.0 / 1.5)),
                        gauss_log_problem(m, g, constant_f(1.0 / 2.25))}) {
    const auto nr = newton_polish(p, u0);
    EXPECT_LE(nr.iterations, 5);
    EXPECT_LT(nr.final_residual, 1e-11);
    EXPECT_LT((nr.u.array() - 1.5).abs().maxCoeff(), 1e-11);
  }
}

TEST(Newton, EntryGate) {
  const auto m = make_euclidean_polar(BaseKind::Sphere);
  const auto g = make_grid(Topology::SphereAxisym, 16, 4);
  const auto p = mean_curvature_problem(m, g, constant_f(2.0 / 1.5));
  EXPECT_EQ(code_of([&] { newton_polish(p, Field::Constant(g.size(), 1.4)); }), ErrorCode::BadPrecondition);
}

TEST(Udot, FlrwSliceClosedForm) {
  const auto m = make_flrw_collapse(2.0, BaseKind::Torus2);
  const auto g = make_grid(Topology::Torus2, 16, 4);
  for (double tau : {4.0, 8.0}) {
    const auto r = udot_positivity(m, g, Field::Constant(g.size(), 2.0 - 2.0 / tau));
    EXPECT_LT((r.udot.array() - 2.0 / (tau * tau)).abs().maxCoeff(), 1e-12);
    EXPECT_LT(r.residual, 1e-9);
    EXPECT_GT(r.min_udot, 0.0);
  }
}

TEST(Udot, UnitCoefficientOnFlatTorus) {
  const auto m = make_lorentz_product(BaseKind::Torus2);
  const auto g = make_grid(Topology::Torus2, 16, 4);
  auto L = linearize(mean_curvature_problem(m, g, constant_f(0.0)), Field::Zero(g.size()));
  L.c0 = Field::Constant(g.size(), -1.0);
  const auto r = lapse_solve(L);
  EXPECT_LT((r.w.array() - 1.0).abs().maxCoeff(), 1e-12);
  EXPECT_LT(r.residual, 1e-9);
}

TEST(Udot, IndefiniteCoefficientReported) {
  const auto g = make_grid(Topology::Torus2, 16, 4);
  EXPECT_EQ(code_of([&] { udot_positivity(make_lorentz_product(BaseKind::Torus2), g, Field::Zero(g.size())); }),
            ErrorCode::IndefiniteCoefficient);
  // Coordinate slices of de Sitter: |A|^2 + Ric(nu, nu) = n (tanh^2 - 1) / l^2 < 0.
  const auto gs = make_grid(Topology::SphereAxisym, 16, 4);
  EXPECT_EQ(code_of([&] { udot_positivity(make_de_sitter(BaseKind::Sphere), gs, Field::Constant(gs.size(), -0.5)); }),
            ErrorCode::IndefiniteCoefficient);
  EXPECT_EQ(code_of([&] {
              udot_positivity(make_euclidean_polar(BaseKind::Sphere), gs, Field::Constant(gs.size(), 1.0));
            }),
            ErrorCode::WrongSignature);
}

TEST(Sweep, FlrwLeavesAreClosedFormSlices) {
  const auto m = make_flrw_collapse(2.0, BaseKind::Torus2);
  const auto g = make_grid(Topology::Torus2, 16, 4);
  const auto r = cmc_sweep(m, g, {4.0, 8.0, 16.0}, Field::Constant(g.size(), 1.9));
  ASSERT_EQ(r.leaves.size(), 3u);
  EXPECT_TRUE(r.ok());
  for (const auto& leaf : r.leaves) {
    EXPECT_LT((leaf.u.array() - (2.0 - 2.0 / leaf.tau)).abs().maxCoeff(), 1e-10);
    ASSERT_TRUE(leaf.udot.has_value());
    EXPECT_NEAR(leaf.udot->min_udot, 2.0 / (leaf.tau * leaf.tau), 1e-10);
    EXPECT_LT(leaf.udot->residual, 1e-9);
  }
  EXPECT_NEAR(r.ordering_min_gap, 0.125, 1e-9);

  const auto tf = time_function(r);
  EXPECT_TRUE(tf.monotone);
  for (std::size_t k = 0; k < tf.table.nodes(); k += 37)
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_NEAR(tf.table.x0(k)[i], 2.0 - 2.0 / r.taus[i], 1e-10);
      EXPECT_NEAR(tf.table(k, tf.table.x0(k)[i]), r.taus[i], 1e-12);
    }
}

TEST(Sweep, SingleLeafOrderingVacuous) {
  const auto m = make_flrw_collapse(2.0, BaseKind::Torus2);
  const auto g = make_grid(Topology::Torus2, 12, 4);
  const auto r = cmc_sweep(m, g, {4.0}, Field::Constant(g.size(), 1.6));
  ASSERT_EQ(r.leaves.size(), 1u);
  EXPECT_TRUE(r.ordering_ok);
  EXPECT_TRUE(std::isinf(r.ordering_min_gap));
}

TEST(Sweep, PreconditionsRejectedUpFront) {
  const auto ds = make_de_sitter(BaseKind::Sphere);
  const auto gs = make_grid(Topology::SphereAxisym, 12, 4);
  const Field top = Field::Constant(gs.size(), 1.0);
  EXPECT_EQ(code_of([&] { cmc_sweep(ds, gs, {0.5, 1.5}, top); }), ErrorCode::BadPrecondition);
  EXPECT_EQ(code_of([&] { cmc_sweep(ds, gs, {2.0, 3.0}, top); }), ErrorCode::BadPrecondition);  // gate is strict
  const auto m = make_flrw_collapse(2.0, BaseKind::Torus2);
  const auto g = make_grid(Topology::Torus2, 12, 4);
  const Field t2 = Field::Constant(g.size(), 1.9);
  try {
    cmc_sweep(m, g, {0.0, 4.0}, t2);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadPrecondition);
    EXPECT_NE(std::string(e.what()).find("unsupported"), std::string::npos);
  }
  EXPECT_EQ(code_of([&] { cmc_sweep(m, g, {8.0, 4.0}, t2); }), ErrorCode::BadPrecondition);
  EXPECT_EQ(code_of([&] { cmc_sweep(make_euclidean_polar(BaseKind::Sphere), gs, {1.0}, top); }),
            ErrorCode::WrongSignature);
}

TEST(TimeFunction, TwoLeavesArePiecewiseLinear) {
  const auto tf = time_function(table_result({4.0, 8.0}, {1.5, 1.75}));
  EXPECT_NEAR(tf.table(0, 1.625), 6.0, 1e-14);
  EXPECT_NEAR(tf.min_slope, 0.0625, 1e-14);
  EXPECT_EQ(code_of([&] { tf.table(0, 1.8); }), ErrorCode::OutOfRange);
}

TEST(TimeFunction, MonotoneCubicOnDenseTable) {
  std::vector<double> taus, x0;
  for (int i = 0; i <= 24; ++i) {
    taus.push_back(4.0 + 0.5 * i);
    x0.push_back(2.0 - 2.0 / taus.back());
  }
  const auto tf = time_function(table_result(taus, x0));
  double worst = 0.0;
  for (double x = x0.front(); x <= x0.back(); x += 1e-3) worst = std::max(worst, std::abs(tf.table(1, x) - 2.0 / (2.0 - x)));
  EXPECT_LT(worst, 1e-2);
  for (std::size_t i = 0; i < taus.size(); ++i) EXPECT_NEAR(tf.table(2, x0[i]), taus[i], 1e-12);
}

TEST(TimeFunction, NonMonotoneTableRejected) {
  EXPECT_EQ(code_of([] { time_function(table_result({4.0, 8.0}, {1.75, 1.5})); }), ErrorCode::NonMonotone);
}
