#include "cflow/identities.hpp"

#include <gtest/gtest.h>

using namespace cflow;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::IoError;
}

FlowProblem problem(const AmbientModel& m, const BaseGrid& g, FKind F, const char* phi, PrescribedCurvature f) {
  return FlowProblem{m, g, Composite{make_spec(F, m.n), parse_phi(phi)}, std::move(f)};
}

}  // namespace

TEST(Identities, StationaryStateHasNoResidual) {
  const auto m = make_flrw_collapse(2.0, BaseKind::Torus2);
  const auto g = make_grid(Topology::Torus2, 16, 4);
  IdentityOptions o;
  o.shape = false;
  const auto r = identity_residuals(problem(m, g, FKind::H, "id", constant_f(4.0)), Field::Constant(g.size(), 1.5), o);
  ASSERT_EQ(r.rows.size(), 3u);
  for (const auto& row : r.rows) EXPECT_LT(row.residual, 1e-12) << row.name;
}

TEST(Identities, DeSitterCircleFirstOrderInProbe) {
  const auto m = make_de_sitter(BaseKind::Circle);
  const auto g = make_grid(Topology::Circle, 128, 4);
  const auto p = problem(m, g, FKind::H, "id", constant_f(2.0));
  const Field u = make_field(g, [](const BasePoint& x) { return 0.4 + 0.1 * std::sin(x[0]); });
  const auto r = identity_residuals(p, u);
  ASSERT_EQ(r.rows.size(), 4u);
  for (const auto& row : r.rows) {
    EXPECT_LT(row.residual, 1e-3) << row.name;
    EXPECT_GE(row.ratio, 1.6) << row.name;
    EXPECT_LE(row.ratio, 2.4) << row.name;
  }
}

TEST(Identities, ResidualsShrinkWithProbeAndGrid) {
  const auto m = make_de_sitter(BaseKind::Circle);
  const auto p = [&](int res) { return problem(m, make_grid(Topology::Circle, res, 4), FKind::H, "log", constant_f(2.0)); };
  const auto state = [](const BaseGrid& g) {
    return make_field(g, [](const BasePoint& x) { return -0.3 + 0.1 * std::sin(x[0]) + 0.05 * std::cos(2 * x[0]); });
  };
  IdentityOptions o;
  o.dt_probe = 1e-6;
  const auto coarse = identity_residuals(p(64), state(p(64).grid), o);
  const auto fine = identity_residuals(p(256), state(p(256).grid), o);
  for (const auto& row : coarse.rows) EXPECT_LT(fine.row(row.name).residual, 0.2 * row.residual) << row.name;
}

TEST(Identities, SpaceFormShapeIdentityForDeformedComposites) {
  // Homogeneous slices remove the spatial floor, leaving the O(dt) probe error.
  const auto m = make_de_sitter(BaseKind::Sphere);
  const auto g = make_grid(Topology::SphereAxisym, 24, 4);
  const Field u = Field::Constant(g.size(), -0.8);
  for (auto [F, phi] : {std::pair{FKind::H, "log"}, std::pair{FKind::K, "sqrt"}, std::pair{FKind::H2, "log"}}) {
    const auto r = identity_residuals(problem(m, g, F, phi, constant_f(0.9)), u);
    for (const auto& row : r.rows) {
      EXPECT_LT(row.residual, 1e-4) << to_string(F) << " " << phi << " " << row.name;
      if (row.residual > 1e-12) {
        EXPECT_NEAR(row.ratio, 2.0, 0.05) << to_string(F) << " " << phi << " " << row.name;
      }
    }
  }
}

TEST(Identities, RiemannianSpaceForms) {
  for (const auto& m : {make_euclidean_polar(BaseKind::Circle), make_hyperbolic_polar(BaseKind::Circle)}) {
    const auto g = make_grid(Topology::Circle, 128, 4);
    const Field u = make_field(g, [](const BasePoint& x) { return 1.0 + 0.1 * std::sin(x[0]); });
    IdentityOptions o;
    o.vtilde = false;
    const auto r = identity_residuals(problem(m, g, FKind::H, "log", constant_f(0.2)), u, o);
    ASSERT_EQ(r.rows.size(), 3u);
    for (const auto& row : r.rows) {
      EXPECT_LT(row.residual, 1e-3) << m.model_id << " " << row.name;
      EXPECT_NEAR(row.ratio, 2.0, 0.1) << m.model_id << " " << row.name;
    }
  }
}

TEST(Identities, HomogeneousImcfMetricEvolution) {
  const auto m = make_flrw_collapse(2.0, BaseKind::Torus2);
  const auto g = make_grid(Topology::Torus2, 16, 4);
  IdentityOptions o;
  o.shape = false;
  o.scheme = ProbeScheme::Central;
  const auto r = identity_residuals(imcf_problem(m, g), Field::Constant(g.size(), 1.0), o);
  EXPECT_LT(r.row("metric").residual, 1e-6);
  // one-sided: g = (T - u)^2, U = 1/2, so (g(u + dt U) - g(u)) / dt = -1 + dt/4
  o.scheme = ProbeScheme::Forward;
  EXPECT_NEAR(identity_residuals(imcf_problem(m, g), Field::Constant(g.size(), 1.0), o).row("metric").residual,
              0.25 * o.dt_probe, 1e-10);
}

TEST(Identities, Preconditions) {
  const auto flrw = make_flrw_collapse(2.0, BaseKind::Torus2);
  const auto g = make_grid(Topology::Torus2, 8, 4);
  const Field u = Field::Constant(g.size(), 1.5);
  EXPECT_EQ(code_of([&] { identity_residuals(problem(flrw, g, FKind::H, "id", constant_f(4.0)), u); }),
            ErrorCode::UnsupportedModel);
  const auto eu = make_euclidean_polar(BaseKind::Circle);
  const auto gc = make_grid(Topology::Circle, 16, 4);
  EXPECT_EQ(code_of([&] { identity_residuals(problem(eu, gc, FKind::H, "id", constant_f(1.0)), Field::Ones(gc.size())); }),
            ErrorCode::UnsupportedModel);
  auto fnu = constant_f(1.0);
  fnu.f_nu = [](double, const BasePoint&, const AVec&) { return 1.0; };
  IdentityOptions o;
  o.vtilde = false;
  EXPECT_EQ(code_of([&] { identity_residuals(problem(eu, gc, FKind::H, "id", fnu), Field::Ones(gc.size()), o); }),
            ErrorCode::UnsupportedModel);
  o.dt_probe = 0.0;
  EXPECT_EQ(code_of([&] { identity_residuals(problem(eu, gc, FKind::H, "id", constant_f(1.0)), Field::Ones(gc.size()), o); }),
            ErrorCode::ConfigError);
}
