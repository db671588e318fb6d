#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "pode/ode.hpp"

using namespace pode;

namespace {

Var identity_rhs(const Var& z, double) { return z; }
Var decay_rhs(const Var& z, double) { return scale(z, -1.0); }

double solve_decay(double max_step) {
  Tape t;
  Var z0 = t.constant(Tensor::vector({1.0}));
  const std::vector<double> q{1.0};
  auto zs = integrate_path(decay_rhs, z0, 0.0, q, SolveSpec{max_step});
  return zs[0].value()[0];
}

}  // namespace

TEST(Rk4, ZeroDynamicsKeepsState) {
  Tape t;
  Var z = t.constant(Tensor::vector({0.3, -2.0}));
  auto zero = [](const Var& x, double) { return scale(x, 0.0); };
  EXPECT_EQ(rk4_step(zero, z, 0.0, 0.1).value(), z.value());
}

TEST(Rk4, OneStepOfGrowth) {
  Tape t;
  Var z = t.constant(Tensor::vector({1.0}));
  // one RK4 step of dz/dt = z is the 4th-order Taylor polynomial of e^h
  const double h = 0.1;
  const double taylor = 1 + h + h * h / 2 + h * h * h / 6 + h * h * h * h / 24;
  const double got = rk4_step(identity_rhs, z, 0.0, h).value()[0];
  EXPECT_NEAR(got, taylor, 1e-15);
  EXPECT_NEAR(got, std::exp(0.1), 1e-7);
}

TEST(Rk4, HundredStepsOfDecay) {
  Tape t;
  Var z = t.constant(Tensor::vector({1.0}));
  for (int i = 0; i < 100; ++i) z = rk4_step(decay_rhs, z, 0.05 * i, 0.05);
  EXPECT_NEAR(z.value()[0], std::exp(-5.0), 1e-6);
}

TEST(Rk4, RejectsNonPositiveStep) {
  Tape t;
  Var z = t.constant(Tensor::vector({1.0}));
  EXPECT_THROW(rk4_step(decay_rhs, z, 0.0, 0.0), std::invalid_argument);
}

TEST(Rk4, DivergenceCarriesTime) {
  Tape t;
  Var z = t.constant(Tensor::vector({1.0}));
  auto blowup = [](const Var& x, double) { return scale(x, std::numeric_limits<double>::max()); };
  try {
    rk4_step(blowup, z, 0.7, 0.1);
    FAIL();
  } catch (const IntegrationDiverged& e) {
    EXPECT_DOUBLE_EQ(e.time(), 0.7 + 0.1);  // end of the failed step
  }
}

TEST(IntegratePath, ZeroLengthReturnsInitial) {
  Tape t;
  Var z0 = t.constant(Tensor::vector({0.4, 0.5}));
  const std::vector<double> q{0.0};
  auto zs = integrate_path(identity_rhs, z0, 0.0, q);
  EXPECT_EQ(zs[0].value(), z0.value());
}

TEST(IntegratePath, ExponentialAtOneAndTwo) {
  Tape t;
  Var z0 = t.constant(Tensor::vector({1.0}));
  const std::vector<double> q{1.0, 2.0};
  auto zs = integrate_path(identity_rhs, z0, 0.0, q);
  EXPECT_NEAR(zs[0].value()[0], std::exp(1.0), 1e-5);
  EXPECT_NEAR(zs[1].value()[0], std::exp(2.0), 1e-5);
}

TEST(IntegratePath, FourthOrderConvergence) {
  double prev = std::abs(solve_decay(0.2) - std::exp(-1.0));
  for (double h : {0.1, 0.05, 0.025}) {
    const double err = std::abs(solve_decay(h) - std::exp(-1.0));
    const double ratio = prev / err;
    EXPECT_GE(ratio, 12.0) << "h=" << h;
    EXPECT_LE(ratio, 20.0) << "h=" << h;
    prev = err;
  }
}

TEST(IntegratePath, SubstepsNeverExceedMaxStep) {
  EXPECT_EQ(substep_count(0.1, 0.05), 2u);
  EXPECT_EQ(substep_count(0.11, 0.05), 3u);
  EXPECT_EQ(substep_count(0.0, 0.05), 0u);
  EXPECT_EQ(substep_count(0.3, 0.1), 3u);
}

TEST(IntegratePath, ExtraQueryAtExactMultipleIsBitIdentical) {
  auto run = [](std::vector<double> q) {
    Tape t;
    Var z0 = t.constant(Tensor::vector({0.3, -1.2}));
    auto f = [](const Var& z, double) { return tanh(z); };
    auto zs = integrate_path(f, z0, 0.0, q, SolveSpec{0.125});
    return zs.back().value();
  };
  EXPECT_EQ(run({0.5, 1.0}), run({0.5, 0.75, 1.0}));
}

TEST(IntegratePath, RejectsUnsortedTimes) {
  Tape t;
  Var z0 = t.constant(Tensor::vector({1.0}));
  const std::vector<double> q{0.5, 0.4};
  EXPECT_THROW(integrate_path(identity_rhs, z0, 0.0, q), std::invalid_argument);
  const std::vector<double> early{-0.1};
  EXPECT_THROW(integrate_path(identity_rhs, z0, 0.0, early), std::invalid_argument);
}

TEST(IntegratePath, GradientThroughLinearDynamics) {
  Parameter w("w", Tensor(Shape{2, 2}, std::vector<double>{-0.3, 0.8, -0.5, 0.1}));
  Parameter z("z", Tensor(Shape{1, 2}, std::vector<double>{0.7, -0.4}));
  auto f = [&](Tape& t) {
    Var wv = t.param(w);
    auto dyn = [&](const Var& x, double) { return matmul(x, wv); };
    const std::vector<double> q{0.05, 0.1, 0.15, 0.2, 0.25};
    auto zs = integrate_path(dyn, t.param(z), 0.0, q);
    Var acc = sum(square(zs[0]));
    for (std::size_t i = 1; i < zs.size(); ++i) acc = acc + sum(square(zs[i]));
    return acc;
  };
  EXPECT_LT(finite_diff_check(f, w, 1e-6), 1e-4);
  EXPECT_LT(finite_diff_check(f, z, 1e-6), 1e-4);
}

TEST(IntegratePaths, RowsMatchSingleRowSolves) {
  Tape t;
  Var z0 = t.constant(Tensor(Shape{2, 2}, std::vector<double>{0.3, -0.2, 1.1, 0.4}));
  auto f = [](const Var& z) { return tanh(scale(z, -0.8)); };
  const std::vector<double> t0{0.0, 0.3};
  const std::vector<std::vector<double>> q{{0.2, 0.9}, {0.5, 1.0}};
  auto batch = integrate_paths(f, z0, t0, q);
  for (std::size_t r = 0; r < 2; ++r) {
    Tape s;
    Var row = s.constant(Tensor(Shape{1, 2}, std::vector<double>{z0.value().at(r, 0), z0.value().at(r, 1)}));
    auto single = integrate_path([&](const Var& z, double) { return f(z); }, row, t0[r], q[r]);
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t c = 0; c < 2; ++c)
        EXPECT_NEAR(batch[k].value().at(r, c), single[k].value().at(0, c), 1e-7);  // shared, finer substeps
  }
}
