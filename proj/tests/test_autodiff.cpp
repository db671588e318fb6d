#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pode/autodiff.hpp"
#include "pode/random.hpp"

using namespace pode;

namespace {

Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(s));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// scalar readout that weights every entry differently so no gradient cancels
Var readout(Var y) {
  Tape& t = *y.tape();
  Tensor w(y.value().shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
  return sum(mul(y, t.constant(w)));
}

}  // namespace

TEST(Tensor, ShapeAndAccess) {
  Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m.at(1, 2), 6.0);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor(Shape{0, 2}, 0.0), ShapeError);
  EXPECT_THROW(m.item(), ShapeError);
}

TEST(Ops, MatmulByIdentity) {
  Tape t;
  Var a = t.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  Var i = t.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  EXPECT_EQ(matmul(a, i).value(), Tensor::matrix(2, 2, {1, 2, 3, 4}));
}

TEST(Ops, TanhOfZero) {
  Tape t;
  EXPECT_EQ(tanh(t.constant(Tensor({3}, 0.0))).value(), Tensor({3}, 0.0));
}

TEST(Ops, ZeroResidual) {
  Tape t;
  Var a = t.constant(Tensor::vector({1, 2, 3}));
  Var b = t.constant(Tensor::vector({1, 2, 3}));
  EXPECT_EQ(mean(square(a - b)).value().item(), 0.0);
}

TEST(Ops, ShapeErrorNamesOpAndShapes) {
  Tape t;
  Var a = t.constant(Tensor({2, 3}));
  Var b = t.constant(Tensor({2, 2}));
  try {
    add(a, b);
    FAIL() << "no throw";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos);
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos);
    EXPECT_NE(msg.find("[2, 2]"), std::string::npos);
  }
  EXPECT_THROW(matmul(a, b), ShapeError);
}

TEST(Backward, SumOfSquares) {
  Parameter w("w", Tensor::vector({1, 2, 3}));
  Tape t;
  Var x = t.param(w);
  auto g = t.backward(sum(mul(x, x)));
  EXPECT_EQ(g.at("w"), Tensor::vector({2, 4, 6}));
}

TEST(Backward, MeanIsUniform) {
  Parameter w("w", Tensor::vector({5, -1, 2, 7}));
  Tape t;
  auto g = t.backward(mean(t.param(w)));
  EXPECT_EQ(g.at("w"), Tensor({4}, 0.25));
}

TEST(Backward, NonScalarRootRejected) {
  Parameter w("w", Tensor::vector({1, 2}));
  Tape t;
  EXPECT_THROW(t.backward(t.param(w)), ShapeError);
}

TEST(Backward, UnreachableParameterGetsZero) {
  Parameter a("a", Tensor::vector({1, 2}));
  Parameter b("b", Tensor::vector({3, 4}));
  Tape t;
  Var va = t.param(a);
  t.param(b);
  auto g = t.backward(sum(va));
  EXPECT_EQ(g.at("b"), Tensor({2}, 0.0));
}

TEST(Backward, TwiceAccumulatesDouble) {
  Rng rng(3);
  Parameter w("w", random_tensor({3, 2}, rng));
  Tape t;
  Var x = t.constant(random_tensor({4, 3}, rng));
  Var root = sum(tanh(matmul(x, t.param(w))));
  t.backward(root);
  const Tensor once = w.grad;
  t.backward(root);
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(w.grad[i], 2.0 * once[i]);
}

TEST(Backward, ForwardIsBitReproducible) {
  auto run = [] {
    Rng rng(11);
    Tape t;
    Var x = t.constant(random_tensor({5, 4}, rng));
    Var w = t.constant(random_tensor({4, 3}, rng));
    return tanh(matmul(x, w)).value();
  };
  EXPECT_EQ(run(), run());
}

TEST(FiniteDiff, SumOfSquaresClosedForm) {
  Rng rng(0);
  Parameter p("p", random_tensor({6}, rng));
  const double err = finite_diff_check([&](Tape& t) { return sum(square(t.param(p))); }, p, 1e-5);
  EXPECT_LT(err, 1e-6);
}

TEST(FiniteDiff, ConstantFunction) {
  Parameter p("p", Tensor::vector({1, 2}));
  const double err =
      finite_diff_check([&](Tape& t) { return sum(t.constant(Tensor::vector({4, 5}))); }, p, 1e-5);
  EXPECT_EQ(err, 0.0);
}

// Every op kind against central differences on 10 random seeds.
struct OpCase {
  std::string name;
  std::function<Var(Tape&, Parameter&, Parameter&, Rng&)> build;
  Shape a, b;
  double lo = -1.0;
};

class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  const std::vector<OpCase> cases = {
      {"add", [](Tape& t, Parameter& a, Parameter& b, Rng&) { return readout(t.param(a) + t.param(b)); }, {3, 4}, {3, 4}},
      {"sub", [](Tape& t, Parameter& a, Parameter& b, Rng&) { return readout(t.param(a) - t.param(b)); }, {3, 4}, {3, 4}},
      {"mul", [](Tape& t, Parameter& a, Parameter& b, Rng&) { return readout(t.param(a) * t.param(b)); }, {3, 4}, {3, 4}},
      {"matmul", [](Tape& t, Parameter& a, Parameter& b, Rng&) { return readout(matmul(t.param(a), t.param(b))); }, {3, 4}, {4, 2}},
      {"concat", [](Tape& t, Parameter& a, Parameter& b, Rng&) { return readout(concat({t.param(a), t.param(b)})); }, {3, 2}, {3, 4}},
      {"concat_rows", [](Tape& t, Parameter& a, Parameter& b, Rng&) {
         std::vector<Var> parts{t.param(a), t.param(b)};
         return readout(concat_rows(parts));
       }, {2, 3}, {4, 3}},
      {"slice", [](Tape& t, Parameter& a, Parameter&, Rng&) { return readout(slice(t.param(a), 1, 2)); }, {3, 4}, {1}},
      {"tanh", [](Tape& t, Parameter& a, Parameter&, Rng&) { return readout(tanh(t.param(a))); }, {3, 4}, {1}},
      {"sigmoid", [](Tape& t, Parameter& a, Parameter&, Rng&) { return readout(sigmoid(t.param(a))); }, {3, 4}, {1}},
      {"relu", [](Tape& t, Parameter& a, Parameter&, Rng&) { return readout(relu(t.param(a))); }, {3, 4}, {1}, 0.1},
      {"exp", [](Tape& t, Parameter& a, Parameter&, Rng&) { return readout(exp(t.param(a))); }, {3, 4}, {1}},
      {"sum", [](Tape& t, Parameter& a, Parameter&, Rng&) { return sum(square(t.param(a))); }, {3, 4}, {1}},
      {"mean", [](Tape& t, Parameter& a, Parameter&, Rng&) { return mean(square(t.param(a))); }, {3, 4}, {1}},
      {"square", [](Tape& t, Parameter& a, Parameter&, Rng&) { return readout(square(t.param(a))); }, {3, 4}, {1}},
      {"scale", [](Tape& t, Parameter& a, Parameter&, Rng&) { return readout(scale(t.param(a), -1.7)); }, {3, 4}, {1}},
      {"add_row", [](Tape& t, Parameter& a, Parameter& b, Rng&) { return readout(add_row(t.param(a), t.param(b))); }, {3, 4}, {4}},
      {"linear", [](Tape& t, Parameter& a, Parameter& b, Rng& r) {
         Var x = t.constant(random_tensor({3, 4}, r));
         return readout(linear(x, t.param(a), t.param(b), Activation::tanh));
       }, {4, 5}, {5}},
      {"blend", [](Tape& t, Parameter& a, Parameter& b, Rng&) { return readout(blend(t.param(a), t.param(b), 0.3)); }, {3, 4}, {3, 4}},
      {"axpy_rows", [](Tape& t, Parameter& a, Parameter& b, Rng&) {
         return readout(axpy_rows(t.param(a), t.param(b), {0.5, -0.25, 2.0}));
       }, {3, 4}, {3, 4}},
      {"rk4_combine", [](Tape& t, Parameter& a, Parameter& b, Rng&) {
         Var z = t.param(a), k = t.param(b);
         return readout(rk4_combine(z, k, tanh(k), square(k), k * z, {0.1, 0.2, 0.05}));
       }, {3, 4}, {3, 4}},
      {"gru_cell", [](Tape& t, Parameter& a, Parameter& b, Rng& r) {
         Var x = t.constant(random_tensor({2, 3}, r));
         Var wh = t.constant(random_tensor({4, 12}, r));
         Var bx = t.constant(random_tensor({12}, r));
         Var bh = t.constant(random_tensor({12}, r));
         return readout(gru_cell(x, t.param(b), t.param(a), wh, bx, bh));
       }, {3, 12}, {2, 4}},
  };
  const int seed = GetParam();
  for (const OpCase& c : cases) {
    Rng rng(static_cast<std::uint64_t>(seed) * 101 + 7);
    Parameter a("a", random_tensor(c.a, rng, c.lo, 1.0));
    Parameter b("b", random_tensor(c.b, rng, c.lo, 1.0));
    // constants inside the builder must not change between evaluations
    const std::uint64_t inner = rng.next();
    auto f = [&](Tape& t) {
      Rng r(inner);
      return c.build(t, a, b, r);
    };
    EXPECT_LT(finite_diff_check(f, a, 1e-6), 1e-5) << c.name << " wrt a, seed " << seed;
    if (c.b.size() > 1 || c.b[0] > 1) EXPECT_LT(finite_diff_check(f, b, 1e-6), 1e-5) << c.name << " wrt b, seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradient, ::testing::Range(0, 10));

TEST(Backward, TanhMatmulChain) {
  Rng rng(5);
  Parameter w1("w1", random_tensor({3, 4}, rng));
  Parameter w2("w2", random_tensor({4, 1}, rng));
  const Tensor x = random_tensor({5, 3}, rng);
  auto f = [&](Tape& t) { return sum(tanh(matmul(tanh(matmul(t.constant(x), t.param(w1))), t.param(w2)))); };
  EXPECT_LT(finite_diff_check(f, w1, 1e-5), 1e-5);
  EXPECT_LT(finite_diff_check(f, w2, 1e-5), 1e-5);
}
