#include <gtest/gtest.h>

#include <cmath>

#include "grad_suite.hpp"
#include "iln/autodiff.hpp"
#include "iln/ops.hpp"
#include "iln/optim.hpp"
#include "test_util.hpp"

using namespace iln;
using namespace iln::ad;
using iln::Rng;
using iln::testing::uniform_tensor;

namespace {

Tensor<double> t1(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor<double>({n}, v);
}

}  // namespace

TEST(Tensor, ShapeContract) {
  EXPECT_THROW(Tensor<double>({2, 0}), ShapeError);
  EXPECT_THROW(Tensor<double>({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  Tensor<double> t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  t.reshape({3, 2});
  EXPECT_EQ(t.dim(0), 3u);
  EXPECT_THROW(t.reshape({4, 2}), ShapeError);
  EXPECT_EQ(Tensor<double>::scalar(2.0).shape(), (Shape{1}));
}

TEST(Ops, SoftmaxOfZerosIsUniform) {
  const auto y = softmax(constant(Tensor<double>({4}, 0.0)), 0);
  for (const double v : y.value().values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Ops, L1OfEqualInputsIsZero) {
  Rng rng(1);
  const auto x = constant(uniform_tensor(rng, {7}));
  EXPECT_EQ(l1_loss(x, x).value()[0], 0.0);
}

TEST(Ops, IdentityKernelConvLeavesMapUnchanged) {
  Rng rng(2);
  Tensor<double> w({1, 1, 3, 3}, 0.0);
  w[4] = 1.0;
  const auto x = constant(uniform_tensor(rng, {2, 1, 5, 7}));
  for (const Padding p : {Padding::zero, Padding::replicate, Padding::circular}) {
    const auto y = conv2d(x, constant(w), constant(Tensor<double>({1}, 0.0)), p, p);
    EXPECT_EQ(y.value(), x.value());
  }
}

TEST(Ops, ConvPaddingPolicies) {
  // a single row: circular wraps the last column into the first
  Tensor<double> x({1, 1, 1, 4}, std::vector<double>{1, 2, 3, 4});
  Tensor<double> k({1, 1, 3, 3}, 0.0);
  k[3] = 1.0;  // reads the left neighbor
  const auto b = constant(Tensor<double>({1}, 0.0));
  const auto circ = conv2d(constant(x), constant(k), b, Padding::replicate, Padding::circular);
  EXPECT_EQ(circ.value().values()[0], 4.0);
  EXPECT_EQ(circ.value().values()[1], 1.0);
  const auto rep = conv2d(constant(x), constant(k), b, Padding::replicate, Padding::replicate);
  EXPECT_EQ(rep.value().values()[0], 1.0);
  const auto zero = conv2d(constant(x), constant(k), b, Padding::replicate, Padding::zero);
  EXPECT_EQ(zero.value().values()[0], 0.0);
}

TEST(Ops, ShapeErrorsNameBothShapes) {
  const auto a = constant(Tensor<double>({2, 3}));
  const auto b = constant(Tensor<double>({4, 5}));
  try {
    (void)matmul(a, b);
    FAIL();
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("[2,3]"), std::string::npos) << what;
    EXPECT_NE(what.find("[4,5]"), std::string::npos) << what;
  }
  EXPECT_THROW((void)add(a, b), ShapeError);
  EXPECT_THROW((void)mul(a, b), ShapeError);
  EXPECT_THROW((void)l1_loss(a, b), ShapeError);
  EXPECT_THROW((void)concat<double>({a, b}, 0), ShapeError);
  EXPECT_THROW((void)conv2d(constant(Tensor<double>({1, 2, 3, 3})), constant(Tensor<double>({1, 1, 3, 3})),
                            constant(Tensor<double>({1})), Padding::zero, Padding::zero),
               ShapeError);
}

TEST(Backward, L1GradientIsSignOverN) {
  const auto x = leaf(t1({1.0, -2.0, 3.0, 0.5}));
  const auto c = constant(t1({0.0, 0.0, 5.0, 0.0}));
  backward(l1_loss(x, c));
  const double expected[] = {0.25, -0.25, -0.25, 0.25};
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], expected[i]);
}

TEST(Backward, SoftmaxThenDotMatchesFiniteDifferences) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto report = grad_check(
        [](const std::vector<Var<double>>& v) { return sum_last(mul(softmax(v[0], 0), v[1])); },
        {uniform_tensor(rng, {5}, -2, 2), uniform_tensor(rng, {5})}, rng, 1e-5);
    EXPECT_LT(report.max_rel_error, 1e-4);
  }
}

TEST(Backward, ParamOffLossPathHasZeroGradient) {
  ParamStore<double> store;
  Rng rng(4);
  const auto used = store.add_normal("used", {3}, 1.0, rng);
  const auto unused = store.add_normal("unused", {3}, 1.0, rng);
  backward(sum_last(mul(used, used)));
  EXPECT_TRUE(store.by_name("used").has_grad());
  EXPECT_FALSE(store.by_name("unused").has_grad());
  const Tensor<double> g = store.by_name("unused").grad();
  for (const double x : g.values()) EXPECT_EQ(x, 0.0);
  (void)unused;
}

TEST(Backward, NonScalarLossIsContractError) {
  const auto x = leaf(t1({1.0, 2.0}));
  EXPECT_THROW(backward(relu(x)), ContractError);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  const auto x = leaf(t1({3.0}));
  const auto y = mul(x, x);
  backward(add(y, y));  // d/dx 2x^2 = 4x
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  const auto x = leaf(t1({1.0, 2.0}));
  NoGradGuard guard;
  const auto y = sum_last(mul(x, x));
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->inputs.empty());
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  ParamStore<double> store;
  Rng rng(5);
  const auto p = store.add_normal("p", {4}, 1.0, rng);
  const Tensor<double> before = p.value();
  store.params()[0].set_grad(Tensor<double>({4}, 0.0));
  Adam<double> adam;
  adam.step(store.params());
  EXPECT_EQ(p.value(), before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore<double> store;
  const auto p = store.add_filled("p", {1}, 2.0);
  store.params()[0].set_grad(Tensor<double>({1}, 1.0));
  Adam<double> adam(AdamConfig{1e-4});
  adam.step(store.params());
  // m_hat = 1, v_hat = 1: delta = -lr / (1 + eps)
  EXPECT_NEAR(p.value()[0] - 2.0, -1e-4 / (1.0 + 1e-8), 1e-15);
  EXPECT_FALSE(store.params()[0].has_grad());
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(Adam, IdenticalParamsStayIdentical) {
  ParamStore<double> store;
  const auto a = store.add_filled("a", {3}, 0.5);
  const auto b = store.add_filled("b", {3}, 0.5);
  Adam<double> adam(AdamConfig{1e-2});
  Rng rng(6);
  for (int s = 0; s < 10; ++s) {
    const Tensor<double> g = uniform_tensor(rng, {3});
    store.params()[0].set_grad(g);
    store.params()[1].set_grad(g);
    adam.step(store.params());
  }
  EXPECT_EQ(a.value(), b.value());
}

TEST(Adam, MissingGradientIsContractError) {
  ParamStore<double> store;
  (void)store.add_filled("a", {2}, 1.0);
  Adam<double> adam;
  EXPECT_THROW(adam.step(store.params()), ContractError);
}

TEST(GradCheck, ReluAwayFromKink) {
  Rng rng(7);
  const auto report = grad_check([](const auto& v) { return relu(v[0]); },
                                 {iln::testing::off_kink_tensor(rng, {4, 4})}, rng);
  EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(GradCheck, Matmul3x3) {
  Rng rng(8);
  const auto report = grad_check([](const auto& v) { return matmul(v[0], v[1]); },
                                 {uniform_tensor(rng, {3, 3}), uniform_tensor(rng, {3, 3})}, rng);
  EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(GradCheck, ConvCircular) {
  Rng rng(9);
  const auto report = grad_check(
      [](const auto& v) { return conv2d(v[0], v[1], v[2], Padding::replicate, Padding::circular); },
      {uniform_tensor(rng, {2, 2, 4, 5}), uniform_tensor(rng, {3, 2, 3, 3}), uniform_tensor(rng, {3})}, rng);
  EXPECT_LT(report.max_rel_error, 1e-5);
}

TEST(GradCheck, DetectsWrongGradient) {
  // an op whose backward is deliberately off by a factor of two
  Rng rng(10);
  const auto bad = [](const std::vector<Var<double>>& v) {
    Tensor<double> out = v[0].value();
    for (auto& x : out.values()) x = x * x;
    return iln::ad::detail::make_op<double>(std::move(out), {v[0]}, [](Node<double>& self) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.inputs[0]->value[i];
    });
  };
  EXPECT_GT(grad_check(bad, {uniform_tensor(rng, {4}, 0.5, 1.0)}, rng).max_rel_error, 0.1);
}

// ---- properties

class GradCheckAllOps : public ::testing::TestWithParam<std::size_t> {};

TEST_P(GradCheckAllOps, HundredRandomTrials) {
  const auto ops = iln::testing::grad_ops();
  const auto& op = ops.at(GetParam());
  const auto s = iln::testing::sweep(op, 100, 1000 + GetParam());
  EXPECT_EQ(s.trials, 100u);
  EXPECT_LT(s.worst, 1e-4) << op.name;
}

INSTANTIATE_TEST_SUITE_P(Ops, GradCheckAllOps, ::testing::Range<std::size_t>(0, iln::testing::grad_ops().size()),
                         [](const auto& info) { return iln::testing::grad_ops()[info.param].name; });

TEST(SoftmaxProperty, SimplexAndShiftInvariance) {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(7);
    const Tensor<double> x = uniform_tensor(rng, {n}, -10, 10);
    Tensor<double> shifted = x;
    const double c = rng.uniform(-50, 50);
    for (auto& v : shifted.values()) v += c;
    const auto a = softmax(constant(x), 0).value();
    const auto b = softmax(constant(shifted), 0).value();
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_GE(a[i], 0.0);
      EXPECT_NEAR(a[i], b[i], 1e-12);
      sum += a[i];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Checkpoint, RoundTripAndRestore) {
  ParamStore<float> store;
  Rng rng(12);
  (void)store.add_normal("a", {2, 3}, 1.0, rng);
  (void)store.add_normal("b", {4}, 1.0, rng);
  const auto bytes = encode_checkpoint(snapshot(store.params()));
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "ILNC");
  ParamStore<float> other;
  Rng rng2(99);
  (void)other.add_normal("a", {2, 3}, 1.0, rng2);
  (void)other.add_normal("b", {4}, 1.0, rng2);
  restore(other.params(), decode_checkpoint(bytes));
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(other.params()[i].value(), store.params()[i].value());
}

TEST(Checkpoint, MismatchesAndCorruption) {
  ParamStore<float> store;
  Rng rng(13);
  (void)store.add_normal("a", {2, 3}, 1.0, rng);
  auto bytes = encode_checkpoint(snapshot(store.params()));
  ParamStore<float> wrong;
  (void)wrong.add_normal("a", {3, 2}, 1.0, rng);
  EXPECT_THROW(restore(wrong.params(), decode_checkpoint(bytes)), ShapeError);
  auto truncated = bytes;
  truncated.resize(truncated.size() - 1);
  EXPECT_THROW((void)decode_checkpoint(truncated), FormatError);
  bytes[0] = 'X';
  EXPECT_THROW((void)decode_checkpoint(bytes), FormatError);
}
