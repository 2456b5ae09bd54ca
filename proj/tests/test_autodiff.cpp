#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <functional>

#include "dgm/autodiff.hpp"
#include "dgm/detail/spline_kernel.hpp"
#include "dgm/error.hpp"
#include "dgm/grad_check.hpp"
#include "dgm/nn.hpp"

using namespace dgm;
using ad::grad_check;

namespace {

Tensor uniform(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Contracts y against fixed random weights so every output element matters.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor w = uniform(y.shape(), rng, 0.5, 1.5);
  return ad::sum(ad::mul(y, w));
}

void expect_grad_ok(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, const char* what) {
  const auto r = grad_check(f, x);
  EXPECT_LT(r.max_rel_error, 1e-4) << what;
  EXPECT_TRUE(r.non_finite.empty()) << what;
  EXPECT_GT(r.checked, 0u) << what;
}

}  // namespace

TEST(Apply, MatmulIdentity) {
  const Tensor i2 = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor y = ad::matmul(i2, a);
  EXPECT_EQ(y.shape(), (Shape{2, 2}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(y[i], a[i]);
}

TEST(Apply, ReluAtSignBoundaries) {
  const Tensor y = ad::relu(Tensor::vector({-1, 0, 2}));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_EQ(y[2], 2.0);
}

TEST(Apply, MatmulByHand) {
  const Tensor y = ad::matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{1}, {1}}));
  EXPECT_EQ(y.shape(), (Shape{2, 1}));
  EXPECT_EQ(y[0], 3.0);
  EXPECT_EQ(y[1], 7.0);
}

TEST(Apply, ShapeMismatchThrows) {
  EXPECT_THROW(ad::matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{1, 2}})), ShapeError);
  EXPECT_THROW(ad::add(Tensor::vector({1, 2}), Tensor::vector({1, 2, 3})), ShapeError);
}

TEST(Apply, NonFiniteResultThrows) {
  EXPECT_THROW(ad::log(Tensor::vector({-1.0})), NumericError);
  EXPECT_THROW(ad::exp(Tensor::vector({1000.0})), NumericError);
}

TEST(Apply, MixingTapesThrows) {
  ad::Tape t1, t2;
  const Tensor a = t1.leaf(Tensor::vector({1}));
  const Tensor b = t2.leaf(Tensor::vector({2}));
  EXPECT_THROW(ad::add(a, b), InvalidArgument);
}

TEST(Apply, TapedResultHasParentsInTopologicalOrder) {
  ad::Tape tape;
  const Tensor x = tape.leaf(Tensor::vector({1, 2}));
  const Tensor y = ad::sum(ad::square(ad::add(x, Tensor::vector({3, 4}))));
  ASSERT_TRUE(y.taped());
  for (std::size_t i = 0; i < tape.size(); ++i)
    for (int p : tape.parents(static_cast<int>(i))) EXPECT_LT(p, static_cast<int>(i));
  EXPECT_EQ(tape.kind(y.node()), ad::OpKind::Sum);
}

TEST(Backward, SumGivesOnes) {
  ad::Tape tape;
  const Tensor x = tape.leaf(Tensor::vector({1, -2, 3}));
  const auto g = tape.backward(ad::sum(x)).of(x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(g[i], 1.0);
}

TEST(Backward, PowerRule) {
  ad::Tape tape;
  const Tensor x = tape.leaf(Tensor::scalar(3.0));
  EXPECT_DOUBLE_EQ(tape.backward(ad::mul(x, x)).of(x)[0], 6.0);
}

TEST(Backward, TwoLayerReluMlpMatchesFiniteDifferences) {
  Rng rng(7);
  const nn::Mlp net = nn::Mlp::init({5, 8, 1}, nn::Activation::Relu, 11);
  const Tensor x = uniform(Shape{1, 5}, rng);
  expect_grad_ok([&](const Tensor& in) { return ad::sum(net.forward(in)); }, x, "mlp input");
}

TEST(Backward, UnreachableLeafGetsZeros) {
  ad::Tape tape;
  const Tensor x = tape.leaf(Tensor::vector({1, 2}));
  const Tensor unused = tape.leaf(Tensor::matrix({{1, 2}, {3, 4}}));
  const auto grads = tape.backward(ad::sum(x));
  const Tensor& g = grads.of(unused);
  EXPECT_EQ(g.shape(), unused.shape());
  for (double v : g.data()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, RejectsNonScalarOrUntapedLoss) {
  ad::Tape tape;
  const Tensor x = tape.leaf(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(x), ShapeError);
  EXPECT_THROW(tape.backward(Tensor::scalar(1.0)), InvalidArgument);
}

TEST(Backward, IsLinearInTheLoss) {
  Rng rng(3);
  const Tensor x0 = uniform(Shape{3, 4}, rng);
  auto f = [](const Tensor& x) { return ad::sum(ad::softplus(ad::mul(x, x))); };
  auto g = [](const Tensor& x) { return ad::mean(ad::exp(ad::scale(x, 0.5))); };
  const double a = 1.7, b = -0.4;
  ad::Tape t1, t2, t3;
  const Tensor x1 = t1.leaf(x0), x2 = t2.leaf(x0), x3 = t3.leaf(x0);
  const Tensor gf = t1.backward(f(x1)).of(x1);
  const Tensor gg = t2.backward(g(x2)).of(x2);
  const Tensor gc = t3.backward(ad::add(ad::scale(f(x3), a), ad::scale(g(x3), b))).of(x3);
  for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(gc[i], a * gf[i] + b * gg[i], 1e-12);
}

TEST(Tape, ReplayIsBitIdentical) {
  Rng rng(5);
  ad::Tape tape;
  const Tensor x = tape.leaf(uniform(Shape{4, 3}, rng));
  const Tensor w = tape.leaf(uniform(Shape{3, 2}, rng));
  const Tensor y = ad::logsumexp_last(ad::softplus(ad::matmul(x, w)));
  std::vector<Tensor> before;
  for (std::size_t i = 0; i < tape.size(); ++i) before.push_back(tape.value(static_cast<int>(i)));
  tape.set_leaf(x, x.detached());
  tape.replay();
  for (std::size_t i = 0; i < tape.size(); ++i) {
    const Tensor& v = tape.value(static_cast<int>(i));
    ASSERT_EQ(v.size(), before[i].size());
    EXPECT_EQ(std::memcmp(v.data().data(), before[i].data().data(), v.size() * sizeof(double)), 0);
  }
  (void)y;
}

// Every op kind against central finite differences on random inputs in
// [-2, 2] with shapes of at most 8 per dimension.
TEST(OpGradients, EveryOpKindMatchesFiniteDifferences) {
  Rng rng(2024);
  const Tensor a = uniform(Shape{3, 4}, rng);
  const Tensor b = uniform(Shape{3, 4}, rng);
  const Tensor m = uniform(Shape{4, 5}, rng);
  const Tensor pos = uniform(Shape{3, 4}, rng, 0.2, 2.0);
  const Tensor row = uniform(Shape{4}, rng);

  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::matmul(x, m), 1); }, a, "matmul lhs");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::matmul(a, x), 2); }, m, "matmul rhs");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::add(x, b), 3); }, a, "add");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::add(a, x), 3); }, row, "add broadcast");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::sub(x, b), 4); }, a, "sub lhs");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::sub(a, x), 4); }, b, "sub rhs");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::mul(x, b), 5); }, a, "mul");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::mul(b, x), 5); }, row, "mul broadcast");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::relu(x), 6); }, a, "relu");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::softplus(x), 7); }, a, "softplus");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::exp(x), 8); }, a, "exp");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::log(x), 9); }, pos, "log");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::neg(x), 10); }, a, "negate");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::square(x), 11); }, a, "square");
  expect_grad_ok([&](const Tensor& x) { return ad::sum(x); }, a, "sum");
  expect_grad_ok([&](const Tensor& x) { return ad::mean(x); }, a, "mean");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::sum_last(x), 12); }, a, "sum_last");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::scale(x, -1.3), 13); }, a, "scale");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::add_scalar(x, 0.7), 14); }, a, "add_scalar");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::clamp(x, -1.0, 1.0), 15); }, a, "clamp");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::slice(x, 1, 3), 16); }, a, "slice");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::concat(x, b), 17); }, a, "concat lhs");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::concat(b, x), 17); }, a, "concat rhs");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::select_columns(x, {3, 0, 0, 2}), 18); }, a,
                 "select_columns");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::broadcast(x, Shape{5, 4}), 19); }, row, "broadcast");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::repeat_rows(x, 3), 20); }, a, "repeat_rows");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::reshape(x, Shape{2, 6}), 21); }, a, "reshape");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::logsumexp_last(x), 22); }, a, "logsumexp");
  const Tensor lv = uniform(Shape{3, 4}, rng, -1.0, 1.0);
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::gaussian_log_density(x, b, lv), 23); }, a,
                 "gaussian x");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::gaussian_log_density(a, x, lv), 23); }, b,
                 "gaussian mean");
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::gaussian_log_density(a, b, x), 23); }, lv,
                 "gaussian logvar");

  // Spline: inputs straddle the tail bound so both the interior formula and
  // the identity tails are exercised.
  const int bins = 8;
  const std::size_t p = detail::spline_raw_count(bins);
  const Tensor sx = uniform(Shape{4, 2}, rng, -3.5, 3.5);
  const Tensor raw = uniform(Shape{4, 2 * p}, rng);
  expect_grad_ok([&](const Tensor& x) { return weighted_sum(ad::rq_spline_transform(x, raw, bins, 3.0), 24); }, sx,
                 "spline x");
  expect_grad_ok([&](const Tensor& r) { return weighted_sum(ad::rq_spline_transform(sx, r, bins, 3.0), 25); }, raw,
                 "spline params");
}

TEST(OpGradients, ReluKinksAreExcludedNotFailed) {
  const Tensor x = Tensor::vector({1e-6, 1.0, -1.0});
  const auto r = grad_check([](const Tensor& v) { return ad::sum(ad::relu(v)); }, x);
  ASSERT_EQ(r.kinks.size(), 1u);
  EXPECT_EQ(r.kinks[0], 0u);
  EXPECT_EQ(r.checked, 2u);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheck, LinearFunctionIsExact) {
  Rng rng(1);
  const Tensor x = uniform(Shape{6}, rng);
  const Tensor w = uniform(Shape{6}, rng);
  const auto r = grad_check([&](const Tensor& v) { return ad::add_scalar(ad::sum(ad::mul(v, w)), 3.0); }, x);
  EXPECT_LE(r.max_rel_error, 1e-10);
  EXPECT_EQ(r.checked, 6u);
}

TEST(GradCheck, SoftplusAtHalf) {
  const auto r = grad_check([](const Tensor& v) { return ad::sum(ad::softplus(v)); }, Tensor::vector({0.5}), 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, StronglyCurvedSmoothFunctionIsNotAKink) {
  // f'' = 400 e^{2x} is large but smooth; the check must still run on it.
  const auto r = grad_check([](const Tensor& v) { return ad::scale(ad::exp(ad::scale(ad::sum(v), 2.0)), 100.0); },
                            Tensor::vector({1.0}));
  EXPECT_TRUE(r.kinks.empty());
  EXPECT_EQ(r.checked, 1u);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(GradCheck, ReportsNonFiniteComponents) {
  // log is undefined 10h to the left of x[0].
  const auto r = grad_check([](const Tensor& v) { return ad::sum(ad::log(v)); }, Tensor::vector({5e-5, 1.0}));
  ASSERT_EQ(r.non_finite.size(), 1u);
  EXPECT_EQ(r.non_finite[0], 0u);
  EXPECT_EQ(r.checked, 1u);
}
