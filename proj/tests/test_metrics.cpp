#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "dgm/data.hpp"
#include "dgm/denoise.hpp"
#include "dgm/error.hpp"
#include "dgm/metrics.hpp"

using namespace dgm;
using namespace dgm::metrics;

namespace {

metrics::Moments moments(std::vector<double> mean, Tensor cov) { return {std::move(mean), std::move(cov)}; }

flow::Flow tiny_flow(std::uint64_t seed) {
  flow::FlowOptions o;
  o.groups = 1;
  o.blocks = 2;
  o.hidden = 32;
  return flow::Flow::make(o, seed);
}

}  // namespace

TEST(Frechet, ShiftedGaussiansExactMoments) {
  const Tensor eye = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}});
  EXPECT_NEAR(frechet_from_moments(moments({0, 0}, eye), moments({3, 0}, eye)), 9.0, 1e-8);
}

TEST(Frechet, DiagonalClosedForm) {
  // Commuting covariances: sum over axes of (sqrt a - sqrt b)^2.
  const Tensor a = Tensor::matrix({{4.0, 0.0}, {0.0, 1.0}}), b = Tensor::matrix({{1.0, 0.0}, {0.0, 9.0}});
  EXPECT_NEAR(frechet_from_moments(moments({1, 0}, a), moments({0, 2}, b)), 1 + 4 + 1 + 4, 1e-8);
}

TEST(Frechet, ZeroAndSymmetricOnSamples) {
  Rng rng(1);
  const Tensor a = Tensor::randn(Shape{500, 3}, rng);
  Tensor b = Tensor::randn(Shape{400, 3}, rng);
  for (double& v : b.data()) v = 1.5 * v + 0.3;
  EXPECT_NEAR(frechet_gaussian(a, a), 0.0, 1e-10);
  EXPECT_NEAR(frechet_gaussian(a, b), frechet_gaussian(b, a), 1e-10);
  EXPECT_GT(frechet_gaussian(a, b), 0.0);
}

TEST(Frechet, Errors) {
  Rng rng(2);
  EXPECT_THROW(frechet_gaussian(Tensor::randn(Shape{10, 2}, rng), Tensor::randn(Shape{10, 3}, rng)), ShapeError);
  EXPECT_THROW(fit_moments(Tensor::randn(Shape{2, 3}, rng)), InvalidArgument);
}

TEST(SlicedWasserstein, IdenticalIsZero) {
  Rng rng(3);
  const Tensor a = Tensor::randn(Shape{300, 4}, rng);
  EXPECT_EQ(sliced_wasserstein(a, a, 64, rng), 0.0);
}

TEST(SlicedWasserstein, OneDimensionalShift) {
  Rng rng(4);
  const Tensor a = Tensor::randn(Shape{1000, 1}, rng);
  Tensor b = a.detached();
  for (double& v : b.data()) v += 2.0;
  EXPECT_NEAR(sliced_wasserstein(a, b, 16, rng), 2.0, 1e-12);
}

TEST(SlicedWasserstein, NonNegativeAndTriangle) {
  Rng rng(5);
  const Tensor dirs = random_directions(50, 2, rng);
  for (int t = 0; t < 20; ++t) {
    const Tensor a = Tensor::randn(Shape{100, 2}, rng), b = Tensor::randn(Shape{100, 2}, rng);
    Tensor c = Tensor::randn(Shape{100, 2}, rng);
    for (double& v : c.data()) v *= 2;
    const double ab = sliced_wasserstein(a, b, dirs), bc = sliced_wasserstein(b, c, dirs),
                 ac = sliced_wasserstein(a, c, dirs);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ac, ab + bc + 1e-12);
  }
}

TEST(SlicedWasserstein, DirectionsAreUnit) {
  Rng rng(6);
  const Tensor d = random_directions(100, 5, rng);
  for (std::size_t i = 0; i < 100; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 5; ++j) s += d.at(i, j) * d.at(i, j);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(SlicedWasserstein, UnequalCountsSubsampled) {
  Rng rng(7);
  const Tensor a = Tensor::randn(Shape{200, 2}, rng), b = Tensor::randn(Shape{150, 2}, rng);
  const double v = sliced_wasserstein(a, b, 32, rng);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_THROW(sliced_wasserstein(a, b, 0, rng), InvalidArgument);
}

TEST(DistanceToManifold, OnManifoldAndOrigin) {
  data::ManifoldSpec circle;
  const auto ds = data::generate(circle, 500, 8);
  const auto on = distance_to_manifold(ds.samples, circle);
  EXPECT_NEAR(on.mean, 0.0, 1e-12);
  const auto origin = distance_to_manifold(Tensor(Shape{1, 2}), circle);
  EXPECT_NEAR(origin.mean, 1.0, 1e-12);
  EXPECT_NEAR(origin.max, 1.0, 1e-12);
}

TEST(DistanceToManifold, MedianAndMax) {
  data::ManifoldSpec circle;
  const Tensor x = Tensor::matrix({{1.1, 0.0}, {0.0, 0.5}, {-2.0, 0.0}});
  const auto d = distance_to_manifold(x, circle);
  EXPECT_NEAR(d.mean, (0.1 + 0.5 + 1.0) / 3, 1e-12);
  EXPECT_NEAR(d.median, 0.5, 1e-12);
  EXPECT_NEAR(d.max, 1.0, 1e-12);
}

TEST(DistanceToManifold, NoisyCircleMatchesMonteCarlo) {
  data::ManifoldSpec circle;
  const double sigma = 0.1;
  Rng rng(9);
  const Tensor x = denoise::add_noise(data::generate(circle, 100000, 10).samples, sigma, rng);
  const double mean = distance_to_manifold(x, circle).mean;

  // By rotational symmetry every point can sit at (1, 0).
  std::normal_distribution<double> g;
  Rng mc(11);
  double ref = 0;
  const int draws = 10000000;
  for (int i = 0; i < draws; ++i) ref += std::abs(std::hypot(1 + sigma * g(mc), sigma * g(mc)) - 1) / draws;
  EXPECT_NEAR(mean, ref, 0.05 * ref);
}

TEST(AvgLogLik, ZeroLayerFlowEntropy) {
  flow::Flow f;
  f.dim = 2;
  Rng rng(12);
  const Tensor x = Tensor::randn(Shape{100000, 2}, rng);
  const auto r = avg_log_lik(Model(f), x, std::nullopt, rng);
  // E[log N(x; 0, I)] = -log(2 pi) - 1 in two dimensions.
  EXPECT_NEAR(r.mean, -std::log(2 * std::numbers::pi) - 1.0, 0.02);
  EXPECT_EQ(r.n_finite, 100000u);
}

TEST(AvgLogLik, NonFiniteRowsCountedAndExcluded) {
  flow::Flow f;
  f.dim = 2;
  Tensor x = Tensor::matrix({{0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}});
  x.at(1, 0) = std::numeric_limits<double>::infinity();
  Rng rng(13);
  const auto r = avg_log_lik(Model(f), x, std::nullopt, rng);
  EXPECT_EQ(r.n_finite, 2u);
  EXPECT_EQ(r.n_nonfinite, 1u);
  EXPECT_NEAR(r.mean, -std::log(2 * std::numbers::pi), 1e-12);
}

TEST(AvgLogLik, ConditionMustMatchModel) {
  flow::Flow f;
  f.dim = 2;
  Rng rng(14);
  EXPECT_THROW(avg_log_lik(Model(f), Tensor(Shape{2, 2}), 0.0, rng), InvalidArgument);
}

TEST(AvgLogLik, OverfitBaselineTrainExceedsHeldOut) {
  data::ManifoldSpec circle;
  const Tensor train = data::generate(circle, 30, 15).samples, held = data::generate(circle, 2000, 16).samples;
  denoise::DenoisingWrapper w{denoise::Regime::Baseline, tiny_flow(17), denoise::NoiseSchedule::none()};
  denoise::TrainConfig cfg;
  cfg.epochs = 500;
  cfg.batch_size = 30;
  cfg.learning_rate = 2e-3;
  cfg.early_stopping = false;
  Rng rng(18);
  denoise::train(w, train, train.rows_slice(0, 5), cfg, rng);
  const double on_train = avg_log_lik(w.model, train, std::nullopt, rng).mean;
  const double on_held = avg_log_lik(w.model, held, std::nullopt, rng).mean;
  EXPECT_GT(on_train, on_held);
}

TEST(AvgLogLik, IncreasesWhileFittingConstantData) {
  const Tensor x = Tensor::filled(Shape{16, 2}, 0.4);
  denoise::DenoisingWrapper w{denoise::Regime::Baseline, tiny_flow(19), denoise::NoiseSchedule::none()};
  denoise::TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  cfg.learning_rate = 1e-3;
  cfg.early_stopping = false;
  Rng rng(20);
  double prev = avg_log_lik(w.model, x, std::nullopt, rng).mean;
  for (int epoch = 0; epoch < 20; ++epoch) {
    denoise::train(w, x, x, cfg, rng);
    const double now = avg_log_lik(w.model, x, std::nullopt, rng).mean;
    EXPECT_GT(now, prev) << "epoch " << epoch + 1;
    prev = now;
  }
}
