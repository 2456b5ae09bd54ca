#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "dgm/data.hpp"
#include "dgm/error.hpp"
#include "oracles.hpp"

using namespace dgm;
using namespace dgm::data;

namespace {

double norm_row(const Tensor& x, std::size_t i) {
  double s = 0;
  for (std::size_t j = 0; j < x.cols(); ++j) s += x.at(i, j) * x.at(i, j);
  return std::sqrt(s);
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

Eigen::MatrixXd sample_cov(const Tensor& x) {
  const Eigen::MatrixXd m = dgm::testing::to_eigen(x);
  const Eigen::RowVectorXd mean = m.colwise().mean();
  const Eigen::MatrixXd c = m.rowwise() - mean;
  return c.transpose() * c / static_cast<double>(m.rows());
}

}  // namespace

TEST(Generate, CirclePointsLieOnCircle) {
  ManifoldSpec spec;
  const auto ds = generate(spec, 1000, 1);
  ASSERT_EQ(ds.samples.shape(), (Shape{1000, 2}));
  for (std::size_t i = 0; i < 1000; ++i) EXPECT_NEAR(norm_row(ds.samples, i), 1.0, 1e-12);

  ManifoldSpec big{Circle{2.5, VonMisesDensity{4.0, 1.0}}};
  const auto b = generate(big, 200, 2);
  for (std::size_t i = 0; i < 200; ++i) EXPECT_NEAR(norm_row(b.samples, i), 2.5, 1e-12);
}

TEST(Generate, VonMisesZeroConcentrationIsUniform) {
  ManifoldSpec spec{Circle{1.0, VonMisesDensity{0.0, 0.7}}};
  const std::size_t n = 100000;
  const auto ds = generate(spec, n, 3);
  std::vector<double> counts(8, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double a = std::atan2(ds.samples.at(i, 1), ds.samples.at(i, 0));
    if (a < 0) a += 2 * std::numbers::pi;
    counts[std::min<std::size_t>(7, static_cast<std::size_t>(a / (2 * std::numbers::pi) * 8))] += 1;
  }
  const double sd = std::sqrt(n * (1.0 / 8) * (7.0 / 8));
  for (double c : counts) EXPECT_LT(std::abs(c - n / 8.0), 3 * sd);
}

TEST(Generate, VonMisesConcentratesAroundLocation) {
  ManifoldSpec spec{Circle{1.0, VonMisesDensity{20.0, 0.5}}};
  const auto ds = generate(spec, 5000, 4);
  double mean_cos = 0;
  for (std::size_t i = 0; i < 5000; ++i)
    mean_cos += std::cos(std::atan2(ds.samples.at(i, 1), ds.samples.at(i, 0)) - 0.5) / 5000;
  // E[cos] = I1(k)/I0(k) ~ 1 - 1/(2k) for large k.
  EXPECT_NEAR(mean_cos, 1 - 1 / 40.0, 0.01);
}

TEST(Generate, AffineSubspaceHasIntrinsicRank) {
  ManifoldSpec spec{AffineSubspace{2, 5, 7}};
  const auto ds = generate(spec, 500, 5);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(dgm::testing::to_eigen(ds.samples));
  const auto s = svd.singularValues();
  EXPECT_LT(s(2), 1e-9 * s(0));
  EXPECT_GT(s(1), 1e-3 * s(0));
}

TEST(Generate, CurveAndSphereOnManifold) {
  for (ManifoldSpec spec : {ManifoldSpec{Curve1D{}}, ManifoldSpec{Sphere{}}}) {
    const auto ds = generate(spec, 300, 6);
    const Tensor p = project(spec, ds.samples);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) EXPECT_NEAR(p[i], ds.samples[i], 1e-9) << spec.name();
  }
  ManifoldSpec sphere{Sphere{}};
  const auto s = generate(sphere, 100, 7);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_NEAR(norm_row(s.samples, i), 1.0, 1e-12);
}

TEST(Generate, DeterministicInSeed) {
  ManifoldSpec spec{Curve1D{}};
  const auto a = generate(spec, 100, 8), b = generate(spec, 100, 8), c = generate(spec, 100, 9);
  EXPECT_EQ(a.samples.storage(), b.samples.storage());
  EXPECT_NE(a.samples.storage(), c.samples.storage());
}

TEST(Generate, InvalidSpecRejected) {
  EXPECT_THROW(generate(ManifoldSpec{Circle{-1.0}}, 10, 0), InvalidArgument);
  EXPECT_THROW(generate(ManifoldSpec{Circle{1.0, VonMisesDensity{-2.0}}}, 10, 0), InvalidArgument);
  EXPECT_THROW(generate(ManifoldSpec{AffineSubspace{3, 3, 0}}, 10, 0), InvalidArgument);
  EXPECT_THROW(generate(ManifoldSpec{}, 0, 0), InvalidArgument);
}

TEST(Project, Idempotent) {
  Rng rng(10);
  for (ManifoldSpec spec : {ManifoldSpec{Circle{1.5}}, ManifoldSpec{Curve1D{}}, ManifoldSpec{Sphere{}},
                            ManifoldSpec{AffineSubspace{2, 4, 3}}}) {
    const Tensor x = Tensor::randn(Shape{200, spec.ambient_dim()}, rng);
    const Tensor p = project(spec, x), pp = project(spec, p);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(pp[i], p[i], 1e-12) << spec.name();
  }
}

TEST(Project, CircleDistanceIsRadialGap) {
  ManifoldSpec spec{Circle{2.0}};
  Rng rng(11);
  const Tensor x = Tensor::randn(Shape{500, 2}, rng);
  const Tensor p = project(spec, x);
  for (std::size_t i = 0; i < 500; ++i) {
    const double d = std::hypot(x.at(i, 0) - p.at(i, 0), x.at(i, 1) - p.at(i, 1));
    EXPECT_NEAR(d, std::abs(norm_row(x, i) - 2.0), 1e-12);
  }
}

TEST(Project, CurveNearestPointBeatsDenseSearch) {
  ManifoldSpec spec{Curve1D{}};
  Rng rng(12);
  const Tensor x = Tensor::randn(Shape{50, 2}, rng);
  const Tensor p = project(spec, x);
  for (std::size_t i = 0; i < 50; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= 20000; ++k) {
      const auto [u, v] = curve_point(k / 20000.0);
      best = std::min(best, std::hypot(x.at(i, 0) - u, x.at(i, 1) - v));
    }
    EXPECT_LE(std::hypot(x.at(i, 0) - p.at(i, 0), x.at(i, 1) - p.at(i, 1)), best + 1e-9);
  }
}

TEST(Project, ShapeChecked) {
  EXPECT_THROW(project(ManifoldSpec{}, Tensor(Shape{3, 3})), ShapeError);
}

TEST(Scale01, FixedPointAndMapping) {
  const Tensor unit = Tensor::matrix({{0.0, 1.0}, {1.0, 0.0}, {0.5, 0.25}});
  const auto [y, t] = scale_01(unit);
  for (std::size_t i = 0; i < unit.size(); ++i) EXPECT_EQ(y[i], unit[i]);

  const Tensor x = Tensor::matrix({{-1.0}, {3.0}, {1.0}});
  const auto [z, s] = scale_01(x);
  EXPECT_EQ(z[0], 0.0);
  EXPECT_EQ(z[1], 1.0);
  EXPECT_EQ(z[2], 0.5);
  EXPECT_NEAR(s.log_abs_det, -std::log(4.0), 1e-15);
}

TEST(Scale01, RoundTripAndErrors) {
  Rng rng(13);
  const Tensor x = Tensor::randn(Shape{100, 3}, rng);
  const auto t = fit_scale_01(x);
  const Tensor back = t.inverse(t.forward(x));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back[i], x[i], 1e-12);
  EXPECT_THROW(fit_scale_01(Tensor::matrix({{1.0, 2.0}, {1.0, 3.0}})), InvalidArgument);
}

TEST(Whiten, WhiteDataGivesNearIdentity) {
  Rng rng(14);
  const Tensor x = Tensor::randn(Shape{100000, 3}, rng);
  const auto t = fit_whiten(x);
  Eigen::Matrix3d a;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) a(i, j) = t.matrix.at(i, j);
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(a - Eigen::Matrix3d::Identity());
  EXPECT_LT(svd.singularValues()(0), 0.05);
}

TEST(Whiten, TrainCovarianceIsIdentity) {
  Rng rng(15);
  const Eigen::MatrixXd L = dgm::testing::random_spd(3, rng).llt().matrixL();
  const Tensor z = Tensor::randn(Shape{400, 3}, rng);
  const Tensor x = dgm::testing::from_eigen((dgm::testing::to_eigen(z) * L.transpose()).eval());
  const auto [y, t] = whiten(x);
  const Eigen::MatrixXd c = sample_cov(y);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i != j) {
        EXPECT_LT(std::abs(c(i, j)), 1e-10);
      }
    }
  }
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(c(i, i), 1.0, 1e-4);
  const Eigen::RowVectorXd mean = dgm::testing::to_eigen(y).colwise().mean();
  EXPECT_LT(mean.norm(), 1e-12);
  const Tensor back = t.inverse(y);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back[i], x[i], 1e-9);
}

TEST(Whiten, SingularCovarianceRejected) {
  EXPECT_THROW(fit_whiten(Tensor::matrix({{1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}})), NumericError);
}

TEST(Split, TrailingRowsAreValidation) {
  const Tensor x = Tensor::matrix({{0.0}, {1.0}, {2.0}, {3.0}, {4.0}, {5.0}, {6.0}, {7.0}, {8.0}, {9.0}});
  const auto s = train_val_split(x, 0.2);
  ASSERT_EQ(s.train.rows(), 8u);
  ASSERT_EQ(s.val.rows(), 2u);
  EXPECT_EQ(s.val[0], 8.0);
  EXPECT_THROW(train_val_split(x, 1.0), InvalidArgument);
}

TEST(Idx, HandBuiltImages) {
  std::vector<std::uint8_t> bytes;
  put_be32(bytes, 0x00000803);
  put_be32(bytes, 2);
  put_be32(bytes, 2);
  put_be32(bytes, 2);
  for (std::uint8_t b : {0, 255, 51, 102, 1, 2, 3, 4}) bytes.push_back(b);
  const Tensor x = parse_idx(bytes);
  ASSERT_EQ(x.shape(), (Shape{2, 4}));
  const std::vector<double> expected{0.0, 1.0, 0.2, 0.4, 1 / 255.0, 2 / 255.0, 3 / 255.0, 4 / 255.0};
  for (std::size_t i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(x[i], expected[i]);
}

TEST(Idx, Labels) {
  std::vector<std::uint8_t> bytes;
  put_be32(bytes, 0x00000801);
  put_be32(bytes, 3);
  for (std::uint8_t b : {7, 0, 9}) bytes.push_back(b);
  const Tensor x = parse_idx(bytes);
  ASSERT_EQ(x.rows(), 3u);
  EXPECT_DOUBLE_EQ(x[2], 9 / 255.0);
}

TEST(Idx, BadMagicAndTruncation) {
  std::vector<std::uint8_t> bad;
  put_be32(bad, 0x00000000);
  EXPECT_THROW(parse_idx(bad), FormatError);

  std::vector<std::uint8_t> shortp;
  put_be32(shortp, 0x00000803);
  put_be32(shortp, 2);
  put_be32(shortp, 2);
  put_be32(shortp, 2);
  for (int i = 0; i < 7; ++i) shortp.push_back(1);
  EXPECT_THROW(parse_idx(shortp), FormatError);
  EXPECT_THROW(load_idx("/nonexistent/file.idx"), FormatError);
}
