#include "dgm/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "dgm/error.hpp"

namespace dgm::metrics {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

Moments fit_moments(const Tensor& samples) {
  if (samples.rank() != 2) throw ShapeError("fit_moments: expected (n, D)");
  const auto n = static_cast<Eigen::Index>(samples.shape()[0]);
  const auto d = static_cast<Eigen::Index>(samples.shape()[1]);
  if (n < d + 1) throw InvalidArgument("fit_moments: need at least D+1 samples");
  Eigen::Map<const RowMat> x(samples.data().data(), n, d);
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const RowMat c = x.rowwise() - mu;
  const Eigen::MatrixXd cov = (c.transpose() * c) / static_cast<double>(n - 1);
  Moments m;
  m.mean.assign(mu.data(), mu.data() + d);
  m.covariance = Tensor(Shape{static_cast<std::size_t>(d), static_cast<std::size_t>(d)});
  Eigen::Map<RowMat>(m.covariance.data().data(), d, d) = cov;
  return m;
}

double frechet_from_moments(const Moments& a, const Moments& b) {
  const auto d = static_cast<Eigen::Index>(a.mean.size());
  if (static_cast<Eigen::Index>(b.mean.size()) != d) throw ShapeError("frechet: dimension mismatch");
  const Eigen::Map<const Eigen::VectorXd> ma(a.mean.data(), d), mb(b.mean.data(), d);
  const Eigen::MatrixXd ridge = 1e-10 * Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd sa = Eigen::Map<const RowMat>(a.covariance.data().data(), d, d) + ridge;
  const Eigen::MatrixXd sb = Eigen::Map<const RowMat>(b.covariance.data().data(), d, d) + ridge;
  const Eigen::MatrixXd ra = sym_sqrt(sa);
  const Eigen::MatrixXd cross = sym_sqrt(ra * sb * ra);
  const double value = (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * cross.trace();
  return std::max(value, 0.0);
}

double frechet_gaussian(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1])
    throw ShapeError("frechet_gaussian: sample sets must share the ambient dimension");
  return frechet_from_moments(fit_moments(a), fit_moments(b));
}

Tensor random_directions(std::size_t n, std::size_t dim, Rng& rng) {
  if (n == 0 || dim == 0) throw InvalidArgument("random_directions: n and dim must be positive");
  Tensor dirs = Tensor::randn(Shape{n, dim}, rng);
  for (std::size_t r = 0; r < n; ++r) {
    double norm = 0.0;
    for (std::size_t c = 0; c < dim; ++c) norm += dirs.at(r, c) * dirs.at(r, c);
    norm = std::sqrt(norm);
    for (std::size_t c = 0; c < dim; ++c) dirs.at(r, c) /= norm;
  }
  return dirs;
}

double sliced_wasserstein(const Tensor& a, const Tensor& b, const Tensor& directions) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1] || directions.rank() != 2 ||
      directions.shape()[1] != a.shape()[1])
    throw ShapeError("sliced_wasserstein: ambient dimensions differ");
  if (a.shape()[0] != b.shape()[0]) throw ShapeError("sliced_wasserstein: sample counts differ");
  const std::size_t n = a.shape()[0], d = a.shape()[1];
  if (n == 0) throw InvalidArgument("sliced_wasserstein: empty sample sets");
  std::vector<double> pa(n), pb(n);
  double total = 0.0;
  for (std::size_t k = 0; k < directions.shape()[0]; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      double sa = 0.0, sb = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        sa += a.at(i, c) * directions.at(k, c);
        sb += b.at(i, c) * directions.at(k, c);
      }
      pa[i] = sa;
      pb[i] = sb;
    }
    std::sort(pa.begin(), pa.end());
    std::sort(pb.begin(), pb.end());
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i) w += std::abs(pa[i] - pb[i]);
    total += w / static_cast<double>(n);
  }
  return total / static_cast<double>(directions.shape()[0]);
}

double sliced_wasserstein(const Tensor& a, const Tensor& b, std::size_t n_projections, Rng& rng) {
  if (n_projections < 1) throw InvalidArgument("sliced_wasserstein: n_projections must be >= 1");
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1])
    throw ShapeError("sliced_wasserstein: ambient dimensions differ");
  const Tensor dirs = random_directions(n_projections, a.shape()[1], rng);
  const std::size_t na = a.shape()[0], nb = b.shape()[0];
  if (na == nb) return sliced_wasserstein(a, b, dirs);
  const std::size_t n = std::min(na, nb);
  auto subsample = [&](const Tensor& t) {
    std::vector<std::size_t> idx(t.shape()[0]);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    return t.gather_rows(idx);
  };
  return na > n ? sliced_wasserstein(subsample(a), b, dirs) : sliced_wasserstein(a, subsample(b), dirs);
}

DistanceStats distance_to_manifold(const Tensor& samples, const data::ManifoldSpec& spec) {
  const Tensor proj = data::project(spec, samples);
  const std::size_t n = samples.shape()[0], d = samples.shape()[1];
  if (n == 0) return {};
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double diff = samples.at(i, c) - proj.at(i, c);
      s += diff * diff;
    }
    dist[i] = std::sqrt(s);
  }
  DistanceStats st;
  st.mean = std::accumulate(dist.begin(), dist.end(), 0.0) / static_cast<double>(n);
  st.max = *std::max_element(dist.begin(), dist.end());
  std::sort(dist.begin(), dist.end());
  st.median = n % 2 ? dist[n / 2] : 0.5 * (dist[n / 2 - 1] + dist[n / 2]);
  return st;
}

}  // namespace dgm::metrics

namespace dgm::metrics {

LogLikResult avg_log_lik(const Model& model, const Tensor& test, std::optional<double> cond_value, Rng& rng,
                         std::size_t particles) {
  if (test.rank() != 2 || test.shape()[0] == 0) throw ShapeError("avg_log_lik: expected non-empty (n, D)");
  if (is_conditional(model) != cond_value.has_value())
    throw InvalidArgument("avg_log_lik: condition value must be given iff the model is conditional");
  const std::size_t n = test.shape()[0];
  const std::size_t chunk = std::max<std::size_t>(1, 8192 / std::max<std::size_t>(particles, 1));
  LogLikResult out;
  double total = 0.0;
  auto eval = [&](const Tensor& x) {
    std::optional<Tensor> cond;
    if (cond_value) cond = Tensor::filled(Shape{x.shape()[0], 1}, *cond_value);
    return log_likelihood(model, x, cond ? &*cond : nullptr, rng, particles);
  };
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    const Tensor x = test.rows_slice(begin, end);
    try {
      const Tensor ll = eval(x);
      for (double v : ll.data()) {
        if (std::isfinite(v)) {
          total += v;
          ++out.n_finite;
        } else {
          ++out.n_nonfinite;
        }
      }
    } catch (const NumericError&) {
      for (std::size_t r = begin; r < end; ++r) {
        try {
          const double v = eval(test.rows_slice(r, r + 1)).item();
          if (!std::isfinite(v)) throw NumericError("non-finite log-likelihood");
          total += v;
          ++out.n_finite;
        } catch (const NumericError&) {
          ++out.n_nonfinite;
        }
      }
    }
  }
  out.mean = out.n_finite ? total / static_cast<double>(out.n_finite) : std::nan("");
  return out;
}

}  // namespace dgm::metrics
