#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <optional>

#include "dgm/data.hpp"
#include "dgm/model.hpp"
#include "dgm/rng.hpp"
#include "dgm/tensor.hpp"

namespace dgm::metrics {

struct Moments {
  std::vector<double> mean;  // D
  Tensor covariance;         // (D, D)
};

Moments fit_moments(const Tensor& samples);

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2).
double frechet_from_moments(const Moments& a, const Moments& b);
/// Frechet distance between Gaussians fitted to two sample sets.
double frechet_gaussian(const Tensor& a, const Tensor& b);

/// Unit directions drawn from normalized standard normals, (n, D).
Tensor random_directions(std::size_t n, std::size_t dim, Rng& rng);
/// Mean over directions of the 1-D W1 distance between sorted projections.
double sliced_wasserstein(const Tensor& a, const Tensor& b, const Tensor& directions);
/// Unequal sample counts are reduced to the smaller one by subsampling
/// without replacement.
double sliced_wasserstein(const Tensor& a, const Tensor& b, std::size_t n_projections, Rng& rng);

struct DistanceStats {
  double mean = 0.0;
  double median = 0.0;
  double max = 0.0;
};

DistanceStats distance_to_manifold(const Tensor& samples, const data::ManifoldSpec& spec);

struct LogLikResult {
  double mean = 0.0;         // over finite values, nats per datapoint
  std::size_t n_finite = 0;
  std::size_t n_nonfinite = 0;
};

/// Mean log-density over `test` in nats per datapoint: exact for flows,
/// importance-weighted bound with `particles` samples for VAEs. Rows whose
/// value is non-finite are excluded from the mean and counted.
LogLikResult avg_log_lik(const Model& model, const Tensor& test, std::optional<double> cond_value, Rng& rng,
                         std::size_t particles = 64);

struct MetricsReport {
  double frechet = 0.0;
  double sliced_wasserstein = 0.0;
  DistanceStats dist_to_manifold;
  bool has_manifold = false;
  double avg_log_lik = 0.0;
  std::size_t iw_particles = 0;  // 0 for exact (flow) likelihoods
  std::size_t n_model_samples = 0;
  std::size_t n_reference_samples = 0;
  std::uint64_t seed = 0;
};

}  // namespace dgm::metrics
