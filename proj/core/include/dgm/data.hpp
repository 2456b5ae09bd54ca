#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "dgm/rng.hpp"
#include "dgm/tensor.hpp"

namespace dgm::data {

struct UniformDensity {};
struct VonMisesDensity {
  double kappa = 1.0;
  double loc = 0.0;
};

struct Circle {
  double radius = 1.0;
  std::variant<UniformDensity, VonMisesDensity> density = UniformDensity{};
};

/// Fixed cubic arc gamma(t) = (u, u^3 - u/2), u = 2t - 1, t in [0, 1], with
/// an unevenly weighted two-bump density over t.
struct Curve1D {};

/// Uniform distribution on the unit sphere in R^3.
struct Sphere {};

/// Standard Gaussian coefficients on a random d-dimensional linear subspace
/// of R^D; the orthonormal basis is drawn from `basis_seed`.
struct AffineSubspace {
  std::size_t intrinsic_dim = 1;
  std::size_t ambient_dim = 2;
  std::uint64_t basis_seed = 0;
};

struct ManifoldSpec {
  std::variant<Circle, Curve1D, Sphere, AffineSubspace> kind = Circle{};

  std::size_t ambient_dim() const;
  std::size_t intrinsic_dim() const;
  std::string name() const;
  void validate() const;
};

/// Nearest manifold point for every row of x.
Tensor project(const ManifoldSpec& spec, const Tensor& x);

/// The curve embedding, exposed for tests and plotting.
std::pair<double, double> curve_point(double t);

struct ManifoldDataset {
  Tensor samples;  // (n, D)
  ManifoldSpec spec;

  Tensor project(const Tensor& x) const { return data::project(spec, x); }
};

ManifoldDataset generate(const ManifoldSpec& spec, std::size_t n, std::uint64_t seed);

/// y = (x - offset) A^T, with A stored row-major (D, D).
struct AffineTransform {
  std::vector<double> offset;
  Tensor matrix;
  Tensor inverse_matrix;
  double log_abs_det = 0.0;  // log|det A|

  static AffineTransform identity(std::size_t dim);
  std::size_t dim() const noexcept { return offset.size(); }
  Tensor forward(const Tensor& x) const;
  Tensor inverse(const Tensor& y) const;
};

/// Per-coordinate min -> 0, max -> 1 over `train`.
AffineTransform fit_scale_01(const Tensor& train);
/// ZCA whitening (eigendecomposition of the sample covariance).
AffineTransform fit_whiten(const Tensor& train);

std::pair<Tensor, AffineTransform> scale_01(const Tensor& train);
std::pair<Tensor, AffineTransform> whiten(const Tensor& train);

struct Split {
  Tensor train;
  Tensor val;
};
/// Leading rows train, trailing `val_fraction` rows validation.
Split train_val_split(const Tensor& samples, double val_fraction);

/// IDX (big-endian, unsigned-byte payload) to an (n, D) array scaled by 1/255.
Tensor parse_idx(std::span<const std::uint8_t> bytes);
Tensor load_idx(const std::filesystem::path& path);

}  // namespace dgm::data
