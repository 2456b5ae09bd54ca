#include "dgm/data.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "dgm/error.hpp"

namespace dgm::data {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

Eigen::MatrixXd subspace_basis(const AffineSubspace& a) {
  Rng rng(split_seed(a.basis_seed, 77));
  std::normal_distribution<double> normal;
  Eigen::MatrixXd g(static_cast<Eigen::Index>(a.ambient_dim), static_cast<Eigen::Index>(a.intrinsic_dim));
  for (Eigen::Index c = 0; c < g.cols(); ++c)
    for (Eigen::Index r = 0; r < g.rows(); ++r) g(r, c) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  return qr.householderQ() * Eigen::MatrixXd::Identity(g.rows(), g.cols());
}

// Mixture of two bumps over t, truncated to [0, 1].
double sample_curve_t(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> normal;
  for (;;) {
    const bool first = u(rng) < 0.7;
    const double t = (first ? 0.25 : 0.75) + 0.08 * normal(rng);
    if (t >= 0.0 && t <= 1.0) return t;
  }
}

// Best & Fisher (1979) rejection sampler.
double sample_von_mises(double kappa, double loc, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (kappa < 1e-8) return loc + std::numbers::pi * (2.0 * u(rng) - 1.0);
  const double a = 1.0 + std::sqrt(1.0 + 4.0 * kappa * kappa);
  const double b = (a - std::sqrt(2.0 * a)) / (2.0 * kappa);
  const double r = (1.0 + b * b) / (2.0 * b);
  for (;;) {
    const double u1 = u(rng), u2 = u(rng), u3 = u(rng);
    const double z = std::cos(std::numbers::pi * u1);
    const double f = (1.0 + r * z) / (r + z);
    const double c = kappa * (r - f);
    if (c * (2.0 - c) - u2 > 0.0 || std::log(c / u2) + 1.0 - c >= 0.0) {
      const double theta = (u3 > 0.5 ? 1.0 : -1.0) * std::acos(std::clamp(f, -1.0, 1.0));
      return std::remainder(theta + loc, 2.0 * std::numbers::pi);
    }
  }
}

double curve_sqdist(double t, double x, double y) {
  const auto [cx, cy] = curve_point(t);
  return (cx - x) * (cx - x) + (cy - y) * (cy - y);
}

// Nearest point on the curve: dense grid, then Newton on the squared distance.
double curve_nearest_t(double x, double y) {
  constexpr int kGrid = 4000;
  double best_t = 0.0, best = curve_sqdist(0.0, x, y);
  for (int i = 1; i <= kGrid; ++i) {
    const double t = static_cast<double>(i) / kGrid;
    const double d = curve_sqdist(t, x, y);
    if (d < best) {
      best = d;
      best_t = t;
    }
  }
  double t = best_t;
  for (int it = 0; it < 50; ++it) {
    const double u = 2.0 * t - 1.0;
    const auto [cx, cy] = curve_point(t);
    // d gamma / dt and d^2 gamma / dt^2
    const double dx = 2.0, dy = 2.0 * (3.0 * u * u - 0.5);
    const double ddy = 24.0 * u;
    const double g = (cx - x) * dx + (cy - y) * dy;
    const double h = dx * dx + dy * dy + (cy - y) * ddy;
    if (h <= 0.0) break;
    const double next = std::clamp(t - g / h, 0.0, 1.0);
    if (std::abs(next - t) < 1e-16) {
      t = next;
      break;
    }
    t = next;
  }
  return curve_sqdist(t, x, y) <= best ? t : best_t;
}

}  // namespace

std::pair<double, double> curve_point(double t) {
  const double u = 2.0 * t - 1.0;
  return {u, u * u * u - 0.5 * u};
}

std::size_t ManifoldSpec::ambient_dim() const {
  return std::visit(overloaded{[](const Circle&) -> std::size_t { return 2; },
                               [](const Curve1D&) -> std::size_t { return 2; },
                               [](const Sphere&) -> std::size_t { return 3; },
                               [](const AffineSubspace& a) { return a.ambient_dim; }},
                    kind);
}

std::size_t ManifoldSpec::intrinsic_dim() const {
  return std::visit(overloaded{[](const Circle&) -> std::size_t { return 1; },
                               [](const Curve1D&) -> std::size_t { return 1; },
                               [](const Sphere&) -> std::size_t { return 2; },
                               [](const AffineSubspace& a) { return a.intrinsic_dim; }},
                    kind);
}

std::string ManifoldSpec::name() const {
  return std::visit(overloaded{[](const Circle&) -> std::string { return "circle"; },
                               [](const Curve1D&) -> std::string { return "curve"; },
                               [](const Sphere&) -> std::string { return "sphere"; },
                               [](const AffineSubspace&) -> std::string { return "affine"; }},
                    kind);
}

void ManifoldSpec::validate() const {
  if (const auto* c = std::get_if<Circle>(&kind)) {
    if (!(c->radius > 0.0)) throw InvalidArgument("circle radius must be positive");
    if (const auto* vm = std::get_if<VonMisesDensity>(&c->density); vm && !(vm->kappa >= 0.0))
      throw InvalidArgument("von Mises concentration must be >= 0");
  }
  if (const auto* a = std::get_if<AffineSubspace>(&kind)) {
    if (a->intrinsic_dim == 0 || a->intrinsic_dim >= a->ambient_dim)
      throw InvalidArgument("affine subspace needs 0 < d < D");
  }
}

Tensor project(const ManifoldSpec& spec, const Tensor& x) {
  const std::size_t dim = spec.ambient_dim();
  if (x.rank() != 2 || x.shape()[1] != dim)
    throw ShapeError("project: expected (n," + std::to_string(dim) + ") points, got " + shape_str(x.shape()));
  const std::size_t n = x.shape()[0];
  Tensor out(x.shape());
  auto radial = [&](double radius) {
    for (std::size_t r = 0; r < n; ++r) {
      double norm = 0.0;
      for (std::size_t c = 0; c < dim; ++c) norm += x.at(r, c) * x.at(r, c);
      norm = std::sqrt(norm);
      for (std::size_t c = 0; c < dim; ++c) {
        if (norm == 0.0)
          out.at(r, c) = c == 0 ? radius : 0.0;
        else
          out.at(r, c) = x.at(r, c) * (radius / norm);
      }
    }
  };
  std::visit(overloaded{[&](const Circle& c) { radial(c.radius); }, [&](const Sphere&) { radial(1.0); },
                        [&](const Curve1D&) {
                          for (std::size_t r = 0; r < n; ++r) {
                            const auto [cx, cy] = curve_point(curve_nearest_t(x.at(r, 0), x.at(r, 1)));
                            out.at(r, 0) = cx;
                            out.at(r, 1) = cy;
                          }
                        },
                        [&](const AffineSubspace& a) {
                          const Eigen::MatrixXd b = subspace_basis(a);
                          Eigen::Map<const RowMat> xm(x.data().data(), static_cast<Eigen::Index>(n),
                                                      static_cast<Eigen::Index>(dim));
                          Eigen::Map<RowMat> om(out.data().data(), static_cast<Eigen::Index>(n),
                                                static_cast<Eigen::Index>(dim));
                          om = (xm * b) * b.transpose();
                        }},
             spec.kind);
  return out;
}

ManifoldDataset generate(const ManifoldSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  if (n == 0) throw InvalidArgument("generate: n must be >= 1");
  Rng rng(split_seed(seed, 0xDA7A));
  const std::size_t dim = spec.ambient_dim();
  Tensor s(Shape{n, dim});
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform(-std::numbers::pi, std::numbers::pi);
  std::visit(overloaded{[&](const Circle& c) {
                          for (std::size_t i = 0; i < n; ++i) {
                            double theta = 0.0;
                            if (const auto* vm = std::get_if<VonMisesDensity>(&c.density))
                              theta = sample_von_mises(vm->kappa, vm->loc, rng);
                            else
                              theta = uniform(rng);
                            s.at(i, 0) = c.radius * std::cos(theta);
                            s.at(i, 1) = c.radius * std::sin(theta);
                          }
                        },
                        [&](const Curve1D&) {
                          for (std::size_t i = 0; i < n; ++i) {
                            const auto [cx, cy] = curve_point(sample_curve_t(rng));
                            s.at(i, 0) = cx;
                            s.at(i, 1) = cy;
                          }
                        },
                        [&](const Sphere&) {
                          for (std::size_t i = 0; i < n; ++i) {
                            double v[3], norm = 0.0;
                            do {
                              norm = 0.0;
                              for (double& c : v) {
                                c = normal(rng);
                                norm += c * c;
                              }
                            } while (norm < 1e-24);
                            norm = std::sqrt(norm);
                            for (std::size_t c = 0; c < 3; ++c) s.at(i, c) = v[c] / norm;
                          }
                        },
                        [&](const AffineSubspace& a) {
                          const Eigen::MatrixXd b = subspace_basis(a);
                          for (std::size_t i = 0; i < n; ++i) {
                            Eigen::VectorXd coeff(static_cast<Eigen::Index>(a.intrinsic_dim));
                            for (Eigen::Index k = 0; k < coeff.size(); ++k) coeff(k) = normal(rng);
                            const Eigen::VectorXd p = b * coeff;
                            for (std::size_t c = 0; c < dim; ++c) s.at(i, c) = p(static_cast<Eigen::Index>(c));
                          }
                        }},
             spec.kind);
  return ManifoldDataset{std::move(s), spec};
}

// ---------------------------------------------------------------------------
// Preprocessing

AffineTransform AffineTransform::identity(std::size_t dim) {
  AffineTransform t;
  t.offset.assign(dim, 0.0);
  t.matrix = Tensor(Shape{dim, dim});
  for (std::size_t i = 0; i < dim; ++i) t.matrix.at(i, i) = 1.0;
  t.inverse_matrix = t.matrix;
  return t;
}

Tensor AffineTransform::forward(const Tensor& x) const {
  const std::size_t d = dim();
  if (x.rank() != 2 || x.shape()[1] != d) throw ShapeError("AffineTransform: dimension mismatch");
  const auto n = static_cast<Eigen::Index>(x.shape()[0]);
  const auto dd = static_cast<Eigen::Index>(d);
  Eigen::Map<const RowMat> xm(x.data().data(), n, dd);
  Eigen::Map<const RowMat> a(matrix.data().data(), dd, dd);
  Eigen::Map<const Eigen::RowVectorXd> off(offset.data(), dd);
  Tensor out(x.shape());
  Eigen::Map<RowMat>(out.data().data(), n, dd) = (xm.rowwise() - off) * a.transpose();
  return out;
}

Tensor AffineTransform::inverse(const Tensor& y) const {
  const std::size_t d = dim();
  if (y.rank() != 2 || y.shape()[1] != d) throw ShapeError("AffineTransform: dimension mismatch");
  const auto n = static_cast<Eigen::Index>(y.shape()[0]);
  const auto dd = static_cast<Eigen::Index>(d);
  Eigen::Map<const RowMat> ym(y.data().data(), n, dd);
  Eigen::Map<const RowMat> ai(inverse_matrix.data().data(), dd, dd);
  Eigen::Map<const Eigen::RowVectorXd> off(offset.data(), dd);
  Tensor out(y.shape());
  Eigen::Map<RowMat>(out.data().data(), n, dd) = (ym * ai.transpose()).rowwise() + off;
  return out;
}

AffineTransform fit_scale_01(const Tensor& train) {
  if (train.rank() != 2 || train.shape()[0] == 0) throw ShapeError("scale_01: expected non-empty (n, D)");
  const std::size_t n = train.shape()[0], d = train.shape()[1];
  AffineTransform t = AffineTransform::identity(d);
  t.log_abs_det = 0.0;
  for (std::size_t c = 0; c < d; ++c) {
    double lo = train.at(0, c), hi = lo;
    for (std::size_t r = 1; r < n; ++r) {
      lo = std::min(lo, train.at(r, c));
      hi = std::max(hi, train.at(r, c));
    }
    if (!(hi > lo)) throw InvalidArgument("scale_01: coordinate " + std::to_string(c) + " is constant");
    t.offset[c] = lo;
    t.matrix.at(c, c) = 1.0 / (hi - lo);
    t.inverse_matrix.at(c, c) = hi - lo;
    t.log_abs_det -= std::log(hi - lo);
  }
  return t;
}

AffineTransform fit_whiten(const Tensor& train) {
  if (train.rank() != 2 || train.shape()[0] < 2) throw ShapeError("whiten: expected (n >= 2, D)");
  const auto n = static_cast<Eigen::Index>(train.shape()[0]);
  const auto d = static_cast<Eigen::Index>(train.shape()[1]);
  Eigen::Map<const RowMat> x(train.data().data(), n, d);
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const RowMat centered = x.rowwise() - mu;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  Eigen::VectorXd lambda = eig.eigenvalues();
  if (!(lambda.maxCoeff() > 1e-12)) throw NumericError("whiten: covariance is singular (no variance)");
  if (lambda.minCoeff() < 1e-6) lambda.array() += 1e-6;
  if (!(lambda.minCoeff() > 0.0)) throw NumericError("whiten: covariance is singular even after ridge");
  const Eigen::MatrixXd& u = eig.eigenvectors();
  const Eigen::MatrixXd w = u * lambda.cwiseInverse().cwiseSqrt().asDiagonal() * u.transpose();
  const Eigen::MatrixXd wi = u * lambda.cwiseSqrt().asDiagonal() * u.transpose();
  AffineTransform t;
  t.offset.assign(mu.data(), mu.data() + d);
  t.matrix = Tensor(Shape{static_cast<std::size_t>(d), static_cast<std::size_t>(d)});
  t.inverse_matrix = t.matrix;
  Eigen::Map<RowMat>(t.matrix.data().data(), d, d) = w;
  Eigen::Map<RowMat>(t.inverse_matrix.data().data(), d, d) = wi;
  t.log_abs_det = -0.5 * lambda.array().log().sum();
  return t;
}

std::pair<Tensor, AffineTransform> scale_01(const Tensor& train) {
  AffineTransform t = fit_scale_01(train);
  Tensor y = t.forward(train);
  return {std::move(y), std::move(t)};
}

std::pair<Tensor, AffineTransform> whiten(const Tensor& train) {
  AffineTransform t = fit_whiten(train);
  Tensor y = t.forward(train);
  return {std::move(y), std::move(t)};
}

Split train_val_split(const Tensor& samples, double val_fraction) {
  if (samples.rank() != 2) throw ShapeError("train_val_split: expected (n, D)");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw InvalidArgument("train_val_split: fraction in [0, 1)");
  const std::size_t n = samples.shape()[0];
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  if (n_val >= n) throw InvalidArgument("train_val_split: no training rows left");
  return {samples.rows_slice(0, n - n_val), samples.rows_slice(n - n_val, n)};
}

// ---------------------------------------------------------------------------
// IDX

Tensor parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FormatError("IDX: file shorter than the magic number");
  const std::uint32_t magic = (std::uint32_t{bytes[0]} << 24) | (std::uint32_t{bytes[1]} << 16) |
                              (std::uint32_t{bytes[2]} << 8) | std::uint32_t{bytes[3]};
  if (magic != 0x00000803 && magic != 0x00000801) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08X", magic);
    throw FormatError(std::string("IDX: unsupported magic ") + buf);
  }
  const std::size_t ndim = bytes[3];
  const std::size_t header = 4 + 4 * ndim;
  if (bytes.size() < header) throw FormatError("IDX: truncated dimension header");
  std::vector<std::size_t> dims(ndim);
  for (std::size_t i = 0; i < ndim; ++i) {
    const auto* p = bytes.data() + 4 + 4 * i;
    dims[i] = (std::size_t{p[0]} << 24) | (std::size_t{p[1]} << 16) | (std::size_t{p[2]} << 8) | std::size_t{p[3]};
  }
  const std::size_t n = dims[0];
  std::size_t row = 1;
  for (std::size_t i = 1; i < ndim; ++i) row *= dims[i];
  const std::size_t payload = n * row;
  if (bytes.size() - header != payload)
    throw FormatError("IDX: declared dimensions need " + std::to_string(payload) + " payload bytes, found " +
                      std::to_string(bytes.size() - header) + " (truncated or padded)");
  Tensor out(Shape{n, row});
  for (std::size_t i = 0; i < payload; ++i) out[i] = static_cast<double>(bytes[header + i]) / 255.0;
  return out;
}

Tensor load_idx(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("IDX: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_idx(bytes);
}

}  // namespace dgm::data
