#pragma once

// Closed-form reference models shared by unit and acceptance tests.

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "dgm/nn.hpp"
#include "dgm/tensor.hpp"
#include "dgm/vae.hpp"

namespace dgm::testing {

/// x = A z + b + noise, z ~ N(0, 1), noise ~ N(0, diag(psi)), in R^2.
struct LinearGaussian {
  Eigen::Vector2d A{1.2, -0.7};
  Eigen::Vector2d b{0.3, -0.5};
  Eigen::Vector2d psi{0.25, 0.4};

  Eigen::Matrix2d marginal_cov() const { return A * A.transpose() + Eigen::Matrix2d(psi.asDiagonal()); }

  double log_marginal(const Eigen::Vector2d& x) const {
    const Eigen::Matrix2d S = marginal_cov();
    const Eigen::Vector2d r = x - b;
    return -std::log(2 * std::numbers::pi) - 0.5 * std::log(S.determinant()) - 0.5 * r.dot(S.inverse() * r);
  }

  Eigen::Vector2d score(const Eigen::Vector2d& x) const { return -(marginal_cov().inverse() * (x - b)); }

  /// Single-layer encoder/decoder. The encoder is the exact posterior
  /// q(z|x) = N(s2 A^T Psi^-1 (x - b), s2) with s2 = 1 / (1 + A^T Psi^-1 A),
  /// so the ELBO and every IW bound equal log p(x) up to Monte-Carlo error.
  vae::GaussianVae model() const {
    const double s2 = 1.0 / (1.0 + (A.array().square() / psi.array()).sum());
    const Eigen::Vector2d w = s2 * (A.array() / psi.array()).matrix();
    // encoder: x (2) -> [mean, logvar]
    Tensor ew(Shape{2, 2}, {w(0), 0.0, w(1), 0.0});
    Tensor eb(Shape{2}, {-w.dot(b), std::log(s2)});
    // decoder: z (1) -> [mean (2), logvar (2)]
    Tensor dw(Shape{1, 4}, {A(0), A(1), 0.0, 0.0});
    Tensor db(Shape{4}, {b(0), b(1), std::log(psi(0)), std::log(psi(1))});
    vae::GaussianVae m;
    m.encoder = nn::Mlp({nn::Dense{ew, eb, nn::Activation::None}});
    m.decoder = nn::Mlp({nn::Dense{dw, db, nn::Activation::None}});
    m.latent_dim = 1;
    m.ambient_dim = 2;
    return m;
  }
};

inline Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m(r, c) = t.at(r, c);
  return m;
}

inline Tensor from_eigen(const Eigen::MatrixXd& m) {
  Tensor t(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.at(r, c) = m(r, c);
  return t;
}

/// Random SPD matrix with eigenvalues in [lo, hi].
template <typename Rng>
inline Eigen::MatrixXd random_spd(int d, Rng& rng, double lo = 0.3, double hi = 2.0) {
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd m(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = g(rng);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
  const Eigen::MatrixXd q = qr.householderQ();
  Eigen::VectorXd ev(d);
  for (int i = 0; i < d; ++i) ev(i) = u(rng);
  return q * ev.asDiagonal() * q.transpose();
}

}  // namespace dgm::testing
