#pragma once

// Rational-quadratic spline primitives shared by the fused tape op and the
// flow module. Knot layout: K bins, K+1 knots in x and y, K+1 derivatives.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace dgm::detail {

inline constexpr double kMinBinWidth = 1e-3;
inline constexpr double kMinBinHeight = 1e-3;
inline constexpr double kMinDerivative = 1e-3;

/// Raw conditioner outputs per transformed coordinate: K widths, K heights,
/// K-1 interior derivatives (the two boundary derivatives are fixed at 1 so
/// the spline joins the identity tails smoothly).
constexpr std::size_t spline_raw_count(int bins) { return static_cast<std::size_t>(3 * bins - 1); }

/// Shift so that a raw derivative of 0 maps to exactly 1.
inline double derivative_shift() {
  static const double shift = std::log(std::expm1(1.0 - kMinDerivative));
  return shift;
}

inline double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct SplineKnots {
  std::vector<double> xs, ys, ds;      // K+1 each
  std::vector<double> soft_w, soft_h;  // softmax outputs, K each
};

inline void softmax(std::span<const double> raw, std::vector<double>& out) {
  out.resize(raw.size());
  double mx = raw[0];
  for (double r : raw) mx = std::max(mx, r);
  double total = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out[i] = std::exp(raw[i] - mx);
    total += out[i];
  }
  for (double& o : out) o /= total;
}

/// Maps one coordinate's raw parameters (length 3K-1) to knots on [-B, B].
inline void knots_from_raw(std::span<const double> raw, int bins, double tail_bound, SplineKnots& k) {
  const std::size_t K = static_cast<std::size_t>(bins);
  const double span = 2.0 * tail_bound;
  softmax(raw.subspan(0, K), k.soft_w);
  softmax(raw.subspan(K, K), k.soft_h);
  k.xs.assign(K + 1, 0.0);
  k.ys.assign(K + 1, 0.0);
  k.ds.assign(K + 1, 1.0);
  const double wscale = 1.0 - kMinBinWidth * static_cast<double>(K);
  const double hscale = 1.0 - kMinBinHeight * static_cast<double>(K);
  double cw = 0.0, ch = 0.0;
  k.xs[0] = -tail_bound;
  k.ys[0] = -tail_bound;
  for (std::size_t i = 1; i < K; ++i) {
    cw += kMinBinWidth + wscale * k.soft_w[i - 1];
    ch += kMinBinHeight + hscale * k.soft_h[i - 1];
    k.xs[i] = -tail_bound + span * cw;
    k.ys[i] = -tail_bound + span * ch;
  }
  k.xs[K] = tail_bound;
  k.ys[K] = tail_bound;
  const double shift = derivative_shift();
  for (std::size_t i = 1; i < K; ++i) {
    k.ds[i] = kMinDerivative + stable_softplus(raw[2 * K + i - 1] + shift);
  }
}

/// Index of the bin containing v given sorted knots (clamped to [0, K-1]).
inline std::size_t find_bin(std::span<const double> knots, double v) {
  const auto it = std::upper_bound(knots.begin() + 1, knots.end() - 1, v);
  return static_cast<std::size_t>(it - knots.begin()) - 1;
}

/// Forward rational-quadratic map inside one bin. Works for double and Dual.
template <class T>
void rq_bin_forward(const T& xk, const T& xk1, const T& yk, const T& yk1, const T& dk, const T& dk1, const T& x,
                    T& y, T& log_deriv) {
  using std::log;
  const T w = xk1 - xk;
  const T h = yk1 - yk;
  const T s = h / w;
  const T xi = (x - xk) / w;
  const T om = T(1.0) - xi;
  const T xo = xi * om;
  const T den = s + (dk1 + dk - T(2.0) * s) * xo;
  y = yk + h * (s * xi * xi + dk * xo) / den;
  const T dnum = s * s * (dk1 * xi * xi + T(2.0) * s * xo + dk * om * om);
  log_deriv = log(dnum) - T(2.0) * log(den);
}

/// Analytic inverse inside one bin: solves the quadratic for xi.
inline double rq_bin_inverse(double xk, double xk1, double yk, double yk1, double dk, double dk1, double y) {
  const double w = xk1 - xk;
  const double h = yk1 - yk;
  const double s = h / w;
  const double dy = y - yk;
  const double sumd = dk1 + dk - 2.0 * s;
  const double a = h * (s - dk) + dy * sumd;
  const double b = h * dk - dy * sumd;
  const double c = -s * dy;
  const double disc = std::max(b * b - 4.0 * a * c, 0.0);
  const double xi = (2.0 * c) / (-b - std::sqrt(disc));
  return std::clamp(xi, 0.0, 1.0) * w + xk;
}

}  // namespace dgm::detail
