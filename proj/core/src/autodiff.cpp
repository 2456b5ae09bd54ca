#include "dgm/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "dgm/detail/dual.hpp"
#include "dgm/detail/spline_kernel.hpp"
#include "dgm/error.hpp"

namespace dgm::ad {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Subtract: return "subtract";
    case OpKind::Multiply: return "multiply";
    case OpKind::Relu: return "relu";
    case OpKind::Softplus: return "softplus";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Negate: return "negate";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Slice: return "slice";
    case OpKind::Concat: return "concat";
    case OpKind::Broadcast: return "broadcast";
    case OpKind::Square: return "square";
    case OpKind::GaussianLogDensity: return "gaussian_log_density";
    case OpKind::SumLast: return "sum_last";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Clamp: return "clamp";
    case OpKind::SelectColumns: return "select_columns";
    case OpKind::RepeatRows: return "repeat_rows";
    case OpKind::Reshape: return "reshape";
    case OpKind::LogSumExp: return "logsumexp";
    case OpKind::RqSpline: return "rq_spline";
  }
  return "unknown";
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMat = Eigen::Map<const RowMat>;
using MutMat = Eigen::Map<RowMat>;

constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)

[[noreturn]] void fail(OpKind kind, const std::string& msg) {
  throw ShapeError(std::string(op_name(kind)) + ": " + msg);
}

void expect_arity(OpKind kind, const std::vector<const Tensor*>& in, std::size_t n) {
  if (in.size() != n) fail(kind, "expected " + std::to_string(n) + " inputs, got " + std::to_string(in.size()));
}

void expect_same_shape(OpKind kind, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) fail(kind, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Shape drop_last(const Shape& s) { return Shape(s.begin(), s.end() - 1); }

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Per-coordinate spline forward value + local partials, recomputed during
// backward rather than stored.
struct SplineEval {
  double y = 0.0;
  double log_deriv = 0.0;
  bool inside = false;
  std::size_t bin = 0;
  // Partials of y and log_deriv w.r.t. (xk, xk1, yk, yk1, dk, dk1, x).
  std::array<double, 7> dy{};
  std::array<double, 7> dl{};
};

SplineEval spline_eval(double x, std::span<const double> raw, int bins, double bound, detail::SplineKnots& knots,
                       bool with_partials) {
  SplineEval e;
  if (x < -bound || x > bound) {
    e.y = x;
    return e;
  }
  e.inside = true;
  detail::knots_from_raw(raw, bins, bound, knots);
  const std::size_t k = detail::find_bin(knots.xs, x);
  e.bin = k;
  if (!with_partials) {
    detail::rq_bin_forward(knots.xs[k], knots.xs[k + 1], knots.ys[k], knots.ys[k + 1], knots.ds[k], knots.ds[k + 1],
                           x, e.y, e.log_deriv);
    return e;
  }
  using D = detail::Dual<7>;
  const D xk = D::variable(knots.xs[k], 0), xk1 = D::variable(knots.xs[k + 1], 1);
  const D yk = D::variable(knots.ys[k], 2), yk1 = D::variable(knots.ys[k + 1], 3);
  const D dk = D::variable(knots.ds[k], 4), dk1 = D::variable(knots.ds[k + 1], 5);
  const D xv = D::variable(x, 6);
  D y, l;
  detail::rq_bin_forward(xk, xk1, yk, yk1, dk, dk1, xv, y, l);
  e.y = y.v;
  e.log_deriv = l.v;
  e.dy = y.d;
  e.dl = l.d;
  return e;
}

Tensor evaluate(OpKind kind, const std::vector<const Tensor*>& in, const OpAttrs& a) {
  switch (kind) {
    case OpKind::Leaf:
    case OpKind::Constant:
      fail(kind, "not evaluable");
    case OpKind::MatMul: {
      expect_arity(kind, in, 2);
      const Tensor& x = *in[0];
      const Tensor& w = *in[1];
      if (x.rank() != 2 || w.rank() != 2 || x.shape()[1] != w.shape()[0])
        fail(kind, "incompatible shapes " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
      const auto n = static_cast<Eigen::Index>(x.shape()[0]);
      const auto k = static_cast<Eigen::Index>(x.shape()[1]);
      const auto m = static_cast<Eigen::Index>(w.shape()[1]);
      Tensor out(Shape{x.shape()[0], w.shape()[1]});
      MutMat(out.data().data(), n, m).noalias() = ConstMat(x.data().data(), n, k) * ConstMat(w.data().data(), k, m);
      return out;
    }
    case OpKind::Add:
    case OpKind::Subtract:
    case OpKind::Multiply: {
      expect_arity(kind, in, 2);
      expect_same_shape(kind, *in[0], *in[1]);
      Tensor out(in[0]->shape());
      const auto x = in[0]->data();
      const auto y = in[1]->data();
      auto o = out.data();
      if (kind == OpKind::Add)
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
      else if (kind == OpKind::Subtract)
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
      else
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
      return out;
    }
    case OpKind::Relu:
    case OpKind::Softplus:
    case OpKind::Exp:
    case OpKind::Log:
    case OpKind::Negate:
    case OpKind::Square:
    case OpKind::Scale:
    case OpKind::AddScalar:
    case OpKind::Clamp: {
      expect_arity(kind, in, 1);
      Tensor out(in[0]->shape());
      const auto x = in[0]->data();
      auto o = out.data();
      for (std::size_t i = 0; i < o.size(); ++i) {
        const double v = x[i];
        switch (kind) {
          case OpKind::Relu: o[i] = v > 0.0 ? v : 0.0; break;
          case OpKind::Softplus: o[i] = detail::stable_softplus(v); break;
          case OpKind::Exp: o[i] = std::exp(v); break;
          case OpKind::Log: o[i] = std::log(v); break;
          case OpKind::Negate: o[i] = -v; break;
          case OpKind::Square: o[i] = v * v; break;
          case OpKind::Scale: o[i] = a.scalar * v; break;
          case OpKind::AddScalar: o[i] = v + a.scalar; break;
          default: o[i] = std::clamp(v, a.lo, a.hi); break;
        }
      }
      return out;
    }
    case OpKind::Sum:
    case OpKind::Mean: {
      expect_arity(kind, in, 1);
      double s = 0.0;
      for (double v : in[0]->data()) s += v;
      if (kind == OpKind::Mean) {
        if (in[0]->size() == 0) fail(kind, "mean of empty tensor");
        s /= static_cast<double>(in[0]->size());
      }
      return Tensor::scalar(s);
    }
    case OpKind::SumLast:
    case OpKind::LogSumExp: {
      expect_arity(kind, in, 1);
      const Tensor& x = *in[0];
      if (x.rank() == 0) fail(kind, "needs rank >= 1");
      const std::size_t inner = x.shape().back();
      if (inner == 0) fail(kind, "empty last axis");
      const std::size_t outer = x.size() / inner;
      Tensor out(drop_last(x.shape()));
      const auto d = x.data();
      for (std::size_t r = 0; r < outer; ++r) {
        const double* row = d.data() + r * inner;
        if (kind == OpKind::SumLast) {
          double s = 0.0;
          for (std::size_t c = 0; c < inner; ++c) s += row[c];
          out[r] = s;
        } else {
          const double mx = *std::max_element(row, row + inner);
          double s = 0.0;
          for (std::size_t c = 0; c < inner; ++c) s += std::exp(row[c] - mx);
          out[r] = mx + std::log(s);
        }
      }
      return out;
    }
    case OpKind::Slice: {
      expect_arity(kind, in, 1);
      const Tensor& x = *in[0];
      if (x.rank() == 0) fail(kind, "needs rank >= 1");
      const std::size_t len = x.shape().back();
      if (a.begin >= a.end || a.end > len)
        fail(kind, "range [" + std::to_string(a.begin) + "," + std::to_string(a.end) + ") outside last axis of " +
                       shape_str(x.shape()));
      const std::size_t outer = x.size() / len;
      const std::size_t w = a.end - a.begin;
      Shape s = x.shape();
      s.back() = w;
      Tensor out(s);
      for (std::size_t r = 0; r < outer; ++r)
        std::copy_n(x.data().data() + r * len + a.begin, w, out.data().data() + r * w);
      return out;
    }
    case OpKind::SelectColumns: {
      expect_arity(kind, in, 1);
      const Tensor& x = *in[0];
      if (x.rank() == 0) fail(kind, "needs rank >= 1");
      const std::size_t len = x.shape().back();
      if (a.indices.empty()) fail(kind, "empty index list");
      for (std::size_t i : a.indices)
        if (i >= len) fail(kind, "index " + std::to_string(i) + " out of range for " + shape_str(x.shape()));
      const std::size_t outer = x.size() / len;
      const std::size_t w = a.indices.size();
      Shape s = x.shape();
      s.back() = w;
      Tensor out(s);
      for (std::size_t r = 0; r < outer; ++r)
        for (std::size_t c = 0; c < w; ++c) out[r * w + c] = x[r * len + a.indices[c]];
      return out;
    }
    case OpKind::Concat: {
      if (in.empty()) fail(kind, "no inputs");
      const Shape lead = drop_last(in[0]->shape().empty() ? Shape{1} : in[0]->shape());
      std::size_t total = 0;
      for (const Tensor* t : in) {
        if (t->rank() == 0 || drop_last(t->shape()) != lead) fail(kind, "leading dimensions differ");
        total += t->shape().back();
      }
      Shape s = in[0]->shape();
      s.back() = total;
      Tensor out(s);
      const std::size_t outer = numel(lead);
      for (std::size_t r = 0; r < outer; ++r) {
        std::size_t off = r * total;
        for (const Tensor* t : in) {
          const std::size_t w = t->shape().back();
          std::copy_n(t->data().data() + r * w, w, out.data().data() + off);
          off += w;
        }
      }
      return out;
    }
    case OpKind::Broadcast: {
      expect_arity(kind, in, 1);
      const Tensor& x = *in[0];
      if (!(x.size() == 1 || is_suffix(x.shape(), a.shape)))
        fail(kind, "cannot broadcast " + shape_str(x.shape()) + " to " + shape_str(a.shape));
      Tensor out(a.shape);
      const std::size_t n = x.size();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i % n];
      return out;
    }
    case OpKind::RepeatRows: {
      expect_arity(kind, in, 1);
      const Tensor& x = *in[0];
      if (x.rank() == 0 || a.repeat == 0) fail(kind, "needs rank >= 1 and repeat >= 1");
      const std::size_t rows = x.shape()[0];
      const std::size_t row = rows ? x.size() / rows : 0;
      Shape s = x.shape();
      s[0] = rows * a.repeat;
      Tensor out(s);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < a.repeat; ++k)
          std::copy_n(x.data().data() + r * row, row, out.data().data() + (r * a.repeat + k) * row);
      return out;
    }
    case OpKind::Reshape: {
      expect_arity(kind, in, 1);
      if (numel(a.shape) != in[0]->size())
        fail(kind, "cannot reshape " + shape_str(in[0]->shape()) + " to " + shape_str(a.shape));
      return Tensor(a.shape, std::vector<double>(in[0]->data().begin(), in[0]->data().end()));
    }
    case OpKind::GaussianLogDensity: {
      expect_arity(kind, in, 3);
      expect_same_shape(kind, *in[0], *in[1]);
      expect_same_shape(kind, *in[0], *in[2]);
      const Tensor& x = *in[0];
      if (x.rank() == 0) fail(kind, "needs rank >= 1");
      const std::size_t inner = x.shape().back();
      const std::size_t outer = inner ? x.size() / inner : 0;
      Tensor out(drop_last(x.shape()));
      const auto xd = x.data(), md = in[1]->data(), ld = in[2]->data();
      for (std::size_t r = 0; r < outer; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < inner; ++c) {
          const std::size_t i = r * inner + c;
          const double diff = xd[i] - md[i];
          s += kLog2Pi + ld[i] + diff * diff * std::exp(-ld[i]);
        }
        out[r] = -0.5 * s;
      }
      return out;
    }
    case OpKind::RqSpline: {
      expect_arity(kind, in, 2);
      const Tensor& x = *in[0];
      const Tensor& raw = *in[1];
      if (a.bins < 2 || !(a.tail_bound > 0.0)) fail(kind, "invalid bins/tail_bound");
      const std::size_t p = detail::spline_raw_count(a.bins);
      if (x.rank() != 2 || raw.rank() != 2 || raw.shape()[0] != x.shape()[0] || raw.shape()[1] != x.shape()[1] * p)
        fail(kind, "expected x (n,m) and params (n,m*" + std::to_string(p) + "), got " + shape_str(x.shape()) +
                       " and " + shape_str(raw.shape()));
      const std::size_t n = x.shape()[0], m = x.shape()[1];
      Tensor out(Shape{n, 2 * m});
      detail::SplineKnots knots;
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < m; ++j) {
          const auto params = raw.data().subspan((r * m + j) * p, p);
          const SplineEval e = spline_eval(x[r * m + j], params, a.bins, a.tail_bound, knots, false);
          out[r * 2 * m + j] = e.y;
          out[r * 2 * m + m + j] = e.log_deriv;
        }
      }
      return out;
    }
  }
  fail(kind, "unhandled op");
}

// Accumulates d loss / d input into gin[i] (skipped when nullptr).
void backprop(OpKind kind, const std::vector<const Tensor*>& in, const Tensor& out, const OpAttrs& a,
              std::span<const double> g, const std::vector<std::vector<double>*>& gin) {
  auto acc = [&](std::size_t i) -> double* { return gin[i] ? gin[i]->data() : nullptr; };
  switch (kind) {
    case OpKind::Leaf:
    case OpKind::Constant:
      return;
    case OpKind::MatMul: {
      const Tensor& x = *in[0];
      const Tensor& w = *in[1];
      const auto n = static_cast<Eigen::Index>(x.shape()[0]);
      const auto k = static_cast<Eigen::Index>(x.shape()[1]);
      const auto m = static_cast<Eigen::Index>(w.shape()[1]);
      ConstMat gm(g.data(), n, m);
      if (double* gx = acc(0)) MutMat(gx, n, k).noalias() += gm * ConstMat(w.data().data(), k, m).transpose();
      if (double* gw = acc(1)) MutMat(gw, k, m).noalias() += ConstMat(x.data().data(), n, k).transpose() * gm;
      return;
    }
    case OpKind::Add:
    case OpKind::Subtract: {
      const double sign = kind == OpKind::Add ? 1.0 : -1.0;
      if (double* ga = acc(0))
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      if (double* gb = acc(1))
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
      return;
    }
    case OpKind::Multiply: {
      const auto x = in[0]->data(), y = in[1]->data();
      if (double* ga = acc(0))
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      if (double* gb = acc(1))
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
      return;
    }
    case OpKind::Relu:
    case OpKind::Softplus:
    case OpKind::Exp:
    case OpKind::Log:
    case OpKind::Negate:
    case OpKind::Square:
    case OpKind::Scale:
    case OpKind::AddScalar:
    case OpKind::Clamp: {
      double* gx = acc(0);
      if (!gx) return;
      const auto x = in[0]->data();
      const auto o = out.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        double d = 0.0;
        switch (kind) {
          case OpKind::Relu: d = x[i] > 0.0 ? 1.0 : 0.0; break;
          case OpKind::Softplus: d = detail::sigmoid(x[i]); break;
          case OpKind::Exp: d = o[i]; break;
          case OpKind::Log: d = 1.0 / x[i]; break;
          case OpKind::Negate: d = -1.0; break;
          case OpKind::Square: d = 2.0 * x[i]; break;
          case OpKind::Scale: d = a.scalar; break;
          case OpKind::AddScalar: d = 1.0; break;
          default: d = (x[i] > a.lo && x[i] < a.hi) ? 1.0 : 0.0; break;
        }
        gx[i] += g[i] * d;
      }
      return;
    }
    case OpKind::Sum:
    case OpKind::Mean: {
      double* gx = acc(0);
      if (!gx) return;
      const double v = kind == OpKind::Sum ? g[0] : g[0] / static_cast<double>(in[0]->size());
      for (std::size_t i = 0; i < in[0]->size(); ++i) gx[i] += v;
      return;
    }
    case OpKind::SumLast:
    case OpKind::LogSumExp: {
      double* gx = acc(0);
      if (!gx) return;
      const std::size_t inner = in[0]->shape().back();
      const auto x = in[0]->data();
      for (std::size_t i = 0; i < in[0]->size(); ++i) {
        const std::size_t r = i / inner;
        gx[i] += kind == OpKind::SumLast ? g[r] : g[r] * std::exp(x[i] - out[r]);
      }
      return;
    }
    case OpKind::Slice: {
      double* gx = acc(0);
      if (!gx) return;
      const std::size_t len = in[0]->shape().back();
      const std::size_t w = a.end - a.begin;
      const std::size_t outer = in[0]->size() / len;
      for (std::size_t r = 0; r < outer; ++r)
        for (std::size_t c = 0; c < w; ++c) gx[r * len + a.begin + c] += g[r * w + c];
      return;
    }
    case OpKind::SelectColumns: {
      double* gx = acc(0);
      if (!gx) return;
      const std::size_t len = in[0]->shape().back();
      const std::size_t w = a.indices.size();
      const std::size_t outer = in[0]->size() / len;
      for (std::size_t r = 0; r < outer; ++r)
        for (std::size_t c = 0; c < w; ++c) gx[r * len + a.indices[c]] += g[r * w + c];
      return;
    }
    case OpKind::Concat: {
      const std::size_t total = out.shape().back();
      const std::size_t outer = out.size() / total;
      std::size_t off = 0;
      for (std::size_t t = 0; t < in.size(); ++t) {
        const std::size_t w = in[t]->shape().back();
        if (double* gt = acc(t))
          for (std::size_t r = 0; r < outer; ++r)
            for (std::size_t c = 0; c < w; ++c) gt[r * w + c] += g[r * total + off + c];
        off += w;
      }
      return;
    }
    case OpKind::Broadcast: {
      double* gx = acc(0);
      if (!gx) return;
      const std::size_t n = in[0]->size();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i % n] += g[i];
      return;
    }
    case OpKind::RepeatRows: {
      double* gx = acc(0);
      if (!gx) return;
      const std::size_t rows = in[0]->shape()[0];
      const std::size_t row = rows ? in[0]->size() / rows : 0;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < a.repeat; ++k)
          for (std::size_t c = 0; c < row; ++c) gx[r * row + c] += g[(r * a.repeat + k) * row + c];
      return;
    }
    case OpKind::Reshape: {
      if (double* gx = acc(0))
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      return;
    }
    case OpKind::GaussianLogDensity: {
      const auto x = in[0]->data(), mu = in[1]->data(), lv = in[2]->data();
      const std::size_t inner = in[0]->shape().back();
      double* gx = acc(0);
      double* gm = acc(1);
      double* gl = acc(2);
      for (std::size_t i = 0; i < in[0]->size(); ++i) {
        const double gr = g[i / inner];
        const double prec = std::exp(-lv[i]);
        const double diff = x[i] - mu[i];
        if (gx) gx[i] -= gr * diff * prec;
        if (gm) gm[i] += gr * diff * prec;
        if (gl) gl[i] += gr * (-0.5 + 0.5 * diff * diff * prec);
      }
      return;
    }
    case OpKind::RqSpline: {
      const Tensor& x = *in[0];
      const Tensor& raw = *in[1];
      const std::size_t n = x.shape()[0], m = x.shape()[1];
      const std::size_t K = static_cast<std::size_t>(a.bins);
      const std::size_t p = detail::spline_raw_count(a.bins);
      const double span = 2.0 * a.tail_bound;
      const double wscale = 1.0 - detail::kMinBinWidth * static_cast<double>(K);
      const double hscale = 1.0 - detail::kMinBinHeight * static_cast<double>(K);
      const double shift = detail::derivative_shift();
      double* gx = acc(0);
      double* graw = acc(1);
      detail::SplineKnots knots;
      std::vector<double> gsoft(K);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < m; ++j) {
          const std::size_t e_idx = r * m + j;
          const double gy = g[r * 2 * m + j];
          const double gl = g[r * 2 * m + m + j];
          const auto params = raw.data().subspan(e_idx * p, p);
          const SplineEval e = spline_eval(x[e_idx], params, a.bins, a.tail_bound, knots, true);
          if (!e.inside) {
            if (gx) gx[e_idx] += gy;
            continue;
          }
          std::array<double, 7> gloc{};
          for (int t = 0; t < 7; ++t) gloc[t] = gy * e.dy[t] + gl * e.dl[t];
          if (gx) gx[e_idx] += gloc[6];
          if (!graw) continue;
          double* gp = graw + e_idx * p;
          const std::size_t k = e.bin;
          // Knot i (1 <= i <= K-1) depends on softmax outputs 0..i-1.
          auto knot_grad = [&](double g_lo, double g_hi, const std::vector<double>& soft, double scale,
                               std::size_t offset) {
            std::vector<double>& gs = gsoft;
            std::fill(gs.begin(), gs.end(), 0.0);
            auto add_knot = [&](std::size_t i, double gk) {
              if (i == 0 || i == K || gk == 0.0) return;
              for (std::size_t q = 0; q < i; ++q) gs[q] += span * scale * gk;
            };
            add_knot(k, g_lo);
            add_knot(k + 1, g_hi);
            double dot = 0.0;
            for (std::size_t q = 0; q < K; ++q) dot += soft[q] * gs[q];
            for (std::size_t q = 0; q < K; ++q) gp[offset + q] += soft[q] * (gs[q] - dot);
          };
          knot_grad(gloc[0], gloc[1], knots.soft_w, wscale, 0);
          knot_grad(gloc[2], gloc[3], knots.soft_h, hscale, K);
          auto deriv_grad = [&](std::size_t i, double gd) {
            if (i == 0 || i == K) return;
            const std::size_t q = 2 * K + i - 1;
            gp[q] += gd * detail::sigmoid(params[q] + shift);
          };
          deriv_grad(k, gloc[4]);
          deriv_grad(k + 1, gloc[5]);
        }
      }
      return;
    }
  }
}

void check_finite(OpKind kind, const Tensor& t) {
  if (!t.all_finite()) throw NumericError(std::string(op_name(kind)) + ": non-finite result");
}

}  // namespace

const Tensor& Gradients::of(const Tensor& leaf) const {
  if (!leaf.taped() || leaf.node() < 0 || static_cast<std::size_t>(leaf.node()) >= grads_.size())
    throw InvalidArgument("gradient requested for a tensor that is not on this tape");
  return grads_[static_cast<std::size_t>(leaf.node())];
}

Tensor Tape::handle(int node) const {
  Tensor t = nodes_[static_cast<std::size_t>(node)].value.detached();
  t.tape_ = const_cast<Tape*>(this);
  t.node_ = node;
  return t;
}

Tensor Tape::push(OpKind kind, std::vector<int> parents, OpAttrs attrs, Tensor value, bool requires_grad) {
  nodes_.push_back(Node{kind, std::move(parents), std::move(attrs), std::move(value), requires_grad});
  return handle(static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::leaf(const Tensor& value) {
  if (value.taped()) throw InvalidArgument("leaf() expects an untaped tensor");
  check_finite(OpKind::Leaf, value);
  return push(OpKind::Leaf, {}, {}, value.detached(), true);
}

Tensor Tape::constant(const Tensor& value) {
  check_finite(OpKind::Constant, value);
  return push(OpKind::Constant, {}, {}, value.detached(), false);
}

void Tape::set_leaf(const Tensor& leaf, const Tensor& value) {
  if (leaf.tape() != this || kind(leaf.node()) != OpKind::Leaf) throw InvalidArgument("set_leaf: not a leaf of this tape");
  Node& n = nodes_[static_cast<std::size_t>(leaf.node())];
  if (n.value.shape() != value.shape()) throw ShapeError("set_leaf: shape mismatch");
  n.value = value.detached();
}

void Tape::replay() {
  std::vector<const Tensor*> in;
  for (Node& n : nodes_) {
    if (n.kind == OpKind::Leaf || n.kind == OpKind::Constant) continue;
    in.clear();
    for (int p : n.parents) in.push_back(&nodes_[static_cast<std::size_t>(p)].value);
    n.value = evaluate(n.kind, in, n.attrs);
    check_finite(n.kind, n.value);
  }
}

Gradients Tape::backward(const Tensor& loss) const {
  if (!loss.taped() || loss.tape() != this) throw InvalidArgument("backward: loss is not taped on this tape");
  if (loss.size() != 1) throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  const std::size_t n = nodes_.size();
  std::vector<std::vector<double>> acc(n);
  const auto root = static_cast<std::size_t>(loss.node());
  acc[root].assign(1, 1.0);
  std::vector<const Tensor*> in;
  std::vector<std::vector<double>*> gin;
  for (std::size_t i = root + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (acc[i].empty() || !node.requires_grad || node.parents.empty()) continue;
    in.clear();
    gin.clear();
    for (int p : node.parents) {
      const Node& parent = nodes_[static_cast<std::size_t>(p)];
      in.push_back(&parent.value);
      if (parent.requires_grad) {
        auto& buf = acc[static_cast<std::size_t>(p)];
        if (buf.empty()) buf.assign(parent.value.size(), 0.0);
        gin.push_back(&buf);
      } else {
        gin.push_back(nullptr);
      }
    }
    backprop(node.kind, in, node.value, node.attrs, acc[i], gin);
    if (i != root) std::vector<double>().swap(acc[i]);
  }
  std::vector<Tensor> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (nodes_[i].kind != OpKind::Leaf) continue;
    const Shape& s = nodes_[i].value.shape();
    out[i] = acc[i].empty() ? Tensor(s) : Tensor(s, std::move(acc[i]));
  }
  return Gradients(std::move(out));
}

Tensor apply(OpKind kind, const std::vector<const Tensor*>& inputs, const OpAttrs& attrs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->taped()) continue;
    if (tape && tape != t->tape()) throw InvalidArgument(std::string(op_name(kind)) + ": inputs on different tapes");
    tape = t->tape();
  }
  Tensor out = evaluate(kind, inputs, attrs);
  check_finite(kind, out);
  if (!tape) return out;
  std::vector<int> parents;
  parents.reserve(inputs.size());
  bool requires_grad = false;
  for (const Tensor* t : inputs) {
    if (t->taped()) {
      parents.push_back(t->node());
      requires_grad = requires_grad || tape->nodes_[static_cast<std::size_t>(t->node())].requires_grad;
    } else {
      parents.push_back(tape->constant(*t).node());
    }
  }
  return tape->push(kind, std::move(parents), attrs, std::move(out), requires_grad);
}

// ---------------------------------------------------------------------------
// Wrappers

namespace {

Tensor unary(OpKind kind, const Tensor& x, OpAttrs a = {}) { return apply(kind, {&x}, a); }

Tensor binary(OpKind kind, const Tensor& x, const Tensor& y) {
  if (x.shape() == y.shape()) return apply(kind, {&x, &y});
  if (y.size() == 1 || is_suffix(y.shape(), x.shape())) {
    const Tensor yb = broadcast(y, x.shape());
    return apply(kind, {&x, &yb});
  }
  if (x.size() == 1 || is_suffix(x.shape(), y.shape())) {
    const Tensor xb = broadcast(x, y.shape());
    return apply(kind, {&xb, &y});
  }
  fail(kind, "shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) { return apply(OpKind::MatMul, {&a, &b}); }
Tensor add(const Tensor& a, const Tensor& b) { return binary(OpKind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(OpKind::Subtract, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(OpKind::Multiply, a, b); }
Tensor relu(const Tensor& x) { return unary(OpKind::Relu, x); }
Tensor softplus(const Tensor& x) { return unary(OpKind::Softplus, x); }
Tensor exp(const Tensor& x) { return unary(OpKind::Exp, x); }
Tensor log(const Tensor& x) { return unary(OpKind::Log, x); }
Tensor neg(const Tensor& x) { return unary(OpKind::Negate, x); }
Tensor square(const Tensor& x) { return unary(OpKind::Square, x); }
Tensor sum(const Tensor& x) { return unary(OpKind::Sum, x); }
Tensor mean(const Tensor& x) { return unary(OpKind::Mean, x); }
Tensor sum_last(const Tensor& x) { return unary(OpKind::SumLast, x); }

Tensor scale(const Tensor& x, double factor) {
  OpAttrs a;
  a.scalar = factor;
  return unary(OpKind::Scale, x, a);
}

Tensor add_scalar(const Tensor& x, double value) {
  OpAttrs a;
  a.scalar = value;
  return unary(OpKind::AddScalar, x, a);
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  OpAttrs a;
  a.lo = lo;
  a.hi = hi;
  return unary(OpKind::Clamp, x, a);
}

Tensor slice(const Tensor& x, std::size_t begin, std::size_t end) {
  OpAttrs a;
  a.begin = begin;
  a.end = end;
  return unary(OpKind::Slice, x, a);
}

Tensor concat(const std::vector<const Tensor*>& parts) { return apply(OpKind::Concat, parts); }
Tensor concat(const Tensor& a, const Tensor& b) { return apply(OpKind::Concat, {&a, &b}); }

Tensor select_columns(const Tensor& x, std::vector<std::size_t> indices) {
  OpAttrs a;
  a.indices = std::move(indices);
  return unary(OpKind::SelectColumns, x, a);
}

Tensor broadcast(const Tensor& x, Shape shape) {
  OpAttrs a;
  a.shape = std::move(shape);
  return unary(OpKind::Broadcast, x, a);
}

Tensor repeat_rows(const Tensor& x, std::size_t times) {
  OpAttrs a;
  a.repeat = times;
  return unary(OpKind::RepeatRows, x, a);
}

Tensor reshape(const Tensor& x, Shape shape) {
  OpAttrs a;
  a.shape = std::move(shape);
  return unary(OpKind::Reshape, x, a);
}

Tensor logsumexp_last(const Tensor& x) { return unary(OpKind::LogSumExp, x); }

Tensor gaussian_log_density(const Tensor& x, const Tensor& mean, const Tensor& logvar) {
  return apply(OpKind::GaussianLogDensity, {&x, &mean, &logvar});
}

Tensor rq_spline_transform(const Tensor& x, const Tensor& raw_params, int bins, double tail_bound) {
  OpAttrs a;
  a.bins = bins;
  a.tail_bound = tail_bound;
  return apply(OpKind::RqSpline, {&x, &raw_params}, a);
}

}  // namespace dgm::ad
