#include "dgm/flow.hpp"

#include <cmath>
#include <numeric>

#include "dgm/autodiff.hpp"
#include "dgm/detail/spline_kernel.hpp"
#include "dgm/error.hpp"

namespace dgm::flow {

using namespace dgm::ad;

// ---------------------------------------------------------------------------
// Scalar spline

void RqSplineParams::validate() const {
  const std::size_t k = widths.size();
  if (k < 1 || heights.size() != k || derivatives.size() != k + 1)
    throw InvalidArgument("RqSplineParams: need K widths, K heights, K+1 derivatives");
  if (!(tail_bound > 0.0)) throw InvalidArgument("RqSplineParams: tail bound must be positive");
  auto check_bins = [&](const std::vector<double>& v, const char* what) {
    double s = 0.0;
    for (double w : v) {
      if (!(w > 0.0) || !std::isfinite(w)) throw InvalidArgument(std::string("RqSplineParams: non-positive ") + what);
      s += w;
    }
    if (std::abs(s - 2.0 * tail_bound) > 1e-9 * tail_bound)
      throw InvalidArgument(std::string("RqSplineParams: ") + what + " must sum to 2B");
  };
  check_bins(widths, "widths");
  check_bins(heights, "heights");
  for (double d : derivatives)
    if (!(d > 0.0) || !std::isfinite(d)) throw InvalidArgument("RqSplineParams: derivatives must be positive");
}

RqSplineParams RqSplineParams::identity(int bins, double tail_bound) {
  if (bins < 1) throw InvalidArgument("RqSplineParams: bins must be >= 1");
  const auto k = static_cast<std::size_t>(bins);
  const double w = 2.0 * tail_bound / static_cast<double>(k);
  return RqSplineParams{std::vector<double>(k, w), std::vector<double>(k, w), std::vector<double>(k + 1, 1.0),
                        tail_bound};
}

RqSplineParams RqSplineParams::from_raw(std::span<const double> raw, int bins, double tail_bound) {
  if (bins < 2 || raw.size() != detail::spline_raw_count(bins))
    throw InvalidArgument("RqSplineParams::from_raw: expected 3K-1 raw values");
  detail::SplineKnots k;
  detail::knots_from_raw(raw, bins, tail_bound, k);
  RqSplineParams p;
  p.tail_bound = tail_bound;
  for (int i = 0; i < bins; ++i) {
    p.widths.push_back(k.xs[i + 1] - k.xs[i]);
    p.heights.push_back(k.ys[i + 1] - k.ys[i]);
  }
  p.derivatives = k.ds;
  return p;
}

namespace {

std::vector<double> knots_of(const std::vector<double>& bins, double bound) {
  std::vector<double> k(bins.size() + 1);
  k[0] = -bound;
  double c = -bound;
  for (std::size_t i = 0; i + 1 < bins.size(); ++i) {
    c += bins[i];
    k[i + 1] = c;
  }
  k.back() = bound;
  return k;
}

}  // namespace

SplineValue rq_spline(double x, const RqSplineParams& p, Direction direction) {
  p.validate();
  const double b = p.tail_bound;
  if (x < -b || x > b) return {x, 0.0};
  const std::vector<double> xs = knots_of(p.widths, b);
  const std::vector<double> ys = knots_of(p.heights, b);
  const auto& ds = p.derivatives;
  if (direction == Direction::Forward) {
    const std::size_t k = detail::find_bin(xs, x);
    SplineValue v;
    detail::rq_bin_forward(xs[k], xs[k + 1], ys[k], ys[k + 1], ds[k], ds[k + 1], x, v.y, v.log_abs_deriv);
    return v;
  }
  const std::size_t k = detail::find_bin(ys, x);
  SplineValue v;
  v.y = detail::rq_bin_inverse(xs[k], xs[k + 1], ys[k], ys[k + 1], ds[k], ds[k + 1], x);
  double fwd = 0.0, ld = 0.0;
  detail::rq_bin_forward(xs[k], xs[k + 1], ys[k], ys[k + 1], ds[k], ds[k + 1], v.y, fwd, ld);
  v.log_abs_deriv = -ld;
  return v;
}

// ---------------------------------------------------------------------------
// Flow construction

Flow Flow::make(const FlowOptions& o, std::uint64_t seed) {
  if (o.dim < 2) throw InvalidArgument("Flow: coupling layers need dim >= 2");
  if (o.bins < 2 || !(o.tail_bound > 0.0) || o.hidden == 0) throw InvalidArgument("Flow: invalid spline options");
  Flow f;
  f.dim = o.dim;
  const std::size_t n_layers = o.groups * o.blocks;
  const std::size_t p = detail::spline_raw_count(o.bins);
  const std::size_t cond = o.conditional ? o.cond_dim : 0;
  for (std::size_t l = 0; l < n_layers; ++l) {
    CouplingLayer layer;
    layer.bins = o.bins;
    layer.tail_bound = o.tail_bound;
    for (std::size_t i = 0; i < o.dim; ++i) ((i % 2 == l % 2) ? layer.pass : layer.transform).push_back(i);
    layer.conditioner = nn::Mlp::init({layer.pass.size() + cond, o.hidden, layer.transform.size() * p},
                                      nn::Activation::Relu, split_seed(seed, l));
    // Zero output layer: every coupling starts as the identity map.
    for (double& w : layer.conditioner.layers().back().weight.data()) w = 0.0;
    f.layers.push_back(std::move(layer));
  }
  if (o.conditional)
    f.cond_net = nn::Mlp::init({1, o.cond_hidden, o.cond_dim}, nn::Activation::Relu, split_seed(seed, 1000));
  return f;
}

void Flow::validate() const {
  const std::size_t cond = cond_net ? cond_net->output_dim() : 0;
  if (cond_net && cond_net->input_dim() != 1) throw ShapeError("Flow: conditioning net takes a scalar sigma");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const CouplingLayer& c = layers[l];
    if (c.pass.empty() || c.transform.empty()) throw InvalidArgument("Flow: coupling blocks must be non-empty");
    if (c.dim() != dim) throw ShapeError("Flow: layer " + std::to_string(l) + " has wrong dimension");
    std::vector<bool> seen(dim, false);
    for (std::size_t i : c.pass) seen.at(i) = true;
    for (std::size_t i : c.transform) seen.at(i) = true;
    for (bool s : seen)
      if (!s) throw InvalidArgument("Flow: layer " + std::to_string(l) + " mask is not a partition");
    if (c.conditioner.input_dim() != c.pass.size() + cond ||
        c.conditioner.output_dim() != c.transform.size() * detail::spline_raw_count(c.bins))
      throw ShapeError("Flow: layer " + std::to_string(l) + " conditioner has wrong dimensions");
  }
}

Flow Flow::attach(ad::Tape& tape) const {
  Flow f;
  f.dim = dim;
  for (const CouplingLayer& c : layers) {
    CouplingLayer copy = c;
    copy.conditioner = c.conditioner.attach(tape);
    f.layers.push_back(std::move(copy));
  }
  if (cond_net) f.cond_net = cond_net->attach(tape);
  return f;
}

std::vector<Tensor*> Flow::parameters() {
  std::vector<Tensor*> p;
  for (CouplingLayer& c : layers)
    for (Tensor* t : c.conditioner.parameters()) p.push_back(t);
  if (cond_net)
    for (Tensor* t : cond_net->parameters()) p.push_back(t);
  return p;
}

std::vector<const Tensor*> Flow::parameters() const {
  std::vector<const Tensor*> p;
  for (const CouplingLayer& c : layers)
    for (const Tensor* t : c.conditioner.parameters()) p.push_back(t);
  if (cond_net)
    for (const Tensor* t : cond_net->parameters()) p.push_back(t);
  return p;
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

std::vector<std::size_t> merge_permutation(const CouplingLayer& c) {
  std::vector<std::size_t> order = c.pass;
  order.insert(order.end(), c.transform.begin(), c.transform.end());
  std::vector<std::size_t> inv(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) inv[order[i]] = i;
  return inv;
}

Tensor conditioner_input(const Tensor& x_pass, const Tensor* emb) {
  return emb ? concat(x_pass, *emb) : x_pass;
}

}  // namespace

CouplingOutput coupling_apply(const CouplingLayer& layer, const Tensor& x, const Tensor* emb, Direction direction) {
  if (x.rank() != 2 || x.shape()[1] != layer.dim())
    throw ShapeError("coupling_apply: expected (n," + std::to_string(layer.dim()) + ") input, got " +
                     shape_str(x.shape()));
  const std::size_t n = x.shape()[0];
  if (emb && (emb->rank() != 2 || emb->shape()[0] != n)) throw ShapeError("coupling_apply: bad condition embedding");
  const std::size_t expected_in = layer.conditioner.input_dim() - layer.pass.size();
  if ((emb ? emb->shape()[1] : 0) != expected_in)
    throw InvalidArgument("coupling_apply: condition embedding present iff the flow is conditional");

  const std::size_t m = layer.transform.size();
  if (direction == Direction::Forward) {
    const Tensor x_pass = select_columns(x, layer.pass);
    const Tensor x_tr = select_columns(x, layer.transform);
    const Tensor raw = layer.conditioner.forward(conditioner_input(x_pass, emb));
    const Tensor out = rq_spline_transform(x_tr, raw, layer.bins, layer.tail_bound);
    const Tensor y_tr = slice(out, 0, m);
    const Tensor logdet = sum_last(slice(out, m, 2 * m));
    const Tensor y = select_columns(concat(x_pass, y_tr), merge_permutation(layer));
    return {y, logdet};
  }

  // Inverse: values only.
  const Tensor xv = x.detached();
  const Tensor x_pass = select_columns(xv, layer.pass);
  std::optional<Tensor> ev;
  if (emb) ev = emb->detached();
  const Tensor raw = layer.conditioner.forward(conditioner_input(x_pass, ev ? &*ev : nullptr)).detached();
  const std::size_t p = detail::spline_raw_count(layer.bins);
  Tensor y = xv;
  Tensor logdet(Shape{n});
  detail::SplineKnots knots;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t col = layer.transform[j];
      const double v = xv.at(r, col);
      if (v < -layer.tail_bound || v > layer.tail_bound) continue;
      detail::knots_from_raw(raw.data().subspan((r * m + j) * p, p), layer.bins, layer.tail_bound, knots);
      const std::size_t k = detail::find_bin(knots.ys, v);
      const double u = detail::rq_bin_inverse(knots.xs[k], knots.xs[k + 1], knots.ys[k], knots.ys[k + 1],
                                              knots.ds[k], knots.ds[k + 1], v);
      double fwd = 0.0, ld = 0.0;
      detail::rq_bin_forward(knots.xs[k], knots.xs[k + 1], knots.ys[k], knots.ys[k + 1], knots.ds[k],
                             knots.ds[k + 1], u, fwd, ld);
      y.at(r, col) = u;
      logdet[r] -= ld;
    }
  }
  if (!y.all_finite() || !logdet.all_finite()) throw NumericError("coupling_apply: non-finite inverse");
  return {y, logdet};
}

Tensor condition_embedding(const Flow& flow, const Tensor& cond) {
  if (!flow.cond_net) throw InvalidArgument("condition_embedding: flow is unconditional");
  const std::size_t n = cond.size();
  if (!(cond.rank() == 1 || (cond.rank() == 2 && cond.shape()[1] == 1)))
    throw ShapeError("condition must have shape (n) or (n,1)");
  const Tensor col = cond.rank() == 2 ? cond : reshape(cond, Shape{n, 1});
  return flow.cond_net->forward(col);
}

CouplingOutput flow_transform(const Flow& flow, const Tensor& x, const Tensor* cond, Direction direction) {
  if (flow.conditional() != (cond != nullptr))
    throw InvalidArgument("flow: condition must be given iff the flow is conditional");
  if (x.rank() != 2 || x.shape()[1] != flow.dim)
    throw ShapeError("flow: expected (n," + std::to_string(flow.dim) + ") input, got " + shape_str(x.shape()));
  const std::size_t n = x.shape()[0];
  if (cond && cond->size() != n) throw ShapeError("flow: condition batch size mismatch");
  std::optional<Tensor> emb;
  if (cond) emb = condition_embedding(flow, *cond);
  const Tensor* e = emb ? &*emb : nullptr;
  Tensor z = x;
  Tensor total(Shape{n});
  if (direction == Direction::Forward) {
    for (const CouplingLayer& layer : flow.layers) {
      CouplingOutput out = coupling_apply(layer, z, e, Direction::Forward);
      z = std::move(out.y);
      total = add(total, out.logdet);
    }
  } else {
    for (auto it = flow.layers.rbegin(); it != flow.layers.rend(); ++it) {
      CouplingOutput out = coupling_apply(*it, z, e, Direction::Inverse);
      z = std::move(out.y);
      total = add(total, out.logdet);
    }
  }
  return {z, total};
}

Tensor flow_log_prob(const Flow& flow, const Tensor& x, const Tensor* cond) {
  const CouplingOutput out = flow_transform(flow, x, cond, Direction::Forward);
  const Tensor zeros(out.y.shape());
  return add(gaussian_log_density(out.y, zeros, zeros), out.logdet);
}

Tensor flow_sample(const Flow& flow, std::size_t n, const Tensor* cond, Rng& rng) {
  if (n == 0) throw InvalidArgument("flow_sample: n must be >= 1");
  const Tensor z = Tensor::randn(Shape{n, flow.dim}, rng);
  return flow_transform(flow, z, cond, Direction::Inverse).y.detached();
}

Tensor flow_score(const Flow& flow, const Tensor& x, const Tensor* cond) {
  ad::Tape tape;
  const Tensor xl = tape.leaf(x.detached());
  const Tensor total = sum(flow_log_prob(flow, xl, cond));
  Tensor g = tape.backward(total).of(xl);
  if (!g.all_finite()) throw NumericError("flow_score: non-finite gradient");
  return g;
}

}  // namespace dgm::flow
