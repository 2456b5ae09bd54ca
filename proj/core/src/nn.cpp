#include "dgm/nn.hpp"

#include <cmath>
#include <random>

#include "dgm/autodiff.hpp"
#include "dgm/error.hpp"

namespace dgm::nn {

Mlp::Mlp(std::vector<Dense> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw InvalidArgument("Mlp needs at least one layer");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Dense& l = layers_[i];
    if (l.weight.rank() != 2 || l.bias.rank() != 1 || l.bias.shape()[0] != l.weight.shape()[1])
      throw ShapeError("Mlp layer " + std::to_string(i) + " has inconsistent weight/bias shapes");
    if (i > 0 && layers_[i - 1].weight.shape()[1] != l.weight.shape()[0])
      throw ShapeError("Mlp layer " + std::to_string(i) + " does not chain with its predecessor");
  }
  if (layers_.back().activation != Activation::None) throw InvalidArgument("Mlp output layer must be linear");
}

Mlp Mlp::init(const std::vector<std::size_t>& dims, Activation hidden, std::uint64_t seed) {
  if (dims.size() < 2) throw InvalidArgument("mlp_init: need at least input and output dims");
  for (std::size_t d : dims)
    if (d == 0) throw InvalidArgument("mlp_init: dims must be positive");
  Rng rng(seed);
  std::vector<Dense> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const double bound = std::sqrt(6.0 / static_cast<double>(dims[i]));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor w(Shape{dims[i], dims[i + 1]});
    for (double& v : w.data()) v = u(rng);
    const bool last = i + 2 == dims.size();
    layers.push_back(Dense{std::move(w), Tensor(Shape{dims[i + 1]}), last ? Activation::None : hidden});
  }
  return Mlp(std::move(layers));
}

Tensor Mlp::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.shape()[1] != input_dim())
    throw ShapeError("mlp_forward: expected (n," + std::to_string(input_dim()) + ") input, got " +
                     shape_str(x.shape()));
  Tensor h = x;
  for (const Dense& l : layers_) {
    h = ad::add(ad::matmul(h, l.weight), l.bias);
    if (l.activation == Activation::Relu) h = ad::relu(h);
  }
  return h;
}

Mlp Mlp::attach(ad::Tape& tape) const {
  Mlp copy;
  copy.layers_.reserve(layers_.size());
  for (const Dense& l : layers_) copy.layers_.push_back(Dense{tape.leaf(l.weight), tape.leaf(l.bias), l.activation});
  return copy;
}

std::size_t Mlp::input_dim() const { return layers_.empty() ? 0 : layers_.front().weight.shape()[0]; }
std::size_t Mlp::output_dim() const { return layers_.empty() ? 0 : layers_.back().weight.shape()[1]; }

std::vector<std::size_t> Mlp::dims() const {
  std::vector<std::size_t> d;
  if (layers_.empty()) return d;
  d.push_back(input_dim());
  for (const Dense& l : layers_) d.push_back(l.weight.shape()[1]);
  return d;
}

std::vector<Tensor*> Mlp::parameters() {
  std::vector<Tensor*> p;
  for (Dense& l : layers_) {
    p.push_back(&l.weight);
    p.push_back(&l.bias);
  }
  return p;
}

std::vector<const Tensor*> Mlp::parameters() const {
  std::vector<const Tensor*> p;
  for (const Dense& l : layers_) {
    p.push_back(&l.weight);
    p.push_back(&l.bias);
  }
  return p;
}

double clip_global_norm(std::span<Tensor> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw InvalidArgument("clip_global_norm: max_norm must be positive");
  double sq = 0.0;
  for (const Tensor& g : grads) {
    if (!g.all_finite()) throw NumericError("clip_global_norm: non-finite gradient entry");
    for (double v : g.data()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (Tensor& g : grads)
      for (double& v : g.data()) v *= factor;
  }
  return norm;
}

std::vector<Tensor> clip_global_norm(std::vector<Tensor> grads, double max_norm, double* norm_out) {
  const double norm = clip_global_norm(std::span<Tensor>(grads), max_norm);
  if (norm_out) *norm_out = norm;
  return grads;
}

void adam_step(AdamState& state, std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: params and grads differ in count");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match params");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || state.m[i].shape() != grads[i].shape())
      throw ShapeError("adam_step: shape mismatch at parameter " + std::to_string(i));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    const auto g = grads[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double update = state.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.eps);
      if (!std::isfinite(update)) throw NumericError("adam_step: non-finite update");
      p[j] -= update;
    }
  }
}

}  // namespace dgm::nn
