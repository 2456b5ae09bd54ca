#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dgm/tensor.hpp"

namespace dgm::ad {
class Tape;
}

namespace dgm::nn {

enum class Activation { Relu, None };

struct Dense {
  Tensor weight;  // (fan_in, fan_out)
  Tensor bias;    // (fan_out)
  Activation activation = Activation::None;
};

/// Fully connected network. Hidden layers use the configured activation;
/// the output layer is always linear.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<Dense> layers);

  /// Kaiming-uniform weights (bound sqrt(6/fan_in)), zero biases.
  static Mlp init(const std::vector<std::size_t>& dims, Activation hidden, std::uint64_t seed);

  Tensor forward(const Tensor& x) const;

  /// Copy whose parameters are leaves on `tape`.
  Mlp attach(ad::Tape& tape) const;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::vector<std::size_t> dims() const;

  const std::vector<Dense>& layers() const noexcept { return layers_; }
  std::vector<Dense>& layers() noexcept { return layers_; }

  /// Weight and bias of each layer, in order.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;

 private:
  std::vector<Dense> layers_;
};

/// Rescales every tensor by max_norm / g when the global L2 norm g exceeds
/// max_norm. Returns g (before clipping).
double clip_global_norm(std::span<Tensor> grads, double max_norm);
std::vector<Tensor> clip_global_norm(std::vector<Tensor> grads, double max_norm, double* norm_out);

struct AdamState {
  std::size_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double learning_rate = 1e-3;

  explicit AdamState(double lr = 1e-3) : learning_rate(lr) {}
};

/// One bias-corrected Adam update, in place on `params`.
void adam_step(AdamState& state, std::span<Tensor* const> params, std::span<const Tensor> grads);

}  // namespace dgm::nn
