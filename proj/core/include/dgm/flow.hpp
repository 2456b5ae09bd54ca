#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dgm/nn.hpp"
#include "dgm/rng.hpp"
#include "dgm/tensor.hpp"

namespace dgm::flow {

/// Forward maps data to latent (the density-evaluation direction, built
/// from coupling layers); Inverse maps latent to data (sampling).
enum class Direction { Forward, Inverse };

/// Monotone rational-quadratic spline on [-B, B], identity outside.
struct RqSplineParams {
  std::vector<double> widths;       // K, sum to 2B
  std::vector<double> heights;      // K, sum to 2B
  std::vector<double> derivatives;  // K+1, positive
  double tail_bound = 3.0;

  int bins() const noexcept { return static_cast<int>(widths.size()); }
  void validate() const;

  static RqSplineParams identity(int bins, double tail_bound);
  /// Maps 3K-1 unconstrained values through softmax (widths, heights) and
  /// shifted softplus (interior derivatives; boundary derivatives are 1).
  static RqSplineParams from_raw(std::span<const double> raw, int bins, double tail_bound);
};

struct SplineValue {
  double y = 0.0;
  double log_abs_deriv = 0.0;
};

SplineValue rq_spline(double x, const RqSplineParams& params, Direction direction);

struct FlowOptions {
  std::size_t dim = 2;
  std::size_t groups = 4;
  std::size_t blocks = 3;
  std::size_t hidden = 128;
  int bins = 8;
  double tail_bound = 3.0;
  bool conditional = false;
  std::size_t cond_dim = 64;
  std::size_t cond_hidden = 256;
};

/// Passes `pass` coordinates through and transforms `transform`
/// coordinates with splines parameterized by conditioner(x_pass[, c]).
struct CouplingLayer {
  std::vector<std::size_t> pass;
  std::vector<std::size_t> transform;
  nn::Mlp conditioner;
  int bins = 8;
  double tail_bound = 3.0;

  std::size_t dim() const noexcept { return pass.size() + transform.size(); }
};

struct Flow {
  std::size_t dim = 0;
  std::vector<CouplingLayer> layers;
  std::optional<nn::Mlp> cond_net;

  /// groups x blocks coupling layers with alternating even/odd masks.
  static Flow make(const FlowOptions& options, std::uint64_t seed);

  bool conditional() const noexcept { return cond_net.has_value(); }
  void validate() const;
  Flow attach(ad::Tape& tape) const;

  /// Conditioners in layer order, then the conditioning net.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
};

struct CouplingOutput {
  Tensor y;
  Tensor logdet;  // (n)
};

/// Forward is differentiable through the tape; Inverse operates on values
/// only and returns untaped tensors.
CouplingOutput coupling_apply(const CouplingLayer& layer, const Tensor& x, const Tensor* cond_embedding,
                              Direction direction);

/// Embedding of the raw sigma condition (shape (n) or (n,1)).
Tensor condition_embedding(const Flow& flow, const Tensor& cond);

/// Whole-flow pass. Forward: data -> latent with log|det d f^-1/dx|.
CouplingOutput flow_transform(const Flow& flow, const Tensor& x, const Tensor* cond, Direction direction);

Tensor flow_log_prob(const Flow& flow, const Tensor& x, const Tensor* cond = nullptr);
Tensor flow_sample(const Flow& flow, std::size_t n, const Tensor* cond, Rng& rng);
Tensor flow_score(const Flow& flow, const Tensor& x, const Tensor* cond = nullptr);

}  // namespace dgm::flow
