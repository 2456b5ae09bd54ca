#pragma once

#include <string>
#include <variant>
#include <vector>

#include "dgm/flow.hpp"
#include "dgm/vae.hpp"

namespace dgm {

/// A trainable density: Gaussian VAE or spline coupling flow, each
/// optionally conditioned on a scalar sigma.
using Model = std::variant<vae::GaussianVae, flow::Flow>;

std::string model_kind(const Model& model);
bool is_conditional(const Model& model);
std::size_t ambient_dim(const Model& model);

std::vector<Tensor*> parameters(Model& model);
std::vector<const Tensor*> parameters(const Model& model);
Model attach(const Model& model, ad::Tape& tape);

/// Batch-mean training objective to maximize: ELBO (VAE) or exact
/// log-likelihood (flow).
Tensor objective(const Model& model, const Tensor& x, const Tensor* cond, Rng& rng);

/// Per-row log-density: exact for flows, importance-weighted bound with
/// `particles` samples for VAEs.
Tensor log_likelihood(const Model& model, const Tensor& x, const Tensor* cond, Rng& rng, std::size_t particles);

Tensor sample(const Model& model, std::size_t n, const Tensor* cond, Rng& rng);

/// Gradient of the log-density in x (exact for flows, IW estimate for VAEs).
Tensor score(const Model& model, const Tensor& x, const Tensor* cond, Rng& rng, std::size_t particles);

}  // namespace dgm
