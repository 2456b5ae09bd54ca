#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dgm/nn.hpp"
#include "dgm/rng.hpp"
#include "dgm/tensor.hpp"

namespace dgm::vae {

inline constexpr double kLogVarMin = -20.0;
inline constexpr double kLogVarMax = 5.0;

struct VaeOptions {
  std::size_t ambient_dim = 0;
  std::size_t latent_dim = 20;
  std::size_t hidden = 256;
  bool conditional = false;
  std::size_t encoder_cond_dim = 64;
  std::size_t decoder_cond_dim = 8;
  std::size_t cond_hidden = 256;
};

/// Gaussian VAE with a standard-normal prior. The encoder emits
/// (mu_z, log var_z), the decoder (mu_x, log var_x); both log-variance heads
/// are clamped to [kLogVarMin, kLogVarMax]. A conditional VAE feeds sigma
/// through two small conditioning networks whose embeddings are
/// concatenated onto the encoder and decoder inputs. The prior does not
/// depend on the condition.
struct GaussianVae {
  nn::Mlp encoder;
  nn::Mlp decoder;
  std::optional<nn::Mlp> encoder_cond;
  std::optional<nn::Mlp> decoder_cond;
  std::size_t latent_dim = 0;
  std::size_t ambient_dim = 0;

  static GaussianVae make(const VaeOptions& options, std::uint64_t seed);

  bool conditional() const noexcept { return encoder_cond.has_value(); }
  void validate() const;
  GaussianVae attach(ad::Tape& tape) const;

  /// Encoder, decoder, then the conditioning nets (when present).
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
};

struct DiagGaussian {
  Tensor mean;
  Tensor logvar;
};

enum class KlEstimator {
  ClosedForm,  // analytic KL(q || N(0, I))
  Sampled,     // log q(z|x) - log p(z) at the reparameterized sample
};

/// `cond` (shape (n) or (n,1)) must be given iff the model is conditional.
DiagGaussian encode(const GaussianVae& model, const Tensor& x, const Tensor* cond);
DiagGaussian decode(const GaussianVae& model, const Tensor& z, const Tensor* cond);

/// Closed-form KL(N(mean, diag exp(logvar)) || N(0, I)) per row.
Tensor kl_to_prior(const DiagGaussian& q);

/// Single-sample Monte-Carlo ELBO per datapoint.
Tensor elbo_per_sample(const GaussianVae& model, const Tensor& x, const Tensor* cond, Rng& rng,
                       KlEstimator kl = KlEstimator::ClosedForm);
/// Batch mean of elbo_per_sample (scalar).
Tensor elbo(const GaussianVae& model, const Tensor& x, const Tensor* cond, Rng& rng,
            KlEstimator kl = KlEstimator::ClosedForm);

/// z ~ N(0, I), then x ~ N(mu_x(z), diag var_x(z)).
Tensor vae_sample(const GaussianVae& model, std::size_t n, const Tensor* cond, Rng& rng);

/// K-particle importance-weighted bound on log p(x), per row.
Tensor iw_log_prob(const GaussianVae& model, const Tensor& x, std::size_t particles, Rng& rng,
                   const Tensor* cond = nullptr);

/// Gradient of the importance-weighted bound with respect to x.
Tensor vae_score(const GaussianVae& model, const Tensor& x, std::size_t particles, Rng& rng,
                 const Tensor* cond = nullptr);

}  // namespace dgm::vae
