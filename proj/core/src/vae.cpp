#include "dgm/vae.hpp"

#include <cmath>

#include "dgm/autodiff.hpp"
#include "dgm/error.hpp"

namespace dgm::vae {

using namespace dgm::ad;

GaussianVae GaussianVae::make(const VaeOptions& o, std::uint64_t seed) {
  if (o.ambient_dim == 0 || o.latent_dim == 0 || o.hidden == 0)
    throw InvalidArgument("GaussianVae: dimensions must be positive");
  GaussianVae m;
  m.ambient_dim = o.ambient_dim;
  m.latent_dim = o.latent_dim;
  const std::size_t enc_in = o.ambient_dim + (o.conditional ? o.encoder_cond_dim : 0);
  const std::size_t dec_in = o.latent_dim + (o.conditional ? o.decoder_cond_dim : 0);
  m.encoder = nn::Mlp::init({enc_in, o.hidden, 2 * o.latent_dim}, nn::Activation::Relu, split_seed(seed, 0));
  m.decoder = nn::Mlp::init({dec_in, o.hidden, 2 * o.ambient_dim}, nn::Activation::Relu, split_seed(seed, 1));
  if (o.conditional) {
    m.encoder_cond =
        nn::Mlp::init({1, o.cond_hidden, o.encoder_cond_dim}, nn::Activation::Relu, split_seed(seed, 2));
    m.decoder_cond =
        nn::Mlp::init({1, o.cond_hidden, o.decoder_cond_dim}, nn::Activation::Relu, split_seed(seed, 3));
  }
  return m;
}

void GaussianVae::validate() const {
  if (encoder_cond.has_value() != decoder_cond.has_value())
    throw InvalidArgument("GaussianVae: both or neither conditioning nets must be present");
  const std::size_t enc_cond = encoder_cond ? encoder_cond->output_dim() : 0;
  const std::size_t dec_cond = decoder_cond ? decoder_cond->output_dim() : 0;
  if (encoder.input_dim() != ambient_dim + enc_cond || encoder.output_dim() != 2 * latent_dim)
    throw ShapeError("GaussianVae: encoder dims do not match (D, d)");
  if (decoder.input_dim() != latent_dim + dec_cond || decoder.output_dim() != 2 * ambient_dim)
    throw ShapeError("GaussianVae: decoder dims do not match (d, D)");
  if ((encoder_cond && encoder_cond->input_dim() != 1) || (decoder_cond && decoder_cond->input_dim() != 1))
    throw ShapeError("GaussianVae: conditioning nets take a scalar sigma");
}

GaussianVae GaussianVae::attach(ad::Tape& tape) const {
  GaussianVae m;
  m.latent_dim = latent_dim;
  m.ambient_dim = ambient_dim;
  m.encoder = encoder.attach(tape);
  m.decoder = decoder.attach(tape);
  if (encoder_cond) m.encoder_cond = encoder_cond->attach(tape);
  if (decoder_cond) m.decoder_cond = decoder_cond->attach(tape);
  return m;
}

std::vector<Tensor*> GaussianVae::parameters() {
  std::vector<Tensor*> p = encoder.parameters();
  for (Tensor* t : decoder.parameters()) p.push_back(t);
  if (encoder_cond)
    for (Tensor* t : encoder_cond->parameters()) p.push_back(t);
  if (decoder_cond)
    for (Tensor* t : decoder_cond->parameters()) p.push_back(t);
  return p;
}

std::vector<const Tensor*> GaussianVae::parameters() const {
  std::vector<const Tensor*> p = encoder.parameters();
  for (const Tensor* t : decoder.parameters()) p.push_back(t);
  if (encoder_cond)
    for (const Tensor* t : encoder_cond->parameters()) p.push_back(t);
  if (decoder_cond)
    for (const Tensor* t : decoder_cond->parameters()) p.push_back(t);
  return p;
}

namespace {

Tensor cond_column(const Tensor& cond, std::size_t n) {
  if (cond.size() != n || !(cond.rank() == 1 || (cond.rank() == 2 && cond.shape()[1] == 1)))
    throw ShapeError("condition must have shape (n) or (n,1) with n=" + std::to_string(n) + ", got " +
                     shape_str(cond.shape()));
  return cond.rank() == 2 ? cond : reshape(cond, Shape{n, 1});
}

void check_condition(const GaussianVae& m, const Tensor* cond) {
  if (m.conditional() && !cond) throw InvalidArgument("conditional VAE requires a condition");
  if (!m.conditional() && cond) throw InvalidArgument("unconditional VAE given a condition");
}

DiagGaussian split_head(const Tensor& out, std::size_t dim) {
  return {slice(out, 0, dim), clamp(slice(out, dim, 2 * dim), kLogVarMin, kLogVarMax)};
}

}  // namespace

DiagGaussian encode(const GaussianVae& m, const Tensor& x, const Tensor* cond) {
  check_condition(m, cond);
  if (x.rank() != 2 || x.shape()[1] != m.ambient_dim)
    throw ShapeError("VAE encode: expected (n," + std::to_string(m.ambient_dim) + ") input, got " +
                     shape_str(x.shape()));
  Tensor in = x;
  if (cond) in = concat(x, m.encoder_cond->forward(cond_column(*cond, x.shape()[0])));
  return split_head(m.encoder.forward(in), m.latent_dim);
}

DiagGaussian decode(const GaussianVae& m, const Tensor& z, const Tensor* cond) {
  check_condition(m, cond);
  if (z.rank() != 2 || z.shape()[1] != m.latent_dim) throw ShapeError("VAE decode: latent dimension mismatch");
  Tensor in = z;
  if (cond) in = concat(z, m.decoder_cond->forward(cond_column(*cond, z.shape()[0])));
  return split_head(m.decoder.forward(in), m.ambient_dim);
}

Tensor kl_to_prior(const DiagGaussian& q) {
  const Tensor inner = sub(add(square(q.mean), exp(q.logvar)), add_scalar(q.logvar, 1.0));
  return scale(sum_last(inner), 0.5);
}

Tensor elbo_per_sample(const GaussianVae& m, const Tensor& x, const Tensor* cond, Rng& rng, KlEstimator kl) {
  const DiagGaussian q = encode(m, x, cond);
  const std::size_t n = x.shape()[0];
  const Tensor eps = Tensor::randn(Shape{n, m.latent_dim}, rng);
  const Tensor z = add(q.mean, mul(exp(scale(q.logvar, 0.5)), eps));
  const DiagGaussian px = decode(m, z, cond);
  const Tensor rec = gaussian_log_density(x, px.mean, px.logvar);
  Tensor kl_term;
  if (kl == KlEstimator::ClosedForm) {
    kl_term = kl_to_prior(q);
  } else {
    const Tensor zeros(z.shape());
    kl_term = sub(gaussian_log_density(z, q.mean, q.logvar), gaussian_log_density(z, zeros, zeros));
  }
  return sub(rec, kl_term);
}

Tensor elbo(const GaussianVae& m, const Tensor& x, const Tensor* cond, Rng& rng, KlEstimator kl) {
  return mean(elbo_per_sample(m, x, cond, rng, kl));
}

Tensor vae_sample(const GaussianVae& m, std::size_t n, const Tensor* cond, Rng& rng) {
  if (n == 0) throw InvalidArgument("vae_sample: n must be >= 1");
  const Tensor z = Tensor::randn(Shape{n, m.latent_dim}, rng);
  const DiagGaussian px = decode(m, z, cond);
  const Tensor eps = Tensor::randn(Shape{n, m.ambient_dim}, rng);
  return add(px.mean, mul(exp(scale(px.logvar, 0.5)), eps)).detached();
}

Tensor iw_log_prob(const GaussianVae& m, const Tensor& x, std::size_t particles, Rng& rng, const Tensor* cond) {
  if (particles < 1) throw InvalidArgument("iw_log_prob: particle count must be >= 1");
  const DiagGaussian q = encode(m, x, cond);
  const std::size_t n = x.shape()[0];
  const Tensor mu = repeat_rows(q.mean, particles);
  const Tensor lv = repeat_rows(q.logvar, particles);
  const Tensor eps = Tensor::randn(Shape{n * particles, m.latent_dim}, rng);
  const Tensor z = add(mu, mul(exp(scale(lv, 0.5)), eps));
  const Tensor log_q = gaussian_log_density(z, mu, lv);
  const Tensor zeros(z.shape());
  const Tensor log_pz = gaussian_log_density(z, zeros, zeros);
  std::optional<Tensor> cond_rep;
  if (cond) cond_rep = repeat_rows(cond_column(*cond, n), particles);
  const DiagGaussian px = decode(m, z, cond_rep ? &*cond_rep : nullptr);
  const Tensor log_px = gaussian_log_density(repeat_rows(x, particles), px.mean, px.logvar);
  const Tensor log_w = sub(add(log_px, log_pz), log_q);
  const Tensor lse = logsumexp_last(reshape(log_w, Shape{n, particles}));
  return add_scalar(lse, -std::log(static_cast<double>(particles)));
}

Tensor vae_score(const GaussianVae& m, const Tensor& x, std::size_t particles, Rng& rng, const Tensor* cond) {
  ad::Tape tape;
  const Tensor xl = tape.leaf(x.detached());
  const Tensor total = sum(iw_log_prob(m, xl, particles, rng, cond));
  Tensor g = tape.backward(total).of(xl);
  if (!g.all_finite()) throw NumericError("vae_score: non-finite gradient");
  return g;
}

}  // namespace dgm::vae
