#include "dgm/model.hpp"

#include "dgm/autodiff.hpp"

namespace dgm {

namespace {
template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;
}  // namespace

std::string model_kind(const Model& model) { return std::holds_alternative<vae::GaussianVae>(model) ? "vae" : "flow"; }

bool is_conditional(const Model& model) {
  return std::visit([](const auto& m) { return m.conditional(); }, model);
}

std::size_t ambient_dim(const Model& model) {
  return std::visit(overloaded{[](const vae::GaussianVae& m) { return m.ambient_dim; },
                               [](const flow::Flow& f) { return f.dim; }},
                    model);
}

std::vector<Tensor*> parameters(Model& model) {
  return std::visit([](auto& m) { return m.parameters(); }, model);
}

std::vector<const Tensor*> parameters(const Model& model) {
  return std::visit([](const auto& m) { return m.parameters(); }, model);
}

Model attach(const Model& model, ad::Tape& tape) {
  return std::visit([&](const auto& m) -> Model { return m.attach(tape); }, model);
}

Tensor objective(const Model& model, const Tensor& x, const Tensor* cond, Rng& rng) {
  return std::visit(overloaded{[&](const vae::GaussianVae& m) { return vae::elbo(m, x, cond, rng); },
                               [&](const flow::Flow& f) { return ad::mean(flow::flow_log_prob(f, x, cond)); }},
                    model);
}

Tensor log_likelihood(const Model& model, const Tensor& x, const Tensor* cond, Rng& rng, std::size_t particles) {
  return std::visit(
      overloaded{[&](const vae::GaussianVae& m) { return vae::iw_log_prob(m, x, particles, rng, cond); },
                 [&](const flow::Flow& f) { return flow::flow_log_prob(f, x, cond); }},
      model);
}

Tensor sample(const Model& model, std::size_t n, const Tensor* cond, Rng& rng) {
  return std::visit(overloaded{[&](const vae::GaussianVae& m) { return vae::vae_sample(m, n, cond, rng); },
                               [&](const flow::Flow& f) { return flow::flow_sample(f, n, cond, rng); }},
                    model);
}

Tensor score(const Model& model, const Tensor& x, const Tensor* cond, Rng& rng, std::size_t particles) {
  return std::visit(
      overloaded{[&](const vae::GaussianVae& m) { return vae::vae_score(m, x, particles, rng, cond); },
                 [&](const flow::Flow& f) { return flow::flow_score(f, x, cond); }},
      model);
}

}  // namespace dgm
