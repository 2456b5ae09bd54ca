#include "dgm/denoise.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

#include "dgm/autodiff.hpp"
#include "dgm/nn.hpp"

namespace dgm::denoise {

void NoiseSchedule::validate() const {
  switch (kind) {
    case Kind::None: return;
    case Kind::Fixed:
      if (!(value >= 0.0) || !std::isfinite(value)) throw InvalidArgument("fixed noise level must be >= 0");
      return;
    case Kind::Uniform:
      if (!(value > 0.0) || !std::isfinite(value)) throw InvalidArgument("uniform noise bound C must be > 0");
      return;
  }
}

std::string regime_name(Regime regime) {
  switch (regime) {
    case Regime::Baseline: return "baseline";
    case Regime::ND: return "nd";
    case Regime::TD: return "td";
    case Regime::CD: return "cd";
  }
  return "?";
}

Regime parse_regime(const std::string& name) {
  if (name == "baseline") return Regime::Baseline;
  if (name == "nd") return Regime::ND;
  if (name == "td") return Regime::TD;
  if (name == "cd") return Regime::CD;
  throw InvalidArgument("unknown regime '" + name + "' (expected baseline, nd, td or cd)");
}

void DenoisingWrapper::validate() const {
  schedule.validate();
  using K = NoiseSchedule::Kind;
  const bool cond = is_conditional(model);
  switch (regime) {
    case Regime::Baseline:
      if (schedule.kind != K::None) throw InvalidArgument("baseline regime requires noise schedule None");
      break;
    case Regime::ND:
    case Regime::TD:
      if (schedule.kind != K::Fixed)
        throw InvalidArgument(regime_name(regime) + " regime requires a Fixed noise schedule");
      break;
    case Regime::CD:
      if (schedule.kind != K::Uniform) throw InvalidArgument("cd regime requires a Uniform noise schedule");
      if (!cond) throw InvalidArgument("cd regime requires a conditional model");
      break;
  }
  if (regime != Regime::CD && cond) throw InvalidArgument(regime_name(regime) + " regime requires an unconditional model");
}

TrainingAborted::TrainingAborted(std::size_t epoch, TrainHistory history, const std::string& cause)
    : NumericError("training aborted at epoch " + std::to_string(epoch) + ": " + cause),
      epoch_(epoch),
      history_(std::move(history)) {}

Tensor add_noise(const Tensor& x, const Tensor& sigma, Rng& rng) {
  if (x.rank() != 2) throw ShapeError("add_noise: expected (n, D) batch");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (!(sigma.size() == 1 || sigma.size() == n)) throw ShapeError("add_noise: sigma must be scalar or per-row");
  for (double s : sigma.data())
    if (!(s >= 0.0)) throw InvalidArgument("add_noise: sigma must be >= 0");
  const Tensor eps = Tensor::randn(x.shape(), rng);
  Tensor out = x.detached();
  for (std::size_t r = 0; r < n; ++r) {
    const double s = sigma.size() == 1 ? sigma[0] : sigma[r];
    for (std::size_t c = 0; c < d; ++c) out.at(r, c) += s * eps.at(r, c);
  }
  return out;
}

Tensor add_noise(const Tensor& x, double sigma, Rng& rng) { return add_noise(x, Tensor::scalar(sigma), rng); }

Tensor sample_sigma(const NoiseSchedule& schedule, std::size_t n, Rng& rng) {
  schedule.validate();
  switch (schedule.kind) {
    case NoiseSchedule::Kind::None:
      throw InvalidArgument("sample_sigma: schedule kind None has no noise levels");
    case NoiseSchedule::Kind::Fixed:
      return Tensor::filled(Shape{n}, schedule.value);
    case NoiseSchedule::Kind::Uniform: {
      std::uniform_real_distribution<double> u(0.0, schedule.value);
      Tensor out(Shape{n});
      for (double& v : out.data()) {
        do v = u(rng);
        while (!(v > 0.0 && v < schedule.value));
      }
      return out;
    }
  }
  return {};
}

namespace {

// Noised copy of x for the wrapper's regime, plus the per-row sigma column
// handed to conditional models.
struct NoisyBatch {
  Tensor x;
  std::optional<Tensor> cond;
};

NoisyBatch noisy_batch(const DenoisingWrapper& w, const Tensor& x, Rng& rng) {
  const std::size_t n = x.shape()[0];
  switch (w.regime) {
    case Regime::Baseline: return {x, std::nullopt};
    case Regime::ND:
    case Regime::TD: return {add_noise(x, w.schedule.value, rng), std::nullopt};
    case Regime::CD: {
      const Tensor sigma = sample_sigma(w.schedule, n, rng);
      Tensor noisy = add_noise(x, sigma, rng);
      return {std::move(noisy), Tensor(Shape{n, 1}, std::vector<double>(sigma.data().begin(), sigma.data().end()))};
    }
  }
  return {x, std::nullopt};
}

std::vector<Tensor> snapshot(const Model& m) {
  std::vector<Tensor> out;
  for (const Tensor* p : parameters(m)) out.push_back(*p);
  return out;
}

void restore(Model& m, const std::vector<Tensor>& saved) {
  auto ps = parameters(m);
  for (std::size_t i = 0; i < ps.size(); ++i) *ps[i] = saved[i];
}

}  // namespace

double evaluate_objective(const DenoisingWrapper& w, const Tensor& x, const Tensor* sigma, Rng& rng) {
  const std::size_t n = x.shape()[0];
  constexpr std::size_t kChunk = 1024;
  double total = 0.0;
  for (std::size_t b = 0; b < n; b += kChunk) {
    const std::size_t e = std::min(n, b + kChunk);
    std::optional<Tensor> c;
    if (sigma) c = sigma->rows_slice(b, e);
    total += objective(w.model, x.rows_slice(b, e), c ? &*c : nullptr, rng).item() * static_cast<double>(e - b);
  }
  return total / static_cast<double>(n);
}

TrainHistory train(DenoisingWrapper& w, const Tensor& train_set, const Tensor& val_set, const TrainConfig& cfg,
                   Rng& rng) {
  w.validate();
  const std::size_t dim = ambient_dim(w.model);
  if (train_set.rank() != 2 || train_set.shape()[1] != dim || train_set.shape()[0] == 0)
    throw ShapeError("train: training set must be (n, " + std::to_string(dim) + ")");
  if (val_set.rank() != 2 || val_set.shape()[1] != dim || val_set.shape()[0] == 0)
    throw ShapeError("train: validation set must be (n, " + std::to_string(dim) + ")");
  if (cfg.batch_size == 0) throw InvalidArgument("train: batch size must be positive");

  TrainHistory history;
  const NoisyBatch val = noisy_batch(w, val_set, rng);
  nn::AdamState adam(cfg.learning_rate);
  const bool early = cfg.early_stopping;
  double best_val = -std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_params = snapshot(w.model);
  std::size_t bad_epochs = 0;

  const std::size_t n = train_set.shape()[0];
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double sum_obj = 0.0;
    try {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t b = 0; b < n; b += cfg.batch_size) {
        const std::size_t e = std::min(n, b + cfg.batch_size);
        const Tensor xb = train_set.gather_rows(std::span<const std::size_t>(order).subspan(b, e - b));
        const NoisyBatch batch = noisy_batch(w, xb, rng);
        ad::Tape tape;
        const Model taped = attach(w.model, tape);
        const Tensor obj = objective(taped, batch.x, batch.cond ? &*batch.cond : nullptr, rng);
        const ad::Gradients grads = tape.backward(ad::neg(obj));
        std::vector<Tensor> g;
        for (const Tensor* p : parameters(taped)) g.push_back(grads.of(*p));
        nn::clip_global_norm(std::span<Tensor>(g), cfg.clip_norm);
        auto params = parameters(w.model);
        nn::adam_step(adam, params, g);
        sum_obj += obj.item() * static_cast<double>(e - b);
      }
    } catch (const NumericError& err) {
      throw TrainingAborted(epoch, history, err.what());
    }
    const double train_obj = sum_obj / static_cast<double>(n);
    double val_obj = 0.0;
    try {
      val_obj = evaluate_objective(w, val.x, val.cond ? &*val.cond : nullptr, rng);
    } catch (const NumericError& err) {
      throw TrainingAborted(epoch, history, std::string("validation: ") + err.what());
    }
    if (!std::isfinite(train_obj) || !std::isfinite(val_obj))
      throw TrainingAborted(epoch, history, "non-finite objective");
    history.records.push_back({epoch, train_obj, val_obj});

    if (!early) {
      history.best_epoch = epoch;
      continue;
    }
    if (val_obj > best_val) {
      best_val = val_obj;
      best_params = snapshot(w.model);
      history.best_epoch = epoch;
      bad_epochs = 0;
    } else if (++bad_epochs >= cfg.patience) {
      history.reason = StopReason::EarlyStopped;
      break;
    }
  }
  if (early && history.best_epoch > 0) restore(w.model, best_params);
  return history;
}

Tensor tweedie_correct(const ScoreFn& score, const Tensor& x_sigma, double sigma) {
  if (!(sigma >= 0.0)) throw InvalidArgument("tweedie_correct: sigma must be >= 0");
  if (sigma == 0.0) return x_sigma.detached();
  const Tensor s = score(x_sigma);
  if (s.shape() != x_sigma.shape()) throw ShapeError("tweedie_correct: score shape differs from input");
  if (!s.all_finite()) throw NumericError("tweedie_correct: non-finite score");
  Tensor out = x_sigma.detached();
  const double s2 = sigma * sigma;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += s2 * s[i];
  return out;
}

Tensor tweedie_correct(const Model& model, const Tensor& x_sigma, double sigma, Rng& rng, std::size_t particles) {
  return tweedie_correct([&](const Tensor& x) { return score(model, x, nullptr, rng, particles); }, x_sigma, sigma);
}

Tensor sampling_condition(std::size_t n) { return Tensor(Shape{n, 1}); }

Tensor denoised_sample(const DenoisingWrapper& w, std::size_t n, Rng& rng, std::size_t particles) {
  w.validate();
  switch (w.regime) {
    case Regime::Baseline:
    case Regime::ND: return sample(w.model, n, nullptr, rng);
    case Regime::TD: {
      const Tensor x = sample(w.model, n, nullptr, rng);
      return tweedie_correct(w.model, x, w.schedule.value, rng, particles);
    }
    case Regime::CD: {
      const Tensor cond = sampling_condition(n);
      return sample(w.model, n, &cond, rng);
    }
  }
  return {};
}

}  // namespace dgm::denoise
