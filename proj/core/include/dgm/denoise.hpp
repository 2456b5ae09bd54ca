#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dgm/error.hpp"
#include "dgm/model.hpp"
#include "dgm/rng.hpp"
#include "dgm/tensor.hpp"

namespace dgm::denoise {

struct NoiseSchedule {
  enum class Kind { None, Fixed, Uniform };
  Kind kind = Kind::None;
  double value = 0.0;  // sigma for Fixed, C for Uniform

  static NoiseSchedule none() { return {}; }
  static NoiseSchedule fixed(double sigma) { return {Kind::Fixed, sigma}; }
  static NoiseSchedule uniform(double c) { return {Kind::Uniform, c}; }
  void validate() const;
};

/// Baseline: plain maximum likelihood. ND: fixed-sigma noisy training, no
/// correction. TD: as ND plus one Tweedie step at sample time. CD: sigma ~
/// Uniform(0, C) per datapoint, model conditioned on sigma, sampled at 0.
enum class Regime { Baseline, ND, TD, CD };

std::string regime_name(Regime regime);
Regime parse_regime(const std::string& name);

struct DenoisingWrapper {
  Regime regime = Regime::Baseline;
  Model model;
  NoiseSchedule schedule;

  void validate() const;
};

struct TrainConfig {
  std::size_t epochs = 100;
  double learning_rate = 5e-4;
  std::size_t batch_size = 128;
  double clip_norm = 10.0;
  std::size_t patience = 30;
  /// Early stopping on the validation objective; the best parameters are
  /// restored at the end of training.
  bool early_stopping = true;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_objective = 0.0;
  double val_objective = 0.0;
};

enum class StopReason { Completed, EarlyStopped };

struct TrainHistory {
  std::vector<EpochRecord> records;
  StopReason reason = StopReason::Completed;
  std::size_t best_epoch = 0;
};

/// Training hit a non-finite objective; `history` holds the epochs that
/// completed and `epoch` the offending one.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(std::size_t epoch, TrainHistory history, const std::string& cause);
  std::size_t epoch() const noexcept { return epoch_; }
  const TrainHistory& history() const noexcept { return history_; }

 private:
  std::size_t epoch_;
  TrainHistory history_;
};

/// x + sigma * eps with fresh eps ~ N(0, I) per row. `sigma` is a scalar
/// tensor or one value per row.
Tensor add_noise(const Tensor& x, const Tensor& sigma, Rng& rng);
Tensor add_noise(const Tensor& x, double sigma, Rng& rng);

/// n noise levels: constant for Fixed, i.i.d. Uniform(0, C) for Uniform.
Tensor sample_sigma(const NoiseSchedule& schedule, std::size_t n, Rng& rng);

TrainHistory train(DenoisingWrapper& wrapper, const Tensor& train_set, const Tensor& val_set,
                   const TrainConfig& config, Rng& rng);

/// Mean objective of the wrapper's regime on `x` (already noised if needed).
double evaluate_objective(const DenoisingWrapper& wrapper, const Tensor& x, const Tensor* sigma, Rng& rng);

using ScoreFn = std::function<Tensor(const Tensor&)>;

/// x_sigma + sigma^2 * score(x_sigma), applied once. sigma = 0 returns the
/// input unchanged without evaluating the score.
Tensor tweedie_correct(const ScoreFn& score, const Tensor& x_sigma, double sigma);
Tensor tweedie_correct(const Model& model, const Tensor& x_sigma, double sigma, Rng& rng,
                       std::size_t particles = 64);

/// The condition column handed to the model at sample time (CD only: zeros).
Tensor sampling_condition(std::size_t n);

/// Baseline/ND: model sample. TD: model sample, then one Tweedie step at
/// the training sigma. CD: conditional sample at sigma = 0.
Tensor denoised_sample(const DenoisingWrapper& wrapper, std::size_t n, Rng& rng, std::size_t particles = 64);

}  // namespace dgm::denoise
