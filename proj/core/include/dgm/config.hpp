#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dgm/data.hpp"
#include "dgm/denoise.hpp"
#include "dgm/model.hpp"

namespace dgm::config {

enum class Preprocess { None, Scale01, Whiten };

std::string preprocess_name(Preprocess p);

/// Either a synthetic manifold (`kind` circle, curve, sphere, affine) or
/// an IDX file (`kind` idx).
struct DatasetConfig {
  std::string kind = "circle";
  double radius = 1.0;
  std::string density = "uniform";  // circle only: uniform | von_mises
  double kappa = 1.0;
  double loc = 0.0;
  std::size_t intrinsic_dim = 1;  // affine only
  std::size_t ambient_dim = 2;    // affine only
  std::uint64_t basis_seed = 0;   // affine only
  std::string path;               // idx only
  std::string test_path;          // idx only; empty holds out the tail of `path`
  std::size_t n_train = 2000;     // total rows before the validation split
  double val_fraction = 0.1;
  Preprocess preprocess = Preprocess::None;

  bool is_manifold() const { return kind != "idx"; }
  /// Throws InvalidArgument for idx datasets.
  data::ManifoldSpec manifold() const;
};

struct SplineConfig {
  int bins = 8;
  std::size_t groups = 4;
  std::size_t blocks = 3;
  std::size_t hidden = 128;
  double tail_bound = 3.0;
};

struct SweepConfig {
  std::vector<double> grid{0.005, 0.01, 0.05, 0.1, 0.5};
  std::size_t n_seeds = 3;
  std::size_t workers = 1;
};

struct ExperimentConfig {
  std::string model = "flow";  // vae | flow
  denoise::Regime regime = denoise::Regime::Baseline;
  std::optional<double> sigma;  // nd, td
  std::optional<double> C;      // cd
  DatasetConfig dataset;
  std::size_t epochs = 100;
  double learning_rate = 5e-4;
  std::size_t batch_size = 128;
  double clip_norm = 10.0;
  std::size_t patience = 30;
  std::size_t latent_dim = 20;
  std::size_t vae_hidden = 256;
  SplineConfig spline;
  std::size_t k_iw = 64;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  std::size_t n_eval = 10000;
  std::size_t n_projections = 128;
  SweepConfig sweep;

  /// Collects every violated field and throws ConfigError if any.
  void validate() const;
  denoise::NoiseSchedule schedule() const;
  denoise::TrainConfig train_config() const;
};

/// Defaults for "vae" or "flow"; anything else is a ConfigError.
ExperimentConfig default_config(const std::string& model);

/// Canonical JSON: sorted keys, shortest round-trip doubles.
std::string to_json(const ExperimentConfig& config, int indent = -1);
/// Missing keys take the model's defaults; unknown keys are errors.
ExperimentConfig from_json(const std::string& text);
ExperimentConfig load(const std::filesystem::path& path);

/// Fresh model for the config; conditional exactly when the regime is cd.
Model build_model(const ExperimentConfig& config, std::size_t ambient_dim);

/// FNV-1a 64 of the canonical JSON, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

}  // namespace dgm::config
