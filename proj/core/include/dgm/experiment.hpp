#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dgm/checkpoint.hpp"
#include "dgm/config.hpp"
#include "dgm/data.hpp"
#include "dgm/denoise.hpp"
#include "dgm/metrics.hpp"

namespace dgm::experiment {

inline constexpr const char* kReportHeader =
    "run_id,model,regime,dataset,sigma,C,seed,epochs_run,train_ll,val_ll,frechet,sliced_w,dist_mean,dist_median,"
    "dist_max";
inline constexpr const char* kHistoryHeader = "epoch,train_obj,val_obj";

/// One report line. `run_id` is the config hash; unset noise levels are
/// written as 0 and missing manifold distances as nan.
struct ReportRow {
  std::string run_id;
  std::string model;
  std::string regime;
  std::string dataset;
  double sigma = 0.0;
  double C = 0.0;
  std::uint64_t seed = 0;
  std::size_t epochs_run = 0;
  double train_ll = 0.0;
  double val_ll = 0.0;
  double frechet = 0.0;
  double sliced_w = 0.0;
  double dist_mean = 0.0;
  double dist_median = 0.0;
  double dist_max = 0.0;
};

std::string to_csv(const ReportRow& row);
std::string history_csv(const denoise::TrainHistory& history);

/// Raw splits plus the preprocessing map fitted on the training split.
/// Models live in the preprocessed space; metrics are taken in raw space.
struct PreparedData {
  Tensor train;
  Tensor val;
  Tensor test;
  std::optional<data::ManifoldSpec> spec;
  data::AffineTransform transform;
  std::string name;
};

PreparedData prepare_data(const config::ExperimentConfig& config);

denoise::DenoisingWrapper make_wrapper(const config::ExperimentConfig& config, Model model);

/// Metrics for a trained wrapper; `epochs_run` is left at 0.
ReportRow evaluate(const denoise::DenoisingWrapper& wrapper, const PreparedData& data,
                   const config::ExperimentConfig& config);

/// Draws `n` raw-space samples: denoised per the regime, or straight
/// model samples (at condition 0 for cd) when `denoised` is false.
Tensor draw_samples(const denoise::DenoisingWrapper& wrapper, const PreparedData& data, std::size_t n, bool denoised,
                    Rng& rng, std::size_t particles);

struct RunResult {
  ReportRow row;
  denoise::TrainHistory history;
  Model model;
};

/// Trains, evaluates and writes report.csv, history.csv and checkpoint.bin
/// into `config.output_dir`. Output is a pure function of the config.
RunResult run(const config::ExperimentConfig& config);

using RunFn = std::function<ReportRow(const config::ExperimentConfig&)>;

struct SweepPoint {
  double value = 0.0;
  std::vector<ReportRow> rows;       // successful runs, seed order
  std::vector<std::string> failures;  // one message per failed seed
  double mean_frechet = 0.0;
  double se_frechet = 0.0;  // sample std / sqrt(n); 0 for a single run
};

struct SweepResult {
  std::string swept;  // "sigma" or "C"
  std::vector<SweepPoint> points;
  double best = 0.0;
  bool complete = true;
  /// td only: runs of the td regime at the sigma selected by the nd sweep.
  std::vector<ReportRow> td_rows;
  std::vector<std::string> td_failures;
};

/// Runs grid x seeds (seeds config.seed, config.seed + 1, ...) and picks the
/// grid value with the lowest mean Frechet distance, ties to the smaller
/// value. nd and cd sweep sigma and C. A td template sweeps sigma under nd
/// and then reruns td at the chosen value. Failed runs are excluded.
/// When `out_dir` is set, rows are appended to sweep_report.csv as they
/// finish and the per-value summary goes to sweep_summary.csv.
SweepResult sweep(const config::ExperimentConfig& base, const std::vector<double>& grid, std::size_t n_seeds,
                  const RunFn& run_fn, std::size_t workers = 1,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// The default RunFn: run() with output under `<output_dir>/<run_id>`.
ReportRow run_in_subdir(const config::ExperimentConfig& config);

}  // namespace dgm::experiment
