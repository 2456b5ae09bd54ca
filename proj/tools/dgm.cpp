// dgm: train, sample, denoise, evaluate and sweep manifold-aware
// generative models.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime or training error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dgm/checkpoint.hpp"
#include "dgm/config.hpp"
#include "dgm/experiment.hpp"

namespace fs = std::filesystem;
using dgm::config::ExperimentConfig;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> sigma;
  std::optional<double> C;
  std::optional<std::string> regime;
  std::optional<std::string> out;
  std::optional<std::string> checkpoint;
  std::optional<std::size_t> n;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "JSON experiment config")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "override seed");
  cmd->add_option("--sigma", o.sigma, "override the fixed noise level (nd, td)");
  cmd->add_option("--C", o.C, "override the conditional noise bound (cd)");
  cmd->add_option("--regime", o.regime, "override regime: baseline, nd, td or cd");
  cmd->add_option("--out", o.out, "override output directory");
}

void add_checkpoint_opts(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--checkpoint", o.checkpoint, "checkpoint path (default <out>/checkpoint.bin)");
  cmd->add_option("--n", o.n, "number of samples (default n_eval)");
}

// Applies overrides; switching regime drops the noise level of the old one.
void apply(ExperimentConfig& c, const Overrides& o) {
  if (o.regime) {
    try {
      c.regime = dgm::denoise::parse_regime(*o.regime);
    } catch (const dgm::InvalidArgument& e) {
      throw dgm::ConfigError({std::string("regime: ") + e.what()});
    }
    using dgm::denoise::Regime;
    if (c.regime == Regime::Baseline || c.regime == Regime::CD) c.sigma.reset();
    if (c.regime != Regime::CD) c.C.reset();
  }
  if (o.seed) c.seed = *o.seed;
  if (o.sigma) c.sigma = *o.sigma;
  if (o.C) c.C = *o.C;
  if (o.out) c.output_dir = *o.out;
  c.validate();
}

ExperimentConfig load_config(const Overrides& o) {
  ExperimentConfig c = dgm::config::load(o.config_path);
  apply(c, o);
  return c;
}

void write_samples(const fs::path& path, const dgm::Tensor& x) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw dgm::Error("cannot write '" + path.string() + "'");
  for (std::size_t j = 0; j < x.cols(); ++j) out << (j ? "," : "") << "x" << j;
  out << "\n";
  char buf[32];
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", x.at(i, j));
      out << (j ? "," : "") << buf;
    }
    out << "\n";
  }
}

// Loads the trained model. Data preparation follows the checkpoint's own
// config; regime, noise level and seed may be overridden for sampling.
struct Loaded {
  ExperimentConfig config;
  dgm::experiment::PreparedData data;
  dgm::denoise::DenoisingWrapper wrapper;
};

Loaded load_trained(const Overrides& o) {
  const ExperimentConfig requested = load_config(o);
  const fs::path ckpt_path =
      o.checkpoint ? fs::path(*o.checkpoint) : fs::path(requested.output_dir) / "checkpoint.bin";
  dgm::checkpoint::Checkpoint ckpt = dgm::checkpoint::load(ckpt_path);
  ExperimentConfig c = ckpt.config;
  c.output_dir = requested.output_dir;
  apply(c, o);
  auto data = dgm::experiment::prepare_data(ckpt.config);
  auto wrapper = dgm::experiment::make_wrapper(c, std::move(ckpt.model));
  return {std::move(c), std::move(data), std::move(wrapper)};
}

int cmd_train(const Overrides& o) {
  const ExperimentConfig c = load_config(o);
  const auto result = dgm::experiment::run(c);
  std::cout << dgm::experiment::kReportHeader << "\n" << dgm::experiment::to_csv(result.row) << "\n";
  return kOk;
}

int cmd_draw(const Overrides& o, bool denoised) {
  Loaded l = load_trained(o);
  const std::size_t n = o.n.value_or(l.config.n_eval);
  dgm::Rng rng = dgm::make_rng(l.config.seed, denoised ? 21 : 20);
  const dgm::Tensor x = dgm::experiment::draw_samples(l.wrapper, l.data, n, denoised, rng, l.config.k_iw);
  fs::create_directories(l.config.output_dir);
  const fs::path path = fs::path(l.config.output_dir) / (denoised ? "denoised.csv" : "samples.csv");
  write_samples(path, x);
  std::cout << "wrote " << n << " samples to " << path.string() << "\n";
  return kOk;
}

int cmd_eval(const Overrides& o) {
  Loaded l = load_trained(o);
  const auto row = dgm::experiment::evaluate(l.wrapper, l.data, l.config);
  const std::string text = std::string(dgm::experiment::kReportHeader) + "\n" + dgm::experiment::to_csv(row) + "\n";
  fs::create_directories(l.config.output_dir);
  std::ofstream(fs::path(l.config.output_dir) / "eval_report.csv", std::ios::binary | std::ios::trunc) << text;
  std::cout << text;
  return kOk;
}

int cmd_sweep(const Overrides& o) {
  const ExperimentConfig c = load_config(o);
  const auto r = dgm::experiment::sweep(c, c.sweep.grid, c.sweep.n_seeds, dgm::experiment::run_in_subdir,
                                        c.sweep.workers, fs::path(c.output_dir));
  for (const auto& p : r.points)
    std::printf("%s=%g  frechet %.6g +- %.3g  (%zu ok, %zu failed)\n", r.swept.c_str(), p.value, p.mean_frechet,
                p.se_frechet, p.rows.size(), p.failures.size());
  std::printf("selected %s=%g%s\n", r.swept.c_str(), r.best, r.complete ? "" : "  [incomplete: failed runs excluded]");
  if (!r.td_rows.empty() || !r.td_failures.empty())
    std::printf("td reran at sigma=%g: %zu ok, %zu failed\n", r.best, r.td_rows.size(), r.td_failures.size());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Manifold-aware generative model experiments"};
  app.require_subcommand(1);
  Overrides o;
  auto* train = app.add_subcommand("train", "train one run and write report, history and checkpoint");
  auto* sample = app.add_subcommand("sample", "draw raw model samples from a checkpoint");
  auto* denoise = app.add_subcommand("denoise", "draw denoised samples from a checkpoint");
  auto* eval = app.add_subcommand("eval", "recompute metrics for a checkpoint");
  auto* sweep = app.add_subcommand("sweep", "tune sigma or C over the configured grid");
  for (auto* cmd : {train, sample, denoise, eval, sweep}) add_common(cmd, o);
  for (auto* cmd : {sample, denoise, eval}) add_checkpoint_opts(cmd, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*train) return cmd_train(o);
    if (*sample) return cmd_draw(o, false);
    if (*denoise) return cmd_draw(o, true);
    if (*eval) return cmd_eval(o);
    if (*sweep) return cmd_sweep(o);
  } catch (const dgm::ConfigError& e) {
    std::cerr << "dgm: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "dgm: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kRuntimeError;
}
