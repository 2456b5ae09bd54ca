#include "dgm/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

namespace dgm::experiment {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

// Independent rng streams of a run.
enum Stream : std::uint64_t { kTrain = 1, kSample = 2, kLogLik = 3, kSliced = 4, kTest = 0x7E57 };

}  // namespace

std::string to_csv(const ReportRow& r) {
  std::string s = r.run_id + "," + r.model + "," + r.regime + "," + r.dataset + "," + num(r.sigma) + "," + num(r.C) +
                  "," + std::to_string(r.seed) + "," + std::to_string(r.epochs_run);
  for (double v : {r.train_ll, r.val_ll, r.frechet, r.sliced_w, r.dist_mean, r.dist_median, r.dist_max})
    s += "," + num(v);
  return s;
}

std::string history_csv(const denoise::TrainHistory& history) {
  std::string s = std::string(kHistoryHeader) + "\n";
  for (const auto& rec : history.records)
    s += std::to_string(rec.epoch) + "," + num(rec.train_objective) + "," + num(rec.val_objective) + "\n";
  return s;
}

PreparedData prepare_data(const config::ExperimentConfig& cfg) {
  cfg.validate();
  const auto& ds = cfg.dataset;
  PreparedData out;
  Tensor pool;
  if (ds.is_manifold()) {
    const data::ManifoldSpec spec = ds.manifold();
    pool = data::generate(spec, ds.n_train, cfg.seed).samples;
    out.test = data::generate(spec, cfg.n_eval, split_seed(cfg.seed, kTest)).samples;
    out.name = spec.name();
    out.spec = spec;
  } else {
    const Tensor all = data::load_idx(ds.path);
    const std::size_t rows = all.rows();
    out.name = "idx:" + fs::path(ds.path).filename().string();
    if (!ds.test_path.empty()) {
      if (rows < ds.n_train) throw InvalidArgument("idx file has " + std::to_string(rows) + " rows; n_train needs more");
      pool = all.rows_slice(0, ds.n_train);
      const Tensor test = data::load_idx(ds.test_path);
      out.test = test.rows_slice(0, std::min(test.rows(), cfg.n_eval));
    } else {
      if (rows < ds.n_train + 2)
        throw InvalidArgument("idx file has " + std::to_string(rows) + " rows; need n_train plus a held-out tail");
      pool = all.rows_slice(0, ds.n_train);
      out.test = all.rows_slice(ds.n_train, std::min(rows, ds.n_train + cfg.n_eval));
    }
    if (out.test.cols() != pool.cols()) throw ShapeError("idx test set dimension differs from the training set");
  }
  auto split = data::train_val_split(pool, ds.val_fraction);
  out.train = std::move(split.train);
  out.val = std::move(split.val);
  switch (ds.preprocess) {
    case config::Preprocess::None: out.transform = data::AffineTransform::identity(out.train.cols()); break;
    case config::Preprocess::Scale01: out.transform = data::fit_scale_01(out.train); break;
    case config::Preprocess::Whiten: out.transform = data::fit_whiten(out.train); break;
  }
  return out;
}

denoise::DenoisingWrapper make_wrapper(const config::ExperimentConfig& cfg, Model model) {
  denoise::DenoisingWrapper w{cfg.regime, std::move(model), cfg.schedule()};
  w.validate();
  return w;
}

Tensor draw_samples(const denoise::DenoisingWrapper& w, const PreparedData& data, std::size_t n, bool denoised, Rng& rng,
                    std::size_t particles) {
  Tensor x;
  if (denoised) {
    x = denoise::denoised_sample(w, n, rng, particles);
  } else if (w.regime == denoise::Regime::CD) {
    const Tensor cond = denoise::sampling_condition(n);
    x = sample(w.model, n, &cond, rng);
  } else {
    x = sample(w.model, n, nullptr, rng);
  }
  return data.transform.inverse(x);
}

ReportRow evaluate(const denoise::DenoisingWrapper& w, const PreparedData& data, const config::ExperimentConfig& cfg) {
  ReportRow row;
  row.run_id = config::config_hash(cfg);
  row.model = cfg.model;
  row.regime = denoise::regime_name(cfg.regime);
  row.dataset = data.name;
  row.sigma = cfg.sigma.value_or(0.0);
  row.C = cfg.C.value_or(0.0);
  row.seed = cfg.seed;

  Rng sample_rng = make_rng(cfg.seed, kSample);
  const Tensor samples = draw_samples(w, data, cfg.n_eval, true, sample_rng, cfg.k_iw);
  row.frechet = metrics::frechet_gaussian(samples, data.test);
  Rng sliced_rng = make_rng(cfg.seed, kSliced);
  row.sliced_w = metrics::sliced_wasserstein(samples, data.test, cfg.n_projections, sliced_rng);
  if (data.spec) {
    const auto d = metrics::distance_to_manifold(samples, *data.spec);
    row.dist_mean = d.mean;
    row.dist_median = d.median;
    row.dist_max = d.max;
  } else {
    row.dist_mean = row.dist_median = row.dist_max = std::numeric_limits<double>::quiet_NaN();
  }

  // Densities are fitted in preprocessed space; add log|det A| for raw space.
  const std::optional<double> cond = cfg.regime == denoise::Regime::CD ? std::optional<double>(0.0) : std::nullopt;
  Rng ll_rng = make_rng(cfg.seed, kLogLik);
  const double jac = data.transform.log_abs_det;
  row.train_ll = metrics::avg_log_lik(w.model, data.transform.forward(data.train), cond, ll_rng, cfg.k_iw).mean + jac;
  row.val_ll = metrics::avg_log_lik(w.model, data.transform.forward(data.val), cond, ll_rng, cfg.k_iw).mean + jac;
  return row;
}

RunResult run(const config::ExperimentConfig& cfg) {
  cfg.validate();
  const PreparedData data = prepare_data(cfg);
  denoise::DenoisingWrapper w = make_wrapper(cfg, config::build_model(cfg, data.train.cols()));

  Rng train_rng = make_rng(cfg.seed, kTrain);
  const Tensor train_pre = data.transform.forward(data.train);
  const Tensor val_pre = data.transform.forward(data.val);
  denoise::TrainHistory history = denoise::train(w, train_pre, val_pre, cfg.train_config(), train_rng);

  ReportRow row = evaluate(w, data, cfg);
  row.epochs_run = history.records.size();

  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  write_file(dir / "report.csv", std::string(kReportHeader) + "\n" + to_csv(row) + "\n");
  write_file(dir / "history.csv", history_csv(history));
  checkpoint::save(w.model, cfg, dir / "checkpoint.bin", serialize_rng(train_rng), history.records.size());
  return {std::move(row), std::move(history), std::move(w.model)};
}

ReportRow run_in_subdir(const config::ExperimentConfig& cfg) {
  config::ExperimentConfig c = cfg;
  c.output_dir = (fs::path(cfg.output_dir) / config::config_hash(cfg)).string();
  return run(c).row;
}

namespace {

// Serializes report lines from concurrent workers into one file.
class Appender {
 public:
  explicit Appender(const std::optional<fs::path>& path) {
    if (!path) return;
    out_.open(*path, std::ios::binary | std::ios::trunc);
    if (!out_) throw Error("cannot write '" + path->string() + "'");
    out_ << kReportHeader << "\n";
    out_.flush();
  }
  void append(const ReportRow& row) {
    if (!out_.is_open()) return;
    std::lock_guard<std::mutex> lock(mu_);
    out_ << to_csv(row) << "\n";
    out_.flush();
  }

 private:
  std::mutex mu_;
  std::ofstream out_;
};

struct Job {
  config::ExperimentConfig config;
  std::optional<ReportRow> row;
  std::string error;
};

void run_jobs(std::vector<Job>& jobs, const RunFn& run_fn, std::size_t workers, Appender& appender) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        jobs[i].row = run_fn(jobs[i].config);
        appender.append(*jobs[i].row);
      } catch (const std::exception& e) {
        jobs[i].error = e.what();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(workers, jobs.size()));
  if (n == 1) {
    worker();
    return;
  }
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < n; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
}

std::string seed_failure(const Job& job) { return "seed " + std::to_string(job.config.seed) + ": " + job.error; }

}  // namespace

SweepResult sweep(const config::ExperimentConfig& base, const std::vector<double>& grid, std::size_t n_seeds,
                  const RunFn& run_fn, std::size_t workers, const std::optional<fs::path>& out_dir) {
  using denoise::Regime;
  if (grid.empty()) throw InvalidArgument("sweep: grid must be non-empty");
  if (n_seeds < 1) throw InvalidArgument("sweep: n_seeds must be >= 1");
  for (double v : grid)
    if (!(std::isfinite(v) && v > 0.0)) throw InvalidArgument("sweep: grid values must be finite and > 0");
  if (base.regime == Regime::Baseline) throw InvalidArgument("sweep: the baseline regime has no noise level to tune");

  SweepResult result;
  const bool is_cd = base.regime == Regime::CD;
  result.swept = is_cd ? "C" : "sigma";
  config::ExperimentConfig tmpl = base;
  if (base.regime == Regime::TD) tmpl.regime = Regime::ND;

  if (out_dir) fs::create_directories(*out_dir);
  Appender appender(out_dir ? std::optional<fs::path>(*out_dir / "sweep_report.csv") : std::nullopt);

  std::vector<Job> jobs;
  for (double v : grid)
    for (std::size_t s = 0; s < n_seeds; ++s) {
      config::ExperimentConfig c = tmpl;
      if (is_cd) {
        c.C = v;
        c.sigma.reset();
      } else {
        c.sigma = v;
        c.C.reset();
      }
      c.seed = base.seed + s;
      jobs.push_back({std::move(c), std::nullopt, {}});
    }
  run_jobs(jobs, run_fn, workers, appender);

  bool have_best = false;
  double best_mean = 0.0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    SweepPoint p;
    p.value = grid[g];
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const Job& job = jobs[g * n_seeds + s];
      if (job.row) p.rows.push_back(*job.row);
      else p.failures.push_back(seed_failure(job));
    }
    if (!p.failures.empty()) result.complete = false;
    const std::size_t n = p.rows.size();
    if (n > 0) {
      double sum = 0.0;
      for (const auto& r : p.rows) sum += r.frechet;
      p.mean_frechet = sum / static_cast<double>(n);
      if (n > 1) {
        double ss = 0.0;
        for (const auto& r : p.rows) ss += (r.frechet - p.mean_frechet) * (r.frechet - p.mean_frechet);
        p.se_frechet = std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
      }
      const bool better = !have_best || p.mean_frechet < best_mean ||
                          (p.mean_frechet == best_mean && p.value < result.best);
      if (better) {
        have_best = true;
        best_mean = p.mean_frechet;
        result.best = p.value;
      }
    } else {
      p.mean_frechet = p.se_frechet = std::numeric_limits<double>::quiet_NaN();
    }
    result.points.push_back(std::move(p));
  }
  if (!have_best) throw Error("sweep: every run failed; no grid value can be selected");

  if (base.regime == Regime::TD) {
    std::vector<Job> td;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      config::ExperimentConfig c = base;
      c.sigma = result.best;
      c.seed = base.seed + s;
      td.push_back({std::move(c), std::nullopt, {}});
    }
    run_jobs(td, run_fn, workers, appender);
    for (const Job& job : td) {
      if (job.row) result.td_rows.push_back(*job.row);
      else result.td_failures.push_back(seed_failure(job));
    }
    if (!result.td_failures.empty()) result.complete = false;
  }

  if (out_dir) {
    std::string s = result.swept + ",n_ok,n_failed,frechet_mean,frechet_se,selected\n";
    for (const auto& p : result.points)
      s += num(p.value) + "," + std::to_string(p.rows.size()) + "," + std::to_string(p.failures.size()) + "," +
           num(p.mean_frechet) + "," + num(p.se_frechet) + "," + (p.value == result.best ? "1" : "0") + "\n";
    if (!result.complete) s += "# incomplete: some runs failed and were excluded\n";
    write_file(*out_dir / "sweep_summary.csv", s);
  }
  return result;
}

}  // namespace dgm::experiment
