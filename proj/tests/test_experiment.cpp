#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>

#include "dgm/error.hpp"
#include "dgm/experiment.hpp"

using namespace dgm;
using namespace dgm::experiment;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string l; std::getline(ss, l);) out.push_back(l);
  return out;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dgm_experiment_" + name);
  fs::remove_all(p);
  return p;
}

config::ExperimentConfig tiny_run(const fs::path& out) {
  auto c = config::default_config("flow");
  c.epochs = 3;
  c.batch_size = 64;
  c.dataset.n_train = 300;
  c.n_eval = 400;
  c.n_projections = 32;
  c.spline.hidden = 16;
  c.spline.groups = 1;
  c.spline.blocks = 2;
  c.output_dir = out.string();
  return c;
}

ReportRow fake_row(const config::ExperimentConfig& c, double frechet) {
  ReportRow r;
  r.run_id = config::config_hash(c);
  r.regime = denoise::regime_name(c.regime);
  r.sigma = c.sigma.value_or(0.0);
  r.C = c.C.value_or(0.0);
  r.seed = c.seed;
  r.frechet = frechet;
  return r;
}

}  // namespace

TEST(Report, HeaderAndColumnOrder) {
  EXPECT_STREQ(kReportHeader,
               "run_id,model,regime,dataset,sigma,C,seed,epochs_run,train_ll,val_ll,frechet,sliced_w,dist_mean,"
               "dist_median,dist_max");
  ReportRow r{"abc", "flow", "nd", "circle", 0.05, 0.0, 2, 9, 1.5, 1.25, 0.5, 0.25, 0.125, 0.0625, 1.0};
  EXPECT_EQ(to_csv(r), "abc,flow,nd,circle,0.050000000000000003,0,2,9,1.5,1.25,0.5,0.25,0.125,0.0625,1");
  denoise::TrainHistory h;
  h.records = {{1, -1.0, -2.0}, {2, 0.5, 0.25}};
  EXPECT_EQ(lines(history_csv(h)), (std::vector<std::string>{kHistoryHeader, "1,-1,-2", "2,0.5,0.25"}));
}

TEST(Run, BaselineCircleSmoke) {
  const fs::path out = scratch("smoke");
  const auto cfg = tiny_run(out);
  const auto result = run(cfg);
  const ReportRow& r = result.row;
  EXPECT_EQ(r.run_id, config::config_hash(cfg));
  EXPECT_EQ(r.epochs_run, 3u);
  for (double v : {r.train_ll, r.val_ll, r.frechet, r.sliced_w, r.dist_mean, r.dist_median, r.dist_max})
    EXPECT_TRUE(std::isfinite(v));
  const auto report = lines(slurp(out / "report.csv"));
  ASSERT_EQ(report.size(), 2u);
  EXPECT_EQ(report[0], kReportHeader);
  EXPECT_EQ(report[1], to_csv(r));
  EXPECT_EQ(lines(slurp(out / "history.csv")).size(), 4u);
  const auto ck = checkpoint::load(out / "checkpoint.bin");
  EXPECT_EQ(ck.epochs_run, 3u);
  fs::remove_all(out);
}

TEST(Run, ByteIdenticalAcrossExecutions) {
  const fs::path out = scratch("determinism");
  for (auto regime : {denoise::Regime::Baseline, denoise::Regime::CD}) {
    auto cfg = tiny_run(out);
    cfg.regime = regime;
    if (regime == denoise::Regime::CD) cfg.C = 0.2;
    run(cfg);
    const std::string ck = slurp(out / "checkpoint.bin"), rep = slurp(out / "report.csv"),
                      hist = slurp(out / "history.csv");
    fs::remove_all(out);
    run(cfg);
    EXPECT_EQ(slurp(out / "checkpoint.bin"), ck);
    EXPECT_EQ(slurp(out / "report.csv"), rep);
    EXPECT_EQ(slurp(out / "history.csv"), hist);
    fs::remove_all(out);
  }
}

TEST(Run, InvalidConfigRejected) {
  auto cfg = tiny_run(scratch("invalid"));
  cfg.regime = denoise::Regime::TD;
  EXPECT_THROW(run(cfg), ConfigError);
}

TEST(Sweep, SingleValueGrid) {
  auto base = config::default_config("flow");
  base.regime = denoise::Regime::ND;
  base.sigma = 1.0;
  const auto r = sweep(base, {0.1}, 1, [](const auto& c) { return fake_row(c, 3.0); });
  EXPECT_EQ(r.best, 0.1);
  EXPECT_EQ(r.points.size(), 1u);
  EXPECT_EQ(r.points[0].se_frechet, 0.0);
  EXPECT_TRUE(r.complete);
}

TEST(Sweep, SigmaSquaredScoresPickGridMinimum) {
  auto base = config::default_config("flow");
  base.regime = denoise::Regime::ND;
  base.sigma = 0.3;
  const std::vector<double> grid{0.5, 0.05, 0.01, 0.1, 0.005};
  const auto r = sweep(base, grid, 3, [](const auto& c) { return fake_row(c, *c.sigma * *c.sigma); });
  EXPECT_EQ(r.best, 0.005);
  EXPECT_EQ(r.swept, "sigma");
}

TEST(Sweep, TiesGoToSmallerValue) {
  auto base = config::default_config("flow");
  base.regime = denoise::Regime::CD;
  base.C = 0.3;
  const auto r = sweep(base, {0.5, 0.1, 0.05}, 2, [](const auto& c) { return fake_row(c, *c.C > 0.07 ? 1.0 : 2.0); });
  EXPECT_EQ(r.best, 0.1);
  EXPECT_EQ(r.swept, "C");
}

TEST(Sweep, CountsRowsAndStandardError) {
  const fs::path out = scratch("sweep_counts");
  auto base = config::default_config("flow");
  base.regime = denoise::Regime::ND;
  base.sigma = 0.3;
  base.seed = 10;
  auto metric = [](double s, std::uint64_t seed) { return s + 0.1 * std::sin(static_cast<double>(seed) + 10 * s); };
  const std::vector<double> grid{0.005, 0.01, 0.05, 0.1, 0.5};
  const auto r = sweep(base, grid, 3, [&](const auto& c) { return fake_row(c, metric(*c.sigma, c.seed)); }, 1, out);
  ASSERT_EQ(r.points.size(), 5u);
  for (const auto& p : r.points) {
    ASSERT_EQ(p.rows.size(), 3u);
    std::vector<double> v;
    for (std::uint64_t s = 10; s < 13; ++s) v.push_back(metric(p.value, s));
    const double m = (v[0] + v[1] + v[2]) / 3;
    const double sd = std::sqrt(((v[0] - m) * (v[0] - m) + (v[1] - m) * (v[1] - m) + (v[2] - m) * (v[2] - m)) / 2);
    EXPECT_NEAR(p.mean_frechet, m, 1e-12);
    EXPECT_NEAR(p.se_frechet, sd / std::sqrt(3.0), 1e-12);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(p.rows[i].seed, 10 + i);
  }
  const auto report = lines(slurp(out / "sweep_report.csv"));
  EXPECT_EQ(report.size(), 1u + 15u);
  EXPECT_EQ(report[0], kReportHeader);
  const auto summary = lines(slurp(out / "sweep_summary.csv"));
  EXPECT_EQ(summary.size(), 1u + 5u);
  fs::remove_all(out);
}

TEST(Sweep, ParallelWorkersMatchSerial) {
  auto base = config::default_config("flow");
  base.regime = denoise::Regime::ND;
  base.sigma = 0.3;
  auto fn = [](const auto& c) { return fake_row(c, std::cos(*c.sigma * 7 + c.seed)); };
  const std::vector<double> grid{0.005, 0.01, 0.05, 0.1, 0.5};
  const auto a = sweep(base, grid, 3, fn, 1), b = sweep(base, grid, 3, fn, 3);
  EXPECT_EQ(a.best, b.best);
  for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_EQ(a.points[i].mean_frechet, b.points[i].mean_frechet);
}

TEST(Sweep, TdReusesNdSigma) {
  auto base = config::default_config("flow");
  base.regime = denoise::Regime::TD;
  base.sigma = 0.3;
  std::mutex m;
  std::vector<config::ExperimentConfig> seen;
  const auto r = sweep(base, {0.005, 0.01, 0.05, 0.1, 0.5}, 3, [&](const auto& c) {
    std::lock_guard lock(m);
    seen.push_back(c);
    return fake_row(c, std::abs(*c.sigma - 0.05));
  });
  EXPECT_EQ(r.best, 0.05);
  ASSERT_EQ(seen.size(), 18u);
  for (std::size_t i = 0; i < 15; ++i) EXPECT_EQ(seen[i].regime, denoise::Regime::ND);
  ASSERT_EQ(r.td_rows.size(), 3u);
  for (const auto& row : r.td_rows) {
    EXPECT_EQ(row.regime, "td");
    EXPECT_EQ(row.sigma, 0.05);
  }
}

TEST(Sweep, FailuresAreExcludedAndFlagged) {
  const fs::path out = scratch("sweep_failures");
  auto base = config::default_config("flow");
  base.regime = denoise::Regime::ND;
  base.sigma = 0.3;
  const auto r = sweep(
      base, {0.01, 0.1}, 3,
      [](const auto& c) {
        if (*c.sigma == 0.01 && c.seed == 1) throw NumericError("diverged");
        return fake_row(c, *c.sigma == 0.01 ? 1.0 + c.seed : 5.0);
      },
      1, out);
  EXPECT_FALSE(r.complete);
  ASSERT_EQ(r.points[0].rows.size(), 2u);
  ASSERT_EQ(r.points[0].failures.size(), 1u);
  EXPECT_NE(r.points[0].failures[0].find("diverged"), std::string::npos);
  EXPECT_NEAR(r.points[0].mean_frechet, 2.0, 1e-12);
  EXPECT_EQ(r.best, 0.01);
  EXPECT_NE(slurp(out / "sweep_summary.csv").find("incomplete"), std::string::npos);
  fs::remove_all(out);
}

TEST(Sweep, InvalidArguments) {
  auto base = config::default_config("flow");
  auto fn = [](const auto& c) { return fake_row(c, 1.0); };
  EXPECT_THROW(sweep(base, {0.1}, 1, fn), InvalidArgument);
  base.regime = denoise::Regime::ND;
  base.sigma = 0.1;
  EXPECT_THROW(sweep(base, {}, 1, fn), InvalidArgument);
  EXPECT_THROW(sweep(base, {0.1}, 0, fn), InvalidArgument);
  EXPECT_THROW(sweep(base, {0.1}, 2, [](const auto&) -> ReportRow { throw NumericError("x"); }), Error);
}
