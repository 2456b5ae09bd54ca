#include <benchmark/benchmark.h>

#include "dgm/autodiff.hpp"
#include "dgm/denoise.hpp"
#include "dgm/flow.hpp"
#include "dgm/rng.hpp"
#include "dgm/vae.hpp"

using namespace dgm;

namespace {

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = Tensor::randn(Shape{n, n}, rng), b = Tensor::randn(Shape{n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(ad::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128)->Arg(256);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const Tensor a0 = Tensor::randn(Shape{n, n}, rng), b0 = Tensor::randn(Shape{n, n}, rng);
  for (auto _ : state) {
    ad::Tape tape;
    const Tensor a = tape.leaf(a0), b = tape.leaf(b0);
    benchmark::DoNotOptimize(tape.backward(ad::sum(ad::matmul(a, b))));
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(32)->Arg(128);

void BM_SplineForward(benchmark::State& state) {
  Rng rng(3);
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor x = Tensor::randn(Shape{n, 1}, rng), raw = Tensor::randn(Shape{n, 3 * 8 - 1}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(ad::rq_spline_transform(x, raw, 8, 3.0));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SplineForward)->Arg(1024);

// Default architecture: 4 groups x 3 blocks, hidden 128.
void BM_FlowLogProb(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  flow::FlowOptions o;
  const flow::Flow f = flow::Flow::make(o, 4);
  Rng rng(5);
  const Tensor x = Tensor::randn(Shape{n, 2}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(flow::flow_log_prob(f, x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FlowLogProb)->Arg(128)->Arg(1024);

void BM_FlowSample(benchmark::State& state) {
  flow::FlowOptions o;
  const flow::Flow f = flow::Flow::make(o, 6);
  Rng rng(7);
  for (auto _ : state) benchmark::DoNotOptimize(flow::flow_sample(f, 1024, nullptr, rng));
}
BENCHMARK(BM_FlowSample);

void BM_FlowScore(benchmark::State& state) {
  flow::FlowOptions o;
  const flow::Flow f = flow::Flow::make(o, 8);
  Rng rng(9);
  const Tensor x = Tensor::randn(Shape{256, 2}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(flow::flow_score(f, x));
}
BENCHMARK(BM_FlowScore);

// One epoch of 1024 points in minibatches of 128.
void BM_TrainEpochFlow(benchmark::State& state) {
  Rng data_rng(10);
  const Tensor train = Tensor::randn(Shape{1024, 2}, data_rng), val = Tensor::randn(Shape{128, 2}, data_rng);
  denoise::TrainConfig cfg;
  cfg.epochs = 1;
  for (auto _ : state) {
    state.PauseTiming();
    flow::FlowOptions o;
    denoise::DenoisingWrapper w{denoise::Regime::ND, flow::Flow::make(o, 11), denoise::NoiseSchedule::fixed(0.05)};
    Rng rng(12);
    state.ResumeTiming();
    benchmark::DoNotOptimize(denoise::train(w, train, val, cfg, rng));
  }
}
BENCHMARK(BM_TrainEpochFlow)->Unit(benchmark::kMillisecond);

void BM_TrainEpochVae(benchmark::State& state) {
  Rng data_rng(13);
  const Tensor train = Tensor::randn(Shape{1024, 2}, data_rng), val = Tensor::randn(Shape{128, 2}, data_rng);
  denoise::TrainConfig cfg;
  cfg.epochs = 1;
  cfg.learning_rate = 1e-3;
  for (auto _ : state) {
    state.PauseTiming();
    vae::VaeOptions o;
    o.ambient_dim = 2;
    denoise::DenoisingWrapper w{denoise::Regime::ND, vae::GaussianVae::make(o, 14), denoise::NoiseSchedule::fixed(0.05)};
    Rng rng(15);
    state.ResumeTiming();
    benchmark::DoNotOptimize(denoise::train(w, train, val, cfg, rng));
  }
}
BENCHMARK(BM_TrainEpochVae)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
