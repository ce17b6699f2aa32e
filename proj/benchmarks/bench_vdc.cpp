#include <benchmark/benchmark.h>

#include "vdc/distill_dm.hpp"
#include "vdc/distill_tm.hpp"
#include "vdc/nn/forward.hpp"
#include "vdc/nn/loss.hpp"
#include "vdc/rng.hpp"
#include "vdc/temporal.hpp"

using namespace vdc;

namespace {

nn::ModelSpec spec_of(nn::Arch arch, double width) {
  nn::ModelSpec s;
  s.arch = arch;
  s.width_mult = width;
  return s;
}

Tensor<float> batch(std::size_t b, Rng& rng) {
  Tensor<float> x({b, 3, 8, 16, 16});
  for (auto& v : x.data) v = static_cast<float>(rng.uniform());
  return x;
}

void BM_ForwardBackward(benchmark::State& state) {
  const auto arch = state.range(0) == 0 ? nn::Arch::mini_c3d : nn::Arch::factorized_st;
  const auto net = nn::Network::build(spec_of(arch, 0.5));
  const auto theta = net.init_params(1);
  const auto buffers = net.init_buffers();
  Rng rng(2);
  const auto x = batch(16, rng);
  std::vector<int> labels(16);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 4);
  std::vector<float> grad(theta.size());
  for (auto _ : state) {
    const auto tr = nn::forward<float>(net, theta, buffers, x, nn::NormMode::batch);
    Tensor<float> gz;
    benchmark::DoNotOptimize(nn::cross_entropy(tr.logits(), labels, &gz));
    std::fill(grad.begin(), grad.end(), 0.0f);
    nn::backward<float>(net, theta, tr, nn::NormMode::batch, &gz, grad, nullptr, false);
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_ForwardBackward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_MatchingLoss(benchmark::State& state) {
  const int steps = static_cast<int>(state.range(0));
  const auto net = nn::Network::build(spec_of(nn::Arch::mini_c3d, 0.25));
  const auto th = net.init_params(3);
  const std::vector<float> start(th.begin(), th.end());
  std::vector<float> target = start;
  for (auto& v : target) v *= 0.9f;
  const auto plan = temporal::make_plan(8, 8);
  const Shape shape = {8, 3, 16, 16};
  Rng rng(4);
  const auto batches = tm::sample_step_batches(plan, 4, 0, steps, rng);
  const tm::VideoObjective<float> obj(net, plan, shape, 4, batches);
  std::vector<float> phi(obj.phi_size());
  for (auto& v : phi) v = static_cast<float>(rng.uniform());
  for (auto _ : state) {
    benchmark::DoNotOptimize(tm::tm_loss<float>(obj, start, target, phi, 0.01f, steps, 1e-12).loss);
  }
}
BENCHMARK(BM_MatchingLoss)->Arg(1)->Arg(5)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_StatisticLoss(benchmark::State& state) {
  const auto spec = spec_of(nn::Arch::mini_c3d, 0.5);
  const auto net = nn::Network::build(spec);
  const auto th = net.init_params(5);
  const nn::TrainedModel model{"m", spec, th, net.init_buffers()};
  Rng rng(6);
  dm::StatTargets targets;
  for (int layer : net.stat_layers()) {
    dm::StatTarget t;
    t.layer = layer;
    const auto x = nn::forward<float>(net, th, model.buffers, batch(1, rng), nn::NormMode::running);
    const std::size_t C = x.output(layer).dim(1);
    t.mean.assign(C, 0.1);
    t.var.assign(C, 1.0);
    t.class_mean.assign(4, t.mean);
    t.class_var.assign(4, t.var);
    targets.push_back(std::move(t));
  }
  const std::vector<dm::DmNet<float>> nets = {{&net, th, model.buffers}};
  std::vector<Tensor<float>> clips;
  for (int i = 0; i < 4; ++i) {
    Tensor<float> c({8, 3, 16, 16});
    for (auto& v : c.data) v = static_cast<float>(rng.uniform());
    clips.push_back(std::move(c));
  }
  const std::vector<int> labels = {0, 1, 2, 3};
  dm::DmConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(dm::dm_loss<float>(nets, targets, clips, labels, cfg).loss);
}
BENCHMARK(BM_StatisticLoss)->Unit(benchmark::kMillisecond);

void BM_Interpolate(benchmark::State& state) {
  Rng rng(7);
  Tensor<float> clip({4, 3, 16, 16});
  for (auto& v : clip.data) v = static_cast<float>(rng.uniform());
  for (auto _ : state) {
    benchmark::DoNotOptimize(temporal::interpolate(clip, 8, temporal::Interpolation::linear).data.data());
  }
}
BENCHMARK(BM_Interpolate);

}  // namespace

BENCHMARK_MAIN();
