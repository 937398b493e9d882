#include <benchmark/benchmark.h>

#include <vector>

#include "addiff/categorical.hpp"
#include "addiff/denoiser.hpp"
#include "addiff/sampler.hpp"
#include "addiff/schedule.hpp"
#include "addiff/training.hpp"

namespace {

using namespace addiff;

const Schedule& schedule() {
  static const Schedule s = Schedule::build(ScheduleKind::kLinear, 1000, 1e-4, 0.02);
  return s;
}

DenoiserSpec spec_for(int classes, int seq_len) {
  DenoiserSpec d;
  d.classes = classes;
  d.seq_len = seq_len;
  return d;
}

Model make_model(int classes, int seq_len, int features) {
  NoiseSource n(1);
  EncoderSpec e;
  e.feature_dim = features;
  Model m{init_denoiser(spec_for(classes, seq_len), n), init_encoder(e, n)};
  // A zero head makes every output identical; give it some signal.
  Matrix& w = m.denoiser.tensors.at("head.w");
  w = Matrix::Random(w.rows(), w.cols()) * 0.3;
  return m;
}

void BM_Corrupt(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  NoiseSource n(2);
  const OneHot y = one_hot(k / 2, k);
  int t = 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(corrupt(y, t, schedule(), n));
    t = t % 1000 + 1;
  }
}
BENCHMARK(BM_Corrupt)->Arg(10)->Arg(65);

void BM_DenoiserForward(benchmark::State& state) {
  const int seq_len = static_cast<int>(state.range(0));
  const int classes = seq_len == 1 ? 10 : 65;
  const Model m = make_model(classes, seq_len, 4);
  const Matrix y = Matrix::Random(seq_len, classes);
  const Condition c{RowVector::Random(m.denoiser.spec.cond_dim), false};
  for (auto _ : state) benchmark::DoNotOptimize(denoiser_output(m.denoiser, y, 500, c));
}
BENCHMARK(BM_DenoiserForward)->Arg(1)->Arg(12);

void BM_TrainingGradients(benchmark::State& state) {
  const int batch = 64, kfold = static_cast<int>(state.range(0));
  const Model m = make_model(10, 1, 2);
  NoiseSource n(3);
  TrainingSet data;
  data.tokens_per_item = 1;
  data.seq_len = 1;
  data.features = Matrix::Random(batch, 2);
  for (int i = 0; i < batch; ++i) data.targets.push_back(i % 10);
  std::vector<int> instances(batch);
  for (int i = 0; i < batch; ++i) instances[i] = i;
  const ExpandedBatch b = kfold_expand(batch, data.targets, 1, 10, kfold, schedule(), n);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        compute_gradients(m, data, instances, b, Objective::kWeightedCe, schedule(), 128).loss);
  }
  state.SetItemsProcessed(state.iterations() * batch * kfold);
}
BENCHMARK(BM_TrainingGradients)->Arg(1)->Arg(4);

void BM_SampleBatch(benchmark::State& state) {
  const int steps = static_cast<int>(state.range(0)), items = 64;
  const Model m = make_model(10, 1, 2);
  const Matrix conditions = Matrix::Random(items, m.denoiser.spec.cond_dim);
  SampleConfig cfg;
  cfg.steps = steps;
  for (auto _ : state) {
    std::vector<NoiseSource> noises;
    for (int i = 0; i < items; ++i) noises.emplace_back(i);
    benchmark::DoNotOptimize(sample_batch(m.denoiser, conditions, cfg, schedule(), noises, false));
  }
  state.SetItemsProcessed(state.iterations() * items);
}
BENCHMARK(BM_SampleBatch)->Arg(1)->Arg(10)->Arg(20);

}  // namespace

BENCHMARK_MAIN();
