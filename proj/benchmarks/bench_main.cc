#include <benchmark/benchmark.h>

#include "mmkgl/attention.h"
#include "mmkgl/rng.h"
#include "mmkgl/spectral.h"
#include "mmkgl/training.h"

using namespace mmkgl;

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo = -1.0, double hi = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(lo, hi);
  return m;
}

void BM_ChebyshevApply(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const int order = static_cast<int>(state.range(1));
  Rng rng(1);
  Matrix a = random_matrix(rng, n, n, 0.0, 1.0), x = random_matrix(rng, n, 100);
  std::vector<Matrix> w;
  for (int k = 0; k <= order; ++k) w.push_back(random_matrix(rng, 100, 64));
  Tape tape;
  LaplacianBundle b = build_laplacian(tape.constant(a));
  std::vector<Tensor> wt;
  for (const auto& m : w) wt.push_back(tape.constant(m));
  Tensor xt = tape.constant(x);
  for (auto _ : state) benchmark::DoNotOptimize(chebyshev_apply(b, xt, wt).value().data());
}
BENCHMARK(BM_ChebyshevApply)->Args({200, 2})->Args({200, 4})->Args({871, 4})->Unit(benchmark::kMicrosecond);

void BM_Laplacian(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(2);
  Matrix a = random_matrix(rng, n, n, 0.0, 1.0);
  for (auto _ : state) {
    Tape tape;
    benchmark::DoNotOptimize(build_laplacian(tape.constant(a)).lambda_max.item());
  }
}
BENCHMARK(BM_Laplacian)->Arg(200)->Arg(871)->Unit(benchmark::kMillisecond);

void BM_Attention(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(3);
  Matrix f = random_matrix(rng, n, 100), a = random_matrix(rng, n, n, 0.0, 1.0);
  Mask mask = neighbor_mask(a, 0.5);
  Tape tape;
  std::vector<AttentionHead> heads;
  for (int q = 0; q < 4; ++q)
    heads.push_back({tape.constant(random_matrix(rng, 100, 16)), tape.constant(random_matrix(rng, 32, 1))});
  Tensor ft = tape.constant(f);
  for (auto _ : state) benchmark::DoNotOptimize(attention_scores(ft, heads, mask).value().data());
}
BENCHMARK(BM_Attention)->Arg(200)->Arg(871)->Unit(benchmark::kMillisecond);

void BM_TrainingEpochs(benchmark::State& state) {
  SynthConfig sc;
  Dataset data = generate_synthetic(sc);
  SplitPlan plan = make_splits(data, 5, 1);
  TrainConfig tc;
  tc.max_epochs = 10;
  tc.patience = 10;
  for (auto _ : state) benchmark::DoNotOptimize(train_fold(data, plan.rounds[0], ModelConfig{}, tc).epochs_run);
  state.SetItemsProcessed(state.iterations() * tc.max_epochs);
}
BENCHMARK(BM_TrainingEpochs)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
