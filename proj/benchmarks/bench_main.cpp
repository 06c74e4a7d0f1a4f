#include <benchmark/benchmark.h>

#include <random>

#include "ensemblenet/evaluation.hpp"
#include "ensemblenet/layers.hpp"
#include "ensemblenet/model.hpp"
#include "ensemblenet/training.hpp"

using namespace enet;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(s);
  for (double& v : t.values()) v = n(rng);
  return t;
}

FeatureMatrix random_features(int rows, int dim, int ids, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  FeatureMatrix fm;
  fm.vectors.resize(rows, dim);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < dim; ++j) fm.vectors(i, j) = n(rng);
    fm.person_ids.push_back(i % ids + 1);
    fm.camera_ids.push_back(i % 6 + 1);
  }
  fm.dim_tags = {{"bench", 0, static_cast<std::uint64_t>(dim)}};
  return fm;
}

void BM_Conv3x3Forward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  Conv2d conv("conv", c, c, 3, 1, 1, false, ParamGroup::kBackbone);
  conv.weight().value = random_tensor(conv.weight().value.shape(), 1);
  const Tensor x = random_tensor({8, c, 16, 8}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(conv.forward(x, Mode::kEval));
}
BENCHMARK(BM_Conv3x3Forward)->Arg(16)->Arg(64);

void BM_DeskModelForward(benchmark::State& state) {
  Model model(ModelConfig::desk(20));
  init_model(model, 1);
  const Tensor batch = random_tensor({static_cast<int>(state.range(0)), 3, 64, 32}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(batch, Mode::kEval));
}
BENCHMARK(BM_DeskModelForward)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_Evaluate(benchmark::State& state) {
  const int ng = static_cast<int>(state.range(0));
  const FeatureMatrix q = random_features(ng / 5, 256, 100, 4);
  const FeatureMatrix g = random_features(ng, 256, 100, 5);
  const DistanceMatrix d = cosine_distance(q, g);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(d, q, g));
}
BENCHMARK(BM_Evaluate)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_Rerank(benchmark::State& state) {
  const int ng = static_cast<int>(state.range(0));
  const FeatureMatrix q = random_features(ng / 5, 64, 50, 6);
  const FeatureMatrix g = random_features(ng, 64, 50, 7);
  const DistanceMatrix qg = cosine_distance(q, g), qq = cosine_distance(q, q), gg = cosine_distance(g, g);
  for (auto _ : state) benchmark::DoNotOptimize(rerank(qg, qq, gg, RerankParams{}));
}
BENCHMARK(BM_Rerank)->Arg(200)->Arg(800)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
