#include "erclm/appearance.hpp"
#include "erclm/fitter.hpp"
#include "erclm/synthetic.hpp"

#include "support/fixtures.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace erclm;

namespace {

GrayImage noise_image(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> px(0, 255);
  GrayImage img(size, size);
  for (auto& v : img.data()) v = static_cast<std::uint8_t>(px(rng));
  return img;
}

AdaboostDetector random_detector(int rounds) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> pos(0, kHierarchicalLength - 1);
  std::normal_distribution<double> g;
  AdaboostDetector det;
  for (int k = 0; k < rounds; ++k) {
    WeakClassifier w;
    w.position = pos(rng);
    for (auto& v : w.lut) v = g(rng);
    w.alpha = 1.0;
    det.weak.push_back(w);
  }
  return det;
}

}  // namespace

static void BM_CensusCode(benchmark::State& state) {
  std::array<double, 9> b{12, 200, 31, 44, 90, 87, 3, 150, 66};
  for (auto _ : state) {
    b[0] += 1e-9;
    benchmark::DoNotOptimize(census_code(b));
  }
}
BENCHMARK(BM_CensusCode);

static void BM_HierarchicalDescriptor(benchmark::State& state) {
  std::vector<double> patch(kPatchSize * kPatchSize);
  std::mt19937_64 rng(1);
  for (auto& v : patch) v = std::uniform_real_distribution<double>(0, 255)(rng);
  for (auto _ : state) benchmark::DoNotOptimize(hierarchical_descriptor(patch, kPatchSize));
}
BENCHMARK(BM_HierarchicalDescriptor);

static void BM_ResponseMap(benchmark::State& state) {
  const auto img = noise_image(256, 3);
  const IntegralImage integral(img, 40);
  const auto det = random_detector(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(response_map(integral, det, {100, 100, 30, 30}, 1.0));
  state.SetItemsProcessed(state.iterations() * 31 * 31);
}
BENCHMARK(BM_ResponseMap)->Arg(30)->Arg(100)->Unit(benchmark::kMillisecond);

static void BM_MismatchDegree(benchmark::State& state) {
  const auto& mode = erclm::testing::shape_ensemble().modes[0];
  SynthInstanceOptions opts;
  opts.clutter = 3;
  const auto inst = synth_generate(mode, 0, opts, 1);
  for (auto _ : state) benchmark::DoNotOptimize(mismatch_degree(mode.shape, inst.transform, inst.candidates));
}
BENCHMARK(BM_MismatchDegree);

static void BM_FitMode(benchmark::State& state) {
  const auto& mode = erclm::testing::shape_ensemble().modes[0];
  SynthInstanceOptions opts;
  opts.clutter = 3;
  opts.occlusion_rate = 0.4;
  const auto inst = synth_generate(mode, 0, opts, 1);
  FitConfig cfg;
  cfg.max_iterations = static_cast<int>(state.range(0));
  cfg.early_exit = 0.0;
  for (auto _ : state) benchmark::DoNotOptimize(fit_mode(mode, inst.candidates, cfg, 0));
}
BENCHMARK(BM_FitMode)->Arg(200)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
