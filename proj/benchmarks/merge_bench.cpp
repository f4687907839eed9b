// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <filesystem>
#include <vector>

#include "pma/container.hpp"
#include "pma/merge.hpp"
#include "pma/rng.hpp"

namespace {

namespace fs = std::filesystem;

fs::path bench_dir() {
  const fs::path dir = fs::temp_directory_path() / "pma_bench";
  fs::create_directories(dir);
  return dir;
}

std::vector<fs::path> make_inputs(int64_t count, int64_t elements) {
  std::vector<fs::path> paths;
  pma::Rng rng(7);
  for (int64_t i = 0; i < count; ++i) {
    pma::TensorInit t;
    t.dtype = pma::Dtype::F32;
    t.shape = {elements};
    t.values.resize(static_cast<size_t>(elements));
    for (auto& v : t.values) v = rng.normal();
    const fs::path p = bench_dir() / ("in_" + std::to_string(i) + ".pma");
    pma::write_container({{"w", t}},
                         {{"step", std::to_string(i + 1)}, {"tokens", std::to_string(i + 1)}},
                         p);
    paths.push_back(p);
  }
  return paths;
}

void BM_MergeStreaming(benchmark::State& state) {
  const auto inputs = make_inputs(10, state.range(0));
  const fs::path out = bench_dir() / "merged_streaming.pma";
  for (auto _ : state) {
    pma::merge_with_strategy(inputs, pma::MergeStrategy::sma(), out,
                             pma::MergeMode::Streaming);
  }
  state.SetBytesProcessed(state.iterations() * state.range(0) * 10 * 4);
}

void BM_MergeInMemory(benchmark::State& state) {
  const auto inputs = make_inputs(10, state.range(0));
  const fs::path out = bench_dir() / "merged_memory.pma";
  for (auto _ : state) {
    pma::merge_with_strategy(inputs, pma::MergeStrategy::sma(), out,
                             pma::MergeMode::InMemory);
  }
  state.SetBytesProcessed(state.iterations() * state.range(0) * 10 * 4);
}

void BM_ComputeWeightsEma(benchmark::State& state) {
  for (auto _ : state) {
    auto w = pma::compute_weights(pma::MergeStrategy::ema(0.1), state.range(0));
    benchmark::DoNotOptimize(w);
  }
}

void BM_ContainerRoundTrip(benchmark::State& state) {
  const auto inputs = make_inputs(1, state.range(0));
  for (auto _ : state) {
    auto c = pma::read_container(inputs[0]);
    auto v = pma::load_tensor(c, "w");
    benchmark::DoNotOptimize(v);
  }
}

}  // namespace

BENCHMARK(BM_MergeStreaming)->Arg(1 << 16)->Arg(1 << 20);
BENCHMARK(BM_MergeInMemory)->Arg(1 << 16)->Arg(1 << 20);
BENCHMARK(BM_ComputeWeightsEma)->Arg(10)->Arg(10000);
BENCHMARK(BM_ContainerRoundTrip)->Arg(1 << 20);

BENCHMARK_MAIN();
