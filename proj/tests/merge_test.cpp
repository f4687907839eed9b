// SPDX-License-Identifier: Apache-2.0
#include "pma/merge.hpp"

#include <cmath>
#include <vector>

#include "doctest.h"
#include "pma/container.hpp"
#include "pma/rng.hpp"
#include "pma/util.hpp"
#include "test_helpers.hpp"

using namespace pma;
using pma_test::TempDir;
using pma_test::read_file_bytes;

namespace {

// Independent oracle for the EMA weights: literally unroll the recursion
// M_avg^(i) = a*M_i + (1-a)*M_avg^(i-1) on basis-vector coefficients,
// starting from M_avg^(1) = M_1.
std::vector<double> ema_weights_by_recursion(double alpha, int64_t n) {
  std::vector<double> w(static_cast<size_t>(n), 0.0);
  w[0] = 1.0;
  for (int64_t i = 2; i <= n; ++i) {
    for (auto& v : w) v *= (1.0 - alpha);
    w[static_cast<size_t>(i - 1)] += alpha;
  }
  return w;
}

std::map<std::string, std::string> meta(int64_t step = 1) {
  return {{"step", std::to_string(step)}, {"tokens", std::to_string(step * 1000)}};
}

std::filesystem::path write_single(const TempDir& dir, const std::string& name,
                                   const std::vector<double>& values, Dtype dtype,
                                   int64_t step = 1) {
  TensorInit t;
  t.dtype = dtype;
  t.shape = {static_cast<int64_t>(values.size())};
  t.values = values;
  const auto path = dir / name;
  write_container({{"w", t}}, meta(step), path);
  return path;
}

}  // namespace

TEST_CASE("SMA weights: uniform 1/N") {
  const WeightVector w = compute_weights(MergeStrategy::sma(), 10);
  REQUIRE(w.size() == 10);
  for (size_t i = 0; i < 10; ++i) CHECK(w[i] == 0.1);
}

TEST_CASE("WMA weights: linearly increasing, normalized") {
  const WeightVector w = compute_weights(MergeStrategy::wma(), 3);
  REQUIRE(w.size() == 3);
  CHECK(w[0] == 1.0 / 6.0);
  CHECK(w[1] == 2.0 / 6.0);
  CHECK(w[2] == 3.0 / 6.0);
}

TEST_CASE("EMA weights match the recursion") {
  SUBCASE("one unrolling, alpha=0.2") {
    const WeightVector w = compute_weights(MergeStrategy::ema(0.2), 2);
    REQUIRE(w.size() == 2);
    CHECK(w[0] == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(w[1] == doctest::Approx(0.2).epsilon(1e-15));
  }
  SUBCASE("alpha=0.1, N=10 spot values") {
    const WeightVector w = compute_weights(MergeStrategy::ema(0.1), 10);
    CHECK(w[9] == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(w[8] == doctest::Approx(0.09).epsilon(1e-15));
    CHECK(w[0] == doctest::Approx(0.387420489).epsilon(1e-9));
  }
  SUBCASE("full vector vs recursion oracle") {
    for (double alpha : {0.1, 0.2, 0.5, 1.0}) {
      for (int64_t n : {1, 2, 3, 10, 100, 1000}) {
        const WeightVector w = compute_weights(MergeStrategy::ema(alpha), n);
        const auto oracle = ema_weights_by_recursion(alpha, n);
        for (size_t i = 0; i < w.size(); ++i)
          CHECK(std::abs(w[i] - oracle[i]) <= 1e-12);
      }
    }
  }
}

TEST_CASE("weights sum to one for every strategy and N") {
  for (int64_t n : {1, 2, 7, 100, 1234, 10000}) {
    for (const MergeStrategy& s :
         {MergeStrategy::sma(), MergeStrategy::wma(), MergeStrategy::ema(0.1),
          MergeStrategy::ema(0.2)}) {
      const WeightVector w = compute_weights(s, n);
      CHECK(std::abs(neumaier_sum(w.weights) - 1.0) <= 1e-12);
      for (size_t i = 0; i < w.size(); ++i) CHECK(w[i] >= 0.0);
    }
    std::vector<double> customs;
    Rng rng(static_cast<uint64_t>(n));
    for (int64_t i = 0; i < n; ++i) customs.push_back(0.1 + rng.uniform());
    const WeightVector w = compute_weights(MergeStrategy::custom(customs), n);
    CHECK(std::abs(neumaier_sum(w.weights) - 1.0) <= 1e-12);
  }
}

TEST_CASE("strategy validation") {
  CHECK_THROWS_AS(compute_weights(MergeStrategy::ema(0.0), 3), Error);
  CHECK_THROWS_AS(compute_weights(MergeStrategy::ema(1.5), 3), Error);
  CHECK_NOTHROW(compute_weights(MergeStrategy::ema(1.0), 3));
  CHECK_THROWS_AS(compute_weights(MergeStrategy::custom({1.0, -1.0}), 2), Error);
  CHECK_THROWS_AS(compute_weights(MergeStrategy::custom({1.0, 2.0}), 3), Error);
  CHECK_THROWS_AS(compute_weights(MergeStrategy::sma(), 0), Error);
}

TEST_CASE("merge arithmetic on two single-tensor containers") {
  TempDir dir("merge_basic");
  const auto a = write_single(dir, "a.pma", {1.0, 2.0}, Dtype::F32, 1);
  const auto b = write_single(dir, "b.pma", {3.0, 4.0}, Dtype::F32, 2);

  WeightVector w;
  w.weights = {0.5, 0.5};
  merge({a, b}, w, dir / "out.pma", MergeMode::InMemory);
  const auto c = read_container(dir / "out.pma");
  CHECK(load_tensor(c, "w") == std::vector<double>{2.0, 3.0});
  CHECK(c.step() == 2);  // metadata from the newest input

  SUBCASE("report JSON exists with sha256") {
    CHECK(std::filesystem::exists(dir.path() / "out.pma.merge.json"));
  }
}

TEST_CASE("merging a container with itself reproduces it byte-exactly") {
  TempDir dir("merge_idempotent");
  Rng rng(5);
  std::vector<double> values(4096);
  for (auto& v : values) v = static_cast<double>(static_cast<float>(rng.normal()));
  const auto c = write_single(dir, "c.pma", values, Dtype::F32);
  const auto original = read_file_bytes(c);

  int i = 0;
  for (const MergeStrategy& s : {MergeStrategy::sma(), MergeStrategy::wma(),
                                 MergeStrategy::ema(0.1), MergeStrategy::ema(0.2),
                                 MergeStrategy::custom({2.0, 2.0, 2.0})}) {
    const auto out = dir / ("out_" + std::to_string(i++) + ".pma");
    merge_with_strategy({c, c, c}, s, out, MergeMode::Streaming);
    const auto merged = read_container(out);
    const auto source = read_container(c);
    // Tensor payloads identical to the source container.
    CHECK(load_tensor(merged, "w") == load_tensor(source, "w"));
  }

  SUBCASE("single-input merge is the identity") {
    WeightVector w;
    w.weights = {1.0};
    merge({c}, w, dir / "single.pma", MergeMode::Streaming);
    CHECK(load_tensor(read_container(dir / "single.pma"), "w") ==
          load_tensor(read_container(c), "w"));
  }
}

TEST_CASE("streaming and in-memory merges are byte-identical") {
  TempDir dir("merge_modes");
  Rng rng(17);
  std::vector<std::filesystem::path> inputs;
  for (int i = 0; i < 10; ++i) {
    std::map<std::string, TensorInit> tensors;
    for (const char* name : {"layer0.weight", "layer0.bias", "layer1.weight"}) {
      TensorInit t;
      t.dtype = std::string(name).find("bias") != std::string::npos ? Dtype::F64 : Dtype::F32;
      t.shape = {64, 33};
      t.values.resize(64 * 33);
      for (auto& v : t.values) {
        v = rng.normal();
        if (t.dtype == Dtype::F32) v = static_cast<double>(static_cast<float>(v));
      }
      tensors[name] = std::move(t);
    }
    const auto p = dir / ("in_" + std::to_string(i) + ".pma");
    write_container(tensors, meta(i + 1), p);
    inputs.push_back(p);
  }

  for (const MergeStrategy& s : {MergeStrategy::sma(), MergeStrategy::ema(0.2)}) {
    const MergeReport mem =
        merge_with_strategy(inputs, s, dir / "mem.pma", MergeMode::InMemory);
    const MergeReport str =
        merge_with_strategy(inputs, s, dir / "str.pma", MergeMode::Streaming);
    CHECK(mem.sha256 == str.sha256);
    CHECK(read_file_bytes(dir / "mem.pma") == read_file_bytes(dir / "str.pma"));
  }

  SUBCASE("repeat runs are deterministic") {
    const MergeReport r1 =
        merge_with_strategy(inputs, MergeStrategy::sma(), dir / "d1.pma", MergeMode::Streaming);
    const MergeReport r2 =
        merge_with_strategy(inputs, MergeStrategy::sma(), dir / "d2.pma", MergeMode::Streaming);
    CHECK(r1.sha256 == r2.sha256);
  }
}

TEST_CASE("uniform custom weights reproduce SMA byte-exactly") {
  TempDir dir("merge_custom_uniform");
  Rng rng(23);
  std::vector<std::filesystem::path> inputs;
  for (int i = 0; i < 7; ++i) {
    std::vector<double> values(512);
    for (auto& v : values) v = rng.normal();  // f64 tensors: no rounding slack
    inputs.push_back(write_single(dir, "in_" + std::to_string(i) + ".pma", values,
                                  Dtype::F64, i + 1));
  }
  const MergeReport sma =
      merge_with_strategy(inputs, MergeStrategy::sma(), dir / "sma.pma", MergeMode::InMemory);
  const MergeReport uni = merge_with_strategy(
      inputs, MergeStrategy::custom(std::vector<double>(7, 3.0)), dir / "uni.pma",
      MergeMode::InMemory);
  const auto a = read_container(dir / "sma.pma");
  const auto b = read_container(dir / "uni.pma");
  CHECK(load_tensor(a, "w") == load_tensor(b, "w"));
}

TEST_CASE("SMA merging is affine invariant within one rounding step") {
  TempDir dir("merge_affine");
  Rng rng(29);
  constexpr int kN = 5;
  constexpr double kShift = 0.75;
  std::vector<std::filesystem::path> inputs, shifted;
  for (int i = 0; i < kN; ++i) {
    std::vector<double> values(256), values_shifted(256);
    for (size_t e = 0; e < values.size(); ++e) {
      const float v = static_cast<float>(rng.normal());
      values[e] = static_cast<double>(v);
      values_shifted[e] = static_cast<double>(v + static_cast<float>(kShift));
    }
    inputs.push_back(write_single(dir, "a_" + std::to_string(i) + ".pma", values,
                                  Dtype::F32, i + 1));
    shifted.push_back(write_single(dir, "s_" + std::to_string(i) + ".pma", values_shifted,
                                   Dtype::F32, i + 1));
  }
  merge_with_strategy(inputs, MergeStrategy::sma(), dir / "m.pma", MergeMode::InMemory);
  merge_with_strategy(shifted, MergeStrategy::sma(), dir / "ms.pma", MergeMode::InMemory);
  const auto base = load_tensor(read_container(dir / "m.pma"), "w");
  const auto moved = load_tensor(read_container(dir / "ms.pma"), "w");
  for (size_t e = 0; e < base.size(); ++e) {
    const float expect = static_cast<float>(base[e]) + static_cast<float>(kShift);
    const float got = static_cast<float>(moved[e]);
    // within one f32 ulp of the shifted value
    CHECK(std::abs(got - expect) <=
          std::abs(std::nextafter(expect, 2.0f * expect + 1.0f) - expect));
  }
}

TEST_CASE("mismatched inputs are hard errors naming the offender") {
  TempDir dir("merge_mismatch");
  const auto a = write_single(dir, "a.pma", {1.0, 2.0}, Dtype::F32);
  const auto b = write_single(dir, "b.pma", {1.0, 2.0, 3.0}, Dtype::F32);
  WeightVector w;
  w.weights = {0.5, 0.5};
  CHECK_THROWS_AS(merge({a, b}, w, dir / "o.pma", MergeMode::InMemory), Error);
  try {
    merge({a, b}, w, dir / "o.pma", MergeMode::InMemory);
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("'w'") != std::string::npos);
  }

  SUBCASE("dtype mismatch") {
    const auto c = write_single(dir, "c.pma", {1.0, 2.0}, Dtype::F64);
    CHECK_THROWS_AS(merge({a, c}, w, dir / "o.pma", MergeMode::InMemory), Error);
  }
  SUBCASE("weight length mismatch") {
    WeightVector w3;
    w3.weights = {0.25, 0.25, 0.5};
    CHECK_THROWS_AS(merge({a, a}, w3, dir / "o.pma", MergeMode::InMemory), Error);
  }
  SUBCASE("no inputs") {
    CHECK_THROWS_AS(merge({}, w, dir / "o.pma", MergeMode::InMemory), Error);
  }
}

TEST_CASE("ema_update") {
  SUBCASE("alpha=1 returns the new values exactly") {
    const auto out = ema_update(std::vector<double>{1.5, -2.0}, std::vector<double>{3.25, 4.0}, 1.0);
    CHECK(out == std::vector<double>{3.25, 4.0});
  }
  SUBCASE("basic blend") {
    const auto out = ema_update(std::vector<double>{1.0}, std::vector<double>{2.0}, 0.2);
    CHECK(out[0] == doctest::Approx(1.2).epsilon(1e-15));
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(ema_update(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}, 0.5),
                    Error);
  }
  SUBCASE("N-fold chain equals the closed-form weights") {
    Rng rng(31);
    constexpr int kN = 8;
    constexpr double kAlpha = 0.2;
    std::vector<std::vector<double>> checkpoints;
    for (int i = 0; i < kN; ++i) {
      std::vector<double> v(64);
      for (auto& x : v) x = rng.normal();
      checkpoints.push_back(std::move(v));
    }
    std::vector<double> running = checkpoints[0];
    for (int i = 1; i < kN; ++i) running = ema_update(running, checkpoints[i], kAlpha);

    const WeightVector w = compute_weights(MergeStrategy::ema(kAlpha), kN);
    for (size_t e = 0; e < running.size(); ++e) {
      double acc = 0.0;
      for (int i = 0; i < kN; ++i) acc += w[static_cast<size_t>(i)] * checkpoints[i][e];
      CHECK(std::abs(running[e] - acc) <= 1e-12);
    }
  }
}
