// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <Eigen/Dense>

#include "pma/analysis.hpp"
#include "pma/rng.hpp"

namespace {

pma::QuadraticOracle make_oracle(int64_t dim) {
  pma::Rng rng(11);
  Eigen::MatrixXd a(dim, dim);
  for (Eigen::Index i = 0; i < dim; ++i)
    for (Eigen::Index j = 0; j < dim; ++j) a(i, j) = rng.normal();
  Eigen::MatrixXd h = a.transpose() * a + 0.1 * Eigen::MatrixXd::Identity(dim, dim);
  h = 0.5 * (h + h.transpose());
  Eigen::VectorXd theta(dim);
  for (Eigen::Index i = 0; i < dim; ++i) theta(i) = rng.normal();
  return pma::QuadraticOracle(theta, h, 1.0);
}

void BM_TaylorReport(benchmark::State& state) {
  const int64_t dim = state.range(0);
  const auto oracle = make_oracle(dim);
  pma::Rng rng(13);
  std::vector<Eigen::VectorXd> thetas;
  for (int i = 0; i < 8; ++i) {
    Eigen::VectorXd t(dim);
    for (Eigen::Index j = 0; j < dim; ++j) t(j) = oracle.theta_star(j) + rng.normal();
    thetas.push_back(std::move(t));
  }
  for (auto _ : state) {
    auto rep = pma::taylor_report(oracle, thetas);
    benchmark::DoNotOptimize(rep);
  }
}

void BM_EmpiricalHessian(benchmark::State& state) {
  const int64_t dim = state.range(0);
  const auto oracle = make_oracle(dim);
  const auto fn = [&](const Eigen::VectorXd& t) { return pma::quadratic_loss(oracle, t); };
  for (auto _ : state) {
    auto h = pma::empirical_hessian(fn, oracle.theta_star, 1e-4);
    benchmark::DoNotOptimize(h);
  }
}

}  // namespace

BENCHMARK(BM_TaylorReport)->Arg(10)->Arg(100);
BENCHMARK(BM_EmpiricalHessian)->Arg(10)->Arg(40);
