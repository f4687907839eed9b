// SPDX-License-Identifier: Apache-2.0
//
// Second-order analysis of why merging helps: deviation vectors from an
// optimum, Hessian quadratic forms Q_ij = d_i^T H d_j, the predicted merged
// loss, and the merging-benefit inequality
//     sum_{i != j} Q_ij < (k - 1) * sum_i Q_ii.
// On an exactly quadratic loss the "approximation" is exact, which is what
// makes the machinery verifiable.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pma/merge.hpp"

namespace pma {

// Exactly quadratic loss L(theta) = L* + 1/2 (theta - theta*)^T H (theta - theta*).
struct QuadraticOracle {
  Eigen::VectorXd theta_star;
  Eigen::MatrixXd hessian;  // symmetric positive definite, d <= 200
  double loss_at_opt = 0.0;

  // Validates symmetry (1e-12), positive definiteness and the dimension cap.
  QuadraticOracle(Eigen::VectorXd theta_star, Eigen::MatrixXd hessian, double loss_at_opt);
};

double quadratic_loss(const QuadraticOracle& oracle, const Eigen::VectorXd& theta);

struct TaylorReport {
  Eigen::MatrixXd q_matrix;  // k x k, Q_ij = d_i^T H d_j, symmetrized
  double diag_sum = 0.0;
  double cross_sum = 0.0;
  bool condition_holds = false;  // cross_sum < (k-1) * diag_sum, strictly
  bool tie = false;              // |cross - (k-1)*diag| within the 1e-12 band
  double avg_individual_loss = 0.0;
  double merged_loss_predicted = 0.0;
  std::optional<double> merged_loss_exact;
};

// Uniform weights unless given. diag_sum/cross_sum and the benefit condition
// are always the unweighted sums; the loss fields use the actual weights
// (reducing to L* + diag_sum/2k and L* + (diag_sum + cross_sum)/2k^2 for the
// uniform case).
TaylorReport taylor_report(const QuadraticOracle& oracle,
                           const std::vector<Eigen::VectorXd>& thetas,
                           const std::optional<WeightVector>& weights = std::nullopt);

void save_taylor_report(const TaylorReport& report, const std::filesystem::path& path);

using LossFn = std::function<double(const Eigen::VectorXd&)>;

// Dense central second differences, symmetrized as (H + H^T)/2. d <= 200.
Eigen::MatrixXd empirical_hessian(const LossFn& loss, const Eigen::VectorXd& theta, double h);

// 2-D slice of a metric: vary coordinates axis_i and axis_j of base_theta
// over [i_min, i_max] x [j_min, j_max] with res_i x res_j samples.
struct SurfaceGrid {
  std::vector<double> xs;     // axis_i values
  std::vector<double> ys;     // axis_j values
  Eigen::MatrixXd values;     // values(iy, ix)
};

SurfaceGrid surface_grid(const LossFn& metric, const Eigen::VectorXd& base_theta,
                         int64_t axis_i, int64_t axis_j, double i_min, double i_max,
                         double j_min, double j_max, int64_t res_i, int64_t res_j);

// CSV with header "x,y,value", y-major (x varies fastest).
void write_surface_csv(const SurfaceGrid& grid, const std::filesystem::path& path);

struct ProjectedPoint {
  double x = 0.0;
  double y = 0.0;
  std::string label;
};

// (x, y) projections of parameter vectors onto the two slice axes.
std::vector<ProjectedPoint> project_points(const std::vector<Eigen::VectorXd>& thetas,
                                           int64_t axis_i, int64_t axis_j,
                                           const std::vector<std::string>& labels = {});

// CSV with header "x,y,label".
void write_points_csv(const std::vector<ProjectedPoint>& points,
                      const std::filesystem::path& path);

}  // namespace pma
