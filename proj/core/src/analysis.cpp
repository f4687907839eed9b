// SPDX-License-Identifier: Apache-2.0
#include "pma/analysis.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "pma/util.hpp"

namespace pma {

namespace {
constexpr int64_t kMaxDenseDim = 200;
}

QuadraticOracle::QuadraticOracle(Eigen::VectorXd theta_star_in, Eigen::MatrixXd hessian_in,
                                 double loss_at_opt_in)
    : theta_star(std::move(theta_star_in)),
      hessian(std::move(hessian_in)),
      loss_at_opt(loss_at_opt_in) {
  const Eigen::Index d = theta_star.size();
  if (d < 1) throw Error("oracle dimension must be >= 1");
  if (d > kMaxDenseDim) throw Error("oracle dimension exceeds the dense cap of 200");
  if (hessian.rows() != d || hessian.cols() != d)
    throw Error("hessian dimensions do not match theta_star");
  const double asym = (hessian - hessian.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12)
    throw Error("hessian is not symmetric (max asymmetry " + format_double(asym) + ")");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hessian);
  if (eig.info() != Eigen::Success) throw Error("hessian eigendecomposition failed");
  if (eig.eigenvalues().minCoeff() <= 0.0)
    throw Error("hessian is not positive definite (min eigenvalue " +
                format_double(eig.eigenvalues().minCoeff()) + ")");
}

double quadratic_loss(const QuadraticOracle& oracle, const Eigen::VectorXd& theta) {
  if (theta.size() != oracle.theta_star.size())
    throw Error("theta dimension mismatch: " + std::to_string(theta.size()) + " vs " +
                std::to_string(oracle.theta_star.size()));
  const Eigen::VectorXd d = theta - oracle.theta_star;
  return oracle.loss_at_opt + 0.5 * d.dot(oracle.hessian * d);
}

TaylorReport taylor_report(const QuadraticOracle& oracle,
                           const std::vector<Eigen::VectorXd>& thetas,
                           const std::optional<WeightVector>& weights) {
  const int64_t k = static_cast<int64_t>(thetas.size());
  if (k < 2) throw Error("taylor_report requires k >= 2 parameter vectors");
  const Eigen::Index dim = oracle.theta_star.size();
  for (const auto& t : thetas)
    if (t.size() != dim) throw Error("theta dimension mismatch in taylor_report");
  if (weights && static_cast<int64_t>(weights->size()) != k)
    throw Error("weight count does not match number of parameter vectors");
  if (weights) weights->validate();

  Eigen::MatrixXd deltas(dim, k);
  for (int64_t i = 0; i < k; ++i) deltas.col(i) = thetas[static_cast<size_t>(i)] - oracle.theta_star;

  TaylorReport rep;
  Eigen::MatrixXd q = deltas.transpose() * (oracle.hessian * deltas);
  rep.q_matrix = 0.5 * (q + q.transpose());

  rep.diag_sum = 0.0;
  rep.cross_sum = 0.0;
  for (int64_t i = 0; i < k; ++i) {
    rep.diag_sum += rep.q_matrix(i, i);
    for (int64_t j = 0; j < k; ++j)
      if (j != i) rep.cross_sum += rep.q_matrix(i, j);
  }

  const double margin = (static_cast<double>(k) - 1.0) * rep.diag_sum - rep.cross_sum;
  rep.condition_holds = rep.cross_sum < (static_cast<double>(k) - 1.0) * rep.diag_sum;
  rep.tie = std::abs(margin) <= 1e-12 * std::max(1.0, std::abs(rep.diag_sum));

  Eigen::VectorXd merged;
  if (weights) {
    double avg = 0.0;
    for (int64_t i = 0; i < k; ++i)
      avg += (*weights)[static_cast<size_t>(i)] * rep.q_matrix(i, i);
    rep.avg_individual_loss = oracle.loss_at_opt + 0.5 * avg;

    Eigen::VectorXd w(k);
    for (int64_t i = 0; i < k; ++i) w(i) = (*weights)[static_cast<size_t>(i)];
    rep.merged_loss_predicted = oracle.loss_at_opt + 0.5 * w.dot(rep.q_matrix * w);
    merged = deltas * w + oracle.theta_star;
  } else {
    const double kd = static_cast<double>(k);
    rep.avg_individual_loss = oracle.loss_at_opt + rep.diag_sum / (2.0 * kd);
    rep.merged_loss_predicted =
        oracle.loss_at_opt + (rep.diag_sum + rep.cross_sum) / (2.0 * kd * kd);
    merged = deltas.rowwise().mean() + oracle.theta_star;
  }
  rep.merged_loss_exact = quadratic_loss(oracle, merged);
  return rep;
}

void save_taylor_report(const TaylorReport& report, const std::filesystem::path& path) {
  nlohmann::json doc;
  const Eigen::Index k = report.q_matrix.rows();
  nlohmann::json q = nlohmann::json::array();
  for (Eigen::Index i = 0; i < k; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < k; ++j) row.push_back(report.q_matrix(i, j));
    q.push_back(std::move(row));
  }
  doc["q_matrix"] = std::move(q);
  doc["diag_sum"] = report.diag_sum;
  doc["cross_sum"] = report.cross_sum;
  doc["condition_holds"] = report.condition_holds;
  doc["tie"] = report.tie;
  doc["avg_individual_loss"] = report.avg_individual_loss;
  doc["merged_loss_predicted"] = report.merged_loss_predicted;
  if (report.merged_loss_exact) doc["merged_loss_exact"] = *report.merged_loss_exact;

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << doc.dump(2) << "\n";
}

Eigen::MatrixXd empirical_hessian(const LossFn& loss, const Eigen::VectorXd& theta, double h) {
  const Eigen::Index d = theta.size();
  if (d > kMaxDenseDim)
    throw Error("dimension " + std::to_string(d) + " exceeds the dense Hessian cap of 200");
  if (!(h > 0.0)) throw Error("finite-difference step must be > 0");

  auto probe = [&](const Eigen::VectorXd& t) {
    const double v = loss(t);
    if (!std::isfinite(v)) throw Error("non-finite loss during Hessian probing");
    return v;
  };

  const double f0 = probe(theta);
  Eigen::MatrixXd hess(d, d);
  Eigen::VectorXd t = theta;
  for (Eigen::Index i = 0; i < d; ++i) {
    t = theta;
    t(i) = theta(i) + h;
    const double fp = probe(t);
    t(i) = theta(i) - h;
    const double fm = probe(t);
    hess(i, i) = (fp - 2.0 * f0 + fm) / (h * h);
    for (Eigen::Index j = i + 1; j < d; ++j) {
      t = theta;
      t(i) += h; t(j) += h;
      const double fpp = probe(t);
      t = theta;
      t(i) += h; t(j) -= h;
      const double fpm = probe(t);
      t = theta;
      t(i) -= h; t(j) += h;
      const double fmp = probe(t);
      t = theta;
      t(i) -= h; t(j) -= h;
      const double fmm = probe(t);
      const double v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
      hess(i, j) = v;
      hess(j, i) = v;
    }
  }
  return 0.5 * (hess + hess.transpose());
}

SurfaceGrid surface_grid(const LossFn& metric, const Eigen::VectorXd& base_theta,
                         int64_t axis_i, int64_t axis_j, double i_min, double i_max,
                         double j_min, double j_max, int64_t res_i, int64_t res_j) {
  const int64_t d = base_theta.size();
  if (axis_i < 0 || axis_i >= d || axis_j < 0 || axis_j >= d)
    throw Error("surface axis index out of range");
  if (axis_i == axis_j) throw Error("surface axes must be distinct");
  if (res_i < 2 || res_j < 2) throw Error("surface resolution must be >= 2 per axis");

  SurfaceGrid grid;
  grid.xs.resize(static_cast<size_t>(res_i));
  grid.ys.resize(static_cast<size_t>(res_j));
  for (int64_t ix = 0; ix < res_i; ++ix)
    grid.xs[static_cast<size_t>(ix)] =
        i_min + (i_max - i_min) * static_cast<double>(ix) / static_cast<double>(res_i - 1);
  for (int64_t iy = 0; iy < res_j; ++iy)
    grid.ys[static_cast<size_t>(iy)] =
        j_min + (j_max - j_min) * static_cast<double>(iy) / static_cast<double>(res_j - 1);

  grid.values.resize(res_j, res_i);
  Eigen::VectorXd theta = base_theta;
  for (int64_t iy = 0; iy < res_j; ++iy) {
    for (int64_t ix = 0; ix < res_i; ++ix) {
      theta(axis_i) = grid.xs[static_cast<size_t>(ix)];
      theta(axis_j) = grid.ys[static_cast<size_t>(iy)];
      grid.values(iy, ix) = metric(theta);
    }
  }
  return grid;
}

void write_surface_csv(const SurfaceGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << "x,y,value\n";
  for (size_t iy = 0; iy < grid.ys.size(); ++iy)
    for (size_t ix = 0; ix < grid.xs.size(); ++ix)
      out << format_double(grid.xs[ix]) << ',' << format_double(grid.ys[iy]) << ','
          << format_double(grid.values(static_cast<Eigen::Index>(iy),
                                       static_cast<Eigen::Index>(ix)))
          << '\n';
}

std::vector<ProjectedPoint> project_points(const std::vector<Eigen::VectorXd>& thetas,
                                           int64_t axis_i, int64_t axis_j,
                                           const std::vector<std::string>& labels) {
  if (!labels.empty() && labels.size() != thetas.size())
    throw Error("label count does not match point count");
  std::vector<ProjectedPoint> points;
  points.reserve(thetas.size());
  for (size_t i = 0; i < thetas.size(); ++i) {
    const auto& t = thetas[i];
    if (axis_i < 0 || axis_i >= t.size() || axis_j < 0 || axis_j >= t.size())
      throw Error("projection axis index out of range");
    ProjectedPoint p;
    p.x = t(axis_i);
    p.y = t(axis_j);
    p.label = labels.empty() ? "ckpt" + std::to_string(i) : labels[i];
    points.push_back(std::move(p));
  }
  return points;
}

void write_points_csv(const std::vector<ProjectedPoint>& points,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << "x,y,label\n";
  for (const auto& p : points)
    out << format_double(p.x) << ',' << format_double(p.y) << ',' << p.label << '\n';
}

}  // namespace pma
