// Copyright 2026 The drthresh Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "drthresh/core/error.hpp"

namespace drthresh {

struct LogisticFit {
  /// Intercept first, then one slope per covariate column.
  Eigen::VectorXd coefficients;
  int iterations = 0;
  bool converged = false;
  /// Coefficient norm blew past the cap while the likelihood kept rising.
  bool separated = false;
  /// Iterations that needed the ridge fallback.
  int ridge_iterations = 0;
  /// Log-likelihood before the first step and after every step.
  std::vector<double> loglik_trace;
  std::vector<bool> ridge_trace;

  double linear_predictor(std::span<const double> x) const {
    double eta = coefficients[0];
    for (std::size_t j = 0; j < x.size(); ++j) eta += coefficients[static_cast<Eigen::Index>(j) + 1] * x[j];
    return eta;
  }

  double predict(std::span<const double> x) const {
    return 1.0 / (1.0 + std::exp(-linear_predictor(x)));
  }
};

namespace detail {

inline double log1pexp(double t) {
  return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

inline double bernoulli_loglik(const Eigen::VectorXd& eta, const Eigen::VectorXd& y) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) ll += y[i] * eta[i] - log1pexp(eta[i]);
  return ll;
}

}  // namespace detail

/// Logistic regression of binary `labels` on an intercept plus the columns of
/// `covariates` (n x p) by Newton-Raphson / IRLS.
///
/// Each Newton step is halved until the log-likelihood does not decrease, so
/// the trace is monotone. A singular weighted Gram matrix triggers a ridge
/// fallback with penalty 1e-8. Perfect separation is reported through
/// `separated` with coefficients capped at norm 1e4, not thrown.
inline LogisticFit fit_logistic_irls(const Eigen::MatrixXd& covariates,
                                     std::span<const double> labels,
                                     int max_iter = 100, double tol = 1e-8) {
  constexpr double kRidge = 1e-8;
  constexpr double kCoefCap = 1e4;
  const Eigen::Index n = covariates.rows();
  const Eigen::Index p = covariates.cols();
  if (static_cast<std::size_t>(n) != labels.size()) {
    throw InputError("fit_logistic_irls: label count does not match rows");
  }
  if (n < p + 1 || n == 0) {
    throw DegenerateDataError("fit_logistic_irls: need more observations than coefficients");
  }
  for (double v : labels) {
    if (v != 0.0 && v != 1.0) throw InputError("fit_logistic_irls: labels must be 0/1");
  }

  Eigen::MatrixXd design(n, p + 1);
  design.col(0).setOnes();
  design.rightCols(p) = covariates;
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(labels.data(), n);

  LogisticFit fit;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p + 1);
  Eigen::VectorXd eta = design * beta;
  double ll = detail::bernoulli_loglik(eta, y);
  fit.loglik_trace.push_back(ll);

  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd prob(n), weight(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      prob[i] = 1.0 / (1.0 + std::exp(-eta[i]));
      weight[i] = prob[i] * (1.0 - prob[i]);
    }
    const Eigen::VectorXd score = design.transpose() * (y - prob);
    if (score.cwiseAbs().maxCoeff() < tol) {
      fit.converged = true;
      break;
    }
    Eigen::MatrixXd gram = design.transpose() * weight.asDiagonal() * design;

    bool ridge = false;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    const double scale = std::max(1.0, gram.diagonal().cwiseAbs().maxCoeff());
    const auto pivots = ldlt.vectorD();
    const bool singular = ldlt.info() != Eigen::Success ||
                          pivots.minCoeff() <= 1e-12 * scale;
    Eigen::VectorXd step;
    if (singular) {
      ridge = true;
      gram.diagonal().array() += kRidge;
      step = gram.ldlt().solve(score);
    } else {
      step = ldlt.solve(score);
    }
    if (!step.allFinite()) throw NumericalError("fit_logistic_irls: non-finite Newton step");

    double factor = 1.0;
    Eigen::VectorXd candidate = beta + step;
    Eigen::VectorXd cand_eta = design * candidate;
    double cand_ll = detail::bernoulli_loglik(cand_eta, y);
    for (int half = 0; half < 50 && !(cand_ll >= ll); ++half) {
      factor *= 0.5;
      candidate = beta + factor * step;
      cand_eta = design * candidate;
      cand_ll = detail::bernoulli_loglik(cand_eta, y);
    }
    if (!(cand_ll >= ll)) {
      // No ascent direction left at working precision.
      fit.converged = true;
      break;
    }
    const double max_step = (factor * step).cwiseAbs().maxCoeff();
    beta = candidate;
    eta = cand_eta;
    ll = cand_ll;
    fit.loglik_trace.push_back(ll);
    fit.ridge_trace.push_back(ridge);
    if (ridge) ++fit.ridge_iterations;
    fit.iterations = it + 1;

    if (beta.norm() > kCoefCap) {
      fit.separated = true;
      beta *= kCoefCap / beta.norm();
      break;
    }
    if (max_step < tol) {
      fit.converged = true;
      break;
    }
  }
  // The score can vanish numerically on separable data before the norm
  // reaches the cap. Any beta classifying every row strictly means the MLE
  // does not exist, so report the capped limit.
  if (!fit.separated && beta.norm() > 0.0) {
    bool all_correct = true;
    for (Eigen::Index i = 0; i < n && all_correct; ++i) {
      all_correct = (2.0 * y[i] - 1.0) * eta[i] > 0.0;
    }
    if (all_correct) {
      fit.separated = true;
      fit.converged = false;
      beta *= kCoefCap / beta.norm();
    }
  }
  fit.coefficients = beta;
  return fit;
}

/// Convenience overload for row-major covariates of width `dim`.
inline LogisticFit fit_logistic_irls(std::span<const double> covariates_row_major,
                                     std::size_t dim, std::span<const double> labels,
                                     int max_iter = 100, double tol = 1e-8) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      x(i, static_cast<Eigen::Index>(j)) = covariates_row_major[static_cast<std::size_t>(i) * dim + j];
    }
  }
  return fit_logistic_irls(x, labels, max_iter, tol);
}

}  // namespace drthresh
