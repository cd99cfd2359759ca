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
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drthresh/core/error.hpp"
#include "drthresh/core/types.hpp"
#include "drthresh/nuisance/adaptive.hpp"
#include "drthresh/nuisance/local_poly.hpp"
#include "drthresh/nuisance/logistic.hpp"

namespace drthresh {

inline constexpr double kPropensityFloor = 1e-12;

inline double clamp_propensity(double e) {
  return std::clamp(e, kPropensityFloor, 1.0 - kPropensityFloor);
}

enum class PropensityKind { kLogistic, kConstant, kOracle };
enum class OutcomeKind { kLocalPoly, kAdaptive, kConstantMean, kOracle };

struct PropensityMethod {
  PropensityKind kind = PropensityKind::kLogistic;
  int max_iter = 100;
  double tol = 1e-8;

  static PropensityMethod logistic() { return {}; }
  static PropensityMethod constant() { return {PropensityKind::kConstant}; }
  static PropensityMethod oracle() { return {PropensityKind::kOracle}; }

  std::string describe() const {
    switch (kind) {
      case PropensityKind::kLogistic: return "logistic";
      case PropensityKind::kConstant: return "constant";
      case PropensityKind::kOracle: return "oracle";
    }
    return "?";
  }
};

struct OutcomeMethod {
  OutcomeKind kind = OutcomeKind::kLocalPoly;
  int degree = 1;
  /// Fixed bandwidth; when absent h = n_train^bandwidth_exponent.
  std::optional<double> bandwidth;
  double bandwidth_exponent = -0.2;
  /// Window floor: at least ceil(n_treated^min_neighbors_exponent) treated
  /// points per window; 0 disables the floor.
  double min_neighbors_exponent = 0.0;
  double beta_mu = 1.0;

  static OutcomeMethod local_linear() { return {}; }
  static OutcomeMethod adaptive(double beta) {
    OutcomeMethod m;
    m.kind = OutcomeKind::kAdaptive;
    m.beta_mu = beta;
    return m;
  }
  static OutcomeMethod constant_mean() { return of(OutcomeKind::kConstantMean); }
  static OutcomeMethod oracle() { return of(OutcomeKind::kOracle); }
  static OutcomeMethod of(OutcomeKind kind) {
    OutcomeMethod m;
    m.kind = kind;
    return m;
  }

  std::string describe() const {
    switch (kind) {
      case OutcomeKind::kLocalPoly:
        return "local_poly(degree=" + std::to_string(degree) + ")";
      case OutcomeKind::kAdaptive: return "adaptive(beta_mu=" + std::to_string(beta_mu) + ")";
      case OutcomeKind::kConstantMean: return "constant_mean";
      case OutcomeKind::kOracle: return "oracle";
    }
    return "?";
  }
};

/// Nuisance models trained on one fold complement. Oracle methods carry no
/// predictor: their values come from the dataset annotations.
struct NuisanceFit {
  std::function<double(std::span<const double>)> predict_propensity;
  std::function<double(std::span<const double>)> predict_outcome;
  std::string meta;
};

struct CrossFitNuisances {
  std::vector<double> e_hat;
  std::vector<double> mu_hat;
  FoldAssignment folds;
  std::vector<NuisanceFit> fits;
};

namespace detail {

inline std::function<double(std::span<const double>)> train_propensity(
    const Dataset& data, std::span<const std::size_t> train, const PropensityMethod& method,
    std::string& meta) {
  switch (method.kind) {
    case PropensityKind::kConstant: {
      double treated = 0.0;
      for (std::size_t i : train) treated += data.d(i);
      const double rate = clamp_propensity(treated / static_cast<double>(train.size()));
      meta += "propensity=constant(" + std::to_string(rate) + ")";
      return [rate](std::span<const double>) { return rate; };
    }
    case PropensityKind::kLogistic: {
      std::vector<double> x, labels;
      x.reserve(train.size() * data.dim());
      for (std::size_t i : train) {
        auto xi = data.x(i);
        x.insert(x.end(), xi.begin(), xi.end());
        labels.push_back(data.d(i));
      }
      auto fit = std::make_shared<LogisticFit>(
          fit_logistic_irls(x, data.dim(), labels, method.max_iter, method.tol));
      meta += "propensity=logistic(iterations=" + std::to_string(fit->iterations) +
              (fit->separated ? ",separated" : "") + ")";
      return [fit](std::span<const double> xi) { return clamp_propensity(fit->predict(xi)); };
    }
    case PropensityKind::kOracle:
      meta += "propensity=oracle";
      return {};
  }
  return {};
}

inline std::function<double(std::span<const double>)> train_outcome(
    const Dataset& data, std::span<const std::size_t> train, const OutcomeMethod& method,
    std::string& meta) {
  switch (method.kind) {
    case OutcomeKind::kConstantMean: {
      double s = 0.0, c = 0.0;
      for (std::size_t i : train) {
        if (data.d(i) == 1) {
          s += data.y(i);
          c += 1.0;
        }
      }
      const double m = s / c;
      meta += ";outcome=constant_mean";
      return [m](std::span<const double>) { return m; };
    }
    case OutcomeKind::kLocalPoly: {
      const double h = method.bandwidth.value_or(
          std::pow(static_cast<double>(train.size()), method.bandwidth_exponent));
      RegressionSample sample = RegressionSample::treated(data.subset(train));
      const std::size_t floor_k =
          method.min_neighbors_exponent > 0.0
              ? static_cast<std::size_t>(std::ceil(std::pow(static_cast<double>(sample.size()),
                                                            method.min_neighbors_exponent)))
              : 0;
      auto reg = std::make_shared<LocalPolyRegressor>(std::move(sample), h, method.degree, floor_k);
      meta += ";outcome=local_poly(degree=" + std::to_string(method.degree) +
              ",h=" + std::to_string(h) + ")";
      return [reg](std::span<const double> xi) { return reg->predict(xi); };
    }
    case OutcomeKind::kAdaptive: {
      auto fit = std::make_shared<AdaptiveRegressorFit>(
          fit_adaptive_regressor(data.subset(train), method.beta_mu));
      meta += ";outcome=adaptive(gridpoints=" + std::to_string(fit->size()) + ")";
      return [fit](std::span<const double> xi) { return predict_adaptive(*fit, xi); };
    }
    case OutcomeKind::kOracle:
      meta += ";outcome=oracle";
      return {};
  }
  return {};
}

}  // namespace detail

/// Out-of-fold nuisance predictions: for every fold, both nuisances are
/// trained on the other folds and evaluated on the fold itself.
inline CrossFitNuisances cross_fit(const Dataset& data, const FoldAssignment& folds,
                                   const PropensityMethod& propensity,
                                   const OutcomeMethod& outcome) {
  if (folds.fold_of.size() != data.size()) {
    throw InputError("cross_fit: fold assignment does not match the dataset");
  }
  if (propensity.kind == PropensityKind::kOracle && !data.true_propensity()) {
    throw InputError("cross_fit: oracle propensity requested but dataset has no true_propensity");
  }
  if (outcome.kind == OutcomeKind::kOracle && !data.true_outcome_mean()) {
    throw InputError("cross_fit: oracle outcome requested but dataset has no true_outcome_mean");
  }
  CrossFitNuisances out;
  out.folds = folds;
  out.e_hat.assign(data.size(), 0.0);
  out.mu_hat.assign(data.size(), 0.0);
  for (int f = 0; f < folds.k; ++f) {
    const auto train = folds.complement(f);
    const auto test = folds.members(f);
    std::size_t treated = 0;
    for (std::size_t i : train) treated += static_cast<std::size_t>(data.d(i));
    if (treated == 0) {
      throw DegenerateDataError("cross_fit: complement of fold " + std::to_string(f) +
                                " has no treated observations");
    }
    if (treated == train.size() && propensity.kind == PropensityKind::kLogistic) {
      throw DegenerateDataError("cross_fit: complement of fold " + std::to_string(f) +
                                " has no control observations");
    }
    NuisanceFit fit;
    fit.meta = "fold=" + std::to_string(f) + ";";
    fit.predict_propensity = detail::train_propensity(data, train, propensity, fit.meta);
    fit.predict_outcome = detail::train_outcome(data, train, outcome, fit.meta);
    for (std::size_t i : test) {
      out.e_hat[i] = fit.predict_propensity ? fit.predict_propensity(data.x(i))
                                            : clamp_propensity((*data.true_propensity())[i]);
      out.mu_hat[i] = fit.predict_outcome ? fit.predict_outcome(data.x(i))
                                          : (*data.true_outcome_mean())[i];
    }
    out.fits.push_back(std::move(fit));
  }
  return out;
}

inline CrossFitNuisances cross_fit(const Dataset& data, int k, const PropensityMethod& propensity,
                                   const OutcomeMethod& outcome, std::uint64_t seed) {
  return cross_fit(data, assign_folds(data.size(), k, seed), propensity, outcome);
}

/// Control-arm nuisances on the same folds: propensity 1 - e_hat from the
/// treated-arm fit, outcome regression trained on control observations.
inline CrossFitNuisances cross_fit_control_arm(const Dataset& data,
                                               const CrossFitNuisances& treated_arm,
                                               const OutcomeMethod& outcome) {
  const Dataset flipped = data.flipped();
  if (outcome.kind == OutcomeKind::kOracle && !flipped.true_outcome_mean()) {
    throw InputError("cross_fit: oracle outcome requested but dataset has no true_control_mean");
  }
  CrossFitNuisances out;
  out.folds = treated_arm.folds;
  out.e_hat.resize(data.size());
  out.mu_hat.assign(data.size(), 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.e_hat[i] = clamp_propensity(1.0 - treated_arm.e_hat[i]);
  }
  for (int f = 0; f < out.folds.k; ++f) {
    const auto train = out.folds.complement(f);
    std::size_t controls = 0;
    for (std::size_t i : train) controls += static_cast<std::size_t>(flipped.d(i));
    if (controls == 0) {
      throw DegenerateDataError("cross_fit: complement of fold " + std::to_string(f) +
                                " has no control observations");
    }
    NuisanceFit fit;
    fit.meta = "fold=" + std::to_string(f) + ";arm=control";
    fit.predict_outcome = detail::train_outcome(flipped, train, outcome, fit.meta);
    for (std::size_t i : out.folds.members(f)) {
      out.mu_hat[i] = fit.predict_outcome ? fit.predict_outcome(flipped.x(i))
                                          : (*flipped.true_outcome_mean())[i];
    }
    out.fits.push_back(std::move(fit));
  }
  return out;
}

/// Nuisances straight from the dataset's annotations (no fitting).
inline CrossFitNuisances oracle_nuisances(const Dataset& data) {
  if (!data.true_propensity() || !data.true_outcome_mean()) {
    throw InputError("oracle_nuisances: dataset lacks true nuisance annotations");
  }
  CrossFitNuisances out;
  out.e_hat.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.e_hat[i] = clamp_propensity((*data.true_propensity())[i]);
  }
  out.mu_hat = *data.true_outcome_mean();
  out.folds.k = 1;
  out.folds.fold_of.assign(data.size(), 0);
  return out;
}

}  // namespace drthresh
