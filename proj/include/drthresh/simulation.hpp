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
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "drthresh/core/error.hpp"
#include "drthresh/core/rng.hpp"
#include "drthresh/core/stats.hpp"
#include "drthresh/core/types.hpp"
#include "drthresh/estimators.hpp"
#include "drthresh/nuisance/adaptive.hpp"
#include "drthresh/nuisance/cross_fit.hpp"
#include "drthresh/threshold.hpp"

namespace drthresh {

/// How the outcome is shifted so that the target has a known value.
///   analytic_zero: subtract kappa E[1 - e(X)], making the APO exactly 0.
///   verbatim_text: subtract kappa E[D (1 - e(X))]; the APO is then nonzero
///                  but known in closed form.
enum class Demean { kAnalyticZero, kVerbatimText };

/// Weak-overlap design: X ~ U(0,1), e(X) = X^(1/(gamma0-1)) so that
/// P(e(X) <= p) = p^(gamma0-1), D ~ Bernoulli(e(X)), and for treated units
/// Y = kappa (1 - e(X)) + noise_scale (eps - 4)/sqrt(8) - c with eps ~ chi2(4).
/// Control outcomes are stored as 0.
struct DGPConfig {
  double gamma0 = 1.8;
  double kappa = 2.0;
  Demean demean = Demean::kAnalyticZero;
  /// 1 is the standardized chi-squared residual; 0 gives noiseless outcomes.
  double noise_scale = 1.0;

  void validate() const {
    if (!(gamma0 > 1.0)) throw DomainError("DGPConfig: gamma0 must exceed 1");
    if (!std::isfinite(kappa)) throw DomainError("DGPConfig: kappa must be finite");
  }

  double propensity(double x) const { return std::pow(x, 1.0 / (gamma0 - 1.0)); }
  /// E[e(X)] = (gamma0 - 1)/gamma0.
  double mean_propensity() const { return (gamma0 - 1.0) / gamma0; }
  /// E[e(X)^2] = (gamma0 - 1)/(gamma0 + 1).
  double mean_propensity_squared() const { return (gamma0 - 1.0) / (gamma0 + 1.0); }

  double demeaning_constant() const {
    switch (demean) {
      case Demean::kAnalyticZero: return kappa * (1.0 - mean_propensity());
      case Demean::kVerbatimText: return kappa * (mean_propensity() - mean_propensity_squared());
    }
    return 0.0;
  }

  double outcome_mean(double x) const { return kappa * (1.0 - propensity(x)) - demeaning_constant(); }
};

/// Average potential outcome under the design, in closed form.
inline double true_apo(const DGPConfig& config) {
  config.validate();
  return config.kappa * (1.0 - config.mean_propensity()) - config.demeaning_constant();
}

/// One draw of the design with oracle nuisances attached.
inline Dataset draw_dataset(const DGPConfig& config, std::size_t n, std::uint64_t seed) {
  config.validate();
  if (n < 1) throw DomainError("draw_dataset: n must be >= 1");
  Rng rng(seed);
  Dataset data(1);
  std::vector<double> e(n), mu(n), mu0(n, 0.0);
  const double c = config.demeaning_constant();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform();
    const double ei = config.propensity(x);
    const int d = rng.bernoulli(ei) ? 1 : 0;
    const double eps = (rng.chi_squared(4) - 4.0) / std::sqrt(8.0);
    const double y = d == 1 ? config.kappa * (1.0 - ei) + config.noise_scale * eps - c : 0.0;
    const double xi[1] = {x};
    data.add(d, y, xi);
    e[i] = std::max(ei, std::numeric_limits<double>::min());
    mu[i] = config.kappa * (1.0 - ei) - c;
  }
  data.set_true_propensity(std::move(e));
  data.set_true_outcome_mean(std::move(mu));
  data.set_true_control_mean(std::move(mu0));
  return data;
}

// ---------------------------------------------------------------------------
// Monte Carlo harness

enum class EstimatorKind { kAipw, kIpw, kClippedAipw, kClippedIpw, kTrimmedAipw, kTrimmedIpw };

inline const char* to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::kAipw: return "aipw";
    case EstimatorKind::kIpw: return "ipw";
    case EstimatorKind::kClippedAipw: return "clipped-aipw";
    case EstimatorKind::kClippedIpw: return "clipped-ipw";
    case EstimatorKind::kTrimmedAipw: return "trimmed-aipw";
    case EstimatorKind::kTrimmedIpw: return "trimmed-ipw";
  }
  return "?";
}

inline EstimatorKind parse_estimator(const std::string& name) {
  for (auto k : {EstimatorKind::kAipw, EstimatorKind::kIpw, EstimatorKind::kClippedAipw,
                 EstimatorKind::kClippedIpw, EstimatorKind::kTrimmedAipw, EstimatorKind::kTrimmedIpw}) {
    if (name == to_string(k)) return k;
  }
  throw InputError("unknown estimator '" + name + "'");
}

/// Which nuisances come from the design and which are estimated.
enum class NuisanceMode {
  kOracle,             // true e and mu
  kEstimated,          // cross-fitted e and mu
  kOracleOutcome,      // true mu, cross-fitted e
  kOraclePropensity    // true e, cross-fitted mu
};

inline const char* to_string(NuisanceMode m) {
  switch (m) {
    case NuisanceMode::kOracle: return "oracle";
    case NuisanceMode::kEstimated: return "estimated";
    case NuisanceMode::kOracleOutcome: return "oracle-outcome";
    case NuisanceMode::kOraclePropensity: return "oracle-propensity";
  }
  return "?";
}

inline NuisanceMode parse_nuisance_mode(const std::string& s) {
  for (auto m : {NuisanceMode::kOracle, NuisanceMode::kEstimated, NuisanceMode::kOracleOutcome,
                 NuisanceMode::kOraclePropensity}) {
    if (s == to_string(m)) return m;
  }
  throw InputError("unknown nuisance mode '" + s + "'");
}

struct MonteCarloConfig {
  DGPConfig dgp;
  std::size_t n = 1000;
  int reps = 100;
  std::vector<EstimatorKind> estimators = {EstimatorKind::kClippedAipw};
  NuisanceMode nuisance = NuisanceMode::kOracle;
  /// kFixed uses fixed_b; kAlgorithm1 runs the rule of thumb on (D, e_hat),
  /// by default with the outcome rate bound n^-1/5.
  ThresholdSelector threshold = [] {
    ThresholdSelector s;
    s.r_mu = RateBound::power(1.0, 0.2);
    return s;
  }();
  double alpha = 0.05;
  std::uint64_t master_seed = 1;
  int folds = 5;
  PropensityMethod propensity = PropensityMethod::logistic();
  OutcomeMethod outcome = OutcomeMethod::local_linear();
  /// Worker threads; 0 means hardware concurrency.
  int threads = 0;
};

struct ReplicationRow {
  int rep = 0;
  EstimatorKind estimator = EstimatorKind::kAipw;
  std::size_t n = 0;
  double b = 0.0;
  double psi_hat = 0.0;
  double sigma_hat = 0.0;
  double t = 0.0;
  double p = 0.0;
  Interval ci;
};

struct EstimatorSummary {
  std::size_t count = 0;
  double mean_psi = 0.0;
  double mean_bias = 0.0;
  /// Monte Carlo standard error of the mean estimate.
  double bias_mc_se = 0.0;
  double rmse = 0.0;
  double rejection_rate = 0.0;
  double rejection_mc_se = 0.0;
  double ks_pvalues = 0.0;
  double ks_pvalues_p = 1.0;
  double ks_tstats = 0.0;
  double ks_tstats_p = 1.0;
};

struct MonteCarloReport {
  MonteCarloConfig config;
  double truth = 0.0;
  std::vector<ReplicationRow> rows;
  std::map<EstimatorKind, EstimatorSummary> summary;
  std::vector<int> failed_reps;
  std::vector<std::uint64_t> rep_seeds;
};

/// Aggregates for one estimator, recomputed from its rows.
inline EstimatorSummary summarize(std::span<const ReplicationRow> rows, EstimatorKind kind,
                                  double truth, double alpha) {
  EstimatorSummary s;
  std::vector<double> psi, pv, ts;
  for (const auto& r : rows) {
    if (r.estimator != kind) continue;
    psi.push_back(r.psi_hat);
    pv.push_back(r.p);
    ts.push_back(r.t);
  }
  s.count = psi.size();
  if (psi.empty()) return s;
  const double m = static_cast<double>(psi.size());
  s.mean_psi = mean(psi);
  s.mean_bias = s.mean_psi - truth;
  s.bias_mc_se = stddev(psi, 1) / std::sqrt(m);
  double sq = 0.0;
  std::size_t reject = 0;
  for (std::size_t i = 0; i < psi.size(); ++i) {
    sq += (psi[i] - truth) * (psi[i] - truth);
    if (pv[i] < alpha) ++reject;
  }
  s.rmse = std::sqrt(sq / m);
  s.rejection_rate = static_cast<double>(reject) / m;
  s.rejection_mc_se = std::sqrt(s.rejection_rate * (1.0 - s.rejection_rate) / m);
  s.ks_pvalues = ks_statistic(pv, uniform01_cdf);
  s.ks_pvalues_p = ks_uniform_pvalue(s.ks_pvalues, pv.size());
  std::vector<double> finite_t;
  for (double t : ts) {
    if (std::isfinite(t)) finite_t.push_back(t);
  }
  if (!finite_t.empty()) {
    s.ks_tstats = ks_statistic(finite_t, [](double x) { return normal_cdf(x); });
    s.ks_tstats_p = ks_uniform_pvalue(s.ks_tstats, finite_t.size());
  }
  return s;
}

namespace detail {

struct ReplicationOutcome {
  std::vector<ReplicationRow> rows;
  bool failed = false;
};

inline ReplicationOutcome run_replication(const MonteCarloConfig& cfg, int rep, std::uint64_t seed,
                                          double truth) {
  ReplicationOutcome out;
  try {
    const Dataset data = draw_dataset(cfg.dgp, cfg.n, derive_seed(seed, 0));
    CrossFitNuisances nuis;
    if (cfg.nuisance == NuisanceMode::kOracle) {
      nuis = oracle_nuisances(data);
    } else {
      const PropensityMethod pm = cfg.nuisance == NuisanceMode::kOraclePropensity
                                      ? PropensityMethod::oracle()
                                      : cfg.propensity;
      const OutcomeMethod om = cfg.nuisance == NuisanceMode::kOracleOutcome
                                   ? OutcomeMethod::oracle()
                                   : cfg.outcome;
      nuis = cross_fit(data, assign_folds(data.size(), cfg.folds, derive_seed(seed, 1)), pm, om);
    }
    const ThresholdSelection sel =
        select_threshold(cfg.threshold, ThresholdMode::kClip, data.treatments(), nuis.e_hat, data.dim());
    const double b = sel.spec.b_lower;
    for (EstimatorKind kind : cfg.estimators) {
      ThresholdSpec spec;
      spec.provenance = sel.spec.provenance;
      switch (kind) {
        case EstimatorKind::kAipw:
        case EstimatorKind::kIpw: spec = ThresholdSpec::none(); break;
        case EstimatorKind::kClippedAipw:
        case EstimatorKind::kClippedIpw:
          spec.mode = ThresholdMode::kClip;
          spec.b_lower = b;
          break;
        case EstimatorKind::kTrimmedAipw:
        case EstimatorKind::kTrimmedIpw:
          spec.mode = ThresholdMode::kTrim;
          spec.b_lower = b;
          break;
      }
      const bool ipw = kind == EstimatorKind::kIpw || kind == EstimatorKind::kClippedIpw ||
                       kind == EstimatorKind::kTrimmedIpw;
      const Estimate est = ipw ? estimate_apo_ipw(data, nuis.e_hat, spec)
                               : estimate_apo(data, nuis, spec);
      ReplicationRow row;
      row.rep = rep;
      row.estimator = kind;
      row.n = cfg.n;
      row.b = spec.b_lower;
      row.psi_hat = est.psi_hat;
      row.sigma_hat = est.sigma_hat;
      row.t = est.sigma_hat > 0.0 ? (est.psi_hat - truth) / est.sigma_hat
                                  : (est.psi_hat == truth ? 0.0 : std::copysign(INFINITY, est.psi_hat - truth));
      row.p = two_sided_pvalue(est, truth);
      row.ci = wald_ci(est, cfg.alpha);
      out.rows.push_back(row);
    }
  } catch (const Error&) {
    out.rows.clear();
    out.failed = true;
  }
  return out;
}

}  // namespace detail

/// Runs `reps` independent replications. Replication r uses the seed
/// derive_seed(master_seed, r), so the report does not depend on the thread
/// count. Failed replications are excluded and listed; more than 5% failed
/// is an error.
inline MonteCarloReport run_monte_carlo(const MonteCarloConfig& cfg) {
  if (cfg.reps < 2) throw DomainError("run_monte_carlo: need reps >= 2");
  if (cfg.estimators.empty()) throw InputError("run_monte_carlo: no estimators requested");
  if (!(cfg.alpha > 0.0 && cfg.alpha < 0.5)) throw DomainError("run_monte_carlo: alpha must lie in (0, 0.5)");
  cfg.dgp.validate();
  MonteCarloReport report;
  report.config = cfg;
  report.truth = true_apo(cfg.dgp);
  const auto reps = static_cast<std::size_t>(cfg.reps);
  report.rep_seeds.resize(reps);
  for (std::size_t r = 0; r < reps; ++r) report.rep_seeds[r] = derive_seed(cfg.master_seed, r);

  std::vector<detail::ReplicationOutcome> outcomes(reps);
  unsigned workers = cfg.threads > 0 ? static_cast<unsigned>(cfg.threads)
                                     : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(reps));
  auto work = [&](unsigned w) {
    for (std::size_t r = w; r < reps; r += workers) {
      outcomes[r] = detail::run_replication(cfg, static_cast<int>(r), report.rep_seeds[r], report.truth);
    }
  };
  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }

  for (std::size_t r = 0; r < reps; ++r) {
    if (outcomes[r].failed) {
      report.failed_reps.push_back(static_cast<int>(r));
      continue;
    }
    report.rows.insert(report.rows.end(), outcomes[r].rows.begin(), outcomes[r].rows.end());
  }
  if (static_cast<double>(report.failed_reps.size()) > 0.05 * static_cast<double>(reps)) {
    throw NumericalError("run_monte_carlo: " + std::to_string(report.failed_reps.size()) +
                         " of " + std::to_string(reps) + " replications failed");
  }
  for (EstimatorKind kind : cfg.estimators) {
    report.summary[kind] = summarize(report.rows, kind, report.truth, cfg.alpha);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Regression-rate experiment

struct RateExperimentResult {
  std::vector<std::size_t> ns;
  std::vector<double> median_error;
  /// errors[i][r]: sup-norm error at ns[i], replication r.
  std::vector<std::vector<double>> errors;
  double slope = std::numeric_limits<double>::quiet_NaN();
  /// Slope undefined (some median error is 0 or non-finite).
  bool slope_undefined = false;
  double theoretical_slope = 0.0;
};

/// Exponent of the achievable rate n^(-b*/(2 b* + d)), b* = beta (1 - 1/gamma0).
inline double theoretical_rate_exponent(double beta_mu, double gamma0, std::size_t dim) {
  const double eff = beta_mu * (1.0 - 1.0 / gamma0);
  return -eff / (2.0 * eff + static_cast<double>(dim));
}

/// Least-squares slope of y on x.
inline double ols_slope(std::span<const double> x, std::span<const double> y) {
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

/// Sup-norm error of the adaptive regressor against the true outcome mean on
/// a 200-point grid over [0, 1], per sample size and replication; reports
/// the per-n medians and the log-log slope of median error on n.
inline RateExperimentResult rate_experiment(double beta_mu, double gamma0, std::span<const std::size_t> ns,
                                            int reps, std::uint64_t seed, double kappa = 2.0,
                                            double noise_scale = 1.0) {
  if (ns.size() < 3) throw DomainError("rate_experiment: need at least 3 sample sizes");
  for (std::size_t i = 1; i < ns.size(); ++i) {
    if (ns[i] <= ns[i - 1]) throw DomainError("rate_experiment: sample sizes must increase");
  }
  if (reps < 1) throw DomainError("rate_experiment: need reps >= 1");
  DGPConfig dgp;
  dgp.gamma0 = gamma0;
  dgp.kappa = kappa;
  dgp.noise_scale = noise_scale;
  dgp.validate();

  RateExperimentResult out;
  out.ns.assign(ns.begin(), ns.end());
  out.theoretical_slope = theoretical_rate_exponent(beta_mu, gamma0, 1);
  constexpr int kGrid = 200;
  for (std::size_t i = 0; i < ns.size(); ++i) {
    std::vector<double> errs;
    for (int r = 0; r < reps; ++r) {
      const auto s = derive_seed(derive_seed(seed, ns[i]), static_cast<std::uint64_t>(r));
      const Dataset data = draw_dataset(dgp, ns[i], s);
      const auto fit = fit_adaptive_regressor(data, beta_mu);
      double sup = 0.0;
      for (int g = 0; g < kGrid; ++g) {
        const double x[1] = {static_cast<double>(g) / (kGrid - 1)};
        sup = std::max(sup, std::abs(predict_adaptive(fit, x) - dgp.outcome_mean(x[0])));
      }
      errs.push_back(sup);
    }
    out.median_error.push_back(median(errs));
    out.errors.push_back(std::move(errs));
  }
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < ns.size(); ++i) {
    if (!(out.median_error[i] > 0.0) || !std::isfinite(out.median_error[i])) {
      out.slope_undefined = true;
      return out;
    }
    lx.push_back(std::log(static_cast<double>(ns[i])));
    ly.push_back(std::log(out.median_error[i]));
  }
  out.slope = ols_slope(lx, ly);
  return out;
}

// ---------------------------------------------------------------------------
// Inductive grouping sequence

struct GroupingStep {
  double h = 0.0;
  double m = 0.0;
  double log_m = 0.0;
};

struct GroupingSequence {
  std::vector<GroupingStep> steps;
  /// m^(k) exceeded 1e300 and the sequence was cut there.
  bool truncated = false;
};

/// h^(1) = n^(-1/E), E = 2 beta + d gamma0/(gamma0 - 1);
/// m^(k) = exp(2^-k delta (h^(k)/h^(1))^(-2 beta));
/// h^(k+1) = (n (m^(k)/delta)^(gamma0 - 1))^(-1/E).
/// Computed in log space.
inline GroupingSequence inductive_sequence(double delta, std::size_t n, double beta_mu, std::size_t dim,
                                           double gamma0, int k_max) {
  if (!(delta > 1.0)) throw DomainError("inductive_sequence: delta must exceed 1");
  if (k_max < 1) throw DomainError("inductive_sequence: k_max must be >= 1");
  if (!(gamma0 > 1.0) || !(beta_mu > 0.0)) throw DomainError("inductive_sequence: invalid parameters");
  const double dd = static_cast<double>(dim);
  const double expo = 2.0 * beta_mu + dd * gamma0 / (gamma0 - 1.0);
  const double log_n = std::log(static_cast<double>(n));
  const double log_h1 = -log_n / expo;
  const double log_cap = std::log(1e300);
  GroupingSequence out;
  double log_h = log_h1;
  for (int k = 1; k <= k_max; ++k) {
    const double log_m = std::ldexp(delta, -k) * std::exp(-2.0 * beta_mu * (log_h - log_h1));
    if (!(log_m <= log_cap)) {
      out.truncated = true;
      break;
    }
    out.steps.push_back({std::exp(log_h), std::exp(log_m), log_m});
    log_h = -(log_n + (gamma0 - 1.0) * (log_m - std::log(delta))) / expo;
  }
  return out;
}

}  // namespace drthresh
