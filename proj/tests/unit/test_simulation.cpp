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

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "drthresh/core/rng.hpp"
#include "drthresh/core/stats.hpp"
#include "drthresh/simulation.hpp"
#include "drthresh/simulation_io.hpp"

using namespace drthresh;

// ---------------------------------------------------------------------------
// Design

TEST(Dgp, PropensityAtHalf) {
  DGPConfig dgp;
  EXPECT_NEAR(dgp.propensity(0.5), 0.420448, 1e-6);
}

TEST(Dgp, StandardizedChiSquaredMoments) {
  Rng rng(101);
  const int m = 1000000;
  double s = 0.0, ss = 0.0;
  for (int i = 0; i < m; ++i) {
    const double v = (rng.chi_squared(4) - 4.0) / std::sqrt(8.0);
    s += v;
    ss += v * v;
  }
  const double mu = s / m;
  EXPECT_NEAR(mu, 0.0, 0.01);
  EXPECT_NEAR(ss / m - mu * mu, 1.0, 0.02);
}

TEST(Dgp, DemeaningConstants) {
  DGPConfig dgp;
  EXPECT_NEAR(dgp.demeaning_constant(), 2.0 * (1.0 - 1.0 / 2.25), 1e-12);
  EXPECT_NEAR(dgp.demeaning_constant(), 1.111111, 1e-6);
  dgp.demean = Demean::kVerbatimText;
  EXPECT_NEAR(dgp.demeaning_constant(), 2.0 * (1.0 / 2.25 - 1.0 / 3.5), 1e-12);
}

TEST(Dgp, TrueApo) {
  for (double g : {1.3, 1.8, 3.0}) {
    for (double k : {-1.0, 2.0, 5.0}) {
      DGPConfig dgp;
      dgp.gamma0 = g;
      dgp.kappa = k;
      EXPECT_NEAR(true_apo(dgp), 0.0, 1e-14);
    }
  }
  DGPConfig v;
  v.demean = Demean::kVerbatimText;
  EXPECT_NEAR(true_apo(v), 2.0 * ((1.0 - 1.0 / 2.25) - (1.0 / 2.25 - 1.0 / 3.5)), 1e-12);
  EXPECT_NEAR(true_apo(v), 0.793651, 1e-6);
  v.kappa = 0.0;
  EXPECT_EQ(true_apo(v), 0.0);
  DGPConfig z;
  z.kappa = 0.0;
  EXPECT_EQ(true_apo(z), 0.0);
}

TEST(Dgp, TrueApoMatchesNumericIntegral) {
  // Midpoint rule on E[mu(X)] with X ~ U(0, 1).
  for (auto mode : {Demean::kAnalyticZero, Demean::kVerbatimText}) {
    DGPConfig dgp;
    dgp.demean = mode;
    const int m = 200000;
    double s = 0.0;
    for (int i = 0; i < m; ++i) s += dgp.outcome_mean((i + 0.5) / m);
    EXPECT_NEAR(s / m, true_apo(dgp), 1e-6);
  }
}

TEST(Dgp, DeterministicAndAnnotated) {
  const DGPConfig dgp;
  const Dataset a = draw_dataset(dgp, 300, 5);
  const Dataset b = draw_dataset(dgp, 300, 5);
  ASSERT_TRUE(a.true_propensity() && a.true_outcome_mean() && a.true_control_mean());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.x(i)[0], b.x(i)[0]);
    EXPECT_EQ(a.d(i), b.d(i));
    EXPECT_EQ(a.y(i), b.y(i));
    EXPECT_EQ((*a.true_propensity())[i], dgp.propensity(a.x(i)[0]));
    if (a.d(i) == 0) {
      EXPECT_EQ(a.y(i), 0.0);
    }
  }
}

TEST(Dgp, TailLawAndTreatedFraction) {
  const DGPConfig dgp;
  const std::size_t n = 1000000;
  const Dataset data = draw_dataset(dgp, n, 2718);
  const auto& e = *data.true_propensity();
  for (double pi : {0.01, 0.1, 0.5}) {
    const double p = std::pow(pi, dgp.gamma0 - 1.0);
    const double hits = static_cast<double>(std::count_if(e.begin(), e.end(), [&](double v) { return v <= pi; }));
    const double se = std::sqrt(p * (1 - p) / n);
    EXPECT_NEAR(hits / n, p, 3.0 * se) << "pi " << pi;
  }
  const double frac = static_cast<double>(data.treated_count()) / n;
  const double q = dgp.mean_propensity();
  EXPECT_NEAR(q, 4.0 / 9.0, 1e-15);
  EXPECT_NEAR(frac, q, 3.0 * std::sqrt(q * (1 - q) / n));
}

// ---------------------------------------------------------------------------
// Monte Carlo harness

namespace {

MonteCarloConfig oracle_config(int reps, std::vector<EstimatorKind> kinds) {
  MonteCarloConfig cfg;
  cfg.n = 500;
  cfg.reps = reps;
  cfg.estimators = std::move(kinds);
  cfg.nuisance = NuisanceMode::kOracle;
  cfg.threshold.rule = ThresholdRule::kFixed;
  cfg.threshold.fixed_b = 0.0;
  cfg.threads = 1;
  return cfg;
}

}  // namespace

TEST(MonteCarlo, ZeroClipEqualsPlainOracleAipw) {
  auto cfg = oracle_config(5, {EstimatorKind::kClippedAipw, EstimatorKind::kAipw});
  const auto report = run_monte_carlo(cfg);
  ASSERT_EQ(report.rows.size(), 10u);
  for (std::size_t i = 0; i < report.rows.size(); i += 2) {
    EXPECT_EQ(report.rows[i].psi_hat, report.rows[i + 1].psi_hat);
    EXPECT_EQ(report.rows[i].sigma_hat, report.rows[i + 1].sigma_hat);
  }
  // Replication r draws its data from derive_seed(derive_seed(master, r), 0).
  const Dataset d0 = draw_dataset(cfg.dgp, cfg.n, derive_seed(derive_seed(cfg.master_seed, 0), 0));
  const auto est = estimate_apo(d0, oracle_nuisances(d0), ThresholdSpec::none());
  EXPECT_EQ(report.rows[1].psi_hat, est.psi_hat);
}

TEST(MonteCarlo, BitwiseReproducibleAcrossThreadCounts) {
  auto cfg = oracle_config(2, {EstimatorKind::kClippedAipw});
  const auto a = run_monte_carlo(cfg);
  const auto b = run_monte_carlo(cfg);
  EXPECT_EQ(replications_csv(a), replications_csv(b));

  MonteCarloConfig est;
  est.n = 400;
  est.reps = 6;
  est.nuisance = NuisanceMode::kEstimated;
  est.estimators = {EstimatorKind::kClippedAipw, EstimatorKind::kTrimmedIpw};
  est.threads = 1;
  const auto serial = run_monte_carlo(est);
  est.threads = 3;
  const auto parallel = run_monte_carlo(est);
  EXPECT_EQ(replications_csv(serial), replications_csv(parallel));
  EXPECT_EQ(summary_json(serial).dump(), summary_json(parallel).dump());
}

TEST(MonteCarlo, UnthresholdedOracleUnbiased) {
  auto cfg = oracle_config(2000, {EstimatorKind::kAipw});
  const auto report = run_monte_carlo(cfg);
  const auto& s = report.summary.at(EstimatorKind::kAipw);
  EXPECT_EQ(s.count, 2000u);
  EXPECT_LT(std::abs(s.mean_bias), 4.0 * s.bias_mc_se) << s.mean_bias << " vs " << s.bias_mc_se;
}

TEST(MonteCarlo, PValueCiDualityPerRow) {
  auto cfg = oracle_config(300, {EstimatorKind::kClippedAipw, EstimatorKind::kTrimmedIpw, EstimatorKind::kIpw});
  cfg.threshold.rule = ThresholdRule::kAlgorithm1;
  const auto report = run_monte_carlo(cfg);
  for (const auto& r : report.rows) {
    EXPECT_EQ(r.p < cfg.alpha, !r.ci.contains(report.truth)) << "rep " << r.rep << " p " << r.p;
  }
}

TEST(MonteCarlo, SummaryRecomputedFromRows) {
  auto cfg = oracle_config(200, {EstimatorKind::kClippedAipw, EstimatorKind::kClippedIpw});
  cfg.threshold.rule = ThresholdRule::kAlgorithm1;
  const auto report = run_monte_carlo(cfg);
  for (EstimatorKind kind : cfg.estimators) {
    std::vector<double> psi, p;
    for (const auto& r : report.rows) {
      if (r.estimator != kind) continue;
      psi.push_back(r.psi_hat);
      p.push_back(r.p);
    }
    const auto& s = report.summary.at(kind);
    double sum = 0.0, sq = 0.0;
    int rej = 0;
    for (std::size_t i = 0; i < psi.size(); ++i) {
      sum += psi[i];
      sq += (psi[i] - report.truth) * (psi[i] - report.truth);
      rej += p[i] < cfg.alpha;
    }
    EXPECT_EQ(s.count, psi.size());
    EXPECT_NEAR(s.mean_bias, sum / psi.size() - report.truth, 1e-12);
    EXPECT_NEAR(s.rmse, std::sqrt(sq / psi.size()), 1e-12);
    EXPECT_EQ(s.rejection_rate, static_cast<double>(rej) / psi.size());
    // KS of p-values by direct sup over the sorted sample.
    std::sort(p.begin(), p.end());
    double dmax = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      dmax = std::max({dmax, (i + 1.0) / p.size() - p[i], p[i] - static_cast<double>(i) / p.size()});
    }
    EXPECT_NEAR(s.ks_pvalues, dmax, 1e-12);
  }
}

TEST(MonteCarlo, AlgorithmOneThresholdRecorded) {
  MonteCarloConfig cfg = oracle_config(3, {EstimatorKind::kClippedAipw, EstimatorKind::kAipw});
  cfg.threshold = MonteCarloConfig{}.threshold;
  const auto report = run_monte_carlo(cfg);
  const Dataset d0 = draw_dataset(cfg.dgp, cfg.n, derive_seed(derive_seed(cfg.master_seed, 0), 0));
  const auto nu = oracle_nuisances(d0);
  const auto choice = rule_of_thumb_threshold(d0.treatments(), nu.e_hat, RateBound::power(1.0, 0.2));
  EXPECT_EQ(report.rows[0].b, choice.b);
  EXPECT_EQ(report.rows[1].b, 0.0);
}

TEST(MonteCarlo, TooManyFailuresIsError) {
  MonteCarloConfig cfg;
  cfg.n = 3;  // fewer rows than folds: every replication fails
  cfg.reps = 4;
  cfg.nuisance = NuisanceMode::kEstimated;
  cfg.threads = 1;
  EXPECT_THROW(run_monte_carlo(cfg), NumericalError);
  cfg.reps = 1;
  EXPECT_THROW(run_monte_carlo(cfg), DomainError);
}

TEST(MonteCarlo, ClippedIpwMoreBiasedThanClippedAipw) {
  MonteCarloConfig cfg;
  cfg.n = 4000;
  cfg.reps = 100;
  cfg.nuisance = NuisanceMode::kOraclePropensity;
  cfg.estimators = {EstimatorKind::kClippedAipw, EstimatorKind::kClippedIpw};
  const auto report = run_monte_carlo(cfg);
  const double aipw = report.summary.at(EstimatorKind::kClippedAipw).mean_bias;
  const double ipw = report.summary.at(EstimatorKind::kClippedIpw).mean_bias;
  EXPECT_GT(std::abs(ipw), std::abs(aipw));
}

// ---------------------------------------------------------------------------
// Output schemas

TEST(SimulationIo, CsvAndJsonShape) {
  auto cfg = oracle_config(4, {EstimatorKind::kClippedAipw, EstimatorKind::kIpw});
  const auto report = run_monte_carlo(cfg);
  const std::string csv = replications_csv(report);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "rep,estimator,n,b,psi_hat,sigma_hat,t,p");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 7);
  }
  EXPECT_EQ(rows, 8);
  const auto j = summary_json(report);
  EXPECT_EQ(j["schema_version"], 1);
  EXPECT_EQ(j["seed"], cfg.master_seed);
  EXPECT_TRUE(j["summary"].contains("clipped-aipw"));
  EXPECT_TRUE(j["summary"]["ipw"].contains("ks_pvalues"));
  EXPECT_EQ(j["config"]["threshold"]["rule"], "fixed");
}

TEST(SimulationIo, DoublesRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 12345.678901234567}) {
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
}

// ---------------------------------------------------------------------------
// Rate experiment

TEST(RateExperiment, TheoreticalExponent) {
  EXPECT_NEAR(theoretical_rate_exponent(1.0, 2.0, 1), -0.25, 1e-15);
}

TEST(RateExperiment, NoiselessZeroMeanHasUndefinedSlope) {
  const std::vector<std::size_t> ns = {200, 400, 800};
  const auto r = rate_experiment(1.0, 2.0, ns, 3, 1, 0.0, 0.0);
  for (double m : r.median_error) EXPECT_EQ(m, 0.0);
  EXPECT_TRUE(r.slope_undefined);
  EXPECT_TRUE(std::isnan(r.slope));
}

TEST(RateExperiment, MediansStableWhenRepsDouble) {
  const std::vector<std::size_t> ns = {500, 1000, 2000};
  const auto small = rate_experiment(1.0, 2.0, ns, 20, 9);
  const auto large = rate_experiment(1.0, 2.0, ns, 40, 9);
  Rng rng(3);
  for (std::size_t i = 0; i < ns.size(); ++i) {
    // Bootstrap SD of the 40-rep median.
    const auto& errs = large.errors[i];
    std::vector<double> boot;
    for (int b = 0; b < 400; ++b) {
      std::vector<double> s(errs.size());
      for (auto& v : s) v = errs[rng.uniform_index(errs.size())];
      boot.push_back(median(s));
    }
    const double band = 3.0 * std::sqrt(2.0) * stddev(boot, 1);
    EXPECT_LT(std::abs(small.median_error[i] - large.median_error[i]), band) << "n " << ns[i];
  }
}

TEST(RateExperiment, Preconditions) {
  const std::vector<std::size_t> two = {100, 200};
  const std::vector<std::size_t> unsorted = {100, 300, 200};
  EXPECT_THROW(rate_experiment(1.0, 2.0, two, 2, 1), DomainError);
  EXPECT_THROW(rate_experiment(1.0, 2.0, unsorted, 2, 1), DomainError);
}

TEST(RateExperiment, OlsSlopeOfExactPowerLaw) {
  std::vector<double> x, y;
  for (double n : {1e3, 4e3, 1.6e4}) {
    x.push_back(std::log(n));
    y.push_back(std::log(3.0 * std::pow(n, -0.3)));
  }
  EXPECT_NEAR(ols_slope(x, y), -0.3, 1e-12);
}

// ---------------------------------------------------------------------------
// Inductive grouping sequence

TEST(InductiveSequence, FirstStep) {
  const auto s = inductive_sequence(3.0, 10000, 1.0, 1, 2.0, 1);
  ASSERT_EQ(s.steps.size(), 1u);
  EXPECT_NEAR(s.steps[0].h, 0.1, 1e-12);
  for (double delta : {1.5, 3.0, 40.0}) {
    const auto t = inductive_sequence(delta, 5000, 1.3, 1, 1.7, 1);
    EXPECT_NEAR(t.steps[0].m, std::exp(delta / 2.0), 1e-9 * std::exp(delta / 2.0));
  }
}

TEST(InductiveSequence, MatchesDirectRecursion) {
  const double delta = 100.0, beta = 1.0, g = 2.0;
  const double n = 1e6;
  const auto s = inductive_sequence(delta, static_cast<std::size_t>(n), beta, 1, g, 6);
  const double expo = 2 * beta + g / (g - 1);
  const double h1 = std::pow(n, -1.0 / expo);
  double h = h1;
  for (std::size_t k = 0; k < s.steps.size(); ++k) {
    const double m = std::exp(std::ldexp(delta, -static_cast<int>(k + 1)) * std::pow(h / h1, -2 * beta));
    EXPECT_NEAR(s.steps[k].h, h, 1e-12 * h) << k;
    EXPECT_NEAR(s.steps[k].log_m, std::log(m), 1e-9 * std::log(m)) << k;
    h = std::pow(n * std::pow(m / delta, g - 1), -1.0 / expo);
  }
}

TEST(InductiveSequence, GeometricDecay) {
  // h^(k+1)/h^(k) <= h^(2)/h^(1) over every computed step, delta = 100.
  struct Case {
    std::size_t n;
    double beta;
    std::size_t dim;
    double gamma0;
    std::size_t min_steps;
  };
  for (const Case& c : {Case{10000, 1.0, 1, 2.0, 1}, Case{10000, 0.5, 2, 1.3, 3}}) {
    const auto s = inductive_sequence(100.0, c.n, c.beta, c.dim, c.gamma0, 40);
    ASSERT_GE(s.steps.size(), c.min_steps);
    if (s.steps.size() < 2) {
      EXPECT_TRUE(s.truncated);  // m^(2) overflows: nothing further to compare
      continue;
    }
    const double first_ratio = s.steps[1].h / s.steps[0].h;
    EXPECT_LT(first_ratio, 1.0);
    for (std::size_t k = 1; k + 1 < s.steps.size(); ++k) {
      EXPECT_LE(s.steps[k + 1].h / s.steps[k].h, first_ratio * (1 + 1e-12)) << k;
    }
  }
}

TEST(InductiveSequence, TruncatesOnOverflow) {
  const auto s = inductive_sequence(100.0, 10000, 1.0, 1, 2.0, 50);
  EXPECT_TRUE(s.truncated);
  EXPECT_LT(s.steps.size(), 50u);
  for (const auto& st : s.steps) EXPECT_LE(st.log_m, std::log(1e300));
}
