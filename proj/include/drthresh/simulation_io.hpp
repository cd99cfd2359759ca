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

#include <cstdio>
#include <fstream>
#include <string>

#include <json.hpp>

#include "drthresh/core/error.hpp"
#include "drthresh/simulation.hpp"

namespace drthresh {

/// Column order of the per-replication CSV.
inline constexpr const char* kReplicationColumns = "rep,estimator,n,b,psi_hat,sigma_hat,t,p";

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// One row per replication per estimator.
inline std::string replications_csv(const MonteCarloReport& report) {
  std::string out = kReplicationColumns;
  out += '\n';
  for (const auto& r : report.rows) {
    out += std::to_string(r.rep) + ',' + to_string(r.estimator) + ',' + std::to_string(r.n) + ',' +
           format_double(r.b) + ',' + format_double(r.psi_hat) + ',' + format_double(r.sigma_hat) + ',' +
           format_double(r.t) + ',' + format_double(r.p) + '\n';
  }
  return out;
}

inline nlohmann::json summary_json(const MonteCarloReport& report) {
  const auto& c = report.config;
  nlohmann::json cfg = {
      {"gamma0", c.dgp.gamma0},
      {"kappa", c.dgp.kappa},
      {"demean", c.dgp.demean == Demean::kAnalyticZero ? "analytic_zero" : "verbatim_text"},
      {"n", c.n},
      {"reps", c.reps},
      {"nuisance", to_string(c.nuisance)},
      {"alpha", c.alpha},
      {"folds", c.folds},
      {"propensity", c.propensity.describe()},
      {"outcome", c.outcome.describe()},
  };
  nlohmann::json thr;
  if (c.threshold.rule == ThresholdRule::kFixed) {
    thr = {{"rule", "fixed"}, {"b", c.threshold.fixed_b}};
  } else {
    auto rm = c.threshold.r_mu.at(c.n);
    auto re = c.threshold.r_e.at(c.n);
    thr = {{"rule", "algorithm1"},
           {"r_mu", rm ? nlohmann::json(*rm) : nlohmann::json(nullptr)},
           {"r_e", re ? nlohmann::json(*re) : nlohmann::json(nullptr)}};
  }
  cfg["threshold"] = thr;
  nlohmann::json estimators = nlohmann::json::array();
  for (EstimatorKind k : c.estimators) estimators.push_back(to_string(k));
  cfg["estimators"] = estimators;

  nlohmann::json summary = nlohmann::json::object();
  for (const auto& [kind, s] : report.summary) {
    summary[to_string(kind)] = {
        {"count", s.count},
        {"mean_psi", s.mean_psi},
        {"mean_bias", s.mean_bias},
        {"bias_mc_se", s.bias_mc_se},
        {"rmse", s.rmse},
        {"rejection_rate", s.rejection_rate},
        {"rejection_mc_se", s.rejection_mc_se},
        {"ks_pvalues", {{"statistic", s.ks_pvalues}, {"p_value", s.ks_pvalues_p}}},
        {"ks_tstats", {{"statistic", s.ks_tstats}, {"p_value", s.ks_tstats_p}}},
    };
  }
  return {
      {"schema_version", 1},
      {"command", "simulate"},
      {"seed", c.master_seed},
      {"seed_derivation", "replication r uses derive_seed(seed, r)"},
      {"truth", report.truth},
      {"config", cfg},
      {"failed_reps", report.failed_reps},
      {"summary", summary},
  };
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << text;
  if (!out) throw InputError("write to '" + path + "' failed");
}

}  // namespace drthresh
