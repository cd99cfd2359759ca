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
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "drthresh/core/error.hpp"
#include "drthresh/core/types.hpp"

namespace drthresh::cli {

/// Input error tied to a location in a CSV file. `row` counts data rows from
/// 1 (the header is row 0); absent when the problem is file-wide.
class IngestError : public InputError {
 public:
  IngestError(const std::string& what, std::optional<std::size_t> row, std::string column)
      : InputError(what), row_(row), column_(std::move(column)) {}
  std::optional<std::size_t> row() const { return row_; }
  const std::string& column() const { return column_; }

 private:
  std::optional<std::size_t> row_;
  std::string column_;
};

struct IngestOptions {
  std::string treatment_col = "d";
  std::string outcome_col = "y";
  /// Empty means "auto": every numeric column other than treatment and outcome.
  std::vector<std::string> covariate_cols;
  /// Numeric columns read on the side (e.g. supplied propensities); never covariates.
  std::vector<std::string> extra_cols;
};

struct IngestResult {
  Dataset data;
  /// Names of the columns of the covariate matrix, after one-hot encoding.
  std::vector<std::string> covariate_names;
  /// Columns left out by "auto" because they are not numeric.
  std::vector<std::string> skipped_columns;
  /// Values of IngestOptions::extra_cols, by name.
  std::map<std::string, std::vector<double>> extra;
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

// One CSV record; double quotes group fields and "" escapes a quote.
inline std::vector<std::string> split_record(std::string_view line, std::size_t row) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(field));
      field.clear();
    } else {
      field += c;
    }
  }
  if (quoted) throw IngestError("unterminated quoted field in row " + std::to_string(row), row, "");
  out.push_back(trim(field));
  return out;
}

inline bool is_missing(const std::string& v) {
  return v.empty() || v == "NA" || v == "NaN" || v == "nan" || v == "null";
}

inline std::optional<double> parse_number(const std::string& v) {
  double out = 0.0;
  const char* first = v.data();
  const char* last = v.data() + v.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last || !std::isfinite(out)) return std::nullopt;
  return out;
}

inline std::optional<int> parse_treatment(std::string v) {
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "1" || v == "true") return 1;
  if (v == "0" || v == "false") return 0;
  return std::nullopt;
}

}  // namespace detail

/// Parses CSV text (header row required) into a Dataset. Row order is kept.
/// Numeric covariates are used as they are; non-numeric ones named
/// explicitly are one-hot encoded against their first level in sorted order.
inline IngestResult ingest_csv_text(std::string_view text, const IngestOptions& opt) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header;
  {
    std::size_t pos = 0, line_no = 0;
    bool have_header = false;
    while (pos <= text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string_view::npos) end = text.size();
      std::string_view line = text.substr(pos, end - pos);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      pos = end + 1;
      if (detail::trim(line).empty()) {
        if (end == text.size()) break;
        continue;
      }
      if (!have_header) {
        if (line_no == 0 && line.size() >= 3 && line.substr(0, 3) == "\xEF\xBB\xBF") line.remove_prefix(3);
        header = detail::split_record(line, 0);
        have_header = true;
      } else {
        const std::size_t row = rows.size() + 1;
        auto fields = detail::split_record(line, row);
        if (fields.size() != header.size()) {
          throw IngestError("row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                                " fields, header has " + std::to_string(header.size()),
                            row, "");
        }
        rows.push_back(std::move(fields));
      }
      ++line_no;
      if (end == text.size()) break;
    }
  }
  if (header.empty()) throw IngestError("empty file: no header row", std::nullopt, "");
  if (rows.empty()) throw IngestError("no data rows after the header", std::nullopt, "");

  std::map<std::string, std::size_t> index;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j].empty()) throw IngestError("header column " + std::to_string(j + 1) + " is unnamed", 0, "");
    if (!index.emplace(header[j], j).second) {
      throw IngestError("duplicate column '" + header[j] + "'", 0, header[j]);
    }
  }
  auto column = [&](const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw IngestError("missing column '" + name + "'", std::nullopt, name);
    return it->second;
  };
  const std::size_t jd = column(opt.treatment_col);
  const std::size_t jy = column(opt.outcome_col);
  if (jd == jy) throw IngestError("treatment and outcome are the same column", std::nullopt, opt.treatment_col);
  std::vector<std::size_t> extra_cols;
  for (const auto& name : opt.extra_cols) {
    const std::size_t j = column(name);
    if (j == jd || j == jy) throw IngestError("column '" + name + "' is already treatment/outcome", std::nullopt, name);
    extra_cols.push_back(j);
  }
  auto is_extra = [&](std::size_t j) {
    return std::find(extra_cols.begin(), extra_cols.end(), j) != extra_cols.end();
  };

  auto numeric_column = [&](std::size_t j) {
    for (const auto& r : rows) {
      if (!detail::is_missing(r[j]) && !detail::parse_number(r[j])) return false;
    }
    return true;
  };

  IngestResult out;
  std::vector<std::size_t> cov_cols;
  if (opt.covariate_cols.empty()) {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (j == jd || j == jy || is_extra(j)) continue;
      if (numeric_column(j)) {
        cov_cols.push_back(j);
      } else {
        out.skipped_columns.push_back(header[j]);
      }
    }
  } else {
    for (const auto& name : opt.covariate_cols) {
      const std::size_t j = column(name);
      if (j == jd || j == jy || is_extra(j)) {
        throw IngestError("column '" + name + "' cannot be both a covariate and treatment/outcome/extra",
                          std::nullopt, name);
      }
      cov_cols.push_back(j);
    }
  }

  // Missing cells in any used column are reported together.
  std::vector<std::string> missing;
  std::optional<std::size_t> first_row;
  std::string first_col;
  std::vector<std::size_t> used = {jd, jy};
  used.insert(used.end(), cov_cols.begin(), cov_cols.end());
  used.insert(used.end(), extra_cols.begin(), extra_cols.end());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j : used) {
      if (detail::is_missing(rows[i][j])) {
        if (!first_row) {
          first_row = i + 1;
          first_col = header[j];
        }
        if (missing.size() < 10) missing.push_back("row " + std::to_string(i + 1) + " column '" + header[j] + "'");
      }
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing values at ";
    for (std::size_t k = 0; k < missing.size(); ++k) msg += (k ? ", " : "") + missing[k];
    throw IngestError(msg, first_row, first_col);
  }

  // Encoders per covariate column.
  struct Encoder {
    std::size_t col;
    bool numeric;
    std::vector<std::string> levels;  // sorted; the first is the reference
  };
  std::vector<Encoder> enc;
  for (std::size_t j : cov_cols) {
    Encoder e{j, numeric_column(j), {}};
    if (e.numeric) {
      out.covariate_names.push_back(header[j]);
    } else {
      std::set<std::string> lv;
      for (const auto& r : rows) lv.insert(r[j]);
      e.levels.assign(lv.begin(), lv.end());
      for (std::size_t k = 1; k < e.levels.size(); ++k) out.covariate_names.push_back(header[j] + "=" + e.levels[k]);
    }
    enc.push_back(std::move(e));
  }

  std::vector<Observation> obs;
  obs.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    Observation o;
    const auto d = detail::parse_treatment(r[jd]);
    if (!d) {
      throw IngestError("row " + std::to_string(i + 1) + ": treatment '" + r[jd] +
                            "' is not one of 0, 1, true, false",
                        i + 1, header[jd]);
    }
    o.d = *d;
    const auto y = detail::parse_number(r[jy]);
    if (!y) {
      throw IngestError("row " + std::to_string(i + 1) + ": outcome '" + r[jy] + "' is not numeric", i + 1,
                        header[jy]);
    }
    o.y = *y;
    for (const auto& e : enc) {
      if (e.numeric) {
        o.x.push_back(*detail::parse_number(r[e.col]));
      } else {
        for (std::size_t k = 1; k < e.levels.size(); ++k) o.x.push_back(r[e.col] == e.levels[k] ? 1.0 : 0.0);
      }
    }
    obs.push_back(std::move(o));
  }
  for (std::size_t k = 0; k < extra_cols.size(); ++k) {
    std::vector<double> v;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto x = detail::parse_number(rows[i][extra_cols[k]]);
      if (!x) {
        throw IngestError("row " + std::to_string(i + 1) + ": '" + rows[i][extra_cols[k]] + "' is not numeric",
                          i + 1, opt.extra_cols[k]);
      }
      v.push_back(*x);
    }
    out.extra[opt.extra_cols[k]] = std::move(v);
  }
  if (out.covariate_names.empty()) {
    throw IngestError("no covariates: need at least one numeric or encodable column", std::nullopt, "");
  }
  out.data = Dataset::from_observations(obs);
  return out;
}

inline IngestResult ingest_csv(const std::string& path, const IngestOptions& opt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open '" + path + "'", std::nullopt, "");
  std::ostringstream buf;
  buf << in.rdbuf();
  return ingest_csv_text(buf.str(), opt);
}

}  // namespace drthresh::cli
