#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "heca/error.hpp"
#include "heca/numeric.hpp"

namespace heca {

// Expert forecasts (rows = periods, columns = experts) with a reporting mask
// and the aligned realized target. Unrealized targets are NaN and may only
// appear at the tail.
struct ForecastPanel {
  std::vector<std::string> periods;
  std::vector<std::string> experts;
  Eigen::MatrixXd values;  // NaN where not reported
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> mask;
  Eigen::VectorXd target;

  std::size_t num_periods() const { return periods.size(); }
  std::size_t num_experts() const { return experts.size(); }
  bool realized(std::size_t t) const { return t < static_cast<std::size_t>(target.size()) && std::isfinite(target[t]); }
  bool complete() const { return mask.size() == 0 || mask.all(); }

  // Number of leading periods whose target is realized.
  std::size_t realized_count() const {
    std::size_t n = 0;
    while (n < num_periods() && realized(n)) ++n;
    return n;
  }
};

struct PanelFormat {
  char delimiter = ',';
  std::string period_column = "period";
  std::string target_column = "target";
};

// Inclusive row range [first, last].
struct PeriodSpan {
  std::size_t first = 0;
  std::size_t last = 0;
  std::size_t size() const { return last - first + 1; }
};

struct PanelDiagnostics {
  Eigen::VectorXd error_variances;
  Eigen::MatrixXd error_correlations;
  double condition_number = 1.0;
};

// "YYYYQn" -> year * 4 + (n - 1). Anything else is an opaque label.
inline std::optional<std::int64_t> parse_quarter(const std::string& label) {
  if (label.size() < 6) return std::nullopt;
  const std::size_t q = label.size() - 2;
  if (label[q] != 'Q' && label[q] != 'q') return std::nullopt;
  const char digit = label[q + 1];
  if (digit < '1' || digit > '4') return std::nullopt;
  std::int64_t year = 0;
  for (std::size_t i = 0; i < q; ++i) {
    if (label[i] < '0' || label[i] > '9') return std::nullopt;
    year = year * 10 + (label[i] - '0');
  }
  return year * 4 + (digit - '1');
}

inline std::string quarter_label(std::int64_t key) {
  return std::to_string(key / 4) + "Q" + std::to_string(key % 4 + 1);
}

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> fields;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = line.find(delim, pos);
    std::string f = line.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    const std::size_t b = f.find_first_not_of(" \t\r");
    const std::size_t e = f.find_last_not_of(" \t\r");
    fields.push_back(b == std::string::npos ? std::string() : f.substr(b, e - b + 1));
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return fields;
}

}  // namespace detail

// Checks the panel invariants: unique, ordered periods; finite reported values;
// realized targets forming a prefix.
inline void validate_panel(const ForecastPanel& p) {
  const auto T = static_cast<Eigen::Index>(p.num_periods());
  const auto M = static_cast<Eigen::Index>(p.num_experts());
  if (T == 0) throw ValidationError("no data rows");
  if (M == 0) throw ValidationError("no expert columns");
  if (p.values.rows() != T || p.values.cols() != M || p.mask.rows() != T || p.mask.cols() != M ||
      p.target.size() != T)
    throw ValidationError("panel shape mismatch");

  std::unordered_set<std::string> seen;
  bool all_quarters = true;
  std::vector<std::int64_t> keys;
  for (const auto& label : p.periods) {
    if (!seen.insert(label).second) throw ValidationError("duplicate period label '" + label + "'");
    auto k = parse_quarter(label);
    if (!k) all_quarters = false;
    else keys.push_back(*k);
  }
  if (all_quarters) {
    for (std::size_t i = 1; i < keys.size(); ++i)
      if (keys[i] <= keys[i - 1])
        throw ValidationError("periods not strictly increasing at '" + p.periods[i] + "'");
  }
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index m = 0; m < M; ++m)
      if (p.mask(t, m) && !std::isfinite(p.values(t, m)))
        throw ValidationError("non-finite reported forecast at period '" + p.periods[t] + "'");

  const std::size_t realized = p.realized_count();
  for (std::size_t t = realized; t < p.num_periods(); ++t)
    if (std::isfinite(p.target[static_cast<Eigen::Index>(t)]))
      throw ValidationError("missing target in the interior at period '" + p.periods[realized] + "'");
}

inline ForecastPanel parse_panel(std::istream& in, const PanelFormat& format = {}) {
  std::string line;
  std::size_t row = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    header = detail::split_line(line, format.delimiter);
    break;
  }
  if (header.empty()) throw ValidationError("no data rows");
  if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0].erase(0, 3);

  std::ptrdiff_t period_col = -1;
  std::ptrdiff_t target_col = -1;
  std::vector<std::size_t> expert_cols;
  ForecastPanel p;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == format.period_column && period_col < 0) period_col = static_cast<std::ptrdiff_t>(c);
    else if (header[c] == format.target_column && target_col < 0) target_col = static_cast<std::ptrdiff_t>(c);
    else {
      if (header[c].empty()) throw ParseError("empty expert name in header", row, c + 1);
      expert_cols.push_back(c);
      p.experts.push_back(header[c]);
    }
  }
  if (period_col < 0) throw ValidationError("header lacks period column '" + format.period_column + "'");
  if (target_col < 0) throw ValidationError("header lacks target column '" + format.target_column + "'");
  if (expert_cols.empty()) throw ValidationError("header names no expert columns");
  {
    std::unordered_set<std::string> names(p.experts.begin(), p.experts.end());
    if (names.size() != p.experts.size()) throw ValidationError("duplicate expert name in header");
  }

  std::vector<std::vector<double>> rows;
  std::vector<double> targets;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fields = detail::split_line(line, format.delimiter);
    if (fields.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " +
                           std::to_string(fields.size()),
                       row, std::min(fields.size(), header.size()) + 1);
    auto cell = [&](std::size_t c) -> double {
      if (fields[c].empty()) return nan;
      try {
        double v = parse_double(fields[c]);
        if (!std::isfinite(v)) throw ValidationError("non-finite");
        return v;
      } catch (const ValidationError&) {
        throw ParseError("malformed numeric cell '" + fields[c] + "' in column '" + header[c] + "'", row, c + 1);
      }
    };
    if (fields[static_cast<std::size_t>(period_col)].empty()) throw ParseError("empty period label", row, period_col + 1);
    p.periods.push_back(fields[static_cast<std::size_t>(period_col)]);
    targets.push_back(cell(static_cast<std::size_t>(target_col)));
    std::vector<double> r;
    r.reserve(expert_cols.size());
    for (std::size_t c : expert_cols) r.push_back(cell(c));
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ValidationError("no data rows");

  const auto T = static_cast<Eigen::Index>(rows.size());
  const auto M = static_cast<Eigen::Index>(expert_cols.size());
  p.values.resize(T, M);
  p.mask.resize(T, M);
  p.target.resize(T);
  for (Eigen::Index t = 0; t < T; ++t) {
    p.target[t] = targets[static_cast<std::size_t>(t)];
    for (Eigen::Index m = 0; m < M; ++m) {
      const double v = rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(m)];
      p.values(t, m) = v;
      p.mask(t, m) = std::isfinite(v);
    }
  }
  validate_panel(p);
  return p;
}

inline ForecastPanel load_panel(const std::string& path, const PanelFormat& format = {}) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open panel file '" + path + "'");
  return parse_panel(in, format);
}

inline void write_panel(std::ostream& out, const ForecastPanel& p, const PanelFormat& format = {}) {
  const char d = format.delimiter;
  out << format.period_column << d << format.target_column;
  for (const auto& e : p.experts) out << d << e;
  out << '\n';
  for (std::size_t t = 0; t < p.num_periods(); ++t) {
    const auto ti = static_cast<Eigen::Index>(t);
    out << p.periods[t] << d;
    if (p.realized(t)) out << format_double(p.target[ti]);
    for (Eigen::Index m = 0; m < p.values.cols(); ++m) {
      out << d;
      if (p.mask(ti, m)) out << format_double(p.values(ti, m));
    }
    out << '\n';
  }
}

inline PeriodSpan full_span(const ForecastPanel& p) {
  if (p.num_periods() == 0) throw ValidationError("no data rows");
  return {0, p.num_periods() - 1};
}

inline std::size_t period_index(const ForecastPanel& p, const std::string& label) {
  auto it = std::find(p.periods.begin(), p.periods.end(), label);
  if (it == p.periods.end()) throw ValidationError("period '" + label + "' not in panel");
  return static_cast<std::size_t>(it - p.periods.begin());
}

// "FIRST:LAST" or "FIRST..LAST" by period label; empty = whole panel.
inline PeriodSpan resolve_span(const ForecastPanel& p, const std::string& spec) {
  if (spec.empty()) return full_span(p);
  std::size_t sep = spec.find("..");
  std::size_t skip = 2;
  if (sep == std::string::npos) {
    sep = spec.find(':');
    skip = 1;
  }
  if (sep == std::string::npos) throw ValidationError("span must be FIRST:LAST, got '" + spec + "'");
  PeriodSpan s{period_index(p, spec.substr(0, sep)), period_index(p, spec.substr(sep + skip))};
  if (s.last < s.first) throw ValidationError("span end precedes span start");
  return s;
}

inline ForecastPanel slice_periods(const ForecastPanel& p, PeriodSpan span) {
  if (span.last >= p.num_periods() || span.last < span.first) throw ValidationError("span outside panel");
  const auto first = static_cast<Eigen::Index>(span.first);
  const auto n = static_cast<Eigen::Index>(span.size());
  ForecastPanel out;
  out.periods.assign(p.periods.begin() + first, p.periods.begin() + first + n);
  out.experts = p.experts;
  out.values = p.values.middleRows(first, n);
  out.mask = p.mask.middleRows(first, n);
  out.target = p.target.segment(first, n);
  return out;
}

inline ForecastPanel select_experts(const ForecastPanel& p, const std::vector<std::size_t>& keep) {
  ForecastPanel out;
  out.periods = p.periods;
  out.target = p.target;
  const auto T = static_cast<Eigen::Index>(p.num_periods());
  out.values.resize(T, static_cast<Eigen::Index>(keep.size()));
  out.mask.resize(T, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    const auto src = static_cast<Eigen::Index>(keep[j]);
    const auto dst = static_cast<Eigen::Index>(j);
    out.experts.push_back(p.experts[keep[j]]);
    out.values.col(dst) = p.values.col(src);
    out.mask.col(dst) = p.mask.col(src);
  }
  return out;
}

// True when the expert's mask column has no two consecutive gaps within span.
inline bool reports_without_consecutive_gaps(const ForecastPanel& p, std::size_t expert, PeriodSpan span) {
  const auto m = static_cast<Eigen::Index>(expert);
  for (std::size_t t = span.first + 1; t <= span.last; ++t)
    if (!p.mask(static_cast<Eigen::Index>(t) - 1, m) && !p.mask(static_cast<Eigen::Index>(t), m)) return false;
  return true;
}

// Drops experts that missed two consecutive periods within span.
// Column order of the retained experts is preserved.
inline ForecastPanel filter_experts(const ForecastPanel& p, PeriodSpan span) {
  if (span.last >= p.num_periods() || span.last < span.first) throw ValidationError("span outside panel");
  std::vector<std::size_t> keep;
  for (std::size_t m = 0; m < p.num_experts(); ++m)
    if (reports_without_consecutive_gaps(p, m, span)) keep.push_back(m);
  if (keep.empty()) throw ValidationError("every expert missed two consecutive periods; nothing left");
  return select_experts(p, keep);
}

inline ForecastPanel filter_experts(const ForecastPanel& p) { return filter_experts(p, full_span(p)); }

// Fills each gap with the mean of the same row's reported forecasts.
inline ForecastPanel impute_missing(const ForecastPanel& p) {
  ForecastPanel out = p;
  for (Eigen::Index t = 0; t < out.values.rows(); ++t) {
    double sum = 0.0;
    Eigen::Index n = 0;
    for (Eigen::Index m = 0; m < out.values.cols(); ++m)
      if (p.mask(t, m)) {
        sum += p.values(t, m);
        ++n;
      }
    if (n == 0) throw ValidationError("no reported forecast in period '" + p.periods[static_cast<std::size_t>(t)] + "'");
    if (n == out.values.cols()) continue;
    const double mean = sum / static_cast<double>(n);
    for (Eigen::Index m = 0; m < out.values.cols(); ++m)
      if (!p.mask(t, m)) out.values(t, m) = mean;
  }
  out.mask.setConstant(true);
  return out;
}

// 2-norm condition number: ratio of extreme singular values (inf if singular).
inline double condition_number(const Eigen::MatrixXd& a) {
  if (a.size() == 0) throw ValidationError("condition number of an empty matrix");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& s = svd.singularValues();
  const double smax = s.maxCoeff();
  const double smin = a.rows() < a.cols() ? 0.0 : s.minCoeff();
  if (smax == 0.0) throw ValidationError("condition number of a zero matrix");
  if (smin == 0.0) return std::numeric_limits<double>::infinity();
  return smax / smin;
}

// Error variances, Pearson correlations of forecast errors, and the
// condition number of the raw forecast matrix over span. Correlations
// involving a zero-variance error series are NaN.
inline PanelDiagnostics diagnostics(const ForecastPanel& p, PeriodSpan span) {
  if (!p.complete()) throw ValidationError("diagnostics require an imputed panel");
  if (span.last >= p.num_periods() || span.last < span.first) throw ValidationError("span outside panel");
  if (span.size() < 2) throw ValidationError("diagnostics span must cover at least 2 periods");
  for (std::size_t t = span.first; t <= span.last; ++t)
    if (!p.realized(t)) throw ValidationError("target not realized at period '" + p.periods[t] + "'");

  const auto first = static_cast<Eigen::Index>(span.first);
  const auto n = static_cast<Eigen::Index>(span.size());
  const Eigen::MatrixXd f = p.values.middleRows(first, n);
  const Eigen::VectorXd y = p.target.segment(first, n);
  const Eigen::MatrixXd e = (-f).colwise() + y;
  const Eigen::MatrixXd centered = e.rowwise() - e.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);

  PanelDiagnostics d;
  const Eigen::Index M = cov.rows();
  d.error_variances = cov.diagonal();
  d.error_correlations.resize(M, M);
  for (Eigen::Index i = 0; i < M; ++i)
    for (Eigen::Index j = 0; j < M; ++j) {
      if (i == j) {
        d.error_correlations(i, j) = 1.0;
        continue;
      }
      const double denom = std::sqrt(cov(i, i) * cov(j, j));
      d.error_correlations(i, j) =
          denom > 0.0 ? std::clamp(cov(i, j) / denom, -1.0, 1.0) : std::numeric_limits<double>::quiet_NaN();
    }
  d.condition_number = condition_number(f);
  return d;
}

inline void write_variances_csv(std::ostream& out, const ForecastPanel& p, const PanelDiagnostics& d) {
  for (std::size_t m = 0; m < p.num_experts(); ++m) out << (m ? "," : "") << p.experts[m];
  out << '\n';
  for (Eigen::Index m = 0; m < d.error_variances.size(); ++m)
    out << (m ? "," : "") << format_double(d.error_variances[m]);
  out << '\n';
}

inline void write_correlations_csv(std::ostream& out, const ForecastPanel& p, const PanelDiagnostics& d) {
  out << "expert";
  for (const auto& e : p.experts) out << ',' << e;
  out << '\n';
  for (Eigen::Index i = 0; i < d.error_correlations.rows(); ++i) {
    out << p.experts[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < d.error_correlations.cols(); ++j)
      out << ',' << format_double(d.error_correlations(i, j));
    out << '\n';
  }
}

}  // namespace heca
