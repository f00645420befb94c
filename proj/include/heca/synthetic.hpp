#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "heca/error.hpp"
#include "heca/numeric.hpp"
#include "heca/panel.hpp"

namespace heca {

// Generator for test panels: the target is the mean of a member set of
// experts (plus optional noise), and the member set rotates at each break.
struct SyntheticSpec {
  std::size_t experts = 8;
  std::size_t periods = 40;
  double noise = 0.0;
  std::uint64_t seed = 42;
  Subset members = {0, 1, 2};     // 0-based
  std::vector<std::size_t> breaks;  // 0-based rows where a new regime starts
  std::string start = "2010Q1";
};

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = s.find(sep, pos);
    out.push_back(s.substr(pos, next == std::string::npos ? std::string::npos : next - pos));
    if (next == std::string::npos) return out;
    pos = next + 1;
  }
}

inline std::size_t parse_count(const std::string& key, const std::string& v) {
  const double d = parse_double(v);
  if (!(d >= 0.0) || d != std::floor(d) || d > 1e9) throw ValidationError(key + " must be a non-negative integer");
  return static_cast<std::size_t>(d);
}

// Uniform on [0, 1) from the top 53 bits.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Box-Muller on our own uniforms, so the stream does not depend on the
// standard library's distribution implementations.
inline double standard_normal(std::mt19937_64& rng) {
  double u1 = 0.0;
  while (u1 == 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace detail

// "experts=8,periods=40,noise=0,seed=42,members=1;2;3,breaks=20;30,start=2010Q1".
// Members and breaks are 1-based (a break at period k starts the new regime
// at the k-th period). Omitted keys keep their defaults.
inline SyntheticSpec parse_synthetic_spec(const std::string& text) {
  SyntheticSpec spec;
  bool members_given = false;
  if (!text.empty()) {
    for (const auto& item : detail::split(text, ',')) {
      const std::size_t eq = item.find('=');
      if (eq == std::string::npos) throw ValidationError("synthetic spec item '" + item + "' is not key=value");
      const std::string key = item.substr(0, eq);
      const std::string val = item.substr(eq + 1);
      if (key == "experts") spec.experts = detail::parse_count(key, val);
      else if (key == "periods" || key == "horizon") spec.periods = detail::parse_count(key, val);
      else if (key == "noise") spec.noise = parse_double(val);
      else if (key == "seed") spec.seed = detail::parse_count(key, val);
      else if (key == "start") spec.start = val;
      else if (key == "members") {
        spec.members.clear();
        for (const auto& m : detail::split(val, ';')) {
          const std::size_t k = detail::parse_count(key, m);
          if (k == 0) throw ValidationError("members are 1-based");
          spec.members.push_back(k - 1);
        }
        members_given = true;
      } else if (key == "breaks") {
        spec.breaks.clear();
        if (!val.empty())
          for (const auto& b : detail::split(val, ';')) {
            const std::size_t k = detail::parse_count(key, b);
            if (k == 0) throw ValidationError("breaks are 1-based");
            spec.breaks.push_back(k - 1);
          }
      } else {
        throw ValidationError("unknown synthetic spec key '" + key + "'");
      }
    }
  }
  if (!members_given) {
    spec.members.clear();
    for (std::size_t m = 0; m < std::min<std::size_t>(3, spec.experts); ++m) spec.members.push_back(m);
  }
  return spec;
}

inline void validate(const SyntheticSpec& spec) {
  if (spec.experts < 1) throw ValidationError("synthetic panel needs at least one expert");
  if (spec.periods < 1) throw ValidationError("synthetic horizon must be at least one period");
  if (!std::isfinite(spec.noise) || spec.noise < 0.0) throw ValidationError("noise must be finite and non-negative");
  if (spec.members.empty()) throw ValidationError("member set is empty");
  std::set<std::size_t> seen;
  for (std::size_t m : spec.members) {
    if (m >= spec.experts) throw ValidationError("member index beyond the expert count");
    if (!seen.insert(m).second) throw ValidationError("duplicate member index");
  }
  for (std::size_t i = 0; i < spec.breaks.size(); ++i) {
    if (spec.breaks[i] == 0 || spec.breaks[i] >= spec.periods) throw ValidationError("break outside the horizon");
    if (i > 0 && spec.breaks[i] <= spec.breaks[i - 1]) throw ValidationError("breaks must be strictly increasing");
  }
  if (!parse_quarter(spec.start)) throw ValidationError("start must be a YYYYQn label");
}

// Member set in force at row t: the base set shifted by |members| positions
// (mod experts) per break passed.
inline Subset synthetic_members(const SyntheticSpec& spec, std::size_t t) {
  std::size_t regime = 0;
  for (std::size_t b : spec.breaks)
    if (t >= b) ++regime;
  Subset s;
  for (std::size_t m : spec.members) s.push_back((m + regime * spec.members.size()) % spec.experts);
  std::sort(s.begin(), s.end());
  return s;
}

// Expert m forecasts a common AR(1) level plus its own bias and noise; the
// target is the mean of the current members plus noise * N(0, 1).
inline ForecastPanel emit_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  const auto T = static_cast<Eigen::Index>(spec.periods);
  const auto M = static_cast<Eigen::Index>(spec.experts);

  Eigen::VectorXd bias(M);
  Eigen::VectorXd spread(M);
  for (Eigen::Index m = 0; m < M; ++m) {
    bias[m] = 0.5 * detail::standard_normal(rng);
    spread[m] = 0.2 + 0.8 * detail::uniform01(rng);
  }

  ForecastPanel p;
  const std::int64_t start = *parse_quarter(spec.start);
  for (Eigen::Index t = 0; t < T; ++t) p.periods.push_back(quarter_label(start + t));
  for (Eigen::Index m = 0; m < M; ++m) p.experts.push_back("expert_" + std::to_string(m + 1));
  p.values.resize(T, M);
  p.mask.setConstant(T, M, true);
  p.target.resize(T);

  double level = 1.5;
  for (Eigen::Index t = 0; t < T; ++t) {
    level = 1.5 + 0.7 * (level - 1.5) + 0.5 * detail::standard_normal(rng);
    for (Eigen::Index m = 0; m < M; ++m) p.values(t, m) = level + bias[m] + spread[m] * detail::standard_normal(rng);
    const Subset members = synthetic_members(spec, static_cast<std::size_t>(t));
    double y = 0.0;
    for (std::size_t j : members) y += p.values(t, static_cast<Eigen::Index>(j));
    y /= static_cast<double>(members.size());
    if (spec.noise > 0.0) y += spec.noise * detail::standard_normal(rng);
    p.target[t] = y;
  }
  return p;
}

inline ForecastPanel emit_synthetic(const std::string& spec) { return emit_synthetic(parse_synthetic_spec(spec)); }

}  // namespace heca
