#pragma once

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <system_error>
#include <vector>

#include "heca/error.hpp"

namespace heca {

// Sorted, duplicate-free list of 0-based expert indices.
using Subset = std::vector<std::size_t>;

// Smallest positive subnormal double (printed as 5e-324).
inline constexpr double kMachineEpsilonWeight =
    std::numeric_limits<double>::denorm_min();

// Relative tie tolerance used when ranking candidate objectives.
inline constexpr double kTieTolerance = 1e-12;

inline bool nearly_equal(double a, double b, double rel = kTieTolerance) {
  const double scale = std::max({1.0, std::abs(a), std::abs(b)});
  return std::abs(a - b) <= rel * scale;
}

// a strictly better than b, beyond the tie tolerance.
inline bool strictly_less(double a, double b, double rel = kTieTolerance) {
  return a < b && !nearly_equal(a, b, rel);
}

// Shortest decimal string that round-trips to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) return std::to_string(v);
  return std::string(buf, ptr);
}

inline std::size_t binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  long double r = 1.0L;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<long double>(n - k + i) / i;
  return static_cast<std::size_t>(std::llround(r));
}

// Advances `s` (size k, values < n, strictly increasing) to the next subset
// in lexicographic order. Returns false after the last one.
inline bool next_combination(Subset& s, std::size_t n) {
  const std::size_t k = s.size();
  if (k == 0) return false;
  std::size_t i = k;
  while (i > 0) {
    --i;
    if (s[i] < n - k + i) {
      ++s[i];
      for (std::size_t j = i + 1; j < k; ++j) s[j] = s[j - 1] + 1;
      return true;
    }
  }
  return false;
}

inline Subset first_combination(std::size_t k) {
  Subset s(k);
  for (std::size_t i = 0; i < k; ++i) s[i] = i;
  return s;
}

inline double parse_double(const std::string& text) {
  std::size_t begin = text.find_first_not_of(" \t");
  std::size_t end = text.find_last_not_of(" \t\r");
  if (begin == std::string::npos) throw ValidationError("empty number");
  const char* first = text.data() + begin;
  const char* last = text.data() + end + 1;
  if (*first == '+') ++first;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(first, last, v);
  // from_chars reports underflow for subnormals such as 5e-324; accept them.
  if (ec == std::errc::result_out_of_range && ptr == last) {
    v = std::strtod(std::string(first, last).c_str(), nullptr);
  } else if (ec != std::errc{} || ptr != last) {
    throw ValidationError("not a number: '" + text + "'");
  }
  return v;
}

// Parses "lo:step:hi" into the ascending grid lo, lo+step, ..., hi
// (hi included within a relative 1e-9 slack). A single number yields a
// one-point grid; comma separated values are taken literally.
inline std::vector<double> parse_grid(const std::string& spec) {
  std::vector<double> grid;
  if (spec.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (true) {
      std::size_t next = spec.find(':', pos);
      parts.push_back(spec.substr(pos, next - pos));
      if (next == std::string::npos) break;
      pos = next + 1;
    }
    if (parts.size() != 3) throw ValidationError("grid spec must be lo:step:hi, got '" + spec + "'");
    const double lo = parse_double(parts[0]);
    const double step = parse_double(parts[1]);
    const double hi = parse_double(parts[2]);
    if (!(step > 0.0) || hi < lo) throw ValidationError("invalid grid spec '" + spec + "'");
    const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
    // Rounded to 12 significant digits so that 0.01:0.01:2 gives 0.03, not
    // 0.030000000000000002.
    for (std::size_t i = 0; i < count; ++i) {
      char buf[32];
      auto res = std::to_chars(buf, buf + sizeof(buf), lo + static_cast<double>(i) * step,
                               std::chars_format::general, 12);
      double v = 0.0;
      std::from_chars(buf, res.ptr, v);
      grid.push_back(v);
    }
  } else {
    std::size_t pos = 0;
    while (pos <= spec.size()) {
      std::size_t next = spec.find(',', pos);
      if (next == std::string::npos) next = spec.size();
      grid.push_back(parse_double(spec.substr(pos, next - pos)));
      pos = next + 1;
    }
  }
  if (grid.empty()) throw ValidationError("empty grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!std::isfinite(grid[i]) || grid[i] < 0.0) throw ValidationError("grid values must be finite and non-negative");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw ValidationError("grid must be strictly ascending");
  }
  return grid;
}

}  // namespace heca
