#pragma once

// Mercer eigenvalues of dot-product kernels under the uniform measure on S^d.
//
// For a kernel g(<x, x'>) the eigenfunctions are spherical harmonics and the
// degree-k eigenvalue is a one-dimensional Funk-Hecke integral
//   mu_k = Z(d) * int g(t) C_k(t)/C_k(1) (1 - t^2)^((d-2)/2) dt,
// with C_k the Gegenbauer polynomial of index (d-1)/2. The constant Z(d) is
// fixed by requiring the linear kernel g(t) = t to reconstruct exactly, i.e.
// mu_1 * N(d, 1) = 1.

#include <algorithm>
#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "pinet/csv.hpp"
#include "pinet/errors.hpp"
#include "pinet/kernels.hpp"
#include "pinet/quadrature.hpp"
#include "pinet/specfun.hpp"

namespace pinet::spectral {

inline constexpr double kNumericalZero = 1e-14;

struct QuadratureSpec {
  std::size_t node_count = 2000;

  static QuadratureSpec for_degree(int k_max) {
    return {std::max<std::size_t>(2000, 16 * static_cast<std::size_t>(std::max(k_max, 0)))};
  }
};

struct SpectrumEntry {
  int k;
  double mu;
  bool numerically_zero;
};

struct HarmonicSpectrum {
  int d = 0;
  std::vector<SpectrumEntry> entries;  // sorted by k

  std::optional<double> mu(int k) const {
    for (const auto& e : entries)
      if (e.k == k) return e.mu;
    return std::nullopt;
  }
};

enum class ClassFilter { All, Even, Odd, Mod4Eq0, Mod4Eq1, Mod4Eq2, Mod4Eq3 };

inline ClassFilter parse_class_filter(const std::string& s) {
  if (s == "all") return ClassFilter::All;
  if (s == "even") return ClassFilter::Even;
  if (s == "odd") return ClassFilter::Odd;
  if (s == "mod4eq0") return ClassFilter::Mod4Eq0;
  if (s == "mod4eq1") return ClassFilter::Mod4Eq1;
  if (s == "mod4eq2") return ClassFilter::Mod4Eq2;
  if (s == "mod4eq3") return ClassFilter::Mod4Eq3;
  throw ConfigError("unknown class filter: " + s);
}

inline bool passes(ClassFilter f, int k) {
  switch (f) {
    case ClassFilter::All: return true;
    case ClassFilter::Even: return k % 2 == 0;
    case ClassFilter::Odd: return k % 2 == 1;
    case ClassFilter::Mod4Eq0: return k % 4 == 0;
    case ClassFilter::Mod4Eq1: return k % 4 == 1;
    case ClassFilter::Mod4Eq2: return k % 4 == 2;
    case ClassFilter::Mod4Eq3: return k % 4 == 3;
  }
  return false;
}

struct DecayFit {
  int k_min = 0;
  int k_max = 0;
  ClassFilter class_filter = ClassFilter::All;
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  int points = 0;

  // Below this fit quality the slope is reported but not compared with theory.
  bool reliable() const noexcept { return r_squared >= 0.95; }
};

namespace detail {

inline void check_request(int d, int k, const QuadratureSpec& q) {
  if (d < 2) throw DomainError("funk_hecke: sphere dimension d must be >= 2");
  if (k < 0) throw DomainError("funk_hecke: degree must be non-negative");
  if (q.node_count < 64) throw PrecisionError("funk_hecke: quadrature needs at least 64 nodes");
  if (q.node_count < 8 * static_cast<std::size_t>(k))
    throw PrecisionError("funk_hecke: " + std::to_string(q.node_count) + " nodes is too few for degree " +
                         std::to_string(k) + " (need 8k)");
}

// Z(d) from the linear-kernel calibration: Z * int t^2 w(t) dt * (d + 1) = 1.
inline double calibration_constant(int d, const AngularRule& rule) {
  const double beta = 0.5 * (d - 2);
  const double second_moment = rule.integrate([](double t) { return t * t; }, beta);
  return 1.0 / ((d + 1) * second_moment);
}

}  // namespace detail

// Eigenvalues for k = 0..k_max from one pass of the Gegenbauer recurrence per node.
inline HarmonicSpectrum compute_spectrum(const kernels::DotProductKernel& kernel, int d, int k_max,
                                         const QuadratureSpec& q) {
  detail::check_request(d, k_max, q);
  const AngularRule rule(q.node_count);
  const double alpha = 0.5 * (d - 1);
  const double beta = 0.5 * (d - 2);
  const double z = detail::calibration_constant(d, rule);

  std::vector<double> at_one(static_cast<std::size_t>(k_max) + 1);
  for (int k = 0; k <= k_max; ++k) at_one[static_cast<std::size_t>(k)] = specfun::gegenbauer_at_one({alpha, k});

  std::vector<double> acc(static_cast<std::size_t>(k_max) + 1, 0.0);
  for (std::size_t i = 0; i < rule.size(); ++i) {
    const double t = rule.t(i);
    const double wg = rule.weight(i, beta) * kernel(t);
    double prev = 1.0;
    double cur = 2.0 * alpha * t;
    acc[0] += wg;
    if (k_max >= 1) acc[1] += wg * cur / at_one[1];
    for (int n = 2; n <= k_max; ++n) {
      const double nn = static_cast<double>(n);
      const double next = (2.0 * t * (nn + alpha - 1.0) * cur - (nn + 2.0 * alpha - 2.0) * prev) / nn;
      prev = cur;
      cur = next;
      acc[static_cast<std::size_t>(n)] += wg * cur / at_one[static_cast<std::size_t>(n)];
    }
  }

  HarmonicSpectrum s;
  s.d = d;
  s.entries.reserve(acc.size());
  for (int k = 0; k <= k_max; ++k) {
    const double mu = z * acc[static_cast<std::size_t>(k)];
    s.entries.push_back({k, mu, std::abs(mu) < kNumericalZero});
  }
  return s;
}

inline double funk_hecke_eigenvalue(const kernels::DotProductKernel& kernel, int d, int k, const QuadratureSpec& q) {
  detail::check_request(d, k, q);
  const AngularRule rule(q.node_count);
  const double alpha = 0.5 * (d - 1);
  const double beta = 0.5 * (d - 2);
  const double z = detail::calibration_constant(d, rule);
  const double integral =
      rule.integrate([&](double t) { return kernel(t) * specfun::gegenbauer_normalized(alpha, k, t); }, beta);
  return z * integral;
}

// Truncated Mercer sum  sum_{k <= k_max} mu_k N(d, k) C_k(t)/C_k(1).
inline double mercer_reconstruct(const HarmonicSpectrum& s, double t, int k_max) {
  if (!(std::abs(t) <= 1.0)) throw DomainError("mercer_reconstruct: |t| > 1");
  const double alpha = 0.5 * (s.d - 1);
  double sum = 0.0;
  for (const auto& e : s.entries) {
    if (e.k > k_max) break;
    sum += e.mu * static_cast<double>(specfun::harmonic_dim({s.d, e.k})) *
           specfun::gegenbauer_normalized(alpha, e.k, t);
  }
  return sum;
}

// Least squares of log mu_k on log k over filtered degrees in [k_min, k_max];
// eigenvalues at or below the numerical-zero floor are skipped.
inline DecayFit decay_slope_fit(const HarmonicSpectrum& s, int k_min, int k_max, ClassFilter filter) {
  if (!(k_min < k_max)) throw FitError("decay_slope_fit: k_min must be < k_max");
  std::vector<double> xs, ys;
  for (const auto& e : s.entries) {
    if (e.k < k_min || e.k > k_max || e.k < 1 || !passes(filter, e.k)) continue;
    if (!(e.mu > kNumericalZero)) continue;
    xs.push_back(std::log(static_cast<double>(e.k)));
    ys.push_back(std::log(e.mu));
  }
  if (xs.size() < 4)
    throw FitError("decay_slope_fit: only " + std::to_string(xs.size()) + " usable eigenvalues (need 4)");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  DecayFit fit;
  fit.k_min = k_min;
  fit.k_max = k_max;
  fit.class_filter = filter;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  fit.points = static_cast<int>(xs.size());
  return fit;
}

inline void write_spectrum_csv(std::ostream& os, const HarmonicSpectrum& s) {
  os << "k,mu,numerically_zero\n";
  for (const auto& e : s.entries)
    os << e.k << ',' << csv::format_real(e.mu) << ',' << (e.numerically_zero ? 1 : 0) << '\n';
}

// Reads the CSV written above. Comment lines start with '#'; a "# d = <n>"
// comment sets the sphere dimension.
inline HarmonicSpectrum read_spectrum_csv(std::istream& is) {
  HarmonicSpectrum s;
  std::string line;
  bool header_seen = false;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream cs(line.substr(1));
      std::string key, eq;
      int value = 0;
      if (cs >> key >> eq >> value && key == "d" && eq == "=") s.d = value;
      continue;
    }
    if (!header_seen) {
      if (line != "k,mu,numerically_zero") throw ConfigError("spectrum csv: unexpected header '" + line + "'");
      header_seen = true;
      continue;
    }
    const auto cols = csv::split(line);
    if (cols.size() != 3) throw ConfigError("spectrum csv: expected 3 columns in '" + line + "'");
    SpectrumEntry e{};
    e.k = static_cast<int>(csv::parse_real(cols[0]));
    e.mu = csv::parse_real(cols[1]);
    e.numerically_zero = csv::parse_real(cols[2]) != 0.0;
    s.entries.push_back(e);
  }
  if (!header_seen) throw ConfigError("spectrum csv: missing header");
  std::sort(s.entries.begin(), s.entries.end(), [](const auto& a, const auto& b) { return a.k < b.k; });
  return s;
}

}  // namespace pinet::spectral
