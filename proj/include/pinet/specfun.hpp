#pragma once

// Gegenbauer polynomials, spherical-harmonic counting, and the linearization
// coefficients of Gegenbauer products.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "pinet/errors.hpp"
#include "pinet/quadrature.hpp"

namespace pinet::specfun {

struct GegenbauerParams {
  double alpha;
  int degree;
};

// Sphere S^d in R^{d+1}, harmonic degree k.
struct HarmonicIndex {
  int d;
  int k;
};

namespace detail {

inline void check_params(const GegenbauerParams& p) {
  if (!(p.alpha > 0.0)) throw DomainError("gegenbauer: alpha must be positive");
  if (p.degree < 0) throw DomainError("gegenbauer: degree must be non-negative");
}

// Three-term recurrence without the |t| <= 1 check.
inline double gegenbauer_recurrence(double alpha, int k, double t) {
  if (k == 0) return 1.0;
  double prev = 1.0;
  double cur = 2.0 * alpha * t;
  for (int n = 2; n <= k; ++n) {
    const double nn = static_cast<double>(n);
    const double next = (2.0 * t * (nn + alpha - 1.0) * cur - (nn + 2.0 * alpha - 2.0) * prev) / nn;
    prev = cur;
    cur = next;
  }
  return cur;
}

inline bool is_integer(double x) { return std::floor(x) == x; }

}  // namespace detail

// C_k^alpha(t) via the three-term recurrence.
inline double gegenbauer_eval(const GegenbauerParams& p, double t) {
  detail::check_params(p);
  if (!(std::abs(t) <= 1.0)) throw DomainError("gegenbauer_eval: |t| > 1");
  return detail::gegenbauer_recurrence(p.alpha, p.degree, t);
}

// C_k^alpha(1) = binomial(k + 2 alpha - 1, k).
inline double gegenbauer_at_one(const GegenbauerParams& p) {
  detail::check_params(p);
  if (detail::is_integer(2.0 * p.alpha)) {
    // prod_{j=1..k} (j + 2 alpha - 1) / j
    double value = 1.0;
    for (int j = 1; j <= p.degree; ++j) value *= (j + 2.0 * p.alpha - 1.0) / j;
    return value;
  }
  return detail::gegenbauer_recurrence(p.alpha, p.degree, 1.0);
}

// C_k^alpha(t) / C_k^alpha(1); equals 1 at t = 1.
inline double gegenbauer_normalized(double alpha, int k, double t) {
  return gegenbauer_eval({alpha, k}, t) / gegenbauer_at_one({alpha, k});
}

// Exact binomial coefficient; throws std::overflow_error past 64 bits.
inline std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  unsigned __int128 acc = 1;
  for (std::uint64_t j = 1; j <= k; ++j) {
    acc = acc * (n - k + j) / j;
    if (acc > std::numeric_limits<std::uint64_t>::max()) throw std::overflow_error("binomial overflow");
  }
  return static_cast<std::uint64_t>(acc);
}

// Number of linearly independent spherical harmonics of degree k on S^d.
// N(d, 0) = 1; for k >= 1, N(d, k) = (2k + d - 1)/k * binomial(k + d - 2, d - 1).
inline std::uint64_t harmonic_dim(const HarmonicIndex& h) {
  if (h.d < 1) throw DomainError("harmonic_dim: d must be >= 1");
  if (h.k < 0) throw DomainError("harmonic_dim: k must be >= 0");
  if (h.k == 0) return 1;
  const auto k = static_cast<std::uint64_t>(h.k);
  const auto d = static_cast<std::uint64_t>(h.d);
  const unsigned __int128 num = static_cast<unsigned __int128>(2 * k + d - 1) * binomial(k + d - 2, d - 1);
  const unsigned __int128 value = num / k;
  if (value > std::numeric_limits<std::uint64_t>::max()) throw std::overflow_error("harmonic_dim overflow");
  return static_cast<std::uint64_t>(value);
}

// Leading linearization coefficient of C_k^alpha * C_k^alpha (the C_{2k}
// term) for integer alpha, evaluated in log space.
inline double lambda0_kk(double alpha, int k) {
  if (!(alpha >= 1.0) || !detail::is_integer(alpha))
    throw DomainError("lambda0_kk: alpha must be a positive integer");
  if (k < 0) throw DomainError("lambda0_kk: k must be non-negative");
  const double a = alpha;
  const double kk = static_cast<double>(k);
  const double log_value = 2.0 * std::lgamma(a + kk) + std::lgamma(2.0 * kk + 1.0) -
                           std::lgamma(a) - 2.0 * std::lgamma(kk + 1.0) - std::lgamma(a + 2.0 * kk);
  return std::exp(log_value);
}

// Integral of f(t) (1 - t^2)^(alpha - 1/2) over [-1, 1].
template <class F>
double gegenbauer_weighted_integral(F&& f, double alpha, std::size_t nodes) {
  return AngularRule(nodes).integrate(std::forward<F>(f), alpha - 0.5);
}

// Coefficients lambda_s, s = 0..min(m, n), with
//   C_m C_n = sum_s lambda_s C_{m+n-2s},
// obtained by projecting the product onto the Gegenbauer basis with weighted
// quadrature. Values below 1e-12 in magnitude are clamped to zero.
inline std::vector<double> linearize_product(int m, int n, double alpha) {
  if (m < 0 || n < 0) throw DomainError("linearize_product: degrees must be non-negative");
  if (!(alpha > 0.0)) throw DomainError("linearize_product: alpha must be positive");
  const std::size_t nodes = static_cast<std::size_t>(std::max(64, 4 * (m + n) + 64));
  const AngularRule rule(nodes);
  const double beta = alpha - 0.5;
  const int count = std::min(m, n) + 1;
  std::vector<double> coeffs(static_cast<std::size_t>(count), 0.0);
  for (int s = 0; s < count; ++s) {
    const int j = m + n - 2 * s;
    double inner = 0.0;
    double norm = 0.0;
    for (std::size_t i = 0; i < rule.size(); ++i) {
      const double t = rule.t(i);
      const double w = rule.weight(i, beta);
      const double cj = detail::gegenbauer_recurrence(alpha, j, t);
      inner += w * detail::gegenbauer_recurrence(alpha, m, t) * detail::gegenbauer_recurrence(alpha, n, t) * cj;
      norm += w * cj * cj;
    }
    double value = inner / norm;
    if (std::abs(value) < 1e-12) value = 0.0;
    coeffs[static_cast<std::size_t>(s)] = value;
  }
  return coeffs;
}

}  // namespace pinet::specfun
