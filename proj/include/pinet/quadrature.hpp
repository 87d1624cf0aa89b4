#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace pinet {

struct GaussLegendreRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

namespace detail {

inline GaussLegendreRule compute_gauss_legendre(std::size_t n) {
  GaussLegendreRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const std::size_t half = (n + 1) / 2;
  for (std::size_t i = 0; i < half; ++i) {
    double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) /
                        (static_cast<double>(n) + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0;
      double p1 = x;
      for (std::size_t k = 2; k <= n; ++k) {
        const double kk = static_cast<double>(k);
        const double p2 = ((2.0 * kk - 1.0) * x * p1 - (kk - 1.0) * p0) / kk;
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) {
        p1 = x;
        p0 = 1.0;
      }
      dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    // Recompute the derivative at the converged root for the weight.
    double p0 = 1.0;
    double p1 = x;
    for (std::size_t k = 2; k <= n; ++k) {
      const double kk = static_cast<double>(k);
      const double p2 = ((2.0 * kk - 1.0) * x * p1 - (kk - 1.0) * p0) / kk;
      p0 = p1;
      p1 = p2;
    }
    if (n == 1) p0 = 1.0;
    dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = -x;
    rule.nodes[n - 1 - i] = x;
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

}  // namespace detail

// Nodes in ascending order on [-1, 1]. Rules are cached; the returned
// reference stays valid for the program lifetime.
inline const GaussLegendreRule& gauss_legendre(std::size_t n) {
  if (n == 0) throw std::invalid_argument("gauss_legendre: node count must be positive");
  static std::mutex mutex;
  static std::map<std::size_t, std::unique_ptr<GaussLegendreRule>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<GaussLegendreRule>(detail::compute_gauss_legendre(n));
  return *slot;
}

// Gauss-Legendre in the polar angle: integrates f(t) (1 - t^2)^beta over
// [-1, 1] as the integral of f(cos th) sin(th)^(2 beta + 1) over [0, pi].
// The substitution removes the algebraic endpoint singularities of both the
// Gegenbauer weight and the arc-cosine kernels, so convergence is spectral.
class AngularRule {
 public:
  explicit AngularRule(std::size_t n) {
    const auto& gl = gauss_legendre(n);
    t_.resize(n);
    sin_.resize(n);
    w_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double theta = 0.5 * std::numbers::pi * (gl.nodes[i] + 1.0);
      t_[i] = std::cos(theta);
      sin_[i] = std::sin(theta);
      w_[i] = 0.5 * std::numbers::pi * gl.weights[i];
    }
  }

  std::size_t size() const noexcept { return t_.size(); }
  double t(std::size_t i) const noexcept { return t_[i]; }
  double sin_theta(std::size_t i) const noexcept { return sin_[i]; }
  double angle_weight(std::size_t i) const noexcept { return w_[i]; }

  // Weight for node i that absorbs (1 - t^2)^beta dt.
  double weight(std::size_t i, double beta) const {
    return w_[i] * std::pow(sin_[i], 2.0 * beta + 1.0);
  }

  template <class F>
  double integrate(F&& f, double beta) const {
    double sum = 0.0;
    for (std::size_t i = 0; i < t_.size(); ++i) sum += weight(i, beta) * f(t_[i]);
    return sum;
  }

 private:
  std::vector<double> t_;
  std::vector<double> sin_;
  std::vector<double> w_;
};

}  // namespace pinet
