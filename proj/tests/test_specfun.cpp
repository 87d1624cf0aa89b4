#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "pinet/quadrature.hpp"
#include "pinet/random.hpp"
#include "pinet/specfun.hpp"

namespace sf = pinet::specfun;

namespace {

// Monomial coefficients of C_n^alpha built from the recurrence on polynomials.
std::vector<std::vector<double>> gegenbauer_polys(double alpha, int max_n) {
  std::vector<std::vector<double>> p(static_cast<std::size_t>(max_n) + 1);
  p[0] = {1.0};
  if (max_n >= 1) p[1] = {0.0, 2.0 * alpha};
  for (int n = 2; n <= max_n; ++n) {
    std::vector<double> c(static_cast<std::size_t>(n) + 1, 0.0);
    for (std::size_t i = 0; i < p[n - 1].size(); ++i) c[i + 1] += 2.0 * (n + alpha - 1.0) * p[n - 1][i] / n;
    for (std::size_t i = 0; i < p[n - 2].size(); ++i) c[i] -= (n + 2.0 * alpha - 2.0) * p[n - 2][i] / n;
    p[n] = c;
  }
  return p;
}

double horner(const std::vector<double>& c, double t) {
  double v = 0.0;
  for (std::size_t i = c.size(); i-- > 0;) v = v * t + c[i];
  return v;
}

std::vector<double> poly_mul(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> c(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) c[i + j] += a[i] * b[j];
  return c;
}

}  // namespace

TEST(Gegenbauer, PinnedValues) {
  EXPECT_DOUBLE_EQ(sf::gegenbauer_eval({1.0, 1}, 0.5), 1.0);
  EXPECT_DOUBLE_EQ(sf::gegenbauer_eval({1.0, 2}, 1.0), 3.0);
  EXPECT_DOUBLE_EQ(sf::gegenbauer_eval({1.0, 0}, -0.3), 1.0);
}

TEST(Gegenbauer, ChebyshevSecondKindAtAlphaOne) {
  for (int n = 0; n <= 20; ++n)
    for (double theta : {0.1, 0.7, 1.3, 2.0, 2.9}) {
      const double expected = std::sin((n + 1) * theta) / std::sin(theta);
      EXPECT_NEAR(sf::gegenbauer_eval({1.0, n}, std::cos(theta)), expected, 1e-10 * std::max(1.0, std::abs(expected)));
    }
}

TEST(Gegenbauer, LegendreAtAlphaHalf) {
  // Bonnet recurrence computed independently.
  for (double t : {-0.95, -0.2, 0.0, 0.33, 0.8}) {
    double p0 = 1.0, p1 = t;
    for (int n = 2; n <= 15; ++n) {
      const double p2 = ((2 * n - 1) * t * p1 - (n - 1) * p0) / n;
      p0 = p1;
      p1 = p2;
      EXPECT_NEAR(sf::gegenbauer_eval({0.5, n}, t), p1, 1e-13);
    }
  }
}

TEST(Gegenbauer, ExplicitLowDegrees) {
  for (double a : {0.5, 1.0, 2.5, 4.0})
    for (double t : {-0.7, 0.1, 0.9}) {
      EXPECT_NEAR(sf::gegenbauer_eval({a, 2}, t), 2 * a * (a + 1) * t * t - a, 1e-13);
      EXPECT_NEAR(sf::gegenbauer_eval({a, 3}, t),
                  4.0 / 3.0 * a * (a + 1) * (a + 2) * t * t * t - 2 * a * (a + 1) * t, 1e-12);
    }
}

TEST(Gegenbauer, DomainErrors) {
  EXPECT_THROW(sf::gegenbauer_eval({1.0, 2}, 1.0000001), pinet::DomainError);
  EXPECT_THROW(sf::gegenbauer_eval({1.0, 2}, -1.5), pinet::DomainError);
  EXPECT_THROW(sf::gegenbauer_eval({0.0, 2}, 0.5), pinet::DomainError);
  EXPECT_THROW(sf::gegenbauer_eval({1.0, -1}, 0.5), pinet::DomainError);
}

TEST(Gegenbauer, ValueAtOne) {
  EXPECT_DOUBLE_EQ(sf::gegenbauer_at_one({1.0, 2}), 3.0);
  EXPECT_DOUBLE_EQ(sf::gegenbauer_at_one({2.0, 1}), 4.0);
  EXPECT_DOUBLE_EQ(sf::gegenbauer_at_one({1.0, 0}), 1.0);
  for (double a : {0.5, 1.0, 1.5, 2.0, 4.5, 0.3})
    for (int k = 0; k <= 30; ++k) {
      const double expected = std::exp(std::lgamma(k + 2 * a) - std::lgamma(2 * a) - std::lgamma(k + 1.0));
      EXPECT_NEAR(sf::gegenbauer_at_one({a, k}), expected, 1e-10 * expected) << a << " " << k;
    }
}

TEST(Gegenbauer, NormalizedIsOneAtOne) {
  for (int k = 0; k < 40; ++k) EXPECT_NEAR(sf::gegenbauer_normalized(2.0, k, 1.0), 1.0, 1e-12);
}

TEST(Gegenbauer, OrthogonalityOffDiagonal) {
  for (double a : {0.5, 1.0, 2.0}) {
    for (int m = 0; m <= 12; ++m)
      for (int n = m + 1; n <= 12; ++n) {
        const double v = sf::gegenbauer_weighted_integral(
            [&](double t) { return sf::gegenbauer_eval({a, m}, t) * sf::gegenbauer_eval({a, n}, t); }, a, 200);
        EXPECT_LT(std::abs(v), 1e-10) << "alpha=" << a << " m=" << m << " n=" << n;
      }
  }
}

TEST(Gegenbauer, NormMatchesClosedForm) {
  // h_n = pi 2^(1-2a) Gamma(n+2a) / (n! (n+a) Gamma(a)^2)
  for (double a : {0.5, 1.0, 2.0, 4.5})
    for (int n = 0; n <= 12; ++n) {
      const double h = std::numbers::pi * std::pow(2.0, 1 - 2 * a) *
                       std::exp(std::lgamma(n + 2 * a) - std::lgamma(n + 1.0) - 2 * std::lgamma(a)) / (n + a);
      const double v = sf::gegenbauer_weighted_integral(
          [&](double t) { return std::pow(sf::gegenbauer_eval({a, n}, t), 2); }, a, 200);
      EXPECT_NEAR(v, h, 1e-11 * h);
    }
}

TEST(HarmonicDim, PinnedValues) {
  EXPECT_EQ(sf::harmonic_dim({2, 1}), 3u);
  EXPECT_EQ(sf::harmonic_dim({2, 2}), 5u);
  EXPECT_EQ(sf::harmonic_dim({5, 0}), 1u);
  for (int k = 0; k < 30; ++k) EXPECT_EQ(sf::harmonic_dim({2, k}), static_cast<std::uint64_t>(2 * k + 1));
}

TEST(HarmonicDim, SumRule) {
  for (int d = 1; d <= 6; ++d)
    for (int K = 0; K <= 10; ++K) {
      std::uint64_t sum = 0;
      for (int k = 0; k <= K; ++k) sum += sf::harmonic_dim({d, k});
      const std::uint64_t expected =
          sf::binomial(K + d, d) + (K + d >= 1 ? sf::binomial(K + d - 1, d) : 0);
      EXPECT_EQ(sum, expected) << "d=" << d << " K=" << K;
    }
}

TEST(HarmonicDim, HomogeneousPolynomialDifference) {
  // N(d, k) = dim P_k(R^{d+1}) - dim P_{k-2}(R^{d+1})
  for (int d = 1; d <= 10; ++d)
    for (int k = 0; k <= 15; ++k) {
      const auto p = [&](int deg) -> std::uint64_t { return deg < 0 ? 0 : sf::binomial(deg + d, d); };
      EXPECT_EQ(sf::harmonic_dim({d, k}), p(k) - p(k - 2));
    }
}

TEST(Binomial, OverflowIsReported) {
  EXPECT_EQ(sf::binomial(10, 3), 120u);
  EXPECT_EQ(sf::binomial(3, 10), 0u);
  EXPECT_THROW(sf::binomial(200, 100), std::overflow_error);
}

TEST(Lambda0, PinnedValues) {
  EXPECT_NEAR(sf::lambda0_kk(1.0, 1), 1.0, 1e-13);
  EXPECT_NEAR(sf::lambda0_kk(2.0, 1), 4.0 / 3.0, 1e-13);
  EXPECT_THROW(sf::lambda0_kk(1.5, 2), pinet::DomainError);
  EXPECT_THROW(sf::lambda0_kk(0.0, 2), pinet::DomainError);
}

// The asymptotic growth of lambda0^{(k,k)} is reported for inspection only.
TEST(Lambda0, ReportsFittedGrowthExponent) {
  for (double a : {1.0, 2.0, 3.0}) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (int k = 20; k <= 80; k += 4, ++n) {
      const double x = std::log(k), y = std::log(sf::lambda0_kk(a, k));
      sx += x, sy += y, sxx += x * x, sxy += x * y;
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    ASSERT_TRUE(std::isfinite(slope));
    std::printf("lambda0_kk growth exponent at alpha = %g (d = %g): %.4f\n", a, 2 * a + 1, slope);
    RecordProperty("exponent_alpha_" + std::to_string(static_cast<int>(a)), std::to_string(slope));
  }
}

TEST(Lambda0, MatchesPolynomialLeadingCoefficients) {
  // C_k^2 has leading coefficient lead(C_k)^2; only the C_{2k} term reaches t^{2k}.
  for (double a : {1.0, 2.0, 3.0}) {
    const auto p = gegenbauer_polys(a, 24);
    for (int k = 0; k <= 12; ++k) {
      const double lead_k = p[k].back();
      const double lead_2k = p[2 * k].back();
      const double expected = lead_k * lead_k / lead_2k;
      EXPECT_NEAR(sf::lambda0_kk(a, k), expected, 1e-10 * expected) << a << " " << k;
    }
  }
}

TEST(Lambda0, MatchesLinearizeProduct) {
  for (double a : {1.0, 2.0})
    for (int k = 0; k <= 8; ++k) {
      const double oracle = sf::linearize_product(k, k, a).front();
      EXPECT_NEAR(sf::lambda0_kk(a, k), oracle, 1e-6 * std::abs(oracle));
    }
}

TEST(Lambda0, LogGammaHandlesLargeDegree) {
  const double v = sf::lambda0_kk(2.0, 500);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_GT(v, 0.0);
}

TEST(LinearizeProduct, PinnedValues) {
  const auto a = sf::linearize_product(1, 1, 1.0);
  ASSERT_EQ(a.size(), 2u);
  EXPECT_NEAR(a[0], 1.0, 1e-12);
  EXPECT_NEAR(a[1], 1.0, 1e-12);
  const auto b = sf::linearize_product(0, 3, 1.0);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_NEAR(b[0], 1.0, 1e-12);
  EXPECT_NEAR(sf::linearize_product(2, 2, 2.0).front(), sf::lambda0_kk(2.0, 2), 1e-12);
}

TEST(LinearizeProduct, IdentityAtRandomPoints) {
  pinet::CounterRng rng(99);
  for (double a : {1.0, 2.0})
    for (int m = 0; m <= 8; ++m)
      for (int n = 0; n <= 8; ++n) {
        const auto lam = sf::linearize_product(m, n, a);
        double worst = 0.0;
        for (int i = 0; i < 50; ++i) {
          const double t = 2.0 * rng.uniform() - 1.0;
          double rhs = 0.0;
          for (std::size_t s = 0; s < lam.size(); ++s)
            rhs += lam[s] * sf::gegenbauer_eval({a, m + n - 2 * static_cast<int>(s)}, t);
          const double lhs = sf::gegenbauer_eval({a, m}, t) * sf::gegenbauer_eval({a, n}, t);
          worst = std::max(worst, std::abs(lhs - rhs));
        }
        EXPECT_LT(worst, 1e-8) << "alpha=" << a << " m=" << m << " n=" << n;
      }
}

TEST(LinearizeProduct, MatchesPolynomialExpansion) {
  // Coefficient-space check: C_m C_n - sum_s lambda_s C_{m+n-2s} == 0.
  const double a = 2.0;
  const auto p = gegenbauer_polys(a, 16);
  for (int m = 0; m <= 6; ++m)
    for (int n = 0; n <= 6; ++n) {
      auto diff = poly_mul(p[m], p[n]);
      const auto lam = sf::linearize_product(m, n, a);
      for (std::size_t s = 0; s < lam.size(); ++s) {
        const auto& c = p[m + n - 2 * s];
        for (std::size_t i = 0; i < c.size(); ++i) diff[i] -= lam[s] * c[i];
      }
      double scale = 0.0;
      for (double c : poly_mul(p[m], p[n])) scale = std::max(scale, std::abs(c));
      for (double c : diff) EXPECT_LT(std::abs(c), 1e-9 * scale);
      EXPECT_NEAR(horner(diff, 0.3), 0.0, 1e-8 * scale);
    }
}

TEST(Quadrature, GaussLegendreIntegratesPolynomialsExactly) {
  const auto& rule = pinet::gauss_legendre(10);
  for (int p = 0; p < 20; ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) s += rule.weights[i] * std::pow(rule.nodes[i], p);
    const double exact = p % 2 ? 0.0 : 2.0 / (p + 1);
    EXPECT_NEAR(s, exact, 1e-14);
  }
}

TEST(Quadrature, AngularRuleWeightedMoments) {
  // int (1 - t^2)^beta dt = sqrt(pi) Gamma(beta + 1) / Gamma(beta + 3/2)
  const pinet::AngularRule rule(100);
  for (double beta : {-0.5, 0.0, 0.5, 1.5, 4.0}) {
    const double exact = std::sqrt(std::numbers::pi) * std::exp(std::lgamma(beta + 1) - std::lgamma(beta + 1.5));
    EXPECT_NEAR(rule.integrate([](double) { return 1.0; }, beta), exact, 1e-13);
  }
}
