#pragma once

// Dot-product kernels on the sphere: the arc-cosine building blocks of the
// two-layer ReLU NTK, the standard NTK, the Pi-kernel of a two-layer network
// with one multiplicative layer, Gram matrices, kernel gradient descent, and
// a finite-width Monte-Carlo estimate of the tangent kernel.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "pinet/errors.hpp"
#include "pinet/linalg.hpp"
#include "pinet/network_spec.hpp"
#include "pinet/random.hpp"

namespace pinet::kernels {

inline constexpr double kDomainSlack = 1e-12;

// Clamps t into [-1, 1], tolerating rounding up to kDomainSlack.
inline double clamp_cosine(double t) {
  if (!(std::abs(t) <= 1.0 + kDomainSlack)) throw DomainError("kernel argument outside [-1, 1]");
  return std::clamp(t, -1.0, 1.0);
}

// E[1(<w,x> >= 0) 1(<w,x'> >= 0)] for w ~ N(0, I): the probability that both
// points fall in the same random half-space.
inline double kappa1(double t) {
  t = clamp_cosine(t);
  return (std::numbers::pi - std::acos(t)) / (2.0 * std::numbers::pi);
}

// E[relu(<w,x>) relu(<w,x'>)] for unit x, x'.
inline double kappa2(double t) {
  t = clamp_cosine(t);
  const double theta = std::acos(t);
  return (std::sqrt(std::max(0.0, 1.0 - t * t)) + (std::numbers::pi - theta) * t) /
         (2.0 * std::numbers::pi);
}

// Two-layer ReLU NTK: 2 t k1(t) + 2 k2(t).
inline double ntk_standard(double t) {
  t = clamp_cosine(t);
  return 2.0 * t * kappa1(t) + 2.0 * kappa2(t);
}

// Pi-kernel: 2 (2 t k1(t) + k2(t)) k2(t).
inline double ntk_pi(double t) {
  t = clamp_cosine(t);
  const double k2 = kappa2(t);
  return 2.0 * (2.0 * t * kappa1(t) + k2) * k2;
}

// A kernel identified by its profile g(<x, x'>).
class DotProductKernel {
 public:
  enum class Kind { Kappa1, Kappa2, StandardNTK, PiKernel, Linear, Constant, Sum, Product, DotWeighted };

  static DotProductKernel kappa1() { return DotProductKernel(Kind::Kappa1); }
  static DotProductKernel kappa2() { return DotProductKernel(Kind::Kappa2); }
  static DotProductKernel standard_ntk() { return DotProductKernel(Kind::StandardNTK); }
  static DotProductKernel pi_kernel() { return DotProductKernel(Kind::PiKernel); }
  static DotProductKernel linear() { return DotProductKernel(Kind::Linear); }
  static DotProductKernel constant() { return DotProductKernel(Kind::Constant); }

  static DotProductKernel sum(std::vector<DotProductKernel> children) {
    return DotProductKernel(Kind::Sum, std::move(children));
  }
  static DotProductKernel product(std::vector<DotProductKernel> children) {
    return DotProductKernel(Kind::Product, std::move(children));
  }
  // t * g_child(t)
  static DotProductKernel dot_weighted(DotProductKernel child) {
    return DotProductKernel(Kind::DotWeighted, {std::move(child)});
  }

  // Accepts the CLI names: kappa1, kappa2, standard, pi, linear, constant.
  static DotProductKernel from_name(const std::string& name) {
    if (name == "kappa1") return kappa1();
    if (name == "kappa2") return kappa2();
    if (name == "standard" || name == "ntk") return standard_ntk();
    if (name == "pi") return pi_kernel();
    if (name == "linear") return linear();
    if (name == "constant") return constant();
    throw ConfigError("unknown kernel: " + name);
  }

  Kind kind() const noexcept { return kind_; }
  const std::vector<DotProductKernel>& children() const noexcept { return children_; }

  std::string name() const {
    switch (kind_) {
      case Kind::Kappa1: return "kappa1";
      case Kind::Kappa2: return "kappa2";
      case Kind::StandardNTK: return "standard";
      case Kind::PiKernel: return "pi";
      case Kind::Linear: return "linear";
      case Kind::Constant: return "constant";
      case Kind::Sum: return "sum";
      case Kind::Product: return "product";
      case Kind::DotWeighted: return "dot-weighted";
    }
    return "?";
  }

  double operator()(double t) const {
    switch (kind_) {
      case Kind::Kappa1: return kernels::kappa1(t);
      case Kind::Kappa2: return kernels::kappa2(t);
      case Kind::StandardNTK: return ntk_standard(t);
      case Kind::PiKernel: return ntk_pi(t);
      case Kind::Linear: return clamp_cosine(t);
      case Kind::Constant: clamp_cosine(t); return 1.0;
      case Kind::Sum: {
        double s = 0.0;
        for (const auto& c : children_) s += c(t);
        return s;
      }
      case Kind::Product: {
        double p = 1.0;
        for (const auto& c : children_) p *= c(t);
        return p;
      }
      case Kind::DotWeighted: return clamp_cosine(t) * children_.front()(t);
    }
    return 0.0;
  }

 private:
  explicit DotProductKernel(Kind kind, std::vector<DotProductKernel> children = {})
      : kind_(kind), children_(std::move(children)) {}

  Kind kind_;
  std::vector<DotProductKernel> children_;
};

class UnitVector {
 public:
  static constexpr double kTolerance = 1e-12;

  explicit UnitVector(std::vector<double> coords) : coords_(std::move(coords)) {
    double sq = 0.0;
    for (double c : coords_) sq += c * c;
    if (coords_.empty() || !(std::abs(std::sqrt(sq) - 1.0) <= kTolerance))
      throw DomainError("UnitVector: Euclidean norm must be 1");
  }

  // Rescales a non-zero vector onto the sphere.
  static UnitVector normalize(std::vector<double> v) {
    double sq = 0.0;
    for (double c : v) sq += c * c;
    if (!(sq > 0.0)) throw DomainError("UnitVector: cannot normalize the zero vector");
    const double inv = 1.0 / std::sqrt(sq);
    for (double& c : v) c *= inv;
    return UnitVector(std::move(v));
  }

  // Uniform on S^d (d + 1 coordinates).
  static UnitVector random(int d, CounterRng& rng) {
    std::vector<double> v(static_cast<std::size_t>(d + 1));
    for (double& c : v) c = rng.normal();
    return normalize(std::move(v));
  }

  std::size_t dim() const noexcept { return coords_.size(); }
  std::span<const double> coords() const noexcept { return coords_; }
  double operator[](std::size_t i) const { return coords_[i]; }

  double dot(const UnitVector& other) const {
    if (other.dim() != dim()) throw DomainError("UnitVector: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < coords_.size(); ++i) s += coords_[i] * other.coords_[i];
    return s;
  }

 private:
  std::vector<double> coords_;
};

// Gram matrix of a dot-product kernel over unit points; diagonal is g(1).
struct GramMatrix {
  linalg::Matrix entries;
  std::vector<UnitVector> points;

  Eigen::Index size() const noexcept { return entries.rows(); }
};

inline GramMatrix gram(const DotProductKernel& kernel, std::vector<UnitVector> points) {
  const auto n = static_cast<Eigen::Index>(points.size());
  GramMatrix g{linalg::Matrix(n, n), std::move(points)};
  const double diag = kernel(1.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    g.entries(i, i) = diag;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = kernel(g.points[static_cast<std::size_t>(i)].dot(g.points[static_cast<std::size_t>(j)]));
      g.entries(i, j) = v;
      g.entries(j, i) = v;
    }
  }
  return g;
}

// Kernel gradient descent from a zero predictor:
//   y_hat(t+1) = y_hat(t) + eta K (y - y_hat(t)),
// i.e. the residual follows (I - eta K)^t y. The observer is called for
// t = 0..steps with the current prediction. Requires eta * lambda_max(K) < 2.
inline void kernel_gd_dynamics(const linalg::Matrix& k, const linalg::Vector& y, double eta, int steps,
                               const std::function<void(int, const linalg::Vector&)>& observer) {
  if (k.rows() != k.cols() || k.rows() != y.size()) throw ShapeError("kernel_gd_dynamics: shape mismatch");
  if (steps < 0) throw ConfigError("kernel_gd_dynamics: T must be non-negative");
  if (!(eta > 0.0)) throw ConfigError("kernel_gd_dynamics: eta must be positive");
  const double lambda_max = linalg::largest_eigenvalue(k);
  if (!(eta * lambda_max < 2.0))
    throw ConfigError("kernel_gd_dynamics: unstable step, eta * lambda_max = " + std::to_string(eta * lambda_max) +
                      " >= 2");
  linalg::Vector pred = linalg::Vector::Zero(y.size());
  linalg::Vector residual = y;
  observer(0, pred);
  for (int t = 1; t <= steps; ++t) {
    const linalg::Vector step = eta * (k * residual);
    pred += step;
    residual -= step;
    observer(t, pred);
  }
}

inline std::vector<linalg::Vector> kernel_gd_dynamics(const linalg::Matrix& k, const linalg::Vector& y,
                                                      double eta, int steps) {
  std::vector<linalg::Vector> trace;
  trace.reserve(static_cast<std::size_t>(steps) + 1);
  kernel_gd_dynamics(k, y, eta, steps, [&](int, const linalg::Vector& p) { trace.push_back(p); });
  return trace;
}

struct NtkEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::vector<double> draws;
};

namespace detail {

inline double relu(double u) { return u > 0.0 ? u : 0.0; }
// Subgradient convention: derivative 0 at the kink.
inline double relu_grad(double u) { return u > 0.0 ? 1.0 : 0.0; }

// <grad f(x), grad f(x')> for one standard-normal draw of a two-layer net,
// from hand-derived gradients. Only the first-layer preactivations matter,
// so weights are drawn row by row.
inline double tangent_inner_product(const NetworkSpec& spec, int m, const UnitVector& x, const UnitVector& xp,
                                    CounterRng rng) {
  const std::size_t dim = x.dim();
  const double t = x.dot(xp);
  // Streams are keyed by parameter name so that networks::build with the same
  // seed reproduces these weights exactly.
  const bool pi = spec.kind == Architecture::TwoLayerPi;
  CounterRng rng_w1 = rng.split("W1");
  CounterRng rng_w2 = rng.split("W2");
  CounterRng rng_out = rng.split(pi ? "W3" : "W2");
  double sum = 0.0;
  for (int i = 0; i < m; ++i) {
    double u = 0.0, up = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double w = rng_w1.normal();
      u += w * x[j];
      up += w * xp[j];
    }
    if (!pi) {
      const double a = rng_out.normal();
      // d/da_i and d/dw_i of sqrt(2/m) a_i relu(w_i . x)
      sum += relu(u) * relu(up) + a * a * relu_grad(u) * relu_grad(up) * t;
    } else {
      double v = 0.0, vp = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double w = rng_w2.normal();
        v += w * x[j];
        vp += w * xp[j];
      }
      const double c = rng_out.normal();
      // f = sqrt(2/m) sum_i c_i relu(u_i) relu(v_i)
      sum += relu(u) * relu(v) * relu(up) * relu(vp) +
             c * c * relu(v) * relu(vp) * relu_grad(u) * relu_grad(up) * t +
             c * c * relu(u) * relu(up) * relu_grad(v) * relu_grad(vp) * t;
    }
  }
  return 2.0 * sum / static_cast<double>(m);
}

}  // namespace detail

// Finite-width tangent kernel <grad_W f(x), grad_W f(x')> at standard-normal
// initialization, averaged over independent draws.
inline NtkEstimate empirical_ntk(const NetworkSpec& spec, int m, const UnitVector& x, const UnitVector& xp,
                                 std::uint64_t seed, int n_draws) {
  if (spec.kind != Architecture::TwoLayerReLU && spec.kind != Architecture::TwoLayerPi)
    throw UnsupportedArchitecture("empirical_ntk: only two-layer ReLU and two-layer Pi-Net are supported");
  if (m < 1) throw ConfigError("empirical_ntk: width must be >= 1");
  if (n_draws < 1) throw ConfigError("empirical_ntk: n_draws must be >= 1");
  if (x.dim() != xp.dim()) throw DomainError("empirical_ntk: dimension mismatch");
  if (static_cast<int>(x.dim()) != spec.input_dim) throw DomainError("empirical_ntk: input_dim mismatch");

  NtkEstimate est;
  est.draws.reserve(static_cast<std::size_t>(n_draws));
  const CounterRng root(seed);
  for (int draw = 0; draw < n_draws; ++draw)
    est.draws.push_back(detail::tangent_inner_product(spec, m, x, xp, root.split(static_cast<std::uint64_t>(draw))));
  double sum = 0.0;
  for (double v : est.draws) sum += v;
  est.mean = sum / n_draws;
  if (n_draws > 1) {
    double ss = 0.0;
    for (double v : est.draws) ss += (v - est.mean) * (v - est.mean);
    est.std_error = std::sqrt(ss / (n_draws - 1) / n_draws);
  }
  return est;
}

}  // namespace pinet::kernels
