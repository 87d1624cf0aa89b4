#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "pinet/errors.hpp"
#include "pinet/random.hpp"

namespace pinet::linalg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct SymmetricEigen {
  Vector values;   // ascending
  Matrix vectors;  // column j pairs with values[j]
  int sweeps = 0;
};

// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops below
// `tolerance` (absolute) or `max_sweeps` is reached.
inline SymmetricEigen jacobi_eigen(Matrix a, double tolerance = 1e-12, int max_sweeps = 100,
                                   bool want_vectors = true) {
  if (a.rows() != a.cols()) throw ShapeError("jacobi_eigen: matrix must be square");
  const Eigen::Index n = a.rows();
  Matrix v = want_vectors ? Matrix::Identity(n, n) : Matrix(0, 0);

  auto off_norm = [&] {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) s += 2.0 * a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  SymmetricEigen out;
  for (out.sweeps = 0; out.sweeps < max_sweeps; ++out.sweeps) {
    if (off_norm() < tolerance) break;
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        if (want_vectors) {
          for (Eigen::Index k = 0; k < n; ++k) {
            const double vkp = v(k, p);
            const double vkq = v(k, q);
            v(k, p) = c * vkp - s * vkq;
            v(k, q) = s * vkp + c * vkq;
          }
        }
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](auto i, auto j) { return a(i, i) < a(j, j); });
  out.values.resize(n);
  if (want_vectors) out.vectors.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto src = order[static_cast<std::size_t>(i)];
    out.values[i] = a(src, src);
    if (want_vectors) out.vectors.col(i) = v.col(src);
  }
  return out;
}

// Largest eigenvalue of a symmetric PSD matrix by power iteration.
inline double largest_eigenvalue(const Matrix& a, double rel_tol = 1e-10, int max_iter = 10000) {
  if (a.rows() != a.cols()) throw ShapeError("largest_eigenvalue: matrix must be square");
  if (a.rows() == 0) return 0.0;
  CounterRng rng(0x5eed);
  Vector x(a.rows());
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = 1.0 + 0.01 * rng.normal();
  x.normalize();
  double lambda = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Vector y = a * x;
    const double next = x.dot(y);
    const double norm = y.norm();
    if (norm == 0.0) return 0.0;
    x = y / norm;
    if (std::abs(next - lambda) <= rel_tol * std::abs(next)) return next;
    lambda = next;
  }
  return lambda;
}

}  // namespace pinet::linalg
