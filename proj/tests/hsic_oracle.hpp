#pragma once
// Literal triple-sum HSIC estimator, independent of the library's kernel code.

#include <cmath>
#include <span>

#include "cst/matrix.hpp"

namespace cst::testing {

inline double brute_rbf(std::span<const double> u, std::span<const double> v, double sigma) {
  double sq = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) sq += (u[k] - v[k]) * (u[k] - v[k]);
  return std::exp(-sq / (2 * sigma * sigma));
}

inline double brute_hsic(const Matrix& a, const Matrix& z, double sigma) {
  const std::size_t n = a.rows();
  const double N = static_cast<double>(n);
  double t1 = 0, ks = 0, ls = 0, t3 = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double kij = brute_rbf(a.row(i), a.row(j), sigma);
      const double lij = brute_rbf(z.row(i), z.row(j), sigma);
      t1 += kij * lij;
      ks += kij;
      ls += lij;
      for (std::size_t k = 0; k < n; ++k) t3 += kij * brute_rbf(z.row(i), z.row(k), sigma);
    }
  return t1 / (N * N) + ks * ls / (N * N * N * N) - 2 * t3 / (N * N * N);
}

}  // namespace cst::testing
