#ifndef IFM_TEST_UTIL_HPP
#define IFM_TEST_UTIL_HPP

#include <cmath>
#include <algorithm>

#include <Eigen/Dense>

#include "ifm/env_model.hpp"
#include "ifm/types.hpp"

namespace ifm::test {

/// Largest principal angle (radians) between the row spaces of two matrices
/// with orthonormal rows and equal row count.
inline double max_principal_angle(const Matrix& a, const Matrix& b) {
  Eigen::JacobiSVD<Matrix> svd(a * b.transpose());
  const double smin =
      std::clamp(svd.singularValues().minCoeff(), -1.0, 1.0);
  return std::acos(smin);
}

/// Angle between two directions, ignoring sign.
inline double angle_between(const Vector& a, const Vector& b) {
  const double c =
      std::clamp(std::abs(a.dot(b)) / (a.norm() * b.norm()), 0.0, 1.0);
  return std::acos(c);
}

/// The default experimental instance: r=3, d_s=32, mu1 = 1, sigma1 = I.
inline ModelSpec default_spec(std::uint64_t seed, bool random_mix = false) {
  const int r = 3, d_s = 32;
  Matrix S;
  if (random_mix) S = random_orthogonal_mix(r + d_s, seed);
  return make_model_spec(r, d_s, Vector::Ones(r), Matrix::Identity(r, r),
                         random_mix ? std::optional<Matrix>(S) : std::nullopt,
                         100.0, seed);
}

/// Independent quadrature oracle for the standard normal CDF: composite
/// Simpson integration of the density from 0 to |t|.
inline double normal_cdf_oracle(double t) {
  const double a = 0.0, b = std::abs(t);
  const int n = 20000;  // even
  const double h = (b - a) / n;
  auto density = [](double x) {
    return std::exp(-0.5 * x * x) * 0.3989422804014327;
  };
  double acc = density(a) + density(b);
  for (int i = 1; i < n; ++i) acc += density(a + i * h) * (i % 2 ? 4.0 : 2.0);
  const double integral = acc * h / 3.0;
  return t >= 0.0 ? 0.5 + integral : 0.5 - integral;
}

}  // namespace ifm::test

#endif  // IFM_TEST_UTIL_HPP
