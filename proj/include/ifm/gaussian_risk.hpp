#ifndef IFM_GAUSSIAN_RISK_HPP
#define IFM_GAUSSIAN_RISK_HPP

#include <cmath>

#include <Eigen/Dense>

#include "ifm/env_model.hpp"
#include "ifm/types.hpp"

namespace ifm {

/// Standard normal CDF via erfc; accurate to well below 1e-12 absolutely
/// over the whole real line.
inline double standard_normal_cdf(double t) {
  return 0.5 * std::erfc(-t * M_SQRT1_2);
}

/// Closed-form 0-1 accuracy of a linear classifier on one environment:
///
///   Phi( (b1' mu1 + s * b2' mu2) / sqrt(b1' Sigma1 b1 + b2' Sigma2 b2) )
///
/// where [b1; b2] = S^T v partitioned into invariant and spurious blocks and
/// s = -1 on flipped environments. A zero denominator (v orthogonal to all
/// class variation) means the predictor is a coin flip: returns 0.5.
inline double zero_one_accuracy(const LinearClassifier& clf,
                                const ModelSpec& spec, const EnvParams& env) {
  if (clf.v.size() != spec.d)
    throw DimensionError("classifier length must equal spec.d");
  const Vector beta = spec.S.transpose() * clf.v;
  const Vector b1 = beta.head(spec.r);
  const Vector b2 = beta.tail(spec.d_s);
  const double sign = env.flipped ? -1.0 : 1.0;
  const double num =
      b1.dot(spec.mu1) + sign * b2.dot(env.mu2);
  double var = b1.dot(spec.sigma1 * b1);
  if (spec.d_s > 0) var += b2.dot(env.sigma2 * b2);
  if (var <= 0.0) return 0.5;
  return standard_normal_cdf(num / std::sqrt(var));
}

inline double zero_one_risk(const LinearClassifier& clf, const ModelSpec& spec,
                            const EnvParams& env) {
  return 1.0 - zero_one_accuracy(clf, spec, env);
}

/// Fraction of samples with sign(v'x) == y. sign(0) counts as an error, so
/// the zero classifier scores exactly 0.
inline double empirical_accuracy(const LinearClassifier& clf,
                                 const Dataset& ds) {
  if (ds.size() == 0) throw ConfigError("empty dataset");
  if (clf.v.size() != ds.dim())
    throw DimensionError("classifier length must equal dataset dim");
  const Vector scores = ds.x * clf.v;
  long correct = 0;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    const int pred = scores[i] > 0.0 ? 1 : (scores[i] < 0.0 ? -1 : 0);
    if (pred == ds.y[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

/// Per-class empirical mean and uncentered second moment.
inline MomentSet estimate_moments(const Dataset& ds) {
  const Eigen::Index n = ds.size();
  if (n == 0) throw ConfigError("empty dataset");
  const Eigen::Index d = ds.dim();
  long n_pos = 0, n_neg = 0;
  Vector mean_pos = Vector::Zero(d), mean_neg = Vector::Zero(d);
  Matrix sec_pos = Matrix::Zero(d, d), sec_neg = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector xi = ds.x.row(i).transpose();
    if (ds.y[i] > 0) {
      ++n_pos;
      mean_pos += xi;
      sec_pos.noalias() += xi * xi.transpose();
    } else {
      ++n_neg;
      mean_neg += xi;
      sec_neg.noalias() += xi * xi.transpose();
    }
  }
  if (n_pos == 0 || n_neg == 0)
    throw MissingClassError("dataset lacks one of the classes");
  MomentSet ms;
  ms.mean_pos = mean_pos / static_cast<double>(n_pos);
  ms.second_pos = sec_pos / static_cast<double>(n_pos);
  ms.mean_neg = mean_neg / static_cast<double>(n_neg);
  ms.second_neg = sec_neg / static_cast<double>(n_neg);
  ms.analytic = false;
  ms.n = n;
  return ms;
}

}  // namespace ifm

#endif  // IFM_GAUSSIAN_RISK_HPP
