#ifndef IFM_THEORY_CHECKS_HPP
#define IFM_THEORY_CHECKS_HPP

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ifm/algorithms.hpp"
#include "ifm/gaussian_risk.hpp"
#include "ifm/rng.hpp"
#include "ifm/types.hpp"

namespace ifm {

// ---------------------------------------------------------------------------
// ERM lower-bound check
// ---------------------------------------------------------------------------

/// Outcome of one attempted falsification of the ERM accuracy threshold.
/// `hypotheses_ok` reports whether the isotropic preconditions held at all;
/// `applicable` whether the classifier's worst training accuracy clears the
/// threshold tau; `violated` whether, despite applicability, some flipped
/// test environment still had accuracy above one half. A single violated
/// verdict across the battery indicates an implementation bug.
struct ErmBoundVerdict {
  bool hypotheses_ok = false;
  bool applicable = false;
  bool violated = false;
  double gamma_min = std::numeric_limits<double>::quiet_NaN();
  double tau = std::numeric_limits<double>::quiet_NaN();
  double max_flipped_accuracy = std::numeric_limits<double>::quiet_NaN();
  std::string reason;
};

namespace detail {

inline bool is_scaled_identity(const Matrix& m, double* scale,
                               double tol = 1e-9) {
  if (m.rows() != m.cols() || m.rows() == 0) return false;
  const double s = m.trace() / static_cast<double>(m.rows());
  const Matrix resid = m - s * Matrix::Identity(m.rows(), m.cols());
  if (resid.cwiseAbs().maxCoeff() > tol * (1.0 + std::abs(s))) return false;
  *scale = s;
  return true;
}

}  // namespace detail

/// Requires the isotropic setting sigma1 = s1^2 I, sigma2_bar = s2^2 I (same
/// s2 across environments) and E <= d_s; otherwise reports hypotheses_ok =
/// false rather than failing.
inline ErmBoundVerdict erm_lower_bound_check(const LinearClassifier& clf,
                                             const ModelSpec& spec,
                                             const std::vector<EnvParams>& envs) {
  ErmBoundVerdict verdict;
  if (envs.empty()) {
    verdict.reason = "no environments";
    return verdict;
  }
  if (static_cast<int>(envs.size()) > spec.d_s) {
    verdict.reason = "E exceeds d_s";
    return verdict;
  }
  double s1sq = 0.0;
  if (!detail::is_scaled_identity(spec.sigma1, &s1sq) || s1sq <= 0.0) {
    verdict.reason = "sigma1 not isotropic";
    return verdict;
  }
  double s2sq = -1.0;
  for (const auto& env : envs) {
    if (env.flipped) {
      verdict.reason = "training environments must be unflipped";
      return verdict;
    }
    double s = 0.0;
    if (!detail::is_scaled_identity(env.sigma2_bar, &s) || s <= 0.0) {
      verdict.reason = "sigma2_bar not isotropic";
      return verdict;
    }
    if (s2sq < 0.0) {
      s2sq = s;
    } else if (std::abs(s - s2sq) > 1e-9 * (1.0 + s2sq)) {
      verdict.reason = "sigma2_bar differs across environments";
      return verdict;
    }
  }
  verdict.hypotheses_ok = true;

  const double sigma_min = std::min(std::sqrt(s1sq), std::sqrt(s2sq));
  verdict.tau =
      standard_normal_cdf(2.0 * spec.mu1.norm() / sigma_min);

  double gamma_min = 1.0;
  double max_flipped = 0.0;
  for (const auto& env : envs) {
    gamma_min = std::min(gamma_min, zero_one_accuracy(clf, spec, env));
    const EnvParams test_env = flip_test_environment(env);
    max_flipped = std::max(max_flipped, zero_one_accuracy(clf, spec, test_env));
  }
  verdict.gamma_min = gamma_min;
  verdict.max_flipped_accuracy = max_flipped;
  verdict.applicable = gamma_min >= verdict.tau;
  verdict.violated = verdict.applicable && max_flipped > 0.5 + 1e-9;
  return verdict;
}

// ---------------------------------------------------------------------------
// IRM spurious-solution finder
// ---------------------------------------------------------------------------

struct SpuriousSolution {
  Vector u;
  double residual = std::numeric_limits<double>::infinity();
  bool success = false;
  std::vector<double> induced_classifiers;  // u' mu_e / (u' Sigma_e u) per env
};

inline void validate_ellipsoid_system(const EllipsoidSystem& sys) {
  const int d = sys.dim();
  const int e = sys.size();
  if (e == 0 || static_cast<int>(sys.b_list.size()) != e)
    throw ConfigError("empty or inconsistent ellipsoid system");
  if (e > d) throw DimensionError("more constraints than dimensions");
  Matrix b_stack(d, e);
  for (int i = 0; i < e; ++i) {
    if (sys.A_list[i].rows() != d || sys.A_list[i].cols() != d ||
        sys.b_list[i].size() != d)
      throw DimensionError("ellipsoid system dimensions disagree");
    require_spd(sys.A_list[i], "ellipsoid matrix");
    b_stack.col(i) = sys.b_list[i];
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(b_stack);
  qr.setThreshold(1e-10);
  if (qr.rank() < e) throw RankError("ellipsoid centers linearly dependent");
}

namespace detail {

inline Vector ellipsoid_residual(const EllipsoidSystem& sys, const Vector& u) {
  Vector f(sys.size());
  for (int e = 0; e < sys.size(); ++e)
    f[e] = u.dot(sys.A_list[e] * u) - sys.b_list[e].dot(u);
  return f;
}

/// Point on the ellipsoid {x : x'Ax = b'x} with sphere coordinate c:
/// x = A^-1 b / 2 + (sqrt(b'A^-1 b)/2) * sum_i c_i v_i / sqrt(lambda_i).
inline Vector ellipsoid_point(const Matrix& A, const Vector& b,
                              const Vector& c) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(A);
  const Vector x0 = 0.5 * es.eigenvectors() *
                    (es.eigenvalues().cwiseInverse().asDiagonal() *
                     (es.eigenvectors().transpose() * b));
  const double radius = std::sqrt(std::max(b.dot(2.0 * x0), 0.0)) * 0.5;
  Vector x1 = Vector::Zero(b.size());
  for (Eigen::Index i = 0; i < b.size(); ++i)
    x1 += c[i] / std::sqrt(es.eigenvalues()[i]) * es.eigenvectors().col(i);
  return x0 + radius * x1;
}

}  // namespace detail

struct SpuriousSearchConfig {
  int multistarts = 64;
  int newton_iters = 80;
  double residual_tol = 1e-10;  // internal convergence target
  double success_tol = 1e-8;    // reported success threshold
  double min_norm = 1e-4;
};

/// Seeks a nonzero u with u'A_e u = b_e'u for all e, by Newton's method on
/// the square system from multistart points spread over the first ellipsoid.
/// Failure to find one is a reported outcome, not an error.
inline SpuriousSolution irm_spurious_solution_find(
    const EllipsoidSystem& sys, const SpuriousSearchConfig& cfg,
    RngStream& rng) {
  validate_ellipsoid_system(sys);
  const int d = sys.dim();
  const int ne = sys.size();

  SpuriousSolution best;
  best.u = Vector::Zero(d);

  for (int start = 0; start < cfg.multistarts; ++start) {
    const Vector c = rng.sphere_vector(d);
    Vector u = detail::ellipsoid_point(sys.A_list[0], sys.b_list[0], c);
    Vector f = detail::ellipsoid_residual(sys, u);
    double fnorm2 = f.squaredNorm();
    for (int it = 0; it < cfg.newton_iters; ++it) {
      if (f.cwiseAbs().maxCoeff() <= cfg.residual_tol) break;
      Matrix jac(ne, d);
      for (int e = 0; e < ne; ++e)
        jac.row(e) = (2.0 * sys.A_list[e] * u - sys.b_list[e]).transpose();
      const Vector step =
          jac.completeOrthogonalDecomposition().solve(-f);
      double t = 1.0;
      Vector u_next;
      Vector f_next;
      double f_next2 = fnorm2;
      bool accepted = false;
      while (t > 1e-12) {
        u_next = u + t * step;
        f_next = detail::ellipsoid_residual(sys, u_next);
        f_next2 = f_next.squaredNorm();
        if (f_next2 < fnorm2 * (1.0 - 1e-4 * t)) {
          accepted = true;
          break;
        }
        t *= 0.5;
      }
      if (!accepted) break;
      u = std::move(u_next);
      f = std::move(f_next);
      fnorm2 = f_next2;
    }
    const double residual = f.cwiseAbs().maxCoeff();
    if (u.norm() >= cfg.min_norm && residual < best.residual) {
      best.u = u;
      best.residual = residual;
    }
  }

  best.success =
      best.residual <= cfg.success_tol && best.u.norm() >= cfg.min_norm;
  if (best.success) {
    for (int e = 0; e < ne; ++e) {
      const double denom = best.u.dot(sys.A_list[e] * best.u);
      best.induced_classifiers.push_back(sys.b_list[e].dot(best.u) / denom);
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Shrink-rate check
// ---------------------------------------------------------------------------

struct ShrinkVerdict {
  bool dims_ok = false;
  bool rounds_ok = false;
  int first_violation = -1;  // round index (1-based), -1 if none
  int rounds = 0;
  int round_bound = 0;
};

/// Verifies r_t - r < (r_{t-1} - r + 1) / c for every recorded round and
/// that the number of rounds stays within ceil(log_c(d_s)) + 2.
inline ShrinkVerdict ifm_shrink_check(const std::vector<int>& round_dims,
                                      int r, double c) {
  if (round_dims.empty() || r < 1 || c <= 1.0)
    throw ConfigError("invalid shrink-check inputs");
  ShrinkVerdict verdict;
  verdict.rounds = static_cast<int>(round_dims.size()) - 1;
  const int d_s = round_dims.front() - r;
  verdict.round_bound =
      d_s <= 0 ? 2
               : static_cast<int>(std::ceil(std::log(static_cast<double>(d_s)) /
                                            std::log(c))) +
                     2;
  verdict.dims_ok = true;
  for (std::size_t t = 1; t < round_dims.size(); ++t) {
    const double lhs = round_dims[t] - r;
    const double rhs = (round_dims[t - 1] - r + 1) / c;
    if (!(lhs < rhs)) {
      verdict.dims_ok = false;
      verdict.first_violation = static_cast<int>(t);
      break;
    }
  }
  verdict.rounds_ok = verdict.rounds <= verdict.round_bound;
  return verdict;
}

inline ShrinkVerdict ifm_shrink_check(const FeaturizerStack& stack, int r,
                                      double c) {
  if (stack.steps.empty()) throw ConfigError("empty featurizer stack");
  std::vector<int> dims{stack.steps.front().r_in};
  for (const auto& s : stack.steps) dims.push_back(s.r_out);
  return ifm_shrink_check(dims, r, c);
}

// ---------------------------------------------------------------------------
// Spurious leak
// ---------------------------------------------------------------------------

/// Mass of a featurizer on the spurious latent coordinates: the Frobenius
/// norm of the right d_s columns of (composed * S). Zero iff the featurizer
/// uses no spurious dimensions.
inline double spurious_leak(const Matrix& composed, const ModelSpec& spec) {
  if (composed.cols() != spec.d)
    throw DimensionError("featurizer width must equal spec.d");
  return (composed * spec.spurious_columns()).norm();
}

/// Spurious mass |beta_2| of a single predictor vector.
inline double spurious_leak(const Vector& v, const ModelSpec& spec) {
  if (v.size() != spec.d)
    throw DimensionError("vector length must equal spec.d");
  return (spec.spurious_columns().transpose() * v).norm();
}

}  // namespace ifm

#endif  // IFM_THEORY_CHECKS_HPP
