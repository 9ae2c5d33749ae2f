#ifndef IFM_LOGISTIC_HPP
#define IFM_LOGISTIC_HPP

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "ifm/types.hpp"

namespace ifm {

inline double sigmoid(double u) {
  if (u >= 0.0) {
    const double e = std::exp(-u);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(u);
  return e / (1.0 + e);
}

inline double softplus(double u) {
  // log(1 + e^u), overflow-safe
  return u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u));
}

namespace detail {

/// Fixed Gaussian quadrature grid: trapezoid rule on [-13, 13] against the
/// standard normal density. For the smooth, rapidly decaying integrands used
/// here this is accurate to near machine precision.
struct GaussQuadrature {
  std::vector<double> nodes;
  std::vector<double> weights;

  GaussQuadrature() {
    const double lo = -13.0, hi = 13.0, h = 0.05;
    const int n = static_cast<int>((hi - lo) / h) + 1;
    nodes.resize(n);
    weights.resize(n);
    const double inv_sqrt_2pi = 0.3989422804014327;
    for (int i = 0; i < n; ++i) {
      const double t = lo + i * h;
      nodes[i] = t;
      double w = inv_sqrt_2pi * std::exp(-0.5 * t * t) * h;
      if (i == 0 || i == n - 1) w *= 0.5;
      weights[i] = w;
    }
  }
};

inline const GaussQuadrature& quadrature() {
  static const GaussQuadrature q;
  return q;
}

/// E_t[f(c + s t)] for t ~ N(0,1).
template <typename F>
double gauss_expect(double c, double s, F&& f) {
  const auto& q = quadrature();
  double acc = 0.0;
  for (std::size_t i = 0; i < q.nodes.size(); ++i)
    acc += q.weights[i] * f(c + s * q.nodes[i]);
  return acc;
}

}  // namespace detail

/// One environment's class-+1 Gaussian, standing for the symmetric pair
/// (x | y) ~ N(y * mean, cov).
struct GaussianEnvMoment {
  Vector mean;
  Matrix cov;
};

inline GaussianEnvMoment gaussian_env_moment(const MomentSet& ms) {
  return GaussianEnvMoment{ms.mean_pos, ms.cov_pos()};
}

// ---------------------------------------------------------------------------
// Population objective (infinite-sample limit)
// ---------------------------------------------------------------------------

/// Average logistic risk over symmetric Gaussian environments, together with
/// its exact gradient. For z = v'x ~ N(c, s^2),
///   R_e   = E[softplus(-z)]
///   grad  = -mean * E[sigma(-z)] + cov * v * E[sigma'(-z)]
/// where the 1-D expectations are evaluated by quadrature.
class PopulationLogistic {
 public:
  explicit PopulationLogistic(std::vector<GaussianEnvMoment> envs)
      : envs_(std::move(envs)) {}

  Eigen::Index dim() const { return envs_.at(0).mean.size(); }
  std::size_t num_envs() const { return envs_.size(); }

  double value_grad(const Vector& v, Vector& grad) const {
    grad = Vector::Zero(v.size());
    double risk = 0.0;
    for (const auto& env : envs_) {
      const double c = v.dot(env.mean);
      const Vector sv = env.cov * v;
      const double s = std::sqrt(std::max(v.dot(sv), 0.0));
      risk += detail::gauss_expect(c, s, [](double z) { return softplus(-z); });
      const double i0 =
          detail::gauss_expect(c, s, [](double z) { return sigmoid(-z); });
      const double i1 = detail::gauss_expect(c, s, [](double z) {
        const double p = sigmoid(-z);
        return p * (1.0 - p);
      });
      grad += -i0 * env.mean + i1 * sv;
    }
    const double inv = 1.0 / static_cast<double>(envs_.size());
    grad *= inv;
    return risk * inv;
  }

  /// Per-environment IRMv1 penalty terms: J_e = d/dt R_e(t v) at t = 1 and
  /// its gradient in v. The penalty is J_e^2.
  double irm_penalty_grad(const Vector& v, Vector& grad) const {
    grad = Vector::Zero(v.size());
    double total = 0.0;
    const auto h = [](double z) { return -z * sigmoid(-z); };
    const auto hp = [](double z) {
      const double p = sigmoid(-z);
      return -p + z * p * (1.0 - p);
    };
    const auto hpp = [](double z) {
      const double p = sigmoid(-z);
      const double pp = p * (1.0 - p);
      return 2.0 * pp - z * pp * (1.0 - 2.0 * p);
    };
    for (const auto& env : envs_) {
      const double c = v.dot(env.mean);
      const Vector sv = env.cov * v;
      const double s = std::sqrt(std::max(v.dot(sv), 0.0));
      const double j = detail::gauss_expect(c, s, h);
      const double eh = detail::gauss_expect(c, s, hp);
      const double ehp = detail::gauss_expect(c, s, hpp);
      const Vector dj = eh * env.mean + ehp * sv;
      total += j * j;
      grad += 2.0 * j * dj;
    }
    return total;
  }

  /// Upper bound on the logistic Hessian's largest eigenvalue: the pooled
  /// uncentered second moment over 4.
  double curvature() const {
    Matrix m = Matrix::Zero(dim(), dim());
    for (const auto& env : envs_)
      m += env.cov + env.mean * env.mean.transpose();
    m /= static_cast<double>(envs_.size());
    Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff() / 4.0;
  }

 private:
  std::vector<GaussianEnvMoment> envs_;
};

// ---------------------------------------------------------------------------
// Empirical objective
// ---------------------------------------------------------------------------

/// Average logistic loss over one or more datasets, kept separated per
/// environment so the IRMv1 penalty can be formed per environment.
class EmpiricalLogistic {
 public:
  explicit EmpiricalLogistic(std::vector<const Dataset*> datasets)
      : datasets_(std::move(datasets)) {
    if (datasets_.empty()) throw ConfigError("no datasets");
    long total = 0;
    for (const auto* ds : datasets_) total += ds->size();
    total_ = total;
  }

  Eigen::Index dim() const { return datasets_.at(0)->dim(); }
  std::size_t num_envs() const { return datasets_.size(); }

  /// Pooled average logistic loss; every sample weighs equally.
  double value_grad(const Vector& v, Vector& grad) const {
    grad = Vector::Zero(v.size());
    double loss = 0.0;
    for (const auto* ds : datasets_) {
      const Vector z = ds->x * v;
      Vector coef(z.size());
      for (Eigen::Index i = 0; i < z.size(); ++i) {
        const double u = ds->y[i] * z[i];
        loss += softplus(-u);
        coef[i] = -ds->y[i] * sigmoid(-u);
      }
      grad.noalias() += ds->x.transpose() * coef;
    }
    const double inv = 1.0 / static_cast<double>(total_);
    grad *= inv;
    return loss * inv;
  }

  double irm_penalty_grad(const Vector& v, Vector& grad) const {
    grad = Vector::Zero(v.size());
    double total = 0.0;
    for (const auto* ds : datasets_) {
      const Vector z = ds->x * v;
      double j = 0.0;
      Vector dj = Vector::Zero(v.size());
      Vector coef(z.size());
      for (Eigen::Index i = 0; i < z.size(); ++i) {
        const double u = ds->y[i] * z[i];
        const double p = sigmoid(-u);
        j += -u * p;
        coef[i] = ds->y[i] * (-p + u * p * (1.0 - p));
      }
      const double inv = 1.0 / static_cast<double>(ds->size());
      j *= inv;
      dj = inv * (ds->x.transpose() * coef);
      total += j * j;
      grad += 2.0 * j * dj;
    }
    return total;
  }

  double curvature() const {
    Matrix m = Matrix::Zero(dim(), dim());
    for (const auto* ds : datasets_) m.noalias() += ds->x.transpose() * ds->x;
    m /= static_cast<double>(total_);
    Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff() / 4.0;
  }

 private:
  std::vector<const Dataset*> datasets_;
  long total_ = 0;
};

// ---------------------------------------------------------------------------
// Gradient-descent driver
// ---------------------------------------------------------------------------

struct GdResult {
  Vector v;
  double loss = 0.0;
  int iterations = 0;
};

/// Plain gradient descent with a fixed step scaled by a curvature estimate.
/// If the loss rises above its best value for `patience` consecutive
/// iterations the run restarts once with a quarter step; a second failure
/// raises DivergenceError.
template <typename Objective, typename Extra>
GdResult gd_minimize(const Objective& obj, Extra&& extra_grad, Vector v0,
                     const OptConfig& opt) {
  const double curv = std::max(obj.curvature(), 1e-12);
  double step = opt.step_size / curv;
  for (int attempt = 0; attempt < 3; ++attempt) {
    Vector v = v0;
    Vector grad(v.size());
    double best = std::numeric_limits<double>::infinity();
    double loss = 0.0;
    int bad = 0;
    int it = 0;
    bool diverged = false;
    for (; it < opt.max_iters; ++it) {
      loss = obj.value_grad(v, grad);
      loss += extra_grad(v, grad);
      if (loss < best) {
        best = loss;
        bad = 0;
      } else if (++bad > opt.patience) {
        diverged = true;
        break;
      }
      if (grad.norm() <= opt.grad_tol) break;
      v -= step * grad;
    }
    if (!diverged) return GdResult{std::move(v), loss, it};
    step *= 0.25;
  }
  throw DivergenceError("gradient descent diverged");
}

struct NoExtra {
  double operator()(const Vector&, Vector&) const { return 0.0; }
};

}  // namespace ifm

#endif  // IFM_LOGISTIC_HPP
