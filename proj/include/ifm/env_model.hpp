#ifndef IFM_ENV_MODEL_HPP
#define IFM_ENV_MODEL_HPP

#include <cmath>
#include <functional>
#include <optional>
#include <utility>

#include <Eigen/Dense>

#include "ifm/rng.hpp"
#include "ifm/types.hpp"

namespace ifm {

// ---------------------------------------------------------------------------
// Validation helpers
// ---------------------------------------------------------------------------

inline bool is_symmetric(const Matrix& m, double tol = 1e-10) {
  if (m.rows() != m.cols()) return false;
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * (1.0 + m.cwiseAbs().maxCoeff());
}

inline double min_eigenvalue(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline double operator_norm(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline void require_spd(const Matrix& m, const char* what) {
  if (!is_symmetric(m))
    throw NotSpdError(std::string(what) + " is not symmetric");
  if (min_eigenvalue(m) <= 0.0)
    throw NotSpdError(std::string(what) + " is not positive definite");
}

// ---------------------------------------------------------------------------
// Model spec
// ---------------------------------------------------------------------------

/// Validates a problem instance. If S is omitted it defaults to the identity,
/// keeping the invariant coordinates axis-aligned.
inline ModelSpec make_model_spec(int r, int d_s, Vector mu1, Matrix sigma1,
                                 std::optional<Matrix> S, double D,
                                 std::uint64_t seed) {
  if (r < 1 || d_s < 0) throw DimensionError("require r >= 1 and d_s >= 0");
  const int d = r + d_s;
  if (mu1.size() != r) throw DimensionError("mu1 length must equal r");
  if (sigma1.rows() != r || sigma1.cols() != r)
    throw DimensionError("sigma1 must be r x r");
  require_spd(sigma1, "sigma1");
  if (D < 0.0) throw ConfigError("D must be nonnegative");

  Matrix mix;
  if (S.has_value()) {
    mix = std::move(*S);
    if (mix.rows() != d || mix.cols() != d)
      throw DimensionError("S must be d x d");
    Eigen::ColPivHouseholderQR<Matrix> qr(mix.leftCols(r));
    if (qr.rank() < r)
      throw RankError("left r columns of S are rank-deficient");
  } else {
    mix = Matrix::Identity(d, d);
  }

  ModelSpec spec;
  spec.r = r;
  spec.d_s = d_s;
  spec.d = d;
  spec.mu1 = std::move(mu1);
  spec.sigma1 = std::move(sigma1);
  spec.S = std::move(mix);
  spec.D = D;
  spec.seed = seed;
  return spec;
}

/// Source of the covariance bias matrix sigma2_bar for an environment.
/// The default yields the zero matrix (pure Wishart covariances).
using Sigma2BarSource = std::function<Matrix(int index)>;

inline Sigma2BarSource zero_bias() {
  return [](int) { return Matrix(); };  // empty signals zero
}

/// Draws one training environment: mu2 ~ N(0, mu2_scale * I), G with iid
/// standard normal entries, sigma2 = sigma2_bar + G G^T. The draw is a pure
/// function of (spec.seed, index), so adding environments never perturbs
/// earlier ones.
inline EnvParams sample_environment(const ModelSpec& spec, int index,
                                    double mu2_scale,
                                    const Sigma2BarSource& bias_source = {},
                                    std::optional<std::uint64_t> seed_override =
                                        std::nullopt) {
  if (mu2_scale <= 0.0) throw ConfigError("mu2_scale must be positive");
  const int d_s = spec.d_s;
  const std::uint64_t base = seed_override.value_or(spec.seed);
  RngStream rng(derive_seed(base, {stream::kEnv, static_cast<std::uint64_t>(index)}));

  EnvParams env;
  env.index = index;
  env.mu2 = std::sqrt(mu2_scale) * rng.gaussian_vector(d_s);
  env.G = rng.gaussian_matrix(d_s, d_s);

  Matrix bias;
  if (bias_source) bias = bias_source(index);
  if (bias.size() == 0) bias = Matrix::Zero(d_s, d_s);
  if (bias.rows() != d_s || bias.cols() != d_s)
    throw DimensionError("sigma2_bar must be d_s x d_s");
  if (!is_symmetric(bias)) throw NotSpdError("sigma2_bar is not symmetric");
  if (d_s > 0) {
    const double op = operator_norm(bias);
    if (min_eigenvalue(bias) < -1e-10 * (1.0 + op))
      throw NotSpdError("sigma2_bar is not positive semidefinite");
    if (op * op > spec.D * (1.0 + 1e-12))
      throw ConfigError("sigma2_bar violates the operator-norm bound D");
  }
  env.sigma2_bar = std::move(bias);
  env.sigma2 = env.sigma2_bar + env.G * env.G.transpose();
  if (d_s > 0 && min_eigenvalue(env.sigma2) <= 0.0)
    throw NotSpdError("realized sigma2 is not positive definite");
  env.flipped = false;
  return env;
}

/// Builds the paired test environment: identical except that the spurious
/// mean's coupling to the label is negated. sigma2 is carried over bitwise.
inline EnvParams flip_test_environment(const EnvParams& env) {
  if (env.flipped) throw AlreadyFlippedError("environment already flipped");
  EnvParams out = env;
  out.flipped = true;
  return out;
}

// ---------------------------------------------------------------------------
// Moments and samples
// ---------------------------------------------------------------------------

/// Latent class-+1 mean [mu1; s * mu2], s = -1 on flipped environments.
inline Vector latent_mean_pos(const ModelSpec& spec, const EnvParams& env) {
  Vector m(spec.d);
  m.head(spec.r) = spec.mu1;
  m.tail(spec.d_s) = (env.flipped ? -1.0 : 1.0) * env.mu2;
  return m;
}

/// Latent conditional covariance blockdiag(sigma1, sigma2).
inline Matrix latent_covariance(const ModelSpec& spec, const EnvParams& env) {
  Matrix c = Matrix::Zero(spec.d, spec.d);
  c.topLeftCorner(spec.r, spec.r) = spec.sigma1;
  c.bottomRightCorner(spec.d_s, spec.d_s) = env.sigma2;
  return c;
}

/// Exact population moments of the observation X = S Z for one environment.
inline MomentSet analytic_moments(const ModelSpec& spec, const EnvParams& env) {
  MomentSet ms;
  ms.mean_pos = spec.S * latent_mean_pos(spec, env);
  const Matrix cov = spec.S * latent_covariance(spec, env) * spec.S.transpose();
  ms.second_pos = cov + ms.mean_pos * ms.mean_pos.transpose();
  ms.mean_neg = -ms.mean_pos;
  ms.second_neg = ms.second_pos;
  ms.analytic = true;
  ms.n = 0;
  return ms;
}

/// Draws n iid labeled samples from the environment. Deterministic given
/// (spec.seed, env.index, env.flipped, purpose) regardless of call order.
inline Dataset sample_dataset(const ModelSpec& spec, const EnvParams& env,
                              long n, std::uint64_t purpose = 0,
                              std::optional<std::uint64_t> seed_override =
                                  std::nullopt) {
  if (n < 1) throw ConfigError("need n >= 1 samples");
  const std::uint64_t base = seed_override.value_or(spec.seed);
  RngStream rng(derive_seed(
      base, {stream::kDataset, static_cast<std::uint64_t>(env.index),
             env.flipped ? 1ULL : 0ULL, purpose}));

  Eigen::LLT<Matrix> llt1(spec.sigma1);
  if (llt1.info() != Eigen::Success)
    throw NotSpdError("sigma1 Cholesky failed");
  Matrix l2;
  if (spec.d_s > 0) {
    Eigen::LLT<Matrix> llt2(env.sigma2);
    if (llt2.info() != Eigen::Success)
      throw NotSpdError("sigma2 Cholesky failed (corrupted EnvParams?)");
    l2 = llt2.matrixL();
  }
  const Matrix l1 = llt1.matrixL();
  const double sign = env.flipped ? -1.0 : 1.0;

  Dataset ds;
  ds.x.resize(n, spec.d);
  ds.y.resize(n);
  Vector z(spec.d);
  for (long i = 0; i < n; ++i) {
    const int y = rng.uniform() < 0.5 ? 1 : -1;
    z.head(spec.r) = y * spec.mu1 + l1 * rng.gaussian_vector(spec.r);
    if (spec.d_s > 0)
      z.tail(spec.d_s) =
          sign * y * env.mu2 + l2 * rng.gaussian_vector(spec.d_s);
    ds.x.row(i) = (spec.S * z).transpose();
    ds.y[i] = y;
  }
  return ds;
}

/// Seeded random-orthogonal mixing matrix for the `--mix random-orthogonal`
/// mode; all algorithms are rotation-covariant, so the same invariants must
/// hold as with the identity default.
inline Matrix random_orthogonal_mix(int d, std::uint64_t seed) {
  RngStream rng(derive_seed(seed, {stream::kMix}));
  return random_orthogonal(d, rng);
}

}  // namespace ifm

#endif  // IFM_ENV_MODEL_HPP
