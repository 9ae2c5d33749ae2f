#include <gtest/gtest.h>

#include <cmath>

#include "ifm/env_model.hpp"
#include "ifm/gaussian_risk.hpp"
#include "ifm/rng.hpp"
#include "test_util.hpp"

using namespace ifm;

TEST(StandardNormalCdf, BasicValues) {
  EXPECT_DOUBLE_EQ(standard_normal_cdf(0.0), 0.5);
  EXPECT_NEAR(standard_normal_cdf(1.0), 0.841344746, 1e-9);
}

TEST(StandardNormalCdf, MatchesQuadratureOracle) {
  for (double t : {-3.0, -1.5, -0.5, 0.25, 1.0, 1.7320508075688772, 2.5}) {
    EXPECT_NEAR(standard_normal_cdf(t), test::normal_cdf_oracle(t), 1e-12)
        << "t = " << t;
  }
}

TEST(StandardNormalCdf, Symmetry) {
  for (double t = -6.0; t <= 6.0; t += 0.37)
    EXPECT_NEAR(standard_normal_cdf(t) + standard_normal_cdf(-t), 1.0, 1e-14);
}

TEST(ZeroOneAccuracy, InvariantDirectionHitsPhiSqrt3) {
  const ModelSpec spec = test::default_spec(3);
  const EnvParams env = sample_environment(spec, 0, 10.0);
  Vector v = Vector::Zero(35);
  v.head(3) = Vector::Ones(3) / std::sqrt(3.0);
  const double acc = zero_one_accuracy({v, true}, spec, env);
  // beta1'mu1 / sqrt(beta1'beta1) = sqrt(3) with mu1 = 1, sigma1 = I.
  EXPECT_NEAR(acc, test::normal_cdf_oracle(std::sqrt(3.0)), 1e-12);
}

TEST(ZeroOneAccuracy, MonteCarloCrossCheck) {
  const ModelSpec spec = test::default_spec(47);
  const EnvParams env = sample_environment(spec, 0, 10.0);
  RngStream rng(99);
  const Vector v = rng.sphere_vector(35);
  const LinearClassifier clf{v, true};
  const double analytic = zero_one_accuracy(clf, spec, env);
  const long n = 200000;
  const double mc = empirical_accuracy(clf, sample_dataset(spec, env, n, 7));
  EXPECT_NEAR(mc, analytic, 4.0 * std::sqrt(0.25 / n));
}

TEST(ZeroOneAccuracy, OrthogonalClassifierIsCoinFlip) {
  // d_s = 0 and v orthogonal to the only variation direction.
  Vector mu1(2);
  mu1 << 1.0, 0.0;
  Matrix sigma1(2, 2);
  sigma1 << 1.0, 0.0, 0.0, 1.0;
  const ModelSpec spec =
      make_model_spec(2, 1, mu1, sigma1, std::nullopt, 1.0, 0);
  EnvParams env = sample_environment(spec, 0, 10.0);
  // Make the spurious coordinate completely silent.
  env.mu2.setZero();
  env.sigma2.setZero();
  Vector v = Vector::Zero(3);
  v[2] = 1.0;
  EXPECT_DOUBLE_EQ(zero_one_accuracy({v, true}, spec, env), 0.5);
}

TEST(ZeroOneAccuracy, PositiveScaleInvariance) {
  const ModelSpec spec = test::default_spec(53, /*random_mix=*/true);
  const EnvParams env = sample_environment(spec, 0, 10.0);
  RngStream rng(5);
  const Vector v = rng.gaussian_vector(35);
  const double base = zero_one_accuracy({v, false}, spec, env);
  for (int i = 0; i < 20; ++i) {
    const double c = rng.uniform_open() * 1000.0;
    EXPECT_NEAR(zero_one_accuracy({c * v, false}, spec, env), base, 1e-12);
  }
}

TEST(ZeroOneAccuracy, FlipNegatesSpuriousMarginOnly) {
  const ModelSpec spec = test::default_spec(59);
  const EnvParams env = sample_environment(spec, 0, 10.0);
  const EnvParams test_env = flip_test_environment(env);
  RngStream rng(6);
  const Vector v = rng.sphere_vector(35);
  const Vector beta = spec.S.transpose() * v;
  const double num =
      beta.head(3).dot(spec.mu1) - beta.tail(32).dot(env.mu2);
  const double var = beta.head(3).dot(spec.sigma1 * beta.head(3)) +
                     beta.tail(32).dot(env.sigma2 * beta.tail(32));
  EXPECT_NEAR(zero_one_accuracy({v, true}, spec, test_env),
              standard_normal_cdf(num / std::sqrt(var)), 1e-12);
}

TEST(ZeroOneAccuracy, PurelyInvariantClassifierUnaffectedByFlip) {
  const ModelSpec spec = test::default_spec(61, /*random_mix=*/true);
  const EnvParams env = sample_environment(spec, 0, 10.0);
  // Build a vector with zero spurious mass through the mixing matrix.
  Eigen::HouseholderQR<Matrix> qr(spec.spurious_columns());
  const Vector v = Matrix(qr.householderQ()).rightCols(3).col(0);
  const double train = zero_one_accuracy({v, true}, spec, env);
  const double test =
      zero_one_accuracy({v, true}, spec, flip_test_environment(env));
  EXPECT_NEAR(train, test, 1e-14);
}

TEST(ZeroOneAccuracy, MonotoneInInvariantMargin) {
  const ModelSpec spec = test::default_spec(67);
  const EnvParams env = sample_environment(spec, 0, 10.0);
  double prev = 0.0;
  for (double a : {0.1, 0.5, 1.0, 2.0, 4.0}) {
    Vector v = Vector::Zero(35);
    v.head(3) = a * Vector::Ones(3);
    v /= v.norm();
    // Same denominator structure (sigma1 = I): acc = Phi(a*sqrt3 / (a)) is
    // constant under normalization, so instead scale mu1 via a fresh spec.
    const ModelSpec scaled = make_model_spec(
        3, 32, a * Vector::Ones(3), Matrix::Identity(3, 3), std::nullopt,
        100.0, spec.seed);
    const double acc = zero_one_accuracy({v, true}, scaled, env);
    EXPECT_GT(acc, prev);
    prev = acc;
  }
}

TEST(EmpiricalAccuracy, PerfectlySeparatedToySet) {
  Dataset ds;
  ds.x.resize(4, 2);
  ds.x << 1.0, 0.0, 2.0, 1.0, -1.0, 0.5, -3.0, -1.0;
  ds.y.resize(4);
  ds.y << 1, 1, -1, -1;
  Vector v(2);
  v << 1.0, 0.0;
  EXPECT_DOUBLE_EQ(empirical_accuracy({v, false}, ds), 1.0);
}

TEST(EmpiricalAccuracy, ZeroClassifierScoresZero) {
  Dataset ds;
  ds.x.resize(2, 2);
  ds.x << 1.0, 0.0, -1.0, 0.0;
  ds.y.resize(2);
  ds.y << 1, -1;
  EXPECT_DOUBLE_EQ(empirical_accuracy({Vector::Zero(2), false}, ds), 0.0);
}

TEST(EmpiricalAccuracy, RejectsEmptyDataset) {
  Dataset ds;
  ds.x.resize(0, 2);
  ds.y.resize(0);
  EXPECT_THROW(empirical_accuracy({Vector::Zero(2), false}, ds), ConfigError);
}

TEST(EstimateMoments, MirroredPair) {
  Dataset ds;
  ds.x.resize(2, 2);
  ds.x << 1.0, 2.0, -1.0, -2.0;
  ds.y.resize(2);
  ds.y << 1, -1;
  const MomentSet ms = estimate_moments(ds);
  Vector expect(2);
  expect << 1.0, 2.0;
  EXPECT_EQ(ms.mean_pos, expect);
  EXPECT_EQ(ms.mean_neg, Vector(-expect));
  EXPECT_EQ(ms.second_pos, ms.second_neg);
  EXPECT_FALSE(ms.analytic);
  EXPECT_EQ(ms.n, 2);
}

TEST(EstimateMoments, MissingClassRaises) {
  Dataset ds;
  ds.x.resize(2, 1);
  ds.x << 1.0, 2.0;
  ds.y.resize(2);
  ds.y << 1, 1;
  EXPECT_THROW(estimate_moments(ds), MissingClassError);
}

TEST(MonteCarloAgreement, RandomClassifierEnvironmentPairs) {
  // Smaller version of the acceptance battery: binomial 4-sigma at n = 2e4.
  RngStream rng(77);
  const long n = 20000;
  for (int i = 0; i < 10; ++i) {
    const ModelSpec spec = test::default_spec(1000 + i, i % 2 == 1);
    EnvParams env = sample_environment(spec, i, 10.0);
    if (i % 3 == 0) env = flip_test_environment(env);
    const LinearClassifier clf{rng.sphere_vector(35), true};
    const double analytic = zero_one_accuracy(clf, spec, env);
    const double mc =
        empirical_accuracy(clf, sample_dataset(spec, env, n, 11));
    EXPECT_NEAR(mc, analytic, 4.0 * std::sqrt(0.25 / n)) << "pair " << i;
  }
}
