#include <gtest/gtest.h>

#include <cmath>

#include "ifm/env_model.hpp"
#include "ifm/gaussian_risk.hpp"
#include "test_util.hpp"

using namespace ifm;

TEST(MakeModelSpec, DefaultInstanceIsValid) {
  const ModelSpec spec = test::default_spec(1);
  EXPECT_EQ(spec.d, 35);
  EXPECT_TRUE(spec.S.isIdentity(0.0));
}

TEST(MakeModelSpec, DegenerateButWellFormed) {
  Vector mu1(1);
  mu1 << 0.0;
  Matrix sigma1(1, 1);
  sigma1 << 1.0;
  const ModelSpec spec = make_model_spec(1, 1, mu1, sigma1, std::nullopt, 1.0, 0);
  EXPECT_EQ(spec.d, 2);
}

TEST(MakeModelSpec, RejectsNonSpdSigma1) {
  Vector mu1(1);
  mu1 << 0.0;
  Matrix zero(1, 1);
  zero << 0.0;
  EXPECT_THROW(make_model_spec(1, 1, mu1, zero, std::nullopt, 1.0, 0),
               NotSpdError);
}

TEST(MakeModelSpec, RejectsDimensionMismatch) {
  Vector mu1(2);
  mu1 << 1.0, 1.0;
  Matrix sigma1 = Matrix::Identity(1, 1);
  EXPECT_THROW(make_model_spec(1, 1, mu1, sigma1, std::nullopt, 1.0, 0),
               DimensionError);
}

TEST(MakeModelSpec, RejectsRankDeficientLeftColumns) {
  Matrix S = Matrix::Identity(3, 3);
  S(0, 0) = 0.0;  // first column vanishes
  Vector mu1(1);
  mu1 << 1.0;
  EXPECT_THROW(
      make_model_spec(1, 2, mu1, Matrix::Identity(1, 1), S, 1.0, 0),
      RankError);
}

TEST(SampleEnvironment, WishartCovarianceWithZeroBias) {
  const ModelSpec spec = test::default_spec(5);
  const EnvParams env = sample_environment(spec, 0, 10.0);
  EXPECT_TRUE(env.sigma2_bar.isZero(0.0));
  EXPECT_LE((env.sigma2 - env.G * env.G.transpose()).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(min_eigenvalue(env.sigma2), 0.0);
  EXPECT_FALSE(env.flipped);
}

TEST(SampleEnvironment, EnforcesBiasBound) {
  const ModelSpec spec = test::default_spec(5);  // D = 100
  const auto ok_bias = [](int) { return Matrix(9.0 * Matrix::Identity(32, 32)); };
  EXPECT_NO_THROW(sample_environment(spec, 0, 10.0, ok_bias));  // 81 <= 100
  const auto bad_bias = [](int) { return Matrix(11.0 * Matrix::Identity(32, 32)); };
  EXPECT_THROW(sample_environment(spec, 0, 10.0, bad_bias), ConfigError);
  const auto asym = [](int) {
    Matrix m = Matrix::Zero(32, 32);
    m(0, 1) = 1.0;
    return m;
  };
  EXPECT_THROW(sample_environment(spec, 0, 10.0, asym), NotSpdError);
}

TEST(SampleEnvironment, DeterministicPerIndexAndSeed) {
  Vector mu1(1);
  mu1 << 1.0;
  const ModelSpec spec =
      make_model_spec(1, 2, mu1, Matrix::Identity(1, 1), std::nullopt, 1.0, 7);
  const EnvParams a = sample_environment(spec, 3, 10.0);
  const EnvParams b = sample_environment(spec, 3, 10.0);
  EXPECT_EQ(a.mu2, b.mu2);
  EXPECT_EQ(a.G, b.G);
  EXPECT_EQ(a.sigma2, b.sigma2);
}

TEST(SampleEnvironment, AddingEnvironmentsNeverPerturbsEarlierOnes) {
  const ModelSpec spec = test::default_spec(11);
  const EnvParams early = sample_environment(spec, 2, 10.0);
  // Generating later indices must not change index 2.
  for (int i = 0; i < 8; ++i) sample_environment(spec, i, 10.0);
  const EnvParams again = sample_environment(spec, 2, 10.0);
  EXPECT_EQ(early.mu2, again.mu2);
  EXPECT_EQ(early.G, again.G);
}

TEST(FlipTestEnvironment, PreservesCovarianceBitwise) {
  const ModelSpec spec = test::default_spec(13);
  const EnvParams env = sample_environment(spec, 0, 10.0);
  const EnvParams flipped = flip_test_environment(env);
  EXPECT_TRUE(flipped.flipped);
  EXPECT_EQ(env.sigma2, flipped.sigma2);
  EXPECT_EQ(env.mu2, flipped.mu2);
  EXPECT_THROW(flip_test_environment(flipped), AlreadyFlippedError);
}

TEST(FlipTestEnvironment, NegatesSpuriousMeanCoupling) {
  const ModelSpec spec = test::default_spec(17);
  const EnvParams env = sample_environment(spec, 0, 10.0);
  const EnvParams flipped = flip_test_environment(env);
  const MomentSet train = analytic_moments(spec, env);
  const MomentSet test = analytic_moments(spec, flipped);
  EXPECT_EQ(train.mean_pos.head(3), test.mean_pos.head(3));
  EXPECT_EQ(Vector(train.mean_pos.tail(32)), Vector(-test.mean_pos.tail(32)));
  // Conditional covariance unchanged.
  EXPECT_LE((train.cov_pos() - test.cov_pos()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FlipTestEnvironment, ZeroMeanFlipIsIdentical) {
  Vector mu1(1);
  mu1 << 1.0;
  ModelSpec spec =
      make_model_spec(1, 2, mu1, Matrix::Identity(1, 1), std::nullopt, 1.0, 19);
  EnvParams env = sample_environment(spec, 0, 10.0);
  env.mu2.setZero();
  const MomentSet a = analytic_moments(spec, env);
  const MomentSet b = analytic_moments(spec, flip_test_environment(env));
  EXPECT_EQ(a.mean_pos, b.mean_pos);
  EXPECT_EQ(a.second_pos, b.second_pos);
}

TEST(AnalyticMoments, IdentityMixBlocks) {
  const ModelSpec spec = test::default_spec(23);
  const EnvParams env = sample_environment(spec, 0, 10.0);
  const MomentSet ms = analytic_moments(spec, env);
  EXPECT_EQ(ms.mean_pos.head(3), Vector(Vector::Ones(3)));
  EXPECT_EQ(Vector(ms.mean_pos.tail(32)), env.mu2);
  EXPECT_EQ(ms.mean_neg, Vector(-ms.mean_pos));
  EXPECT_EQ(ms.second_neg, ms.second_pos);
  const Matrix cov = ms.cov_pos();
  EXPECT_LE((cov.topLeftCorner(3, 3) - spec.sigma1).cwiseAbs().maxCoeff(),
            1e-12);
  EXPECT_LE((cov.bottomRightCorner(32, 32) - env.sigma2).cwiseAbs().maxCoeff(),
            1e-12);
  EXPECT_LE(cov.topRightCorner(3, 32).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(AnalyticMoments, SecondMomentIsCovPlusMeanOuter) {
  const ModelSpec spec = test::default_spec(29, /*random_mix=*/true);
  const EnvParams env = sample_environment(spec, 1, 10.0);
  const MomentSet ms = analytic_moments(spec, env);
  const Matrix cov = ms.cov_pos();
  EXPECT_GE(min_eigenvalue(cov), -1e-10);
  EXPECT_LE((ms.second_pos - cov - ms.mean_pos * ms.mean_pos.transpose())
                .cwiseAbs()
                .maxCoeff(),
            1e-12);
}

TEST(SampleDataset, SingleSampleDeterministic) {
  const ModelSpec spec = test::default_spec(31);
  const EnvParams env = sample_environment(spec, 0, 10.0);
  const Dataset a = sample_dataset(spec, env, 1);
  const Dataset b = sample_dataset(spec, env, 1);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.y, b.y);
  EXPECT_EQ(a.size(), 1);
}

TEST(SampleDataset, EmpiricalMeanWithinCltBound) {
  // Small instance so n = 1e6 stays fast.
  Vector mu1(2);
  mu1 << 1.0, -0.5;
  Matrix sigma1(2, 2);
  sigma1 << 1.0, 0.3, 0.3, 2.0;
  const ModelSpec spec =
      make_model_spec(2, 3, mu1, sigma1, std::nullopt, 1.0, 37);
  const EnvParams env = sample_environment(spec, 0, 10.0);
  const long n = 1000000;
  const Dataset ds = sample_dataset(spec, env, n);
  const MomentSet est = estimate_moments(ds);
  const MomentSet truth = analytic_moments(spec, env);
  const Matrix cov = truth.cov_pos();
  for (int i = 0; i < spec.d; ++i) {
    const double sd = std::sqrt(cov(i, i));
    EXPECT_NEAR(est.mean_pos[i], truth.mean_pos[i],
                5.0 * sd / std::sqrt(n / 2.0))
        << "coordinate " << i;
  }
}

TEST(SampleDataset, SecondMomentErrorShrinksAsRootN) {
  Vector mu1(2);
  mu1 << 1.0, 0.0;
  const ModelSpec spec = make_model_spec(2, 3, mu1, Matrix::Identity(2, 2),
                                         std::nullopt, 1.0, 41);
  const EnvParams env = sample_environment(spec, 0, 10.0);
  const MomentSet truth = analytic_moments(spec, env);
  auto frob_err = [&](long n) {
    const MomentSet est = estimate_moments(sample_dataset(spec, env, n, 99));
    return (est.second_pos - truth.second_pos).norm();
  };
  const double e4 = frob_err(10000);
  const double e6 = frob_err(1000000);
  EXPECT_LT(e6, e4 / 3.0);  // expected factor is 10
  EXPECT_LT(e6, 1.0);
}

TEST(SampleDataset, ClassBalanceAndLabelValues) {
  const ModelSpec spec = test::default_spec(43);
  const EnvParams env = sample_environment(spec, 0, 10.0);
  const Dataset ds = sample_dataset(spec, env, 4000);
  long pos = 0;
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    ASSERT_TRUE(ds.y[i] == 1 || ds.y[i] == -1);
    if (ds.y[i] == 1) ++pos;
  }
  EXPECT_NEAR(static_cast<double>(pos) / ds.size(), 0.5, 0.05);
}

TEST(RandomOrthogonalMix, ProducesOrthogonalMatrix) {
  const Matrix S = random_orthogonal_mix(35, 123);
  EXPECT_LE((S * S.transpose() - Matrix::Identity(35, 35)).norm(), 1e-10);
}
