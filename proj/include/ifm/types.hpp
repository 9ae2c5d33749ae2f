#ifndef IFM_TYPES_HPP
#define IFM_TYPES_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ifm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NotSpdError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct RankError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AlreadyFlippedError : std::logic_error {
  using std::logic_error::logic_error;
};

struct MissingClassError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InfeasibleFloorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EnvironmentsExhaustedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NoChecksSelectedError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Problem instance
// ---------------------------------------------------------------------------

/// Global problem instance: latent dimensions, invariant-class statistics,
/// mixing matrix and the operator-norm-squared budget for covariance biases.
struct ModelSpec {
  int r = 0;    ///< invariant feature dimension
  int d_s = 0;  ///< spurious feature dimension
  int d = 0;    ///< ambient dimension, r + d_s
  Vector mu1;   ///< invariant class mean, length r
  Matrix sigma1;  ///< invariant covariance, r x r SPD
  Matrix S;       ///< mixing matrix, d x d, left r columns of rank r
  double D = 0.0;  ///< bound on ||sigma2_bar||_2^2
  std::uint64_t seed = 0;

  Matrix invariant_columns() const { return S.leftCols(r); }
  Matrix spurious_columns() const { return S.rightCols(d_s); }
};

/// One environment: spurious class mean, covariance bias, noise factor and
/// the realized spurious covariance sigma2 = sigma2_bar + G G^T.
///
/// `flipped` marks a test environment: the coupling of the spurious mean to
/// the label is negated while sigma2 stays bitwise identical.
struct EnvParams {
  int index = 0;
  Vector mu2;
  Matrix sigma2_bar;
  Matrix G;
  Matrix sigma2;
  bool flipped = false;
};

struct LabeledSample {
  Vector x;
  int y = 0;  // +1 or -1
};

/// Column-sample storage for a labeled dataset; row i of `x` is sample i.
struct Dataset {
  Matrix x;             // n x d
  Eigen::VectorXi y;    // n, entries +/-1

  Eigen::Index size() const { return x.rows(); }
  Eigen::Index dim() const { return x.cols(); }
  LabeledSample sample(Eigen::Index i) const {
    return LabeledSample{x.row(i).transpose(), y[i]};
  }
};

/// Class-conditional first and uncentered second moments in observation
/// space. `analytic` moments are exact population values; `estimated`
/// moments come from a finite sample of size n.
struct MomentSet {
  Vector mean_pos;
  Matrix second_pos;
  Vector mean_neg;
  Matrix second_neg;
  bool analytic = true;
  long n = 0;  // sample size when estimated

  Eigen::Index dim() const { return mean_pos.size(); }
  Matrix cov_pos() const {
    return second_pos - mean_pos * mean_pos.transpose();
  }
  Matrix cov_neg() const {
    return second_neg - mean_neg * mean_neg.transpose();
  }
};

// ---------------------------------------------------------------------------
// Predictors
// ---------------------------------------------------------------------------

struct LinearClassifier {
  Vector v;
  bool normalized = false;
};

inline LinearClassifier make_unit_classifier(const Vector& v) {
  const double nrm = v.norm();
  if (nrm == 0.0) throw DimensionError("cannot normalize the zero vector");
  return LinearClassifier{v / nrm, true};
}

// ---------------------------------------------------------------------------
// Matcher types
// ---------------------------------------------------------------------------

enum class MatchMethod { Spectral, Penalty };

/// One orthonormal projection step U: r_in -> r_out together with the
/// matching residual achieved after projection.
struct ProjectionStep {
  Matrix U;  // r_out x r_in, orthonormal rows
  int r_in = 0;
  int r_out = 0;
  double residual = 0.0;
  MatchMethod method = MatchMethod::Spectral;
  bool feasible = true;  ///< residual within tolerance at r_out
};

enum class PairingPolicy { Chain, OddPairs };
enum class DimSearch { Binary, LinearScan };

struct MatcherConfig {
  double tol_rel = 1e-8;    ///< relative eigen/residual threshold
  int max_iters = 400;      ///< penalty-solver gradient iterations
  double step_size = 0.05;  ///< penalty-solver nominal step
  double lambda_coral = 1.0;
  double lambda_on = 1.0;
  int restarts = 4;
  int floor_dim = 1;  ///< known invariant dimension; never project below
  PairingPolicy pairing = PairingPolicy::Chain;
  DimSearch search = DimSearch::Binary;
  bool force_penalty = false;  ///< skip the spectral fast path
};

// ---------------------------------------------------------------------------
// Learner types
// ---------------------------------------------------------------------------

struct FeaturizerStack {
  std::vector<ProjectionStep> steps;
  Matrix composed;  // r_T x d, orthonormal rows

  std::vector<int> dims(int input_dim) const {
    std::vector<int> out{input_dim};
    for (const auto& s : steps) out.push_back(s.r_out);
    return out;
  }
};

struct FitDiagnostics {
  std::vector<int> round_dims;        // r_0, r_1, ..., r_T
  std::vector<double> round_residuals;
  double final_loss = 0.0;
  int iterations = 0;
  std::string note;
};

/// A trained predictor collapsed to a single evaluable unit-norm d-vector.
struct TrainedPredictor {
  Vector v;
  std::string algorithm;
  FitDiagnostics diagnostics;

  LinearClassifier classifier() const { return LinearClassifier{v, true}; }
};

struct OptConfig {
  double step_size = 1.0;  ///< scaled by a curvature estimate inside the fit
  int max_iters = 2000;
  double grad_tol = 1e-9;
  int patience = 50;  ///< divergence window
};

// ---------------------------------------------------------------------------
// Theory-check types
// ---------------------------------------------------------------------------

/// E quadric constraints u^T A_e u = b_e^T u with SPD A_e and linearly
/// independent b_e.
struct EllipsoidSystem {
  std::vector<Matrix> A_list;
  std::vector<Vector> b_list;

  int dim() const {
    return A_list.empty() ? 0 : static_cast<int>(A_list[0].rows());
  }
  int size() const { return static_cast<int>(A_list.size()); }
};

}  // namespace ifm

#endif  // IFM_TYPES_HPP
