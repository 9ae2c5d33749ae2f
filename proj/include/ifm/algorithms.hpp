#ifndef IFM_ALGORITHMS_HPP
#define IFM_ALGORITHMS_HPP

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ifm/gaussian_risk.hpp"
#include "ifm/logistic.hpp"
#include "ifm/rng.hpp"
#include "ifm/subspace_matcher.hpp"
#include "ifm/types.hpp"

namespace ifm {

// ---------------------------------------------------------------------------
// Partitions
// ---------------------------------------------------------------------------

/// Consecutive groups of `group_size` environments; a short remainder is
/// absorbed into the last group so every group has at least two members.
inline std::vector<std::vector<int>> make_partition(int num_envs,
                                                    int group_size) {
  if (num_envs < 2) throw ConfigError("need at least two environments");
  if (group_size < 2) throw ConfigError("group size must be at least 2");
  std::vector<std::vector<int>> groups;
  int e = 0;
  while (e < num_envs) {
    const int remaining = num_envs - e;
    int take = std::min(group_size, remaining);
    if (remaining - take == 1) take = remaining;  // absorb a lone leftover
    std::vector<int> g(take);
    for (int i = 0; i < take; ++i) g[i] = e + i;
    groups.push_back(std::move(g));
    e += take;
  }
  return groups;
}

inline void validate_partition(const std::vector<std::vector<int>>& groups,
                               int num_envs) {
  std::vector<bool> seen(num_envs, false);
  for (const auto& g : groups) {
    if (g.size() < 2) throw ConfigError("partition group smaller than 2");
    for (int e : g) {
      if (e < 0 || e >= num_envs || seen[e])
        throw ConfigError("partition is not a disjoint cover");
      seen[e] = true;
    }
  }
  for (bool s : seen)
    if (!s) throw ConfigError("partition does not cover all environments");
}

// ---------------------------------------------------------------------------
// Iterative feature matching
// ---------------------------------------------------------------------------

struct IfmResult {
  TrainedPredictor predictor;
  FeaturizerStack stack;
};

/// Closed-form Gaussian-optimal direction on projected population moments:
/// w = (mean of projected covariances)^-1 (mean of projected means).
inline Vector pooled_gaussian_direction(const std::vector<MomentSet>& moments,
                                        const Matrix& proj) {
  const Eigen::Index k = proj.rows();
  Matrix cov = Matrix::Zero(k, k);
  Vector mean = Vector::Zero(k);
  for (const auto& ms : moments) {
    cov += proj * ms.cov_pos() * proj.transpose();
    mean += proj * ms.mean_pos;
  }
  cov /= static_cast<double>(moments.size());
  mean /= static_cast<double>(moments.size());
  return cov.ldlt().solve(mean);
}

/// Runs iterative feature matching. Each round consumes the next partition
/// group: the group's per-environment moments are pushed through the current
/// stack and the maximum-dimension matched projection is appended. The loop
/// stops once the retained dimension equals r; if the groups run out first,
/// EnvironmentsExhaustedError is raised.
///
/// The final classifier is fit over ALL training environments: pooled
/// logistic regression on projected samples when datasets are supplied,
/// otherwise the closed-form pooled Gaussian direction on projected
/// population moments (the population-limit equivalent for this model).
inline IfmResult ifm_run(const std::vector<MomentSet>& moments, int r,
                         const std::vector<std::vector<int>>& partition,
                         const MatcherConfig& config, RngStream& rng,
                         const std::vector<Dataset>* datasets = nullptr,
                         const OptConfig& opt = OptConfig{}) {
  if (moments.empty()) throw ConfigError("no environments");
  const int d = static_cast<int>(moments[0].dim());
  if (r < 1 || r > d) throw DimensionError("invalid invariant dimension r");
  validate_partition(partition, static_cast<int>(moments.size()));
  if (datasets && datasets->size() != moments.size())
    throw DimensionError("datasets/moments mismatch");

  MatcherConfig cfg = config;
  cfg.floor_dim = r;

  FeaturizerStack stack;
  stack.composed = Matrix::Identity(d, d);
  FitDiagnostics diag;
  diag.round_dims.push_back(d);

  int r_t = d;
  std::size_t next_group = 0;
  while (r_t > r) {
    if (next_group >= partition.size())
      throw EnvironmentsExhaustedError(
          "partition exhausted before reaching the invariant dimension");
    const auto& group = partition[next_group++];
    std::vector<MomentSet> projected;
    projected.reserve(group.size());
    for (int e : group)
      projected.push_back(project_moments(moments[e], stack.composed));
    ProjectionStep step = max_dim_match(projected, cfg, rng);
    stack.composed = step.U * stack.composed;
    r_t = step.r_out;
    diag.round_dims.push_back(r_t);
    diag.round_residuals.push_back(step.residual);
    stack.steps.push_back(std::move(step));
  }

  // Final fit on projected features across all training environments.
  Vector w;
  if (datasets) {
    std::vector<Dataset> projected_ds;
    projected_ds.reserve(datasets->size());
    for (const auto& ds : *datasets) {
      Dataset p;
      p.x = ds.x * stack.composed.transpose();
      p.y = ds.y;
      projected_ds.push_back(std::move(p));
    }
    std::vector<const Dataset*> ptrs;
    for (const auto& ds : projected_ds) ptrs.push_back(&ds);
    EmpiricalLogistic obj(std::move(ptrs));
    GdResult res = gd_minimize(obj, NoExtra{}, Vector::Zero(r_t), opt);
    w = std::move(res.v);
    diag.final_loss = res.loss;
    diag.iterations = res.iterations;
  } else {
    w = pooled_gaussian_direction(moments, stack.composed);
  }

  const Vector v = stack.composed.transpose() * w;
  TrainedPredictor pred;
  pred.v = v / v.norm();
  pred.algorithm = "ifm";
  pred.diagnostics = std::move(diag);
  return IfmResult{std::move(pred), std::move(stack)};
}

// ---------------------------------------------------------------------------
// ERM
// ---------------------------------------------------------------------------

inline TrainedPredictor erm_fit(const std::vector<Dataset>& datasets,
                                const OptConfig& opt = OptConfig{}) {
  std::vector<const Dataset*> ptrs;
  for (const auto& ds : datasets) ptrs.push_back(&ds);
  EmpiricalLogistic obj(std::move(ptrs));
  GdResult res = gd_minimize(obj, NoExtra{}, Vector::Zero(obj.dim()), opt);
  TrainedPredictor pred;
  pred.v = res.v / res.v.norm();
  pred.algorithm = "erm";
  pred.diagnostics.final_loss = res.loss;
  pred.diagnostics.iterations = res.iterations;
  return pred;
}

/// Infinite-sample ERM: descends the exact population logistic risk.
inline TrainedPredictor erm_fit_population(
    const std::vector<GaussianEnvMoment>& envs,
    const OptConfig& opt = OptConfig{}) {
  PopulationLogistic obj(envs);
  GdResult res = gd_minimize(obj, NoExtra{}, Vector::Zero(obj.dim()), opt);
  TrainedPredictor pred;
  pred.v = res.v / res.v.norm();
  pred.algorithm = "erm";
  pred.diagnostics.final_loss = res.loss;
  pred.diagnostics.iterations = res.iterations;
  return pred;
}

// ---------------------------------------------------------------------------
// IRM (v1 penalty form)
// ---------------------------------------------------------------------------

namespace detail {

/// Joint IRMv1 objective: (risk + weight * sum_e penalty_e) / (1 + weight).
/// The rescaling keeps the step size sane for large penalty weights without
/// changing the minimizer.
template <typename Objective>
TrainedPredictor irm_fit_impl(const Objective& obj, double penalty_weight,
                              const OptConfig& opt) {
  if (obj.num_envs() < 2 && penalty_weight != 0.0)
    throw ConfigError("IRM needs at least two environments");
  const double norm = 1.0 / (1.0 + std::max(penalty_weight, 0.0));
  auto extra = [&](const Vector& v, Vector& grad) {
    grad *= norm;
    if (penalty_weight == 0.0) return 0.0;
    Vector pgrad;
    const double p = obj.irm_penalty_grad(v, pgrad);
    grad += (penalty_weight * norm) * pgrad;
    return penalty_weight * norm * p;
  };
  // extra() rescales the base gradient, so fold the base loss too.
  struct Scaled {
    const Objective& inner;
    double factor;
    Eigen::Index dim() const { return inner.dim(); }
    double curvature() const { return inner.curvature(); }
    double value_grad(const Vector& v, Vector& g) const {
      const double val = inner.value_grad(v, g);
      return val * factor;
    }
  } scaled{obj, norm};
  GdResult res =
      gd_minimize(scaled, extra, Vector::Zero(obj.dim()), opt);
  TrainedPredictor pred;
  pred.v = res.v / res.v.norm();
  pred.algorithm = "irm";
  pred.diagnostics.final_loss = res.loss;
  pred.diagnostics.iterations = res.iterations;
  return pred;
}

}  // namespace detail

inline TrainedPredictor irm_fit(const std::vector<Dataset>& datasets,
                                double penalty_weight,
                                const OptConfig& opt = OptConfig{}) {
  std::vector<const Dataset*> ptrs;
  for (const auto& ds : datasets) ptrs.push_back(&ds);
  EmpiricalLogistic obj(std::move(ptrs));
  return detail::irm_fit_impl(obj, penalty_weight, opt);
}

inline TrainedPredictor irm_fit_population(
    const std::vector<GaussianEnvMoment>& envs, double penalty_weight,
    const OptConfig& opt = OptConfig{}) {
  PopulationLogistic obj(envs);
  return detail::irm_fit_impl(obj, penalty_weight, opt);
}

// ---------------------------------------------------------------------------
// CORAL
// ---------------------------------------------------------------------------

enum class CoralMode { MatchAll, MatchDisjoint };

struct CoralConfig {
  std::vector<int> widths;  ///< one entry per layer, nonincreasing
  CoralMode mode = CoralMode::MatchAll;
  double lambda_coral = 1.0;
  double lambda_on = 1.0;
  OptConfig opt;
};

namespace detail {

struct CoralLayerPairs {
  // Per layer: indices of adjacent environment pairs to match.
  std::vector<std::vector<std::pair<int, int>>> pairs;
};

inline CoralLayerPairs coral_pairs(int num_envs, int depth, CoralMode mode) {
  CoralLayerPairs out;
  out.pairs.resize(depth);
  if (mode == CoralMode::MatchAll) {
    for (int t = 0; t < depth; ++t)
      for (int e = 0; e + 1 < num_envs; ++e)
        out.pairs[t].emplace_back(e, e + 1);
  } else {
    const auto groups = make_partition(num_envs, 2);
    if (static_cast<int>(groups.size()) < depth)
      throw ConfigError(
          "match_disjoint needs at least one two-environment group per layer");
    // Spread environments over layers the way the iterative matcher does:
    // layer t matches within group t only.
    for (int t = 0; t < depth; ++t)
      for (std::size_t i = 0; i + 1 < groups[t].size(); ++i)
        out.pairs[t].emplace_back(groups[t][i], groups[t][i + 1]);
  }
  return out;
}

}  // namespace detail

/// Jointly minimizes supervised logistic loss, per-layer conditional
/// mean/covariance matching, and per-layer orthonormality penalties over a
/// linear stack. The supervised term flows through the composed map only, so
/// its gradient back-propagates with plain matrix products.
template <typename SupervisedObjective>
TrainedPredictor coral_fit_impl(const SupervisedObjective& sup,
                                const std::vector<MomentSet>& moments,
                                const CoralConfig& cfg, RngStream& rng) {
  const int d = static_cast<int>(moments.at(0).dim());
  const int depth = static_cast<int>(cfg.widths.size());
  if (depth < 1) throw ConfigError("need at least one layer");
  int prev = d;
  for (int w : cfg.widths) {
    if (w < 1 || w > prev)
      throw ConfigError("layer widths must be positive and nonincreasing");
    prev = w;
  }
  const auto layer_pairs =
      detail::coral_pairs(static_cast<int>(moments.size()), depth, cfg.mode);

  // Parameters.
  std::vector<Matrix> U(depth);
  prev = d;
  for (int t = 0; t < depth; ++t) {
    U[t] = random_row_orthonormal(cfg.widths[t], prev, rng);
    prev = cfg.widths[t];
  }
  Vector w = Vector::Zero(cfg.widths.back());

  // Precompute per-pair differences in observation space.
  struct PairDiff {
    Matrix dcov_pos, dcov_neg;
    Vector dmean_pos, dmean_neg;
  };
  auto pair_diff = [&](int a, int b) {
    PairDiff pdiff;
    pdiff.dcov_pos = moments[a].cov_pos() - moments[b].cov_pos();
    pdiff.dcov_neg = moments[a].cov_neg() - moments[b].cov_neg();
    pdiff.dmean_pos = moments[a].mean_pos - moments[b].mean_pos;
    pdiff.dmean_neg = moments[a].mean_neg - moments[b].mean_neg;
    return pdiff;
  };

  double match_scale = 1.0;
  std::vector<std::vector<PairDiff>> diffs(depth);
  for (int t = 0; t < depth; ++t)
    for (auto [a, b] : layer_pairs.pairs[t]) {
      diffs[t].push_back(pair_diff(a, b));
      match_scale = std::max(match_scale, diffs[t].back().dcov_pos.squaredNorm());
      match_scale = std::max(match_scale, diffs[t].back().dmean_pos.squaredNorm());
    }

  const double sup_curv = sup.curvature();
  const double step =
      cfg.opt.step_size /
      std::max({sup_curv, cfg.lambda_coral * match_scale, cfg.lambda_on});

  double best = std::numeric_limits<double>::infinity();
  int bad = 0;
  double loss = 0.0;
  int it = 0;
  for (; it < cfg.opt.max_iters; ++it) {
    // Forward: prefix projections P_t = U_t ... U_1 and the composed map.
    std::vector<Matrix> prefix(depth);
    prefix[0] = U[0];
    for (int t = 1; t < depth; ++t) prefix[t] = U[t] * prefix[t - 1];
    const Matrix& composed = prefix[depth - 1];

    loss = 0.0;
    std::vector<Matrix> gU(depth);
    for (int t = 0; t < depth; ++t) gU[t] = Matrix::Zero(U[t].rows(), U[t].cols());
    Vector gw = Vector::Zero(w.size());

    // Supervised term through v = composed^T w.
    const Vector v = composed.transpose() * w;
    Vector gv(v.size());
    loss += sup.value_grad(v, gv);
    gw += composed * gv;
    Matrix gP = w * gv.transpose();  // gradient w.r.t. the composed map
    // Backprop composed = U_{D-1} ... U_0 into each layer.
    for (int t = depth - 1; t >= 0; --t) {
      Matrix left = Matrix::Identity(cfg.widths.back(), cfg.widths.back());
      for (int s = depth - 1; s > t; --s) left = left * U[s];
      const Matrix right =
          t == 0 ? Matrix::Identity(d, d) : prefix[t - 1];
      gU[t] += left.transpose() * gP * right.transpose();
    }

    // Matching penalties per layer.
    for (int t = 0; t < depth; ++t) {
      const Matrix& P = prefix[t];
      Matrix gPt = Matrix::Zero(P.rows(), P.cols());
      for (const auto& pdiff : diffs[t]) {
        for (const Matrix* dc : {&pdiff.dcov_pos, &pdiff.dcov_neg}) {
          const Matrix pdc = P * (*dc);
          const Matrix q = pdc * P.transpose();
          loss += cfg.lambda_coral * q.squaredNorm();
          gPt.noalias() += cfg.lambda_coral * 4.0 * q * pdc;
        }
        for (const Vector* dm : {&pdiff.dmean_pos, &pdiff.dmean_neg}) {
          const Vector pm = P * (*dm);
          loss += cfg.lambda_coral * pm.squaredNorm();
          gPt.noalias() += cfg.lambda_coral * 2.0 * pm * dm->transpose();
        }
      }
      // Chain P_t = U_t ... U_0 into layers 0..t.
      for (int s = t; s >= 0; --s) {
        Matrix left = Matrix::Identity(P.rows(), P.rows());
        for (int q = t; q > s; --q) left = left * U[q];
        const Matrix right =
            s == 0 ? Matrix::Identity(d, d) : prefix[s - 1];
        gU[s] += left.transpose() * gPt * right.transpose();
      }
    }

    // Orthonormality penalties.
    for (int t = 0; t < depth; ++t) {
      const Matrix gram =
          U[t] * U[t].transpose() - Matrix::Identity(U[t].rows(), U[t].rows());
      loss += cfg.lambda_on * gram.squaredNorm();
      gU[t].noalias() += cfg.lambda_on * 4.0 * gram * U[t];
    }

    if (loss < best) {
      best = loss;
      bad = 0;
    } else if (++bad > cfg.opt.patience) {
      throw DivergenceError("coral_fit diverged");
    }

    double gnorm2 = gw.squaredNorm();
    for (int t = 0; t < depth; ++t) gnorm2 += gU[t].squaredNorm();
    if (std::sqrt(gnorm2) <= cfg.opt.grad_tol) break;

    for (int t = 0; t < depth; ++t) U[t] -= step * gU[t];
    w -= step * gw;
  }

  Matrix composed = U[0];
  for (int t = 1; t < depth; ++t) composed = U[t] * composed;
  Vector v = composed.transpose() * w;
  if (v.norm() == 0.0) v = composed.row(0).transpose();  // degenerate fit
  TrainedPredictor pred;
  pred.v = v / v.norm();
  pred.algorithm = cfg.mode == CoralMode::MatchAll ? "coral" : "coral_disjoint";
  pred.diagnostics.final_loss = loss;
  pred.diagnostics.iterations = it;
  for (int width : cfg.widths) pred.diagnostics.round_dims.push_back(width);
  return pred;
}

inline TrainedPredictor coral_fit(const std::vector<Dataset>& datasets,
                                  const std::vector<MomentSet>& moments,
                                  const CoralConfig& cfg, RngStream& rng) {
  std::vector<const Dataset*> ptrs;
  for (const auto& ds : datasets) ptrs.push_back(&ds);
  EmpiricalLogistic sup(std::move(ptrs));
  return coral_fit_impl(sup, moments, cfg, rng);
}

inline TrainedPredictor coral_fit_population(
    const std::vector<MomentSet>& moments, const CoralConfig& cfg,
    RngStream& rng) {
  std::vector<GaussianEnvMoment> envs;
  for (const auto& ms : moments) envs.push_back(gaussian_env_moment(ms));
  PopulationLogistic sup(std::move(envs));
  return coral_fit_impl(sup, moments, cfg, rng);
}

// ---------------------------------------------------------------------------
// Closed-form two-environment algorithm
// ---------------------------------------------------------------------------

/// Two-environment closed form: the class-+1 covariance difference spans the
/// spurious subspace; projecting it out and solving the Gaussian-optimal
/// direction on the complement recovers the invariant predictor.
inline TrainedPredictor simple_algo(const MomentSet& env_a,
                                    const MomentSet& env_b, int d_s,
                                    double rank_tol = 1e-8) {
  if (env_a.dim() != env_b.dim())
    throw DimensionError("moment sets disagree on dimension");
  const Eigen::Index d = env_a.dim();
  if (d_s < 0 || d_s >= d) throw DimensionError("invalid spurious dimension");

  const Matrix b_hat = env_a.cov_pos() - env_b.cov_pos();
  Eigen::JacobiSVD<Matrix> svd(b_hat, Eigen::ComputeThinU);
  const Vector sv = svd.singularValues();
  if (d_s > 0 && sv[d_s - 1] <= rank_tol * sv[0])
    throw RankError(
        "covariance difference is rank-deficient (degenerate draw or wrong "
        "spurious dimension)");
  if (d_s > 0 && sv[0] == 0.0)
    throw RankError("covariance difference is zero");

  const Matrix Q = svd.matrixU().leftCols(d_s);
  const Matrix P = Matrix::Identity(d, d) - Q * Q.transpose();
  const Vector mu_proj = P * env_a.mean_pos;
  const Matrix sigma_proj = P * env_a.cov_pos() * P;

  // Pseudo-inverse through the eigendecomposition; the projected covariance
  // is rank d - d_s by construction.
  Eigen::SelfAdjointEigenSolver<Matrix> es(sigma_proj);
  const Vector eigs = es.eigenvalues();
  const double cutoff = eigs.cwiseAbs().maxCoeff() * 1e-12;
  Vector inv_eigs = Vector::Zero(d);
  for (Eigen::Index i = 0; i < d; ++i)
    if (eigs[i] > cutoff) inv_eigs[i] = 1.0 / eigs[i];
  const Vector w_hat =
      es.eigenvectors() * inv_eigs.asDiagonal() *
      es.eigenvectors().transpose() * mu_proj;

  TrainedPredictor pred;
  pred.v = w_hat / w_hat.norm();
  pred.algorithm = "simple";
  return pred;
}

// ---------------------------------------------------------------------------
// Ground-truth invariant predictor
// ---------------------------------------------------------------------------

/// Solves Sigma1 A^T w = mu1 with w orthogonal to the spurious columns of S.
inline TrainedPredictor oracle_w_star(const ModelSpec& spec) {
  const Matrix A = spec.invariant_columns();
  Vector w;
  if (spec.d_s == 0) {
    w = A.transpose()
            .colPivHouseholderQr()
            .solve(spec.sigma1.ldlt().solve(spec.mu1));
  } else {
    const Matrix B = spec.spurious_columns();
    // Orthonormal basis of col(B)^perp: the trailing r columns of B's full Q.
    Eigen::HouseholderQR<Matrix> qr(B);
    const Matrix Qfull = qr.householderQ();
    const Matrix N = Qfull.rightCols(spec.r);
    const Matrix AtN = A.transpose() * N;  // r x r
    Eigen::ColPivHouseholderQR<Matrix> solver(AtN);
    if (solver.rank() < spec.r)
      throw RankError("invariant columns collapse under the spurious projection");
    const Vector c = solver.solve(spec.sigma1.ldlt().solve(spec.mu1));
    w = N * c;
  }
  TrainedPredictor pred;
  pred.v = w / w.norm();
  pred.algorithm = "oracle";
  return pred;
}

}  // namespace ifm

#endif  // IFM_ALGORITHMS_HPP
