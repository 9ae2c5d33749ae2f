#ifndef IFM_SUBSPACE_MATCHER_HPP
#define IFM_SUBSPACE_MATCHER_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "ifm/rng.hpp"
#include "ifm/types.hpp"

namespace ifm {

// ---------------------------------------------------------------------------
// Moment differences
// ---------------------------------------------------------------------------

/// Pairwise moment-difference matrices used by both matchers. Each pair
/// (a, b) contributes, per class:
///   - the difference of conditional covariances Cov_a - Cov_b, and
///   - the rank-1 term dm dm^T built from the mean difference dm.
/// Together these express the uncentered-second-moment matching constraint:
/// a subspace on which all of them vanish as quadratic forms (and which is
/// orthogonal to the dm's) has matched conditional means and second moments
/// across the pair.
///
/// Chain pairing uses consecutive pairs (0,1), (1,2), ...; OddPairs uses the
/// disjoint pairs (0,1), (2,3), ... Both have the same common null space.
inline std::vector<Matrix> moment_differences(
    const std::vector<MomentSet>& moments,
    PairingPolicy pairing = PairingPolicy::Chain) {
  if (moments.size() < 2)
    throw ConfigError("need at least two moment sets");
  const Eigen::Index d = moments[0].dim();
  for (const auto& m : moments)
    if (m.dim() != d) throw DimensionError("moment sets disagree on dimension");

  std::vector<std::pair<int, int>> pairs;
  if (pairing == PairingPolicy::Chain) {
    for (int e = 0; e + 1 < static_cast<int>(moments.size()); ++e)
      pairs.emplace_back(e, e + 1);
  } else {
    for (int e = 0; e + 1 < static_cast<int>(moments.size()); e += 2)
      pairs.emplace_back(e, e + 1);
  }

  std::vector<Matrix> diffs;
  diffs.reserve(4 * pairs.size());
  for (auto [a, b] : pairs) {
    diffs.push_back(moments[a].cov_pos() - moments[b].cov_pos());
    const Vector dmp = moments[a].mean_pos - moments[b].mean_pos;
    diffs.push_back(dmp * dmp.transpose());
    diffs.push_back(moments[a].cov_neg() - moments[b].cov_neg());
    const Vector dmn = moments[a].mean_neg - moments[b].mean_neg;
    diffs.push_back(dmn * dmn.transpose());
  }
  return diffs;
}

/// Worst-case matching error of a projection over the difference matrices.
inline double matching_residual(const Matrix& U,
                                const std::vector<Matrix>& diffs) {
  double worst = 0.0;
  for (const auto& d : diffs)
    worst = std::max(worst, (U * d * U.transpose()).norm());
  return worst;
}

/// M = sum_e Delta_e^T Delta_e; its near-null eigenvectors span the common
/// null space of the differences.
inline Matrix accumulate_diff_gram(const std::vector<Matrix>& diffs) {
  const Eigen::Index d = diffs[0].rows();
  Matrix m = Matrix::Zero(d, d);
  for (const auto& delta : diffs) m.noalias() += delta.transpose() * delta;
  return m;
}

/// Residual tolerance paired with the relative eigenvalue threshold: a
/// direction passing the eigen test tau = tol_rel * tr(M)/dim has squared
/// residual at most tau, so sqrt(tau) is the matching-error scale.
inline double residual_tolerance(const std::vector<Matrix>& diffs,
                                 const MatcherConfig& cfg) {
  const Matrix m = accumulate_diff_gram(diffs);
  const double mean_eig = m.trace() / static_cast<double>(m.rows());
  return std::sqrt(std::max(cfg.tol_rel * mean_eig, 0.0));
}

// ---------------------------------------------------------------------------
// Spectral fast path
// ---------------------------------------------------------------------------

/// Null-space matcher: eigendecomposition of M = sum Delta^2 and selection of
/// eigenvectors with eigenvalue <= tol_rel * tr(M)/dim. This is a sufficient
/// condition for the quadratic matching constraint (Delta v = 0 implies
/// U Delta U^T = 0), exact for population moments. If fewer than floor_dim
/// directions qualify, the smallest floor_dim are taken and the step is
/// flagged infeasible through its residual.
inline ProjectionStep spectral_match(const std::vector<Matrix>& diffs,
                                     const MatcherConfig& cfg) {
  if (diffs.empty()) throw ConfigError("no difference matrices");
  const int dim = static_cast<int>(diffs[0].rows());
  const Matrix m = accumulate_diff_gram(diffs);
  const double trace = m.trace();

  ProjectionStep step;
  step.method = MatchMethod::Spectral;
  step.r_in = dim;

  if (!(trace > 0.0)) {  // identical moments: everything matches
    step.U = Matrix::Identity(dim, dim);
    step.r_out = dim;
    step.residual = 0.0;
    step.feasible = true;
    return step;
  }

  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  const Vector eigs = es.eigenvalues();  // ascending
  const double tau = cfg.tol_rel * trace / static_cast<double>(dim);
  int count = 0;
  while (count < dim && eigs[count] <= tau) ++count;
  const int r_out = std::max(count, std::min(cfg.floor_dim, dim));

  step.U = es.eigenvectors().leftCols(r_out).transpose();
  step.r_out = r_out;
  step.residual = matching_residual(step.U, diffs);
  step.feasible = step.residual <= residual_tolerance(diffs, cfg);
  return step;
}

// ---------------------------------------------------------------------------
// Penalty solver
// ---------------------------------------------------------------------------

namespace detail {

struct PairData {
  std::vector<Matrix> cov_diffs;  // symmetric
  std::vector<Vector> mean_diffs;
};

inline PairData build_pair_data(const std::vector<MomentSet>& moments,
                                PairingPolicy pairing) {
  PairData pd;
  const auto diffs = moment_differences(moments, pairing);
  // moment_differences interleaves cov and rank-1 mean terms; rebuild the
  // separated view used by the penalty objective.
  std::vector<std::pair<int, int>> pairs;
  if (pairing == PairingPolicy::Chain) {
    for (int e = 0; e + 1 < static_cast<int>(moments.size()); ++e)
      pairs.emplace_back(e, e + 1);
  } else {
    for (int e = 0; e + 1 < static_cast<int>(moments.size()); e += 2)
      pairs.emplace_back(e, e + 1);
  }
  for (auto [a, b] : pairs) {
    pd.cov_diffs.push_back(moments[a].cov_pos() - moments[b].cov_pos());
    pd.mean_diffs.push_back(moments[a].mean_pos - moments[b].mean_pos);
    pd.cov_diffs.push_back(moments[a].cov_neg() - moments[b].cov_neg());
    pd.mean_diffs.push_back(moments[a].mean_neg - moments[b].mean_neg);
  }
  return pd;
}

/// L(U) = l1 * sum_pairs(||U dm||^2 + ||U dC U^T||_F^2) + l2 * ||U U^T - I||_F^2
inline double penalty_loss(const Matrix& U, const PairData& pd,
                           double l1, double l2) {
  double loss = 0.0;
  for (const auto& dc : pd.cov_diffs) loss += (U * dc * U.transpose()).squaredNorm();
  for (const auto& dm : pd.mean_diffs) loss += (U * dm).squaredNorm();
  loss *= l1;
  const Matrix gram = U * U.transpose();
  loss += l2 * (gram - Matrix::Identity(U.rows(), U.rows())).squaredNorm();
  return loss;
}

inline Matrix penalty_grad(const Matrix& U, const PairData& pd,
                           double l1, double l2) {
  Matrix g = Matrix::Zero(U.rows(), U.cols());
  for (const auto& dc : pd.cov_diffs) {
    const Matrix udc = U * dc;
    g.noalias() += 4.0 * l1 * (udc * U.transpose()) * udc;
  }
  for (const auto& dm : pd.mean_diffs) {
    const Vector udm = U * dm;
    g.noalias() += 2.0 * l1 * udm * dm.transpose();
  }
  const Matrix gram = U * U.transpose();
  g.noalias() +=
      4.0 * l2 * (gram - Matrix::Identity(U.rows(), U.rows())) * U;
  return g;
}

/// Closest matrix with orthonormal rows (polar factor of the row space).
inline Matrix reorthonormalize_rows(const Matrix& U) {
  Eigen::JacobiSVD<Matrix> svd(U, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return svd.matrixU() * svd.matrixV().transpose();
}

}  // namespace detail

/// Penalty matcher: gradient descent on the soft matching objective from
/// `restarts` random orthonormal initializations, keeping the run with the
/// smallest matching residual after a final row re-orthonormalization.
/// Non-convergence is reported through the feasible flag, not an exception.
inline ProjectionStep penalty_match(const std::vector<MomentSet>& moments,
                                    int target_dim, const MatcherConfig& cfg,
                                    RngStream& rng) {
  const int r_in = static_cast<int>(moments.at(0).dim());
  if (target_dim < 1 || target_dim > r_in)
    throw DimensionError("target_dim out of range");

  const auto pd = detail::build_pair_data(moments, cfg.pairing);
  const auto diffs = moment_differences(moments, cfg.pairing);

  // Scale-free step: the loss Hessian magnitude tracks the squared size of
  // the difference matrices.
  double scale = 0.0;
  for (const auto& dc : pd.cov_diffs) scale = std::max(scale, dc.squaredNorm());
  for (const auto& dm : pd.mean_diffs) scale = std::max(scale, dm.squaredNorm());
  scale = std::max(scale, 1.0);

  ProjectionStep best;
  best.method = MatchMethod::Penalty;
  best.r_in = r_in;
  best.r_out = target_dim;
  best.residual = std::numeric_limits<double>::infinity();
  best.feasible = false;

  const int restarts = std::max(1, cfg.restarts);
  for (int restart = 0; restart < restarts; ++restart) {
    RngStream sub(derive_seed(rng.next_u64(),
                              {stream::kMatcher,
                               static_cast<std::uint64_t>(restart)}));
    Matrix U = random_row_orthonormal(target_dim, r_in, sub);
    // Barzilai-Borwein stepped descent with a monotone safeguard; the loss
    // is quartically flat near exact matches, where fixed steps crawl.
    // Rows are retracted back to the manifold on stalls, which also bumps
    // the iterate out of the shallow soft-penalty valleys.
    const double step0 =
        cfg.step_size / (cfg.lambda_coral * scale + cfg.lambda_on);
    double step = step0;
    double loss = detail::penalty_loss(U, pd, cfg.lambda_coral, cfg.lambda_on);
    Matrix g = detail::penalty_grad(U, pd, cfg.lambda_coral, cfg.lambda_on);
    bool retracted_since_stall = false;
    for (int it = 0; it < cfg.max_iters; ++it) {
      Matrix trial = U - step * g;
      double trial_loss =
          detail::penalty_loss(trial, pd, cfg.lambda_coral, cfg.lambda_on);
      int halvings = 0;
      while (trial_loss > loss && halvings < 40) {
        step *= 0.5;
        trial = U - step * g;
        trial_loss =
            detail::penalty_loss(trial, pd, cfg.lambda_coral, cfg.lambda_on);
        ++halvings;
      }
      const bool stalled =
          trial_loss > loss ||
          loss - trial_loss <= 1e-16 * (1.0 + std::abs(loss));
      if (!stalled) {
        const Matrix g_new =
            detail::penalty_grad(trial, pd, cfg.lambda_coral, cfg.lambda_on);
        const Matrix ds = trial - U;
        const Matrix dg = g_new - g;
        const double sg = (ds.array() * dg.array()).sum();
        const double gg = dg.squaredNorm();
        step = (sg > 0.0 && gg > 0.0)
                   ? std::clamp(sg / gg, 1e-6 * step0, 1e9 * step0)
                   : step0;
        U = std::move(trial);
        g = g_new;
        loss = trial_loss;
        retracted_since_stall = false;
        continue;
      }
      if (retracted_since_stall) break;  // stalled twice in a row: done
      U = detail::reorthonormalize_rows(U);
      loss = detail::penalty_loss(U, pd, cfg.lambda_coral, cfg.lambda_on);
      g = detail::penalty_grad(U, pd, cfg.lambda_coral, cfg.lambda_on);
      step = step0;
      retracted_since_stall = true;
    }
    U = detail::reorthonormalize_rows(U);
    const double residual = matching_residual(U, diffs);
    if (residual < best.residual) {
      best.U = std::move(U);
      best.residual = residual;
    }
  }
  best.feasible = best.residual <= residual_tolerance(diffs, cfg);
  return best;
}

// ---------------------------------------------------------------------------
// Maximum-dimension matching
// ---------------------------------------------------------------------------

/// Finds the maximum dimension at which the moments can be matched within
/// tolerance. Population moments take the spectral fast path (the null space
/// is the maximal exactly-matched subspace there); otherwise feasibility at
/// each dimension is probed with the penalty solver, by binary search over
/// [floor_dim, r_in] (feasibility is monotone non-increasing in dimension:
/// any row-subset of a feasible U is feasible) or by a linear downward scan.
inline ProjectionStep max_dim_match(const std::vector<MomentSet>& moments,
                                    const MatcherConfig& cfg, RngStream& rng) {
  if (moments.size() < 2) throw ConfigError("need at least two moment sets");
  const int r_in = static_cast<int>(moments[0].dim());
  const int floor_dim = std::min(std::max(cfg.floor_dim, 1), r_in);

  bool all_analytic = true;
  for (const auto& m : moments) all_analytic = all_analytic && m.analytic;

  const auto diffs = moment_differences(moments, cfg.pairing);

  if (all_analytic && !cfg.force_penalty) {
    MatcherConfig spectral_cfg = cfg;
    spectral_cfg.floor_dim = floor_dim;
    ProjectionStep step = spectral_match(diffs, spectral_cfg);
    if (step.r_out == floor_dim && !step.feasible)
      throw InfeasibleFloorError(
          "matching infeasible at floor dimension (tolerance too tight or "
          "broken moments)");
    return step;
  }

  const double tol = residual_tolerance(diffs, cfg);
  // Derive one sub-seed per probed dimension so results do not depend on the
  // search order.
  const std::uint64_t probe_base = rng.next_u64();
  auto probe = [&](int dim) {
    RngStream sub(derive_seed(probe_base,
                              {stream::kMatcher, 0xd1ULL,
                               static_cast<std::uint64_t>(dim)}));
    return penalty_match(moments, dim, cfg, sub);
  };

  ProjectionStep at_floor = probe(floor_dim);
  if (!at_floor.feasible)
    throw InfeasibleFloorError(
        "matching infeasible at floor dimension (tolerance too tight or "
        "broken moments)");
  if (floor_dim == r_in) return at_floor;

  ProjectionStep best = std::move(at_floor);
  if (cfg.search == DimSearch::Binary) {
    int lo = floor_dim;  // max known feasible
    int hi = r_in + 1;   // min known infeasible (r_in itself still unknown)
    ProjectionStep at_top = probe(r_in);
    if (at_top.feasible) return at_top;
    hi = r_in;
    while (hi - lo > 1) {
      const int mid = lo + (hi - lo) / 2;
      ProjectionStep s = probe(mid);
      if (s.feasible && s.residual <= tol) {
        lo = mid;
        best = std::move(s);
      } else {
        hi = mid;
      }
    }
  } else {
    for (int dim = r_in; dim > floor_dim; --dim) {
      ProjectionStep s = probe(dim);
      if (s.feasible) return s;
    }
  }
  return best;
}

/// Pushes a moment set through a projection step.
inline MomentSet project_moments(const MomentSet& ms, const Matrix& U) {
  if (U.cols() != ms.dim())
    throw DimensionError("projection does not match moment dimension");
  MomentSet out;
  out.mean_pos = U * ms.mean_pos;
  out.second_pos = U * ms.second_pos * U.transpose();
  out.mean_neg = U * ms.mean_neg;
  out.second_neg = U * ms.second_neg * U.transpose();
  out.analytic = ms.analytic;
  out.n = ms.n;
  return out;
}

}  // namespace ifm

#endif  // IFM_SUBSPACE_MATCHER_HPP
