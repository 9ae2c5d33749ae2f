#ifndef IFM_RNG_HPP
#define IFM_RNG_HPP

#include <cstdint>
#include <cmath>
#include <initializer_list>
#include <random>

#include <Eigen/Dense>

namespace ifm {

/// splitmix64 step; the de-facto standard seed scrambler.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream seed from a master seed and a list of tags.
/// Streams derived with distinct tag lists never collide in practice, so
/// adding environments (or rounds, or cells) never perturbs earlier draws.
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = master ^ 0xd1b54a32d192ed03ULL;
  std::uint64_t out = splitmix64(s);
  for (std::uint64_t t : tags) {
    s ^= t * 0x9e3779b97f4a7c15ULL;
    out = splitmix64(s) ^ (out * 0xff51afd7ed558ccdULL);
  }
  return out;
}

// Stream purposes used for tag-based derivation throughout the library.
namespace stream {
constexpr std::uint64_t kEnv = 0x01;
constexpr std::uint64_t kDataset = 0x02;
constexpr std::uint64_t kFit = 0x03;
constexpr std::uint64_t kMatcher = 0x04;
constexpr std::uint64_t kSweep = 0x05;
constexpr std::uint64_t kCheck = 0x06;
constexpr std::uint64_t kMix = 0x07;
}  // namespace stream

/// Deterministic random stream. Gaussian draws use explicit Box-Muller on
/// the raw engine bits so results do not depend on the standard library's
/// distribution implementations.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform on (0, 1]; never returns 0 (safe under log).
  double uniform_open() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  double gaussian() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    cached_ = radius * std::sin(angle);
    has_cached_ = true;
    return radius * std::cos(angle);
  }

  Eigen::VectorXd gaussian_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = gaussian();
    return v;
  }

  Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    // Row-major fill order is part of the determinism contract.
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = gaussian();
    return m;
  }

  /// Uniform point on the unit sphere in R^n.
  Eigen::VectorXd sphere_vector(Eigen::Index n) {
    Eigen::VectorXd v = gaussian_vector(n);
    double nrm = v.norm();
    while (nrm == 0.0) {  // probability zero, but cheap to handle
      v = gaussian_vector(n);
      nrm = v.norm();
    }
    return v / nrm;
  }

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

/// Random matrix with orthonormal rows (k x n, k <= n), via QR of a
/// Gaussian matrix with sign-fixed R diagonal so the draw is unambiguous.
inline Eigen::MatrixXd random_row_orthonormal(Eigen::Index k, Eigen::Index n,
                                              RngStream& rng) {
  Eigen::MatrixXd g = rng.gaussian_matrix(n, k);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, k);
  Eigen::MatrixXd rdiag = qr.matrixQR().topRows(k);
  for (Eigen::Index j = 0; j < k; ++j)
    if (rdiag(j, j) < 0) q.col(j) = -q.col(j);
  return q.transpose();
}

/// Random orthogonal n x n matrix (Haar via QR with sign fix).
inline Eigen::MatrixXd random_orthogonal(Eigen::Index n, RngStream& rng) {
  return random_row_orthonormal(n, n, rng);
}

}  // namespace ifm

#endif  // IFM_RNG_HPP
