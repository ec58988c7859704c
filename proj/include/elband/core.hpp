#pragma once

// Shared aliases, error handling and small numeric utilities used across the
// library.

#include <Eigen/Core>
#include <Eigen/Sparse>

#include <complex>
#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace elband {

using Real = double;
using Complex = std::complex<double>;
using Vec3 = Eigen::Vector3d;
using CVec3 = Eigen::Vector3cd;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using CMat3 = Eigen::Matrix3cd;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using VecX = Eigen::VectorXd;
using CVecX = Eigen::VectorXcd;
using SparseReal = Eigen::SparseMatrix<double>;
using SparseComplex = Eigen::SparseMatrix<Complex>;

// Throws std::invalid_argument when a caller-facing precondition fails.
inline void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

// Throws std::runtime_error for internal consistency failures.
inline void check(bool condition, const std::string& message) {
  if (!condition) throw std::runtime_error(message);
}

// Shortest round-trip decimal representation of a double.  Used by every
// text writer so that reruns produce byte-identical files.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Deterministic pseudo-random unit-range doubles.  The values are fully
// specified by the C++ standard (mt19937_64 stream + explicit bit mapping),
// so solver start vectors are reproducible across platforms.
class DeterministicRng {
 public:
  explicit DeterministicRng(std::uint64_t seed) : gen_(seed) {}

  // Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  // Uniform double in [-1, 1).
  double symmetric() { return 2.0 * uniform() - 1.0; }

 private:
  std::mt19937_64 gen_;
};

inline VecX deterministic_vector(Eigen::Index n, std::uint64_t seed) {
  DeterministicRng rng(seed);
  VecX v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.symmetric();
  return v;
}

}  // namespace elband
