#pragma once

// Linear elasticity in root-two scaled Voigt form, plus trilinear hexahedral
// element matrices integrated with 2x2x2 Gauss quadrature.

#include "elband/core.hpp"

#include <array>
#include <cmath>

namespace elband {

using Mat63 = Eigen::Matrix<double, 6, 3>;
using ElementMatrix = Eigen::Matrix<double, 24, 24>;

// Strain-displacement symbol D(x): for a displacement direction v and a
// spatial covector x, D(x) v lists (e11, e22, r2*e12, r2*e13, r2*e23, e33)
// with the off-diagonal entries scaled by 2^{-1/2}, so that |D(x) v| equals
// the Frobenius norm of the symmetrized rank-one tensor.
inline Mat63 voigt_matrix(const Vec3& x) {
  const double r = 1.0 / std::sqrt(2.0);
  Mat63 d;
  d << x.x(), 0, 0,                  //
      0, x.y(), 0,                   //
      r * x.y(), r * x.x(), 0,       //
      r * x.z(), 0, r * x.x(),       //
      0, r * x.z(), r * x.y(),       //
      0, 0, x.z();
  return d;
}

inline Vec6 voigt_apply(const Vec3& x, const Vec3& v) {
  return voigt_matrix(x) * v;
}

// Isotropic Hooke matrix A = 2 mu I + lambda q q^T with q = (1,1,0,0,0,1)^T.
// Positivity of the shear and bulk moduli makes A symmetric positive
// definite with extreme eigenvalues 2 mu and 2 mu + 3 lambda.
inline Mat6 isotropic_hooke(double lambda, double mu) {
  require(mu > 0, "isotropic_hooke: shear modulus must be positive");
  require(3 * lambda + 2 * mu > 0,
          "isotropic_hooke: bulk modulus must be positive");
  Vec6 q;
  q << 1, 1, 0, 0, 0, 1;
  return 2 * mu * Mat6::Identity() + lambda * (q * q.transpose());
}

namespace detail {

// Reference corner signs in VTK hexahedron order.
inline constexpr double hex_sign[8][3] = {
    {-1, -1, -1}, {1, -1, -1}, {1, 1, -1}, {-1, 1, -1},
    {-1, -1, 1},  {1, -1, 1},  {1, 1, 1},  {-1, 1, 1}};

struct ShapeValues {
  std::array<double, 8> n;
  std::array<Vec3, 8> grad;  // with respect to reference coordinates
};

inline ShapeValues hex_shape(const Vec3& xi) {
  ShapeValues s;
  for (int i = 0; i < 8; ++i) {
    const double sx = hex_sign[i][0], sy = hex_sign[i][1], sz = hex_sign[i][2];
    const double fx = 1 + sx * xi.x(), fy = 1 + sy * xi.y(),
                 fz = 1 + sz * xi.z();
    s.n[static_cast<std::size_t>(i)] = 0.125 * fx * fy * fz;
    s.grad[static_cast<std::size_t>(i)] =
        0.125 * Vec3(sx * fy * fz, fx * sy * fz, fx * fy * sz);
  }
  return s;
}

inline const std::array<Vec3, 8>& gauss_points() {
  static const std::array<Vec3, 8> pts = [] {
    const double g = 1.0 / std::sqrt(3.0);
    std::array<Vec3, 8> p;
    int idx = 0;
    for (int k = 0; k < 2; ++k)
      for (int j = 0; j < 2; ++j)
        for (int i = 0; i < 2; ++i)
          p[static_cast<std::size_t>(idx++)] =
              Vec3(i ? g : -g, j ? g : -g, k ? g : -g);
    return p;
  }();
  return pts;
}

}  // namespace detail

struct ElementMatrices {
  ElementMatrix K;  // elastic energy form
  ElementMatrix M;  // mass form
};

// Stiffness and mass matrices of one trilinear hexahedron.  Corner order is
// the VTK convention; degrees of freedom are node-major (3 per node).
inline ElementMatrices element_matrices(const std::array<Vec3, 8>& corners,
                                        const Mat6& hooke, double density) {
  require(density > 0, "element_matrices: density must be positive");
  ElementMatrices out;
  out.K.setZero();
  out.M.setZero();
  for (const Vec3& xi : detail::gauss_points()) {
    const detail::ShapeValues s = detail::hex_shape(xi);
    Mat3 jac = Mat3::Zero();
    for (int i = 0; i < 8; ++i)
      jac += corners[static_cast<std::size_t>(i)] *
             s.grad[static_cast<std::size_t>(i)].transpose();
    const double det = jac.determinant();
    require(det > 0, "element_matrices: inverted or degenerate element");
    const Mat3 jinv = jac.inverse();

    Eigen::Matrix<double, 6, 24> b;
    for (int i = 0; i < 8; ++i) {
      const Vec3 grad_phys =
          jinv.transpose() * s.grad[static_cast<std::size_t>(i)];
      b.block<6, 3>(0, 3 * i) = voigt_matrix(grad_phys);
    }
    out.K.noalias() += det * (b.transpose() * hooke * b);

    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) {
        const double mij = det * density * s.n[static_cast<std::size_t>(i)] *
                           s.n[static_cast<std::size_t>(j)];
        for (int c = 0; c < 3; ++c) out.M(3 * i + c, 3 * j + c) += mij;
      }
  }
  // Products of the form B^T A B are symmetric only up to roundoff; enforce
  // exact symmetry so assembled operators are exactly symmetric.
  out.K = 0.5 * (out.K + out.K.transpose()).eval();
  return out;
}

}  // namespace elband
