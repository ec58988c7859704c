#pragma once

// Spectral problem on the limit cell (free box): the lowest six eigenvalues
// vanish with rigid-motion eigenfunctions, and the machinery here recovers
// that cluster, replaces it with the canonical orthonormal rigid basis, and
// exposes pole traces for the junction asymptotics.

#include "elband/assemble.hpp"
#include "elband/core.hpp"
#include "elband/eigensolve.hpp"
#include "elband/geometry.hpp"

#include <json.hpp>

#include <array>
#include <vector>

namespace elband {

// Canonical rigid-motion basis: three unit translations and three unit
// rotation fields e^k x x, each normalized to unit L2 norm via the cell
// volume and the planar second moments J_k = integral of x_k^2.
struct RigidBasis {
  std::array<double, 6> beta{};
  double volume = 0.0;
  double j1 = 0.0, j2 = 0.0, j3 = 0.0;
  Eigen::MatrixXd fields;  // 3N x 6, nodal interpolants

  static Vec3 evaluate_direction(int mode, const Vec3& x) {
    switch (mode) {
      case 0: return Vec3(1, 0, 0);
      case 1: return Vec3(0, 1, 0);
      case 2: return Vec3(0, 0, 1);
      case 3: return Vec3(0, x.z(), -x.y());   // x cross e1
      case 4: return Vec3(-x.z(), 0, x.x());   // x cross e2
      default: return Vec3(x.y(), -x.x(), 0);  // x cross e3
    }
  }
};

inline RigidBasis rigid_basis(const CellMesh& mesh) {
  RigidBasis basis;
  // Volume and planar second moments by element quadrature.
  for (int e = 0; e < mesh.num_hexes(); ++e) {
    const auto corners = detail::element_corners(mesh, e);
    for (const Vec3& xi : detail::gauss_points()) {
      const auto s = detail::hex_shape(xi);
      Mat3 jac = Mat3::Zero();
      Vec3 x = Vec3::Zero();
      for (int i = 0; i < 8; ++i) {
        jac += corners[static_cast<std::size_t>(i)] *
               s.grad[static_cast<std::size_t>(i)].transpose();
        x += s.n[static_cast<std::size_t>(i)] *
             corners[static_cast<std::size_t>(i)];
      }
      const double det = jac.determinant();
      basis.volume += det;
      basis.j1 += det * x.x() * x.x();
      basis.j2 += det * x.y() * x.y();
      basis.j3 += det * x.z() * x.z();
    }
  }
  check(basis.volume > 0, "rigid_basis: non-positive mesh volume");

  const double b_tr = 1.0 / std::sqrt(basis.volume);
  basis.beta = {b_tr,
                b_tr,
                b_tr,
                1.0 / std::sqrt(basis.j2 + basis.j3),
                1.0 / std::sqrt(basis.j1 + basis.j3),
                1.0 / std::sqrt(basis.j1 + basis.j2)};

  const int nn = mesh.num_nodes();
  basis.fields.resize(3 * nn, 6);
  for (int mode = 0; mode < 6; ++mode)
    for (int i = 0; i < nn; ++i)
      basis.fields.block<3, 1>(3 * i, mode) =
          basis.beta[static_cast<std::size_t>(mode)] *
          RigidBasis::evaluate_direction(
              mode, mesh.nodes[static_cast<std::size_t>(i)]);
  return basis;
}

struct LimitSpectrum {
  VecX values;              // ascending
  Eigen::MatrixXd vectors;  // full nodal dof, columns L2(M)-orthonormal
  VecX residuals;
  std::vector<std::vector<int>> clusters;
  Eigen::Matrix3Xd trace_top;     // u_k(P+)
  Eigen::Matrix3Xd trace_bottom;  // u_k(P-)
  double zero_tol = 0.0;
  double cluster_tol = 1e-4;
  int n_rigid = 0;
  int pole_top = -1;
  int pole_bottom = -1;
  SparseReal mass;  // kept for projections and orthonormality checks
};

inline Vec3 pole_trace(const VecX& u, int pole_node) {
  check(pole_node >= 0, "pole_trace: pole is not a mesh node");
  return u.segment<3>(3 * pole_node);
}

namespace detail {

// Deterministic sign convention: the entry of largest magnitude among the
// bottom pole trace (fallback: top pole trace, then the whole vector) is
// made positive.
inline void fix_sign(VecX& u, int pole_top, int pole_bottom) {
  auto dominant = [](const Vec3& v) {
    int arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    return v[arg];
  };
  const double unorm = u.cwiseAbs().maxCoeff();
  double pivot = dominant(u.segment<3>(3 * pole_bottom));
  if (std::abs(pivot) < 1e-10 * unorm)
    pivot = dominant(u.segment<3>(3 * pole_top));
  if (std::abs(pivot) < 1e-10 * unorm) {
    int arg = 0;
    u.cwiseAbs().maxCoeff(&arg);
    pivot = u[arg];
  }
  if (pivot < 0) u = -u;
}

inline std::vector<std::vector<int>> chain_clusters(const VecX& values,
                                                    double tol) {
  std::vector<std::vector<int>> clusters;
  for (int i = 0; i < values.size(); ++i) {
    if (!clusters.empty()) {
      const int prev = clusters.back().back();
      if (std::abs(values[i] - values[prev]) <=
          tol * (1.0 + std::abs(values[prev]))) {
        clusters.back().push_back(i);
        continue;
      }
    }
    clusters.push_back({i});
  }
  return clusters;
}

}  // namespace detail

// Solves the free (Neumann) limit problem for the n lowest eigenpairs.
inline LimitSpectrum solve_limit(const CellMesh& mesh, const Mat6& hooke,
                                 int n, double density = 1.0,
                                 double tol = 1e-9,
                                 double cluster_tol = 1e-4) {
  require(n >= 7,
          "solve_limit: need at least seven eigenvalues (rigid cluster plus "
          "one elastic mode)");
  require(mesh.pole_top >= 0 && mesh.pole_bottom >= 0,
          "solve_limit: mesh must carry pole nodes");

  const AssembledPair ops = assemble(mesh, hooke, density);

  SolveOptions opt;
  opt.n_eigs = n;
  opt.block = 6;  // the kernel is six-fold degenerate
  opt.tol = tol;
  const Spectrum spec = solve_gevp_real(ops.K, ops.M, opt);

  LimitSpectrum out;
  out.values = spec.values;
  out.vectors = spec.vectors.real();
  out.residuals = spec.residuals;
  out.cluster_tol = cluster_tol;
  out.pole_top = mesh.pole_top;
  out.pole_bottom = mesh.pole_bottom;
  out.mass = ops.M;

  // Rigid cluster detection: near-zero relative to the first elastic mode.
  check(n >= 7 && out.values.size() >= 7,
        "solve_limit: solver returned too few eigenvalues");
  const double lambda7 = out.values[6];
  check(lambda7 > 0, "solve_limit: seventh eigenvalue is not positive");
  out.zero_tol = 1e-8 * lambda7;
  int zeros = 0;
  for (int i = 0; i < out.values.size(); ++i)
    if (std::abs(out.values[i]) <= out.zero_tol) ++zeros;
  check(zeros >= 6,
        "solve_limit: fewer than six near-zero eigenvalues; mesh or solver "
        "failure");
  out.n_rigid = zeros;
  out.clusters = detail::chain_clusters(out.values, cluster_tol);

  for (int q = 0; q < out.vectors.cols(); ++q) {
    VecX col = out.vectors.col(q);
    detail::fix_sign(col, out.pole_top, out.pole_bottom);
    out.vectors.col(q) = col;
  }

  out.trace_top.resize(3, out.vectors.cols());
  out.trace_bottom.resize(3, out.vectors.cols());
  for (int q = 0; q < out.vectors.cols(); ++q) {
    out.trace_top.col(q) = pole_trace(out.vectors.col(q), out.pole_top);
    out.trace_bottom.col(q) = pole_trace(out.vectors.col(q), out.pole_bottom);
  }
  return out;
}

// Replaces the computed rigid cluster by the canonical rigid basis (whose
// interpolants lie in the discrete kernel exactly), after verifying that the
// computed cluster spans the same six-dimensional space.
inline LimitSpectrum align_rigid_cluster(const LimitSpectrum& spec,
                                         const RigidBasis& basis) {
  check(spec.n_rigid >= 6, "align_rigid_cluster: rigid cluster absent");
  check(spec.vectors.rows() == basis.fields.rows(),
        "align_rigid_cluster: basis/spectrum size mismatch");

  // Projection of the computed kernel onto the basis in the mass inner
  // product must have full rank.
  const Eigen::MatrixXd kernel = spec.vectors.leftCols(6);
  const Eigen::MatrixXd proj =
      basis.fields.transpose() * (spec.mass * kernel);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(proj);
  check(svd.singularValues().minCoeff() > 1e-6,
        "align_rigid_cluster: projection onto the rigid basis is rank "
        "deficient");

  LimitSpectrum out = spec;
  for (int mode = 0; mode < 6; ++mode) {
    VecX f = basis.fields.col(mode);
    const double nrm = std::sqrt(f.dot(spec.mass * f));
    check(nrm > 0, "align_rigid_cluster: degenerate basis field");
    out.vectors.col(mode) = f / nrm;
  }
  for (int q = 0; q < out.vectors.cols(); ++q) {
    out.trace_top.col(q) = pole_trace(out.vectors.col(q), out.pole_top);
    out.trace_bottom.col(q) = pole_trace(out.vectors.col(q), out.pole_bottom);
  }
  return out;
}

// Compact JSON form (eigenvalues, clusters, pole traces); eigenvectors are
// deliberately omitted.
inline nlohmann::json limit_to_json(const LimitSpectrum& spec) {
  nlohmann::json j;
  j["values"] = std::vector<double>(
      spec.values.data(), spec.values.data() + spec.values.size());
  j["residuals"] = std::vector<double>(
      spec.residuals.data(), spec.residuals.data() + spec.residuals.size());
  j["zero_tol"] = spec.zero_tol;
  j["cluster_tol"] = spec.cluster_tol;
  j["n_rigid"] = spec.n_rigid;
  j["clusters"] = spec.clusters;
  auto traces = [](const Eigen::Matrix3Xd& t) {
    std::vector<std::array<double, 3>> rows;
    for (int q = 0; q < t.cols(); ++q)
      rows.push_back({t(0, q), t(1, q), t(2, q)});
    return rows;
  };
  j["trace_top"] = traces(spec.trace_top);
  j["trace_bottom"] = traces(spec.trace_bottom);
  return j;
}

}  // namespace elband
