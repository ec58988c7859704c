#pragma once

// Unit far-field problems on the truncated junction and the polarization
// matrix extracted from their interaction energies.  Each unit problem
// prescribes the Dirichlet datum sign(xi_3) * e^j on the far-field boundary;
// the polarization entries are element energies accumulated separately over
// the upper and lower halves, with Richardson extrapolation across a ladder
// of truncation radii.

#include "elband/assemble.hpp"
#include "elband/core.hpp"
#include "elband/eigensolve.hpp"
#include "elband/geometry.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <vector>

namespace elband {

struct UnitSolution {
  int j = 0;        // far-field direction e^j, 0-based
  double rho = 0;   // truncation radius of the host mesh
  VecX field;       // full nodal dof vector, datum included
};

struct PolarizationEstimate {
  double rho = 0;
  Mat3 m_plus = Mat3::Zero();
  Mat3 m_minus = Mat3::Zero();
  double asymmetry = 0;  // relative asymmetry of the raw energy matrices
};

struct PolarizationMatrix {
  Mat3 m_plus = Mat3::Zero();
  Mat3 m_minus = Mat3::Zero();
  std::vector<double> rho_values;
  bool extrapolated = false;
};

namespace detail {

inline int farfield_sign(double z) {
  const double tol = 1e-12;
  return z > tol ? 1 : (z < -tol ? -1 : 0);
}

}  // namespace detail

// Solves the three unit problems sharing a single factorization of the
// interior stiffness block.
inline std::array<UnitSolution, 3> solve_unit_problems(const CellMesh& mesh,
                                                       const Mat6& hooke) {
  require(mesh.rho > 0,
          "solve_unit_problems: mesh is not a truncated junction");
  const SparseReal k = assemble_stiffness(mesh, hooke);
  const int n_dof = static_cast<int>(k.rows());

  // Far-field nodes and their datum signs.
  std::vector<int> sign(mesh.nodes.size(), 0);
  std::vector<char> clamped(mesh.nodes.size(), 0);
  for (const auto& facet : mesh.facets) {
    if (facet.tag != FacetTag::FarField) continue;
    for (int nd : facet.nodes) {
      clamped[static_cast<std::size_t>(nd)] = 1;
      sign[static_cast<std::size_t>(nd)] =
          detail::farfield_sign(mesh.nodes[static_cast<std::size_t>(nd)].z());
    }
  }
  check(std::count(clamped.begin(), clamped.end(), 1) > 0,
        "solve_unit_problems: mesh carries no far-field facets");

  std::vector<int> free_index(static_cast<std::size_t>(n_dof), -1);
  int n_free = 0;
  for (int nd = 0; nd < mesh.num_nodes(); ++nd)
    if (!clamped[static_cast<std::size_t>(nd)])
      for (int c = 0; c < 3; ++c)
        free_index[static_cast<std::size_t>(3 * nd + c)] = n_free++;
  check(n_free > 0, "solve_unit_problems: no interior degrees of freedom");

  // Datum vectors and the reduced right-hand sides -K_fd * g.
  Eigen::MatrixXd datum = Eigen::MatrixXd::Zero(n_dof, 3);
  for (int nd = 0; nd < mesh.num_nodes(); ++nd)
    if (clamped[static_cast<std::size_t>(nd)])
      for (int j = 0; j < 3; ++j)
        datum(3 * nd + j, j) = sign[static_cast<std::size_t>(nd)];

  Eigen::MatrixXd rhs(n_free, 3);
  {
    const Eigen::MatrixXd kg = k * datum;
    for (int i = 0; i < n_dof; ++i)
      if (free_index[static_cast<std::size_t>(i)] >= 0)
        rhs.row(free_index[static_cast<std::size_t>(i)]) = -kg.row(i);
  }

  SparseReal kff(n_free, n_free);
  {
    std::vector<Eigen::Triplet<Real>> trips;
    trips.reserve(static_cast<std::size_t>(k.nonZeros()));
    for (int col = 0; col < k.outerSize(); ++col) {
      const int fc = free_index[static_cast<std::size_t>(col)];
      if (fc < 0) continue;
      for (SparseReal::InnerIterator it(k, col); it; ++it) {
        const int fr = free_index[static_cast<std::size_t>(it.row())];
        if (fr >= 0) trips.emplace_back(fr, fc, it.value());
      }
    }
    kff.setFromTriplets(trips.begin(), trips.end());
  }

  detail::ShiftedFactorization<Real> fact;
  fact.factor(kff, /*definite_hint=*/true);
  check(fact.ok(), "solve_unit_problems: interior stiffness factorization "
                   "failed");
  const Eigen::MatrixXd uf = fact.solve(rhs);

  std::array<UnitSolution, 3> out;
  for (int j = 0; j < 3; ++j) {
    out[static_cast<std::size_t>(j)].j = j;
    out[static_cast<std::size_t>(j)].rho = mesh.rho;
    VecX full = datum.col(j);
    for (int i = 0; i < n_dof; ++i)
      if (free_index[static_cast<std::size_t>(i)] >= 0)
        full[i] = uf(free_index[static_cast<std::size_t>(i)], j);
    out[static_cast<std::size_t>(j)].field = std::move(full);
  }
  return out;
}

// Interaction energies over the upper/lower halves.  The lower-half matrix
// carries a negative sign by convention, so the two nearly cancel for a
// mirror-symmetric junction.
inline PolarizationEstimate extract_polarization(
    const CellMesh& mesh, const Mat6& hooke,
    const std::array<UnitSolution, 3>& sols) {
  const SparseReal k_up = assemble_stiffness(
      mesh, hooke, centroid_filter(mesh, [](const Vec3& c) { return c.z() > 0; }));
  const SparseReal k_dn = assemble_stiffness(
      mesh, hooke, centroid_filter(mesh, [](const Vec3& c) { return c.z() < 0; }));

  Mat3 raw_up, raw_dn;
  for (int j = 0; j < 3; ++j) {
    const VecX ku = k_up * sols[static_cast<std::size_t>(j)].field;
    const VecX kd = k_dn * sols[static_cast<std::size_t>(j)].field;
    for (int l = 0; l < 3; ++l) {
      raw_up(l, j) = sols[static_cast<std::size_t>(l)].field.dot(ku);
      raw_dn(l, j) = sols[static_cast<std::size_t>(l)].field.dot(kd);
    }
  }

  PolarizationEstimate est;
  est.rho = mesh.rho;
  const double scale =
      std::max(raw_up.cwiseAbs().maxCoeff(), raw_dn.cwiseAbs().maxCoeff());
  est.asymmetry =
      scale > 0
          ? std::max((raw_up - raw_up.transpose()).cwiseAbs().maxCoeff(),
                     (raw_dn - raw_dn.transpose()).cwiseAbs().maxCoeff()) /
                scale
          : 0.0;
  est.m_plus = 0.5 * (raw_up + raw_up.transpose());
  est.m_minus = -0.5 * (raw_dn + raw_dn.transpose());
  return est;
}

inline PolarizationEstimate compute_polarization(const CellMesh& mesh,
                                                 const Mat6& hooke) {
  return extract_polarization(mesh, hooke, solve_unit_problems(mesh, hooke));
}

// Richardson extrapolation in 1/rho across a ladder of estimates (ascending
// rho).  Falls back to the finest estimate when the diagonal entries do not
// approach their limit monotonically or the extrapolated matrix loses
// definiteness.
inline PolarizationMatrix extrapolate_polarization(
    const std::vector<PolarizationEstimate>& estimates) {
  require(!estimates.empty(), "extrapolate_polarization: no estimates");
  for (std::size_t i = 1; i < estimates.size(); ++i)
    require(estimates[i].rho > estimates[i - 1].rho,
            "extrapolate_polarization: estimates must ascend in rho");

  PolarizationMatrix out;
  for (const auto& est : estimates) out.rho_values.push_back(est.rho);
  const PolarizationEstimate& fine = estimates.back();
  out.m_plus = fine.m_plus;
  out.m_minus = fine.m_minus;
  out.extrapolated = false;
  if (estimates.size() < 2) return out;

  // Diagonal monotonicity across the ladder.
  const double slack = 1e-12 * fine.m_plus.cwiseAbs().maxCoeff();
  for (int kdiag = 0; kdiag < 3; ++kdiag) {
    bool up = true, down = true;
    for (std::size_t i = 1; i < estimates.size(); ++i) {
      const double d = estimates[i].m_plus(kdiag, kdiag) -
                       estimates[i - 1].m_plus(kdiag, kdiag);
      up = up && d >= -slack;
      down = down && d <= slack;
    }
    if (!up && !down) return out;
  }

  const PolarizationEstimate& prev = estimates[estimates.size() - 2];
  const double r1 = prev.rho, r2 = fine.rho;
  const Mat3 mp =
      (r2 * fine.m_plus - r1 * prev.m_plus) / (r2 - r1);
  const Mat3 mm =
      (r2 * fine.m_minus - r1 * prev.m_minus) / (r2 - r1);

  Eigen::SelfAdjointEigenSolver<Mat3> ep(mp), em(-mm);
  if (ep.eigenvalues().minCoeff() <= 0 || em.eigenvalues().minCoeff() <= 0)
    return out;

  out.m_plus = mp;
  out.m_minus = mm;
  out.extrapolated = true;
  return out;
}

inline nlohmann::json polarization_to_json(
    const PolarizationMatrix& pol,
    const std::vector<PolarizationEstimate>& estimates = {}) {
  auto mat = [](const Mat3& m) {
    std::vector<std::array<double, 3>> rows;
    for (int r = 0; r < 3; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2)});
    return rows;
  };
  nlohmann::json j;
  j["m_plus"] = mat(pol.m_plus);
  j["m_minus"] = mat(pol.m_minus);
  j["rho_values"] = pol.rho_values;
  j["extrapolated"] = pol.extrapolated;
  if (!estimates.empty()) {
    j["estimates"] = nlohmann::json::array();
    for (const auto& est : estimates)
      j["estimates"].push_back({{"rho", est.rho},
                                {"m_plus", mat(est.m_plus)},
                                {"m_minus", mat(est.m_minus)},
                                {"asymmetry", est.asymmetry}});
  }
  return j;
}

}  // namespace elband
