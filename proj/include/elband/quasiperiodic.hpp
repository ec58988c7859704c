#pragma once

// Quasi-periodic reduction of assembled operators: the displacement on the
// top face equals the bottom-face displacement times a unit phase factor.
// Slave (top) degrees of freedom are eliminated through a sparse coupling
// map T, giving reduced Hermitian operators T^H K T and T^H M T.

#include "elband/assemble.hpp"
#include "elband/core.hpp"
#include "elband/geometry.hpp"

#include <cmath>
#include <numbers>

namespace elband {

struct QuasiPeriodicSystem {
  SparseComplex K;
  SparseComplex M;
  int full_dim = 0;
  int reduced_dim = 0;
  double eta = 0.0;
  Complex phase{1.0, 0.0};
  std::vector<int> reduced_index;          // full dof -> reduced dof or -1
  std::vector<std::pair<int, int>> pairs;  // (slave node, master node)

  // Lifts a reduced coefficient vector back to the full nodal space.
  CVecX expand(const CVecX& reduced) const {
    check(reduced.size() == reduced_dim,
          "QuasiPeriodicSystem::expand: dimension mismatch");
    CVecX full = CVecX::Zero(full_dim);
    for (int d = 0; d < full_dim; ++d)
      if (reduced_index[static_cast<std::size_t>(d)] >= 0)
        full[d] = reduced[reduced_index[static_cast<std::size_t>(d)]];
    for (const auto& [slave, master] : pairs)
      for (int c = 0; c < 3; ++c)
        full[3 * slave + c] = phase * full[3 * master + c];
    return full;
  }
};

namespace detail {

// Unit phase e^{i eta}, canonicalized so that parameters symmetric about pi
// produce exactly conjugate phases and the values at 0 and pi are exactly
// real.  This makes the time-reversal symmetry of the reduced operators hold
// to machine precision rather than to trigonometric roundoff.
inline Complex canonical_phase(double eta) {
  const double two_pi = 2.0 * std::numbers::pi;
  double tau = std::fmod(eta, two_pi);
  if (tau < 0) tau += two_pi;
  const bool mirror = tau > std::numbers::pi;
  const double base = mirror ? two_pi - tau : tau;
  Complex phase = std::polar(1.0, base);
  if (std::abs(phase.imag()) < 1e-15) phase.imag(0.0);
  if (std::abs(phase.real()) < 1e-15) phase.real(0.0);
  return mirror ? std::conj(phase) : phase;
}

}  // namespace detail

// Builds the reduced quasi-periodic operator pair for parameter `eta`.
inline QuasiPeriodicSystem apply_quasiperiodicity(const AssembledPair& ops,
                                                  const CellMesh& mesh,
                                                  double eta) {
  require(!mesh.periodic_pairs.empty(),
          "apply_quasiperiodicity: mesh carries no periodic pairs");
  check(ops.n_dof == 3 * mesh.num_nodes(),
        "apply_quasiperiodicity: operator/mesh size mismatch");

  QuasiPeriodicSystem sys;
  sys.full_dim = ops.n_dof;
  sys.eta = eta;
  sys.phase = detail::canonical_phase(eta);
  sys.pairs = mesh.periodic_pairs;

  // Slave dof are the top-face nodes of each pair.
  std::vector<char> is_slave(static_cast<std::size_t>(mesh.num_nodes()), 0);
  for (const auto& [slave, master] : sys.pairs) {
    check(!is_slave[static_cast<std::size_t>(slave)],
          "apply_quasiperiodicity: node paired twice");
    is_slave[static_cast<std::size_t>(slave)] = 1;
  }

  sys.reduced_index.assign(static_cast<std::size_t>(sys.full_dim), -1);
  int next = 0;
  for (int node = 0; node < mesh.num_nodes(); ++node) {
    if (is_slave[static_cast<std::size_t>(node)]) continue;
    for (int c = 0; c < 3; ++c)
      sys.reduced_index[static_cast<std::size_t>(3 * node + c)] = next++;
  }
  sys.reduced_dim = next;

  // Coupling map T (full x reduced): identity on retained dof, phase times
  // the master column on slave dof.
  SparseComplex t(sys.full_dim, sys.reduced_dim);
  {
    std::vector<Eigen::Triplet<Complex>> trips;
    trips.reserve(static_cast<std::size_t>(sys.full_dim));
    for (int d = 0; d < sys.full_dim; ++d) {
      const int r = sys.reduced_index[static_cast<std::size_t>(d)];
      if (r >= 0) trips.emplace_back(d, r, Complex(1.0, 0.0));
    }
    for (const auto& [slave, master] : sys.pairs)
      for (int c = 0; c < 3; ++c) {
        const int r =
            sys.reduced_index[static_cast<std::size_t>(3 * master + c)];
        check(r >= 0, "apply_quasiperiodicity: master node is also a slave");
        trips.emplace_back(3 * slave + c, r, sys.phase);
      }
    t.setFromTriplets(trips.begin(), trips.end());
  }

  const SparseComplex kc = ops.K.cast<Complex>();
  const SparseComplex mc = ops.M.cast<Complex>();
  SparseComplex kr = t.adjoint() * kc * t;
  SparseComplex mr = t.adjoint() * mc * t;
  // Enforce exact Hermiticity (the product is Hermitian up to roundoff).
  sys.K = Complex(0.5, 0.0) * (SparseComplex(kr.adjoint()) + kr);
  sys.M = Complex(0.5, 0.0) * (SparseComplex(mr.adjoint()) + mr);
  return sys;
}

// Largest deviation from Hermiticity, |A - A^H|_max.
inline double hermiticity_defect(const SparseComplex& a) {
  SparseComplex d = SparseComplex(a.adjoint()) - a;
  double worst = 0.0;
  for (int k = 0; k < d.outerSize(); ++k)
    for (SparseComplex::InnerIterator it(d, k); it; ++it)
      worst = std::max(worst, std::abs(it.value()));
  return worst;
}

}  // namespace elband
