#pragma once

// Global finite element assembly of stiffness and mass operators over a
// CellMesh, with optional element filters for region-restricted energy and
// mass forms.  Assembly iterates elements in index order with a fixed
// triplet layout, so repeated runs produce identical matrices.

#include "elband/core.hpp"
#include "elband/elastic.hpp"
#include "elband/geometry.hpp"

#include <fstream>
#include <functional>

namespace elband {

using ElementFilter = std::function<bool(int element)>;

struct AssembledPair {
  SparseReal K;
  SparseReal M;
  int n_dof = 0;
};

namespace detail {

inline std::array<Vec3, 8> element_corners(const CellMesh& mesh, int e) {
  std::array<Vec3, 8> c;
  const auto& hex = mesh.hexes[static_cast<std::size_t>(e)];
  for (int i = 0; i < 8; ++i)
    c[static_cast<std::size_t>(i)] =
        mesh.nodes[static_cast<std::size_t>(hex[static_cast<std::size_t>(i)])];
  return c;
}

template <typename EmitK, typename EmitM>
void assemble_loop(const CellMesh& mesh, const Mat6& hooke, double density,
                   const ElementFilter& filter, bool want_k, bool want_m,
                   EmitK&& emit_k, EmitM&& emit_m) {
  for (int e = 0; e < mesh.num_hexes(); ++e) {
    if (filter && !filter(e)) continue;
    const ElementMatrices em =
        element_matrices(element_corners(mesh, e), hooke, density);
    const auto& hex = mesh.hexes[static_cast<std::size_t>(e)];
    for (int i = 0; i < 24; ++i) {
      const int gi = 3 * hex[static_cast<std::size_t>(i / 3)] + i % 3;
      for (int j = 0; j < 24; ++j) {
        const int gj = 3 * hex[static_cast<std::size_t>(j / 3)] + j % 3;
        if (want_k) emit_k(gi, gj, em.K(i, j));
        if (want_m) emit_m(gi, gj, em.M(i, j));
      }
    }
  }
}

}  // namespace detail

// Assembles the elastic stiffness and mass matrices (free boundary; kinematic
// conditions are applied separately).
inline AssembledPair assemble(const CellMesh& mesh, const Mat6& hooke,
                              double density) {
  require(mesh.num_hexes() > 0, "assemble: mesh has no elements");
  const int n = 3 * mesh.num_nodes();
  std::vector<Eigen::Triplet<double>> tk, tm;
  tk.reserve(static_cast<std::size_t>(mesh.num_hexes()) * 576);
  tm.reserve(static_cast<std::size_t>(mesh.num_hexes()) * 576);
  detail::assemble_loop(
      mesh, hooke, density, {}, true, true,
      [&](int i, int j, double v) { tk.emplace_back(i, j, v); },
      [&](int i, int j, double v) { tm.emplace_back(i, j, v); });
  AssembledPair out;
  out.n_dof = n;
  out.K.resize(n, n);
  out.K.setFromTriplets(tk.begin(), tk.end());
  out.M.resize(n, n);
  out.M.setFromTriplets(tm.begin(), tm.end());
  return out;
}

// Stiffness restricted to the elements accepted by `filter` (energy form of
// a subdomain).  An empty filter keeps every element.
inline SparseReal assemble_stiffness(const CellMesh& mesh, const Mat6& hooke,
                                     const ElementFilter& filter = {}) {
  const int n = 3 * mesh.num_nodes();
  std::vector<Eigen::Triplet<double>> tk;
  detail::assemble_loop(
      mesh, hooke, 1.0, filter, true, false,
      [&](int i, int j, double v) { tk.emplace_back(i, j, v); },
      [](int, int, double) {});
  SparseReal k(n, n);
  k.setFromTriplets(tk.begin(), tk.end());
  return k;
}

// Mass restricted to the elements accepted by `filter`.
inline SparseReal assemble_mass(const CellMesh& mesh, double density,
                                const ElementFilter& filter = {}) {
  const int n = 3 * mesh.num_nodes();
  std::vector<Eigen::Triplet<double>> tm;
  detail::assemble_loop(
      mesh, isotropic_hooke(0.0, 1.0), density, filter, false, true,
      [](int, int, double) {},
      [&](int i, int j, double v) { tm.emplace_back(i, j, v); });
  SparseReal m(n, n);
  m.setFromTriplets(tm.begin(), tm.end());
  return m;
}

// Element filter selecting the ligament region.
inline ElementFilter ligament_filter(const CellMesh& mesh) {
  return [&mesh](int e) {
    return mesh.hex_region[static_cast<std::size_t>(e)] ==
           CellRegion::Ligament;
  };
}

// Element filter selecting elements whose centroid satisfies a predicate.
inline ElementFilter centroid_filter(const CellMesh& mesh,
                                     std::function<bool(const Vec3&)> pred) {
  return [&mesh, pred = std::move(pred)](int e) {
    const auto& hex = mesh.hexes[static_cast<std::size_t>(e)];
    Vec3 c = Vec3::Zero();
    for (int n : hex) c += mesh.nodes[static_cast<std::size_t>(n)];
    return pred(c / 8.0);
  };
}

// --------------------------------------------------------------------------
// Matrix Market output (coordinate format, 1-based indices)
// --------------------------------------------------------------------------

inline void write_matrix_market(const SparseReal& a, const std::string& path) {
  std::ofstream out(path);
  check(out.good(), "write_matrix_market: cannot open " + path);
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << a.rows() << ' ' << a.cols() << ' ' << a.nonZeros() << '\n';
  for (int k = 0; k < a.outerSize(); ++k)
    for (SparseReal::InnerIterator it(a, k); it; ++it)
      out << it.row() + 1 << ' ' << it.col() + 1 << ' '
          << format_double(it.value()) << '\n';
  check(out.good(), "write_matrix_market: write failure on " + path);
}

inline void write_matrix_market(const SparseComplex& a,
                                const std::string& path) {
  std::ofstream out(path);
  check(out.good(), "write_matrix_market: cannot open " + path);
  out << "%%MatrixMarket matrix coordinate complex general\n";
  out << a.rows() << ' ' << a.cols() << ' ' << a.nonZeros() << '\n';
  for (int k = 0; k < a.outerSize(); ++k)
    for (SparseComplex::InnerIterator it(a, k); it; ++it)
      out << it.row() + 1 << ' ' << it.col() + 1 << ' '
          << format_double(it.value().real()) << ' '
          << format_double(it.value().imag()) << '\n';
  check(out.good(), "write_matrix_market: write failure on " + path);
}

}  // namespace elband
