#pragma once

// First-order dispersion corrections: coupling of the limit eigenfunctions
// to the junction through their pole traces, correction curves in the
// quasimomentum, degenerate-cluster corrections via a Hermitian interaction
// matrix, closed-form corrections for the rigid cluster, and the composite
// near-eigenfield built from the limit mode and the junction boundary layer.

#include "elband/cell_problem.hpp"
#include "elband/core.hpp"
#include "elband/geometry.hpp"
#include "elband/limit.hpp"

#include <cmath>
#include <complex>
#include <vector>

namespace elband {

enum class CorrectionConvention { Factor1, Factor2 };

inline double convention_factor(CorrectionConvention c) {
  return c == CorrectionConvention::Factor2 ? 2.0 : 1.0;
}

// Pole coupling of one limit mode: the junction sees the half-difference of
// the neighboring traces.
struct CouplingVector {
  Vec3 a = Vec3::Zero();  // -u_k(P+)/2
  Vec3 b = Vec3::Zero();  // +u_k(P-)/2

  CVec3 at(double eta) const {
    return a.cast<Complex>() + std::polar(1.0, eta) * b.cast<Complex>();
  }
};

inline CouplingVector coupling_vector(const LimitSpectrum& spec, int k) {
  require(k >= 0 && k < spec.trace_top.cols(),
          "coupling_vector: mode index out of range");
  CouplingVector out;
  out.a = -0.5 * spec.trace_top.col(k);
  out.b = 0.5 * spec.trace_bottom.col(k);
  return out;
}

// First-order eigenvalue correction of a simple mode.
inline double lambda_prime(const CouplingVector& cv, const Mat3& m_plus,
                           double lambda_k, int a_param, double eta,
                           CorrectionConvention conv) {
  const CVec3 b = cv.at(eta);
  const double quad = (b.adjoint() * (m_plus * b)).value().real();
  return 2.0 * a_param * lambda_k + convention_factor(conv) * quad;
}

// The correction of a simple mode is an exact cosine in the quasimomentum.
struct CorrectionCurve {
  double c0 = 0.0;
  double c1 = 0.0;

  double eval(double eta) const { return c0 + c1 * std::cos(eta); }
  double min() const { return c0 - std::abs(c1); }
  double max() const { return c0 + std::abs(c1); }
};

inline CorrectionCurve correction_curve(const CouplingVector& cv,
                                        const Mat3& m_plus, double lambda_k,
                                        int a_param,
                                        CorrectionConvention conv) {
  const double f = convention_factor(conv);
  CorrectionCurve curve;
  curve.c0 = 2.0 * a_param * lambda_k +
             f * (cv.a.dot(m_plus * cv.a) + cv.b.dot(m_plus * cv.b));
  curve.c1 = f * 2.0 * cv.a.dot(m_plus * cv.b);
  return curve;
}

// Hermitian interaction matrix of a degenerate cluster.
inline Eigen::MatrixXcd multiplicity_matrix(
    const std::vector<CouplingVector>& cluster, const Mat3& m_plus,
    double eta) {
  const int m = static_cast<int>(cluster.size());
  require(m > 0, "multiplicity_matrix: empty cluster");
  Eigen::MatrixXcd gram(m, m);
  std::vector<CVec3> b(cluster.size());
  for (int q = 0; q < m; ++q)
    b[static_cast<std::size_t>(q)] = cluster[static_cast<std::size_t>(q)].at(eta);
  for (int q = 0; q < m; ++q)
    for (int j = 0; j < m; ++j)
      gram(q, j) = (b[static_cast<std::size_t>(j)].adjoint() *
                    (m_plus * b[static_cast<std::size_t>(q)]))
                       .value();
  return 0.5 * (gram + gram.adjoint().eval());
}

// Corrections of a degenerate cluster: common shift plus the interaction
// eigenvalues, ascending.
inline VecX multiplicity_corrections(const std::vector<CouplingVector>& cluster,
                                     const Mat3& m_plus, double lambda_k,
                                     int a_param, double eta,
                                     CorrectionConvention conv) {
  const Eigen::MatrixXcd gram = multiplicity_matrix(cluster, m_plus, eta);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(gram);
  check(eig.info() == Eigen::Success,
        "multiplicity_corrections: interaction eigensolve failed");
  VecX out = eig.eigenvalues();
  const double f = convention_factor(conv);
  for (int i = 0; i < out.size(); ++i)
    out[i] = 2.0 * a_param * lambda_k + f * out[i];
  return out;
}

// Closed-form corrections of the six rigid modes.  Their coupling vectors
// are axis-aligned, so the interaction spectrum is that of the polarization
// matrix weighted by the translation/rotation amplitudes; three modes stay
// uncorrected at this order.
inline VecX rigid_corrections(const RigidBasis& basis, const Mat3& m_plus,
                              double eta, CorrectionConvention conv) {
  const double alpha1 = (1.0 - std::cos(eta)) / (2.0 * basis.volume);
  const double c4 = (1.0 + std::cos(eta)) / (8.0 * (basis.j2 + basis.j3));
  const double c5 = (1.0 + std::cos(eta)) / (8.0 * (basis.j1 + basis.j3));

  Vec3 w(alpha1 + c5, alpha1 + c4, alpha1);
  const Vec3 ws = w.cwiseSqrt();
  const Mat3 weighted = ws.asDiagonal() * m_plus * ws.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Mat3> eig(weighted);
  check(eig.info() == Eigen::Success,
        "rigid_corrections: weighted eigensolve failed");

  VecX out(6);
  out.head(3).setZero();
  out.tail(3) = convention_factor(conv) * eig.eigenvalues();
  std::sort(out.data(), out.data() + out.size());
  return out;
}

// First-order band prediction of a simple mode over the quasimomentum sweep.
struct BandPrediction {
  int k = 0;
  double h = 0.0;
  double lambda = 0.0;
  CorrectionCurve curve;
  double lower = 0.0;  // min over eta of lambda + h * curve
  double upper = 0.0;
  double width = 0.0;
};

inline BandPrediction predicted_band(int k, double h, double lambda_k,
                                     const CouplingVector& cv,
                                     const Mat3& m_plus, int a_param,
                                     CorrectionConvention conv) {
  require(h > 0, "predicted_band: h must be positive");
  BandPrediction out;
  out.k = k;
  out.h = h;
  out.lambda = lambda_k;
  out.curve = correction_curve(cv, m_plus, lambda_k, a_param, conv);
  out.lower = lambda_k + h * out.curve.min();
  out.upper = lambda_k + h * out.curve.max();
  out.width = out.upper - out.lower;  // = 2h|c1|
  return out;
}

namespace detail {

inline double smoothstep(double edge0, double edge1, double x) {
  const double t = std::clamp((x - edge0) / (edge1 - edge0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace detail

// Composite near-eigenfield on the periodicity cell: the scaled limit mode
// away from the poles, the junction boundary layer near them, with the
// common constant removed.  The construction is quasi-periodic across the
// cell faces by design.
struct AnsatzOptions {
  double chi_inner = 0.2;   // boundary-layer cutoff: full strength radius
  double chi_outer = 0.4;   // boundary-layer cutoff: support radius
  double body_inner = 1.5;  // body cutoff transition start, in units of t*h
  double body_outer = 3.0;  // body cutoff transition end, in units of t*h
};

inline CVecX assemble_ansatz(const CellMesh& cell, const CellMesh& limit_mesh,
                             const LimitSpectrum& aligned, int k,
                             const CellMesh& omega,
                             const std::array<UnitSolution, 3>& units,
                             const CellParams& params, double eta,
                             const AnsatzOptions& opt = {}) {
  require(params.a == 1,
          "assemble_ansatz: requires the finite-ligament geometry");
  require(cell.h > 0, "assemble_ansatz: host mesh is not a periodicity cell");
  require(k >= 0 && k < aligned.vectors.cols(),
          "assemble_ansatz: mode index out of range");
  const double h = cell.h;
  const double th = params.t * h;
  require(opt.body_outer * th < opt.chi_inner,
          "assemble_ansatz: cutoff scales overlap; reduce h or t");
  require(opt.chi_outer < 0.5,
          "assemble_ansatz: boundary-layer support reaches the far pole");

  const double ah = scale_map(params.a, h).a_h;
  const FieldSampler body_sampler(limit_mesh);
  const FieldSampler omega_sampler(omega);
  const VecX u_k = aligned.vectors.col(k);

  // Pole data and the two boundary-layer expansions.
  const Vec3 trace_top = aligned.trace_top.col(k);
  const Vec3 trace_bottom = aligned.trace_bottom.col(k);
  const Complex phase = std::polar(1.0, eta);
  const CouplingVector cv{-0.5 * trace_top, 0.5 * trace_bottom};
  const CVec3 b_top = cv.at(eta);
  const CVec3 avg_top =
      0.5 * (trace_top.cast<Complex>() + phase * trace_bottom.cast<Complex>());
  const CVec3 b_bottom = b_top / phase;
  const CVec3 avg_bottom = avg_top / phase;

  const Vec3 pole_plus(0, 0, 0.5), pole_minus(0, 0, -0.5);

  auto sample_units = [&](const Vec3& xi) {
    std::array<Vec3, 3> x_vals;
    if (omega_sampler.contains(xi)) {
      for (int j = 0; j < 3; ++j)
        x_vals[static_cast<std::size_t>(j)] = omega_sampler.eval(
            units[static_cast<std::size_t>(j)].field, xi);
    } else {
      // Beyond the truncated junction the unit solutions are their datum.
      const double s = xi.z() > 0 ? 1.0 : (xi.z() < 0 ? -1.0 : 0.0);
      for (int j = 0; j < 3; ++j) {
        x_vals[static_cast<std::size_t>(j)] = Vec3::Zero();
        x_vals[static_cast<std::size_t>(j)][j] = s;
      }
    }
    return x_vals;
  };

  CVecX out(3 * cell.num_nodes());
  for (int nd = 0; nd < cell.num_nodes(); ++nd) {
    const Vec3 x = cell.nodes[static_cast<std::size_t>(nd)];
    const double d_plus = (x - pole_plus).norm();
    const double d_minus = (x - pole_minus).norm();

    // Body cutoff: kills the rescaled limit mode right at the poles.
    const double cut_body =
        detail::smoothstep(opt.body_inner * th, opt.body_outer * th, d_plus) *
        detail::smoothstep(opt.body_inner * th, opt.body_outer * th, d_minus);
    // Boundary-layer cutoffs around each pole.
    const double chi_plus =
        1.0 - detail::smoothstep(opt.chi_inner, opt.chi_outer, d_plus);
    const double chi_minus =
        1.0 - detail::smoothstep(opt.chi_inner, opt.chi_outer, d_minus);

    // Rescaled limit mode; constant continuation by the pole trace where the
    // stub leaves the limit cell.
    Vec3 u_body;
    const Vec3 xs = ah * x;
    if (body_sampler.contains(xs)) {
      u_body = body_sampler.eval(u_k, xs);
    } else {
      u_body = xs.z() > 0 ? trace_top : trace_bottom;
    }

    CVec3 value = cut_body * u_body.cast<Complex>();
    if (chi_plus > 0) {
      const auto xv = sample_units((x - pole_plus) / h);
      CVec3 layer = avg_top;
      for (int j = 0; j < 3; ++j)
        layer += b_top[j] * xv[static_cast<std::size_t>(j)].cast<Complex>();
      value += chi_plus *
               (layer - cut_body * trace_top.cast<Complex>());
    }
    if (chi_minus > 0) {
      const auto xv = sample_units((x - pole_minus) / h);
      CVec3 layer = avg_bottom;
      for (int j = 0; j < 3; ++j)
        layer += b_bottom[j] * xv[static_cast<std::size_t>(j)].cast<Complex>();
      value += chi_minus *
               (layer - cut_body * trace_bottom.cast<Complex>());
    }
    out.segment<3>(3 * nd) = value;
  }
  return out;
}

// Energy-plus-mass inner product used to compare fields on the same mesh.
inline Complex h_inner(const SparseReal& k, const SparseReal& m,
                       const CVecX& u, const CVecX& v) {
  return (v.adjoint() * (k * u + m * u)).value();
}

inline double h_norm(const SparseReal& k, const SparseReal& m,
                     const CVecX& u) {
  return std::sqrt(std::abs(h_inner(k, m, u, u)));
}

}  // namespace elband
