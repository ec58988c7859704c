#pragma once

// Shift-invert block Lanczos solver for the generalized Hermitian eigenvalue
// problem K u = lambda M u with M positive definite.  The iteration runs in
// the M inner product on the operator (K - sigma M)^{-1} M, with full
// reorthogonalization (CGS2) so clustered and multiple eigenvalues are
// resolved reliably; the block size bounds the multiplicity that can be
// captured per sweep.
//
// Factorizations: CHOLMOD supernodal LLT when available and the shifted
// operator is positive definite (any shift below the spectrum), otherwise
// Eigen's SimplicialLDLT, with SparseLU as the general fallback.  A shift
// that lands on an eigenvalue is perturbed automatically and recorded.

#include "elband/core.hpp"
#include "elband/quasiperiodic.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>
#ifdef ELBAND_HAVE_CHOLMOD
#include <Eigen/CholmodSupport>
#endif

#include <algorithm>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

namespace elband {

struct SolveOptions {
  int n_eigs = 6;
  double shift = -1.0;
  double tol = 1e-9;        // relative eigenpair residual
  int block = 4;            // Lanczos block size (max resolvable multiplicity)
  int max_vectors = 0;      // Krylov budget; 0 selects an automatic cap
  std::uint64_t seed = 0x5eedULL;
};

struct Spectrum {
  VecX values;               // ascending
  Eigen::MatrixXcd vectors;  // columns M-orthonormal, reduced space
  VecX residuals;            // |K u - lambda M u| / ((|lambda|+|sigma|) |M u|)
  double shift_used = 0.0;
  int krylov_dim = 0;
  int matvecs = 0;
  bool converged = false;
  std::string factorization;
};

// Thrown when the Krylov budget is exhausted; carries the best available
// partial spectrum.
class EigensolveError : public std::runtime_error {
 public:
  EigensolveError(const std::string& message, Spectrum partial)
      : std::runtime_error(message), partial_(std::move(partial)) {}
  const Spectrum& partial() const { return partial_; }

 private:
  Spectrum partial_;
};

namespace detail {

template <typename Scalar>
class ShiftedFactorization {
  using Sp = Eigen::SparseMatrix<Scalar>;
  using Dense = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

 public:
  std::string factor(const Sp& a, bool definite_hint) {
    mode_ = Mode::Failed;
    if (definite_hint) {
#ifdef ELBAND_HAVE_CHOLMOD
      cholmod_ =
          std::make_unique<Eigen::CholmodSupernodalLLT<Sp, Eigen::Lower>>();
      cholmod_->compute(a);
      if (cholmod_->info() == Eigen::Success) {
        mode_ = Mode::Definite;
        return "cholmod-supernodal-llt";
      }
      cholmod_.reset();
#else
      ldlt_ = std::make_unique<Eigen::SimplicialLDLT<Sp, Eigen::Lower>>();
      ldlt_->compute(a);
      if (ldlt_->info() == Eigen::Success) {
        mode_ = Mode::Definite;
        return "simplicial-ldlt";
      }
      ldlt_.reset();
#endif
    }
    lu_ = std::make_unique<Eigen::SparseLU<Sp, Eigen::COLAMDOrdering<int>>>();
    lu_->compute(a);
    if (lu_->info() == Eigen::Success) {
      mode_ = Mode::Lu;
      return "sparse-lu";
    }
    lu_.reset();
    return "failed";
  }

  bool ok() const { return mode_ != Mode::Failed; }

  Dense solve(const Dense& rhs) const {
    if (mode_ == Mode::Definite) {
#ifdef ELBAND_HAVE_CHOLMOD
      return cholmod_->solve(rhs);
#else
      return ldlt_->solve(rhs);
#endif
    }
    check(mode_ == Mode::Lu, "ShiftedFactorization: solve without factor");
    return lu_->solve(rhs);
  }

 private:
  enum class Mode { Failed, Definite, Lu };
  Mode mode_ = Mode::Failed;
#ifdef ELBAND_HAVE_CHOLMOD
  std::unique_ptr<Eigen::CholmodSupernodalLLT<Sp, Eigen::Lower>> cholmod_;
#else
  std::unique_ptr<Eigen::SimplicialLDLT<Sp, Eigen::Lower>> ldlt_;
#endif
  std::unique_ptr<Eigen::SparseLU<Sp, Eigen::COLAMDOrdering<int>>> lu_;
};

// CGS2 orthogonalization of the columns of `w` against every block in
// `basis`, all in the M inner product.
template <typename Scalar>
void orthogonalize_against(
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& w,
    const Eigen::SparseMatrix<Scalar>& m,
    const std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>>&
        basis) {
  using Dense = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (basis.empty()) return;
  for (int pass = 0; pass < 2; ++pass) {
    const Dense mw = m * w;
    for (const auto& v : basis) {
      const Dense coef = v.adjoint() * mw;
      w.noalias() -= v * coef;
    }
  }
}

// M-orthonormalizes the columns of `w` in place (MGS with one refinement
// pass); `r` receives the triangular coefficients so that w_in = w_out * r
// modulo directions removed against `basis`.  Numerically dependent columns
// are replaced by fresh deterministic directions orthogonal to `basis` and
// get a zero coefficient column.  Returns false when no independent
// replacement direction can be produced.
template <typename Scalar>
bool m_orthonormalize(
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& w,
    const Eigen::SparseMatrix<Scalar>& m,
    const std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>>&
        basis,
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& r,
    DeterministicRng& rng) {
  using DenseV = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const int b = static_cast<int>(w.cols());
  const Eigen::Index n = w.rows();
  r.setZero(b, b);
  auto m_norm = [&](const DenseV& col) {
    const Scalar sq = col.dot(m * col);
    return std::sqrt(std::max(0.0, std::real(Complex(sq))));
  };
  for (int c = 0; c < b; ++c) {
    bool replaced = false;
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 3) return false;
      const double ref = m_norm(w.col(c));
      for (int pass = 0; pass < 2; ++pass)
        for (int d = 0; d < c; ++d) {
          const Scalar coef = w.col(d).dot(m * w.col(c));
          if (!replaced) r(d, c) += coef;
          w.col(c) -= coef * w.col(d);
        }
      const double nrm = m_norm(w.col(c));
      if (nrm > 1e-8 * (ref + 1.0)) {
        if (!replaced) r(c, c) = Scalar(nrm);
        w.col(c) /= Scalar(nrm);
        break;
      }
      // Dependent column: restart it from a fresh random direction.
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> fresh(n, 1);
      for (Eigen::Index i = 0; i < n; ++i)
        fresh(i, 0) = Scalar(rng.symmetric());
      orthogonalize_against<Scalar>(fresh, m, basis);
      w.col(c) = fresh.col(0);
      r.col(c).setZero();
      replaced = true;
    }
  }
  return true;
}

template <typename Scalar>
Spectrum lanczos_shift_invert(const Eigen::SparseMatrix<Scalar>& k,
                              const Eigen::SparseMatrix<Scalar>& m,
                              const SolveOptions& opt) {
  using Dense = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using DenseV = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const int n = static_cast<int>(k.rows());
  require(opt.n_eigs >= 1, "solve_gevp: need at least one eigenvalue");
  require(4 * opt.n_eigs <= n,
          "solve_gevp: requested count exceeds a quarter of the system size");
  require(opt.tol > 0, "solve_gevp: tolerance must be positive");

  Spectrum out;

  // Operator magnitude estimates shared by the singularity probe and the
  // residual normalization.
  double kscale = 0.0, mscale = 0.0;
  for (int d = 0; d < n; ++d) {
    kscale = std::max(kscale, std::abs(k.coeff(d, d)));
    mscale = std::max(mscale, std::abs(m.coeff(d, d)));
  }

  // Factor K - sigma M, nudging the shift off a singular point if needed.
  // A factorization that formally succeeds is still rejected when a probe
  // solve shows a large backward error (shift numerically on an eigenvalue).
  ShiftedFactorization<Scalar> fact;
  double shift = opt.shift;
  for (int attempt = 0;; ++attempt) {
    Eigen::SparseMatrix<Scalar> shifted = k - Scalar(shift) * m;
    // Any shift strictly below the spectrum of the positive semidefinite
    // pencil makes K - sigma M positive definite.
    const std::string name = fact.factor(shifted, shift < 0.0);
    if (fact.ok()) {
      // Sparse LU is backward stable even on a singular matrix, so a small
      // residual proves nothing; a numerically singular factorization shows
      // up as a huge solution for a moderate right-hand side.
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> rhs(n, 1);
      DeterministicRng prng(0xbadc0deULL);
      for (int i = 0; i < n; ++i) rhs(i, 0) = Scalar(prng.symmetric());
      const auto y = fact.solve(rhs);
      const double op_scale = kscale + std::abs(shift) * mscale;
      const double growth =
          y.norm() * op_scale / std::max(rhs.norm(), 1e-300);
      if (growth < 1e13) {
        out.factorization += name;
        break;
      }
    }
    check(attempt < 4,
          "solve_gevp: factorization failed after repeated shift "
          "perturbations");
    // Perturb in units of the pencil's eigenvalue scale; a tiny absolute
    // nudge would leave the factorization hopelessly ill-conditioned.
    const double lambda_scale = kscale / std::max(mscale, 1e-300);
    shift += (std::abs(shift) + lambda_scale) * 1e-4 * (attempt + 1);
    out.factorization = "perturbed:";
  }
  out.shift_used = shift;

  const int b = std::max(1, std::min({opt.block, opt.n_eigs + 2, n}));
  int maxvec = opt.max_vectors > 0
                   ? opt.max_vectors
                   : std::max(160, 8 * opt.n_eigs + 4 * b);
  maxvec = std::min(maxvec, n);

  DeterministicRng rng(opt.seed);
  std::vector<Dense> blocks;  // M-orthonormal Lanczos blocks
  std::vector<Dense> alphas;  // diagonal blocks of the tridiagonal form
  std::vector<Dense> betas;   // subdiagonal blocks

  {
    Dense v0(n, b);
    for (int c = 0; c < b; ++c)
      for (int i = 0; i < n; ++i) v0(i, c) = Scalar(rng.symmetric());
    Dense r0;
    check(m_orthonormalize<Scalar>(v0, m, blocks, r0, rng),
          "solve_gevp: failed to build an independent start block");
    blocks.push_back(std::move(v0));
  }

  auto build_tridiagonal = [&]() {
    const int nb = static_cast<int>(alphas.size());
    Dense t = Dense::Zero(nb * b, nb * b);
    for (int j = 0; j < nb; ++j) {
      t.block(j * b, j * b, b, b) = alphas[static_cast<std::size_t>(j)];
      if (j + 1 < nb) {
        t.block((j + 1) * b, j * b, b, b) = betas[static_cast<std::size_t>(j)];
        t.block(j * b, (j + 1) * b, b, b) =
            betas[static_cast<std::size_t>(j)].adjoint();
      }
    }
    return t;
  };

  auto assemble_ritz = [&](const Dense& evecs, const std::vector<int>& idx) {
    Dense x(n, static_cast<int>(idx.size()));
    x.setZero();
    for (std::size_t q = 0; q < idx.size(); ++q)
      for (std::size_t j = 0; j < alphas.size(); ++j)
        x.col(static_cast<int>(q)).noalias() +=
            blocks[j] *
            evecs.col(idx[q]).segment(static_cast<int>(j) * b, b);
    return x;
  };

  // Residuals are normalized by the operator diagonals, so eigenpairs with
  // lambda near zero (and shifts near zero) are still judged relative to the
  // problem's magnitude rather than to an accidentally tiny denominator.
  auto explicit_residuals = [&](const Dense& x, const VecX& vals) {
    VecX res(vals.size());
    for (int q = 0; q < vals.size(); ++q) {
      const DenseV u = x.col(q);
      const DenseV mu = m * u;
      const double num = (k * u - Scalar(vals[q]) * mu).norm();
      const double den =
          (kscale + std::abs(vals[q]) * mscale) * u.norm();
      res[q] = num / std::max(den, 1e-300);
    }
    return res;
  };

  Eigen::SelfAdjointEigenSolver<Dense> teig;
  bool converged = false;
  bool space_exhausted = false;
  Dense final_x;

  while (true) {
    const Dense& vj = blocks.back();
    Dense w = fact.solve(m * vj);
    out.matvecs += b;
    if (!betas.empty()) w.noalias() -= blocks[blocks.size() - 2] * betas.back().adjoint();
    Dense aj = vj.adjoint() * (m * w);
    aj = Scalar(0.5) * (aj + aj.adjoint()).eval();
    w.noalias() -= vj * aj;
    orthogonalize_against<Scalar>(w, m, blocks);
    alphas.push_back(aj);

    const int total = static_cast<int>(alphas.size()) * b;
    out.krylov_dim = total;

    // Next-block QR now; its coefficients also provide the residual bounds.
    Dense bj;
    const bool grew = m_orthonormalize<Scalar>(w, m, blocks, bj, rng);
    if (!grew) space_exhausted = true;

    // Rayleigh-Ritz on the block tridiagonal matrix.
    teig.compute(build_tridiagonal());
    const VecX nu = teig.eigenvalues();

    // Candidates: Ritz values of largest magnitude, i.e. the original
    // eigenvalues closest to the shift.
    std::vector<int> order(static_cast<std::size_t>(nu.size()));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int x, int y) {
      return std::abs(nu[x]) > std::abs(nu[y]);
    });
    const int have = std::min<int>(opt.n_eigs, static_cast<int>(nu.size()));
    std::vector<int> selected(order.begin(), order.begin() + have);

    bool try_explicit = (have == opt.n_eigs) || space_exhausted || total >= n;
    if (try_explicit && !space_exhausted && total < n) {
      for (int idx : selected) {
        const double bound = (bj * teig.eigenvectors().col(idx).tail(b)).norm();
        if (bound > 0.1 * opt.tol * std::abs(nu[idx])) {
          try_explicit = false;
          break;
        }
      }
    }

    if (try_explicit) {
      VecX vals(have);
      for (int q = 0; q < have; ++q)
        vals[q] = shift + 1.0 / nu[selected[static_cast<std::size_t>(q)]];
      Dense x = assemble_ritz(teig.eigenvectors(), selected);
      const VecX res = explicit_residuals(x, vals);
      const bool all_good = (res.array() <= opt.tol).all();
      if (all_good || space_exhausted || total >= n) {
        out.values = vals;
        out.residuals = res;
        final_x = std::move(x);
        converged = all_good;
        if (!all_good) {
          out.vectors = final_x.template cast<Complex>();
          out.converged = false;
          throw EigensolveError(
              "solve_gevp: Krylov space exhausted before convergence",
              std::move(out));
        }
        break;
      }
    }

    if (total + b > maxvec) {
      VecX vals(have);
      for (int q = 0; q < have; ++q)
        vals[q] = shift + 1.0 / nu[selected[static_cast<std::size_t>(q)]];
      Dense x = assemble_ritz(teig.eigenvectors(), selected);
      out.values = vals;
      out.residuals = explicit_residuals(x, vals);
      out.vectors = x.template cast<Complex>();
      out.converged = false;
      throw EigensolveError(
          "solve_gevp: Krylov budget exhausted before convergence",
          std::move(out));
    }

    betas.push_back(bj);
    blocks.push_back(std::move(w));
  }

  // Sort ascending by eigenvalue.
  std::vector<int> perm(static_cast<std::size_t>(out.values.size()));
  std::iota(perm.begin(), perm.end(), 0);
  std::sort(perm.begin(), perm.end(),
            [&](int x, int y) { return out.values[x] < out.values[y]; });
  VecX sorted_vals(out.values.size());
  VecX sorted_res(out.residuals.size());
  Dense sorted_x(final_x.rows(), final_x.cols());
  for (std::size_t q = 0; q < perm.size(); ++q) {
    sorted_vals[static_cast<int>(q)] = out.values[perm[q]];
    sorted_res[static_cast<int>(q)] = out.residuals[perm[q]];
    sorted_x.col(static_cast<int>(q)) = final_x.col(perm[q]);
  }
  out.values = std::move(sorted_vals);
  out.residuals = std::move(sorted_res);

  // Tighten M-orthonormality with a Cholesky correction of the Gram matrix.
  const Dense gram = sorted_x.adjoint() * (m * sorted_x);
  Eigen::LLT<Dense> llt(gram);
  if (llt.info() == Eigen::Success) {
    const Dense u = llt.matrixU();
    sorted_x = sorted_x * u.inverse();
  }
  out.vectors = sorted_x.template cast<Complex>();
  out.converged = converged;
  return out;
}

}  // namespace detail

// Solves the reduced quasi-periodic pencil.  Uses a real symmetric fast path
// when the phase is exactly real (parameters 0 and pi).
inline Spectrum solve_gevp(const QuasiPeriodicSystem& sys,
                           const SolveOptions& opt) {
  if (sys.phase.imag() == 0.0) {
    const SparseReal kr = sys.K.real();
    const SparseReal mr = sys.M.real();
    return detail::lanczos_shift_invert<double>(kr, mr, opt);
  }
  return detail::lanczos_shift_invert<Complex>(sys.K, sys.M, opt);
}

// Solves a real symmetric pencil directly (limit problem, unconstrained).
inline Spectrum solve_gevp_real(const SparseReal& k, const SparseReal& m,
                                const SolveOptions& opt) {
  return detail::lanczos_shift_invert<double>(k, m, opt);
}

}  // namespace elband
