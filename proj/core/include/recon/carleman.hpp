#pragma once

#include <memory>
#include <vector>

#include "recon/discretization.hpp"

namespace recon {

// Diagonal complex weights zeta^tau over vertices and boundary slots. The
// barred family conjugates the base before taking powers. Construction guards
// the dynamic range |zeta|^|tau| (both directions) against the overflow cap.
struct WeightSet {
  double tau = 0.0;
  bool barred = false;
  CVec wv, wv_inv;  // per vertex
  CVec wb, wb_inv;  // per boundary slot
};
WeightSet make_weights(const CoordinateFrame& frame, const OperatorSet& ops,
                       double tau, bool barred, double overflow_guard = 1e12);

// Three discrete realizations of the weight-conjugated Laplacian
// zeta^{-tau} Delta (zeta^tau u).
//
// conjugation: A = diag(w^{-1}) K diag(w), the exact similarity transport of
// the plain stiffness into the weighted variables. Every solve in the library
// realizes this operator: a Dirichlet problem for A is a plain harmonic
// problem in U = w * u, so the exponential boundary layers of the weighted
// family ride the analytic weight factor and never have to be resolved by the
// mesh. Entries stay bounded because neighboring weights differ by
// exp(O(tau h)) only. A(-tau) = A(tau)^T and the barred family is the
// entrywise conjugate, exactly.
//
// expanded: nodal action Delta_h u + (tau/z)(4 dzbar u + i(n-2) u/r) through
// the lumped Laplacian and chart derivatives (n = 3 here). The first-order
// form is an exact identity in the continuum because the chart variable is
// null, grad z . grad z = 0; discretely it agrees with the other modes to
// mesh order on smooth fields and serves as the independent route in checks.
//
// weak: A = K + tau Cz, the exactly integrated weak form in the oscillated
// Petrov pair (zeta^tau phi trial, zeta^{-tau} phi test); the tau^2 term
// vanishes identically (see OperatorSet::Cz). Kept as an assembled
// diagnostic: it is consistent uniformly in the exponent, but a plain P1
// space cannot represent the weighted family's boundary layers once tau h is
// of order one, and the unresolved layer makes Dirichlet solves against this
// matrix ring. Nothing solves against it; residuals measured through it are
// an independent consistency check on fields produced elsewhere.
//
// "L u = f" always means [A u + load]_I = 0 on interior rows with
// load = M f in the algebraic convention.
enum class ConjugationMode { conjugation, expanded, weak };
struct ConjugatedOperator {
  double tau = 0.0;
  bool barred = false;
  ConjugationMode mode = ConjugationMode::conjugation;
  WeightSet w;
  SpCMat A;  // conjugation and weak modes; empty for expanded
  const OperatorSet* ops = nullptr;
  const CoordinateFrame* frame = nullptr;

  CVec apply(const CVec& u) const;
};
ConjugatedOperator assemble_conjugated(
    const OperatorSet& ops, const CoordinateFrame& frame, double tau,
    bool barred, ConjugationMode mode = ConjugationMode::conjugation);

// The conjugation-mode matrix alone: diag(w^{-1}) K diag(w).
SpCMat conjugated_matrix(const OperatorSet& ops, const WeightSet& w);

// Action of the conjugation-mode operator as a composition (identical values,
// no assembled matrix needed).
CVec conjugated_apply(const OperatorSet& ops, const WeightSet& w, const CVec& u);

// Weighted load vector: load_i = integral of phi_i * zeta_w^tau * f_h with
// the weight evaluated exactly at quadrature points (tensor Gauss rule on the
// collapsed cube, order adapted per element to the weight's log-variation).
// The nodal shortcut diag(zeta^tau) (M f) drifts from this by a relative
// O(tau h^2 grad log zeta), which is precisely the large-exponent consistency
// loss of reweighting loads after mass integration; exact-weight quadrature
// removes it, so source solves stay consistent uniformly in the exponent.
CVec assemble_weighted_load(const OperatorSet& ops, const WeightSet& w,
                            const CVec& f);

// Dirichlet solves of the conjugation-mode operator. All of them ride the one
// real Cholesky factorization of K_II in the cache: sign, bar, and exponent
// live entirely in the diagonal weights, so a single factorization per mesh
// serves the whole weighted family.
//
// [A u + load]_I = 0 with tr(u) = 0, the algebraic contract: the returned
// field satisfies the interior rows to rounding for the literal load vector.
CVec weighted_zero_dirichlet(const OperatorSet& ops, const HarmonicCache& cache,
                             const WeightSet& w, const CVec& load);
// L u = f with tr(u) = 0, the consistent contract: the load is assembled by
// exact-weight quadrature of f, so the solve is consistent uniformly in tau.
CVec weighted_source_solve(const OperatorSet& ops, const HarmonicCache& cache,
                           const WeightSet& w, const CVec& f);
// [A u]_I = 0 with tr(u) = g pinned literally (exact zeros survive).
CVec weighted_extension(const OperatorSet& ops, const HarmonicCache& cache,
                        const WeightSet& w, const CVec& g);
// Extensions of one-hot traces at the given slots, one column each; these are
// reweightings of the cached harmonic columns, no solves at all.
CMat weighted_extension_block(const OperatorSet& ops, const HarmonicCache& cache,
                              const WeightSet& w, const std::vector<int>& slots);

// Discrete kernel of the weighted operator with data on one boundary half:
// column j solves L u = 0 with trace e_j at slot j (a strictly signed node of
// the tau-side half) and zero trace on the other half.
struct KernelBasis {
  double tau = 0.0;
  bool barred = false;
  std::vector<int> slots;
  CMat columns;                    // nv x k, trace exactly e_j at slot j
  double gram_min_singular = 0.0;  // of the M-Gram of M-normalized columns
};
KernelBasis kernel_basis(const OperatorSet& ops, const HarmonicCache& cache,
                         const BoundaryPartition& part, const WeightSet& w);

// M-orthogonal projector onto span(basis.columns), stored through an
// M-orthonormal factor. Applications take the operator set because the mass
// matrix is applied on the fly; nothing besides Q is cached.
struct Projector {
  CMat Q;  // nv x k, Q^H M Q = I

  CVec apply(const OperatorSet& ops, const CVec& x) const;
  CVec complement(const OperatorSet& ops, const CVec& x) const;
  // coefficient functional <q_i, x>_M without forming pi x
  CVec coefficients(const OperatorSet& ops, const CVec& x) const;
};
// Construction certifies the basis through its normalized Gram: columns are
// near-harmonic bump extensions of disjoint one-hot traces, so the minimal
// eigenvalue stays of order the boundary mesh width and the floor only trips
// when a basis is genuinely degenerate. Below the floor the span is
// numerically rank-deficient and the projector would be garbage: NearSingular.
Projector make_projector(const OperatorSet& ops, const KernelBasis& basis,
                         double gram_floor = 1e-14);

// Everything needed to apply the one-sided Green's operator at exponent tau
// and its exact M-adjoint (the barred operator at -tau): the shared harmonic
// cache, the weights, and the two kernel projectors.
struct GreensBundle {
  double tau = 0.0;
  const OperatorSet* ops = nullptr;
  const CoordinateFrame* frame = nullptr;
  const HarmonicCache* cache = nullptr;
  WeightSet w;      // unbarred, exponent tau
  WeightSet w_bar;  // barred, exponent -tau
  SpCMat A;         // assembled conjugation-mode matrix at tau
  KernelBasis plus_basis, minus_basis;
  Projector pi_plus;       // onto the tau-side kernel span
  Projector pi_minus_bar;  // onto the barred (-tau)-side span

  // zero-Dirichlet particular solves; the load entry points take the dual
  // vector directly and satisfy interior rows to rounding, the field entry
  // points assemble the consistent quadrature load of f
  CVec particular_from_load(const CVec& load) const;      // [A u + load]_I = 0
  CVec particular_bar_from_load(const CVec& load) const;  // barred at -tau
  CVec particular(const CVec& f) const;
  CVec particular_bar(const CVec& f) const;

  CVec solve_H(const CVec& f) const;  // (1 - pi) particular
  CVec solve_T(const CVec& f) const;  // particular of (1 - pi_bar) f

  CVec green_from_load(const CVec& load) const;
  CVec green(const CVec& f) const;
  CVec green_adjoint_from_load(const CVec& load) const;
  CVec green_adjoint(const CVec& f) const;  // action of the barred operator

  // response of the adjoint to a boundary functional: the volume field that
  // pairs tr(G f) against boundary data h; vanishes identically when h is
  // supported where traces of the Green's image cannot reach
  CVec boundary_source_response(const CVec& h) const;

  double norm_estimate(int iters = 40, unsigned seed = 1234,
                       double rel_tol = 1e-6) const;
};
GreensBundle make_greens_bundle(const OperatorSet& ops,
                                const HarmonicCache& cache,
                                const CoordinateFrame& frame,
                                const BoundaryPartition& part, double tau,
                                double overflow_guard = 1e12);

// Residual report for the five operator properties at one exponent.
struct GreensPropertyReport {
  double tau = 0.0;
  double identity_residual = 0.0;       // interior equation, relative
  double trace_support_residual = 0.0;  // mass of tr(G f) on the wrong half
  double adjoint_residual = 0.0;        // pairing mismatch, scaled
  double t_adjoint_residual = 0.0;      // same for the intermediate operator
  double inverse_residual_assembled = 0.0;  // G(L v) = v, assembled matrix route
  double inverse_residual_expanded = 0.0;   // ... through the expanded action
  double norm_g = 0.0;
};
GreensPropertyReport greens_check(const GreensBundle& bundle,
                                  const BoundaryPartition& part, int nfields,
                                  unsigned seed);

// Empirical boundary-weighted estimate constant at one exponent: ratios of
//   |tau|^{-1/2} ||gamma dnu u||_{sgn side} + ||u||_M
// over
//   |tau|^{-1} ||L u||_M + |tau|^{-1/2} ||gamma dnu u||_{other side}
// across a mixed ensemble of random zero-trace fields (rough, smooth, and
// operator-adapted), reported with the ensemble max.
struct CarlemanReport {
  double tau = 0.0;
  bool barred = false;
  std::vector<double> ratios;
  double max_ratio = 0.0;
};
CarlemanReport carleman_check(const OperatorSet& ops, const HarmonicCache& cache,
                              const CoordinateFrame& frame,
                              const BoundaryPartition& part, double tau,
                              bool barred, int num_fields, unsigned seed);

}  // namespace recon
