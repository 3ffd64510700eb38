#pragma once

#include <memory>
#include <vector>

#include "recon/geometry.hpp"
#include "recon/types.hpp"

namespace recon {

// P1 finite-element operators on a ball mesh. Conventions used throughout:
//   M    consistent volume mass (real SPD)
//   Ml   lumped volume mass (row sums of M)
//   K    stiffness (real SPSD, constants in the kernel)
//   Mb   lumped boundary mass, one positive weight per boundary slot; all
//        boundary dualities and norms go through this diagonal, which keeps
//        diagonal boundary weights commuting with it exactly
//   Dx1, Dr  first-order operators from per-vertex least-squares fits in the
//        (x1, r, theta) chart; exact on fields affine in the chart
//   Cz   conjugation coupling (Cz)_ab = ∫ ∇log(z) · (φ_a ∇φ_b − φ_b ∇φ_a),
//        z = x1 + i r. Complex antisymmetric. The chart variable is null in
//        the bilinear sense, ∇z·∇z = 1 − |∇r|² = 0 pointwise, so the weak
//        form of the conjugated Laplacian ζ^{−τ}Δ(ζ^τ ·) is exactly
//        K + τ Cz: the τ² term of the product rule integrates to zero on
//        every element, not just asymptotically. Consequently
//        A(−τ) = A(τ)^T and the conjugate-weight family is the entrywise
//        complex conjugate.
struct OperatorSet {
  SpMat M, K, Dx1, Dr;
  SpCMat Cz;
  Vec Ml;
  Vec Mb;
  std::vector<int> bvert, ivert, bslot;  // boundary ids, interior ids, v->slot
  int nv = 0, nb = 0, ni = 0;
  // non-owning; the mesh must outlive the operator set. Kept so that element
  // quadrature (weighted load assembly) stays reachable wherever the
  // operators travel.
  const Mesh* mesh = nullptr;

  bool is_boundary(int v) const { return bslot[v] >= 0; }
};

OperatorSet assemble_operators(const Mesh& mesh, const CoordinateFrame& frame);

// Restriction to boundary slots and extension by zero; trace(extend(g)) == g.
CVec trace(const OperatorSet& ops, const CVec& u);
CVec extend_by_zero(const OperatorSet& ops, const CVec& g);

// Nodal multiplication potential. values holds q at every vertex.
struct Potential {
  CVec values;
  double sup_norm = 0.0;
};
Potential make_potential(CVec nodal);
Potential zero_potential(int nv);
Potential gaussian_potential(const Mesh& mesh, Cplx amplitude,
                             const Eigen::Vector3d& center, double width);
Potential ball_potential(const Mesh& mesh, Cplx amplitude,
                         const Eigen::Vector3d& center, double radius);

// Weighted mass: (M_q)_ab = integral of q_h phi_a phi_b with q_h the P1
// interpolant; complex symmetric, reduces to M at q == 1. This is the
// discretization of "multiply by q" as a load: the nodal product would break
// the symmetry that the difference-pairing identities rely on.
SpCMat assemble_weighted_mass(const Mesh& mesh, const CVec& q);

// -Ml^{-1} (K u): nodal image of the (negative) Dirichlet energy operator,
// i.e. the lumped discrete Laplacian.
CVec laplacian_nodal(const OperatorSet& ops, const CVec& u);

// Chart complex derivatives: dzbar = (Dx1 + i Dr)/2, dz = (Dx1 - i Dr)/2.
CVec apply_dzbar(const OperatorSet& ops, const CVec& u);
CVec apply_dz(const OperatorSet& ops, const CVec& u);

// Harmonic Dirichlet cache: K_II factored once, plus the dense matrix of
// discrete harmonic extensions of the boundary basis vectors (real). Every
// weighted solve at every exponent reduces to solves against this one
// factorization, and kernel-basis columns are reweightings of P0 columns.
struct HarmonicCache {
  Eigen::SimplicialLDLT<SpMat> K_II;
  SpMat K_IB;
  Mat P0;  // nv x nb; column j extends e_j, boundary rows literal

  HarmonicCache() = default;
  HarmonicCache(const HarmonicCache&) = delete;
  HarmonicCache& operator=(const HarmonicCache&) = delete;
};
std::unique_ptr<HarmonicCache> build_harmonic_cache(const OperatorSet& ops);

// Harmonic extension of boundary data through the cached columns.
CVec harmonic_extension(const OperatorSet& ops, const HarmonicCache& cache,
                        const CVec& g);

// Boundary seminorm through the volume: ||P_0 g||_M.
double boundary_energy_norm(const OperatorSet& ops, const HarmonicCache& cache,
                            const CVec& g);

// Factorization of the potential-shifted operator A = K + M_q restricted to
// interior nodes, with a power-iteration condition estimate. Throws
// NearSingular when the estimate crosses the threshold (the potential sits
// too close to a discrete Dirichlet eigenvalue).
struct PotentialSolver {
  SpCMat A;     // K + M_q, all rows
  SpCMat A_II, A_IB;
  Eigen::SparseLU<SpCMat> lu;
  double cond_estimate = 0.0;
  const OperatorSet* ops = nullptr;

  PotentialSolver() = default;
  PotentialSolver(const PotentialSolver&) = delete;
  PotentialSolver& operator=(const PotentialSolver&) = delete;

  // Solve (K + M_q) u = M f on interior rows with tr(u) = g; boundary values
  // are injected literally, so trace(solution) == g in exact bits.
  CVec dirichlet(const CVec& g, const CVec* f = nullptr) const;
};
std::unique_ptr<PotentialSolver> make_potential_solver(
    const Mesh& mesh, const OperatorSet& ops, const Potential& q,
    double cond_threshold = 1e12);

// Variationally consistent flux: b = Mb^{-1} Tr[(K + M_q) u - M f], the
// discrete conormal derivative of u against the solved equation.
CVec normal_derivative(const OperatorSet& ops, const SpCMat& A, const CVec& u,
                       const CVec* f = nullptr);

// M inner product / norm helpers.
Cplx inner_m(const OperatorSet& ops, const CVec& a, const CVec& b);
double norm_m(const OperatorSet& ops, const CVec& a);
double norm_mb(const OperatorSet& ops, const CVec& g);

}  // namespace recon
