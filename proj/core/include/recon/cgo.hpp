#pragma once

#include <string>
#include <vector>

#include "recon/carleman.hpp"

namespace recon {

// Angular profiles g(theta) as coefficients over {1, cos k theta, sin k theta}
// with k <= 4; higher frequencies are rejected because the reconstruction
// window only resolves low modes. cosines[j] multiplies cos((j+1) theta).
constexpr int kMaxAngularFrequency = 4;
struct AngularMode {
  double constant = 0.0;
  std::vector<double> cosines;
  std::vector<double> sines;
};
AngularMode parse_angular_mode(const std::string& name);  // "1", "cosK", "sinK"
std::string angular_mode_name(const AngularMode& mode);
double angular_value(const AngularMode& mode, double theta);

// Incident profile h = (2ir)^{-1/2} g(theta) and its closed-form Laplacian.
// The radial shape is tuned so the first-order symbol of the conjugated
// operator, 4 dzbar + i/r, annihilates h identically; what survives is the
// tau-independent transverse Laplacian
//   Delta h = (1 - 4k^2) / (4 r^2) h   per frequency k,
// which is exactly the volume load the remainder solve has to absorb.
enum class ProfileSign { plus, minus };
struct IncidentProfile {
  AngularMode mode;
  ProfileSign sign = ProfileSign::plus;
  CVec h;
  CVec laplacian;
};
IncidentProfile incident_profile(const CoordinateFrame& frame,
                                 const AngularMode& mode, ProfileSign sign);

// Least-norm completion over a one-sided kernel basis. Starting from a field
// u0 that already satisfies the equation and the constrained half of the
// trace, adds the kernel combination N c minimizing the product norm
//   J(c) = ||u0 + N c||_M^2 + |tau|^{-1} sum_b mb_b gamma_b^{-2} |tr(u0+Nc)_b|^2
// over the free slots b of the basis. The boundary penalty is the weighted
// trace norm of the Carleman estimate, so the minimizer is the discrete
// analog of the graph-closure selection that makes the solution operator
// bounded uniformly in tau. Kernel columns carry exact zero traces off their
// own slot, so constrained entries of u0 survive in exact bits.
struct SidedCorrection {
  CVec field;            // u0 + N c
  CVec coeff;            // c, one entry per basis slot
  double objective = 0;  // J at the optimum
};
SidedCorrection solve_remainder(const OperatorSet& ops, const KernelBasis& basis,
                                const BoundaryPartition& part, double tau,
                                const CVec& u0);

// Prescribed-boundary solution operator at the exponent of op: the unique
// least-product-norm u with L u = v (consistent quadrature load) and tr(u)
// equal to v_minus on the constrained half (the hemisphere opposite to
// sgn tau), exactly in bits. v_minus should be supported where gamma is
// healthy, in practice inside the cutoff support on its cap.
CVec solve_R(const OperatorSet& ops, const HarmonicCache& cache,
             const ConjugatedOperator& op, const BoundaryPartition& part,
             const CVec& v, const CVec& v_minus);

// One special solution of the weighted family at a signed exponent:
//   field = h - solve_R(Delta h, chi * tr h),
// so the trace is (1 - chi) tr h with exact algebraic zeros on the deep cap
// where chi == 1, and the remainder inherits the tau-decay of the solution
// operator (the tau^{-1/2} boundary term dominates). The interior equation
// holds up to the annihilation-identity consistency defect of the mesh,
// which is reported and shrinks under refinement.
enum class TraceSupport { source_side, observation_side };
struct CgoHarmonic {
  double tau = 0.0;  // signed exponent actually used
  AngularMode mode;
  TraceSupport support = TraceSupport::source_side;
  CVec incident;    // nodal h
  CVec field;       // mu or nu, the weighted solution
  CVec unweighted;  // zeta^tau * field, harmonic for the plain stiffness
  // Companion built from the discrete interior residual of h instead of the
  // analytic Laplacian, so it satisfies the interior equation to rounding. The
  // analytic-load field above keeps the clean large-exponent asymptotics but
  // is a discrete solution only to consistency order, while response
  // differences and pairing identities cancel exactly only for fields that
  // solve the discrete system in bits. Everything that feeds measured-data
  // routes (response differences, integral equations, the transform) must
  // use this field; everything that measures asymptotics uses `field`.
  CVec field_solved;
  CVec unweighted_solved;
  double remainder_norm = 0.0;  // ||field - h||_M
  // the same distance with boundary nodes zeroed out: the pinned trace values
  // form a one-cell skin whose mass is a sqrt(h) resolution floor, while the
  // interior part keeps decaying with tau all the way down
  double remainder_norm_interior = 0.0;
  double harmonic_defect = 0.0;  // relative interior residual of field
  double solved_defect = 0.0;    // same residual for field_solved, ~rounding
};
CgoHarmonic build_mu(const OperatorSet& ops, const HarmonicCache& cache,
                     const CoordinateFrame& frame,
                     const BoundaryPartition& part, const CutoffPair& cutoffs,
                     double tau, const AngularMode& mode);
CgoHarmonic build_nu(const OperatorSet& ops, const HarmonicCache& cache,
                     const CoordinateFrame& frame,
                     const BoundaryPartition& part, const CutoffPair& cutoffs,
                     double tau);

}  // namespace recon
