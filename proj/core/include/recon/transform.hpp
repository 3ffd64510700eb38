#pragma once

#include <memory>
#include <string>
#include <vector>

#include "recon/carleman.hpp"
#include "recon/cgo.hpp"
#include "recon/dtn.hpp"

namespace recon {

// How the resolvent equation omega = mu + G(q omega) is solved.
enum class ResolventMode { direct, neumann };

// The incident field corrected by the potential: the fixed point of
//   omega = mu + G(q omega)
// in weighted variables. The unweighted companion w is a discrete solution
// of (-Delta + q) w = 0 up to the consistency defect inherited from mu.
struct ScatteringSolution {
  double tau = 0.0;
  AngularMode mode;
  CVec omega;  // weighted field
  CVec w;      // unweighted companion, the nodal weight times omega
  // Fixed point seeded by the incident companion that solves the discrete
  // equation to rounding; it inherits that exactness, so its trace is the
  // trace of an exact discrete Schrodinger solution. Data routes (response
  // differences, integral equations, the transform) must consume this one;
  // asymptotic metrics stay on omega.
  CVec omega_solved;
  bool direct = true;
  int iterations = 0;      // Neumann sweep count; 0 for the direct path
  double residual = 0.0;   // fixed-point residual, M norm, relative to mu
  double interior_defect = 0.0;  // weak q-equation residual on interior rows
  double solved_defect = 0.0;    // same residual for omega_solved, ~rounding
};

// One factorization of the resolvent for a (Green's bundle, potential) pair,
// reusable across angular modes at the same exponent. The direct path builds
// the dense map u -> G(q u) column by column and LU-factors I minus it; the
// Neumann path iterates the series and is guarded by a power-iteration
// estimate of the contraction factor.
class ResolventSystem {
 public:
  ResolventSystem(const GreensBundle& bundle, const Mesh& mesh,
                  const Potential& q,
                  ResolventMode mode = ResolventMode::direct,
                  double contraction_cap = 0.95, double damping = 1.0,
                  int max_iterations = 600, double tolerance = 1e-11);

  ScatteringSolution solve(const CgoHarmonic& mu) const;

  // Power-iteration estimate of the M-norm contraction factor of G(q .).
  double contraction_estimate() const { return contraction_; }
  ResolventMode mode() const { return mode_; }
  const SpCMat& weighted_mass() const { return Mq_; }

  // One application of u -> G(q u), the series term.
  CVec apply(const CVec& u) const;

 private:
  const GreensBundle* bundle_;
  SpCMat Mq_;
  ResolventMode mode_;
  double contraction_ = 0.0;
  double cap_;
  double damping_;
  int max_iterations_;
  double tolerance_;
  bool zero_q_ = false;
  Eigen::PartialPivLU<CMat> lu_;  // direct mode only
};

// Convenience wrapper: factor once, solve once.
ScatteringSolution solve_omega(const GreensBundle& bundle, const Mesh& mesh,
                               const Potential& q, const CgoHarmonic& mu,
                               ResolventMode mode = ResolventMode::direct);

// Everything the transform evaluation touches, assembled in the conjugated
// variables of one exponent, where the exactly integrated operator K + tau Cz
// keeps every unknown an O(1) nodal value regardless of the exponent.
//
// Held here: interior factorizations of the conjugated Laplacian A and the
// conjugated Schrodinger operator A + Mq (the test side rides the transposed
// Laplace factorization, because A(tau)^T is the operator at -tau), the
// potential mass, and the boundary response difference assembled natively in
// these variables. The construction self-checks the bilinear pairing
//   sum_b g Mb (D f)  ==  (test extension of g)^T Mq (field extension of f)
// on random trace pairs, which is exact for the discretization, and throws
// if the routes disagree.
class ConjugatedDifference {
 public:
  ConjugatedDifference(const Mesh& mesh, const OperatorSet& ops,
                       const CoordinateFrame& frame, const Potential& q,
                       double tau, int check_pairs = 8,
                       double check_tol = 1e-9);

  ConjugatedDifference(const ConjugatedDifference&) = delete;
  ConjugatedDifference& operator=(const ConjugatedDifference&) = delete;

  // Interior-exact resolve of the weighted Schrodinger operator from a
  // boundary trace: the returned field carries the literal trace and zero
  // interior residual of A + Mq.
  CVec extend_schrodinger(const CVec& g) const;

  // Interior-exact resolve of the transposed weighted Laplacian, the
  // operator the test field satisfies.
  CVec extend_test(const CVec& g) const;

  double tau() const { return tau_; }
  const SpCMat& conjugated_mass() const { return Mqc_; }
  const DtnDifference& difference() const { return diff_; }

 private:
  const OperatorSet* ops_;
  double tau_ = 0.0;
  SpCMat Mqc_;     // potential mass
  SpCMat A_IB_;    // Laplace interior-to-boundary coupling
  SpCMat At_IB_;   // same block of the transposed Laplacian
  SpCMat Bq_IB_;   // Schrodinger interior-to-boundary coupling
  // mutable because Eigen's transposed-solve view wants a non-const handle;
  // solving never mutates the factorization
  mutable Eigen::SparseLU<SpCMat> lu0_;  // Laplace interior block
  Eigen::SparseLU<SpCMat> luq_;          // Schrodinger interior block
  DtnDifference diff_;
};

// Volume form of the transform: the bilinear triple product
//   t = sum over the domain of  v q w
// evaluated in the weighted variables, where it reads
//   (test resolve of tr nu)^T  Mq  (Schrodinger resolve of tr omega).
// Both factors are re-solved from their boundary traces so the product pairs
// exact discrete solutions; that is what lets the boundary formula below
// match to rounding rather than to the consistency order of the incident
// profiles. The traces are taken from the solved companions: the pairing
// identity cancels interior terms exactly only when both fields solve their
// discrete equations in bits.
Cplx transform_volume(const OperatorSet& ops, const ConjugatedDifference& data,
                      const CgoHarmonic& nu, const ScatteringSolution& omega);

// Boundary form of the same number, consuming only masked response data:
//   t = sum over boundary of  tr(nu) Mb [ (response difference) tr(omega) ]
// through the guarded view, which must wrap the difference of the same
// ConjugatedDifference the volume form used. Inputs supported outside the
// legal masks raise MaskViolation; this operation cannot read out-of-mask
// entries even by accident, because the view never stored them.
Cplx transform_boundary(const OperatorSet& ops, const PartialDtnView& view,
                        const CVec& nu_trace, const CVec& omega_trace);

// Mesh quadrature of the angular-weighted potential integral
//   integral of  q g(theta) / r  over the domain,
// the quantity the large-exponent limit of the transform recovers. The 1/r
// factor is the volume Jacobian of the (x1, r, theta) coordinates, so this
// equals the flat integral of q g in those coordinates.
Cplx reference_integral(const OperatorSet& ops, const CoordinateFrame& frame,
                        const Potential& q, const AngularMode& mode);

// One evaluated sample of the transform at a fixed exponent and angular mode.
struct TransformSample {
  double tau = 0.0;
  std::string mode_id;
  Cplx t_volume;
  Cplx t_boundary;
  Cplx oracle;                          // mesh reference integral
  Cplx limit_constant{0.0, -0.5};       // 1/(2i), the n = 3 limit factor
};

// Large-exponent extrapolation report: the limit estimate at the largest
// exponent, the error of the rescaled transform against the reference
// integral per sample, and whether that error is strictly decreasing.
struct RadonReport {
  Cplx estimate;
  std::vector<double> taus;
  std::vector<double> errors;
  bool strictly_decreasing = false;
};
RadonReport radon_limit(std::vector<TransformSample> samples);

}  // namespace recon
