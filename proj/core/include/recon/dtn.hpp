#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>

#include "recon/discretization.hpp"

namespace recon {

// Dense boundary response operator: Dirichlet data in, lumped-mass
// representation of the conormal derivative out.
struct DtnOperator {
  CMat B;
  std::string route;  // "schrodinger", "conductivity", ...
};

// Column-by-column assembly through one factorization of K + M_q.
DtnOperator assemble_dtn(const OperatorSet& ops, const PotentialSolver& solver);

// Conductivity route: stiffness weighted by the per-tet average of the nodal
// coefficient. sigma must be strictly positive.
DtnOperator assemble_dtn_conductivity(const Mesh& mesh, const OperatorSet& ops,
                                      const Vec& sigma);

// Boundary reduction of a conductivity response to the potential-form one:
//   B_q = diag(s^{-1/2}) (B_sigma + 1/2 diag(dsigma/dnu)) diag(s^{-1/2})
// with s the boundary trace of sigma. The multiplication term is a pointwise
// boundary operation, exact under the lumped boundary duality.
DtnOperator schrodinger_from_conductivity(const OperatorSet& ops,
                                          const DtnOperator& B_sigma,
                                          const Vec& sigma_boundary,
                                          const Vec& dsigma_dnu_boundary);

// Difference of two responses. Construction verifies the difference pairing
//   g^T Mb (Bq - B0) f == (P_0 g)^T M_q (P_q f)
// on seeded random pairs (both sides bilinear, no conjugation) and throws if
// it fails; the identity is exact for the weak discretization, so a failure
// means the inputs were built against mismatched operators.
struct DtnDifference {
  CMat D;
};
DtnDifference dtn_difference(const OperatorSet& ops, const DtnOperator& Bq,
                             const DtnOperator& B0,
                             const PotentialSolver& solver_q,
                             const HarmonicCache& cache,
                             int check_pairs = 10, double tol = 1e-9);

// Masked window into a difference operator: rows restricted to the observed
// region, columns to the source region. Only the legal block is stored, so
// entries outside it are structurally unreadable and edits to them can never
// influence results. Reads are counted.
class PartialDtnView {
 public:
  PartialDtnView(const DtnDifference& diff, const BoundaryPartition& part);

  Cplx entry(int row_slot, int col_slot) const;

  // h must vanish outside the source mask (else MaskViolation); the result is
  // supported on the observed mask.
  CVec apply(const CVec& h) const;

  uint64_t access_count() const { return reads_.load(); }
  const std::vector<char>& obs_mask() const { return obs_; }
  const std::vector<char>& src_mask() const { return src_; }
  const std::vector<int>& obs_slots() const { return obs_slots_; }
  const std::vector<int>& src_slots() const { return src_slots_; }
  int nb() const { return nb_; }

 private:
  int nb_ = 0;
  std::vector<char> obs_, src_;
  std::vector<int> obs_slots_, src_slots_;
  std::vector<int> obs_rank_, src_rank_;  // slot -> block index or -1
  CMat block_;                            // obs x src
  mutable std::atomic<uint64_t> reads_{0};
};
std::unique_ptr<PartialDtnView> mask_partial(const DtnDifference& diff,
                                             const BoundaryPartition& part);

// CSV rows "row,col,re,im" with stable formatting; the view variant writes the
// masked block plus a JSON sidecar listing the row/column slots.
void export_dtn_csv(const CMat& B, const std::string& path);
void export_partial_view(const PartialDtnView& view,
                         const std::string& csv_path,
                         const std::string& sidecar_json_path);

}  // namespace recon
