#include "recon/dtn.hpp"

#include <cinttypes>
#include <cstdio>
#include <random>

#include <json.hpp>

namespace recon {

namespace {

// Slot-indexed boundary rows of a full-vertex matrix applied to columns U:
// returns Mb^{-1} (A U)|_boundary as a dense nb x ncols matrix.
CMat boundary_flux_of_columns(const OperatorSet& ops, const SpCMat& A,
                              const CMat& U) {
  CMat AU = A * U;
  CMat B(ops.nb, U.cols());
  for (int b = 0; b < ops.nb; ++b) {
    B.row(b) = AU.row(ops.bvert[b]) / ops.Mb[b];
  }
  return B;
}

}  // namespace

DtnOperator assemble_dtn(const OperatorSet& ops, const PotentialSolver& solver) {
  // Solutions for all boundary basis vectors in one factored sweep.
  CMat rhs = -CMat(solver.A_IB);
  CMat UI = solver.lu.solve(rhs);
  CMat U = CMat::Zero(ops.nv, ops.nb);
  for (int i = 0; i < ops.ni; ++i) U.row(ops.ivert[i]) = UI.row(i);
  for (int b = 0; b < ops.nb; ++b) U(ops.bvert[b], b) = 1.0;
  return {boundary_flux_of_columns(ops, solver.A, U), "schrodinger"};
}

DtnOperator assemble_dtn_conductivity(const Mesh& mesh, const OperatorSet& ops,
                                      const Vec& sigma) {
  if (sigma.minCoeff() <= 0.0) {
    throw std::invalid_argument("conductivity must be strictly positive");
  }
  std::vector<Triplet> tK;
  tK.reserve(mesh.tets.size() * 16);
  for (const auto& T : mesh.tets) {
    Eigen::Vector3d p0 = mesh.vertices.col(T[0]);
    Eigen::Matrix3d E;
    E.col(0) = mesh.vertices.col(T[1]) - p0;
    E.col(1) = mesh.vertices.col(T[2]) - p0;
    E.col(2) = mesh.vertices.col(T[3]) - p0;
    double vol = E.determinant() / 6.0;
    Eigen::Matrix3d Einv = E.inverse();
    Eigen::Matrix<double, 3, 4> grad;
    grad.rightCols<3>() = Einv.transpose();
    grad.col(0) = -(grad.col(1) + grad.col(2) + grad.col(3));
    double w = (sigma[T[0]] + sigma[T[1]] + sigma[T[2]] + sigma[T[3]]) / 4.0;
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) {
        tK.emplace_back(T[a], T[b], w * vol * grad.col(a).dot(grad.col(b)));
      }
    }
  }
  SpMat Ks(ops.nv, ops.nv);
  Ks.setFromTriplets(tK.begin(), tK.end());

  std::vector<int> irank(ops.nv, -1), brank(ops.nv, -1);
  for (int i = 0; i < ops.ni; ++i) irank[ops.ivert[i]] = i;
  for (int b = 0; b < ops.nb; ++b) brank[ops.bvert[b]] = b;
  std::vector<Triplet> tII, tIB;
  for (int k = 0; k < Ks.outerSize(); ++k) {
    for (SpMat::InnerIterator it(Ks, k); it; ++it) {
      int ri = irank[it.row()];
      if (ri < 0) continue;
      if (int ci = irank[it.col()]; ci >= 0) tII.emplace_back(ri, ci, it.value());
      if (int cb = brank[it.col()]; cb >= 0) tIB.emplace_back(ri, cb, it.value());
    }
  }
  SpMat K_II(ops.ni, ops.ni), K_IB(ops.ni, ops.nb);
  K_II.setFromTriplets(tII.begin(), tII.end());
  K_IB.setFromTriplets(tIB.begin(), tIB.end());
  Eigen::SimplicialLDLT<SpMat> fact(K_II);
  if (fact.info() != Eigen::Success) {
    throw std::runtime_error("conductivity stiffness factorization failed");
  }
  Mat UI = fact.solve(-Mat(K_IB));
  Mat U = Mat::Zero(ops.nv, ops.nb);
  for (int i = 0; i < ops.ni; ++i) U.row(ops.ivert[i]) = UI.row(i);
  for (int b = 0; b < ops.nb; ++b) U(ops.bvert[b], b) = 1.0;
  return {boundary_flux_of_columns(ops, Ks.cast<Cplx>(), U.cast<Cplx>()),
          "conductivity"};
}

DtnOperator schrodinger_from_conductivity(const OperatorSet& ops,
                                          const DtnOperator& B_sigma,
                                          const Vec& sigma_boundary,
                                          const Vec& dsigma_dnu_boundary) {
  if (sigma_boundary.minCoeff() <= 0.0) {
    throw std::invalid_argument("boundary conductivity must be positive");
  }
  CVec s_inv_half = sigma_boundary.cwiseSqrt().cwiseInverse().cast<Cplx>();
  CMat B = B_sigma.B;
  B.diagonal() += (0.5 * dsigma_dnu_boundary).cast<Cplx>();
  B = s_inv_half.asDiagonal() * B * s_inv_half.asDiagonal();
  return {std::move(B), "schrodinger_via_conductivity"};
}

DtnDifference dtn_difference(const OperatorSet& ops, const DtnOperator& Bq,
                             const DtnOperator& B0,
                             const PotentialSolver& solver_q,
                             const HarmonicCache& cache, int check_pairs,
                             double tol) {
  DtnDifference diff{Bq.B - B0.B};

  // M_q acts as A - K without reassembly.
  const SpCMat& A = solver_q.A;
  SpCMat Kc = ops.K.cast<Cplx>();
  std::mt19937 gen(2026);
  std::normal_distribution<double> dist;
  auto rand_b = [&]() {
    CVec g(ops.nb);
    for (int b = 0; b < ops.nb; ++b) g[b] = Cplx(dist(gen), dist(gen));
    return g;
  };
  for (int k = 0; k < check_pairs; ++k) {
    CVec g = rand_b(), f = rand_b();
    CVec Pg = harmonic_extension(ops, cache, g);
    CVec Pf = solver_q.dirichlet(f);
    Cplx lhs = 0.0;
    CVec Df = diff.D * f;
    for (int b = 0; b < ops.nb; ++b) lhs += g[b] * ops.Mb[b] * Df[b];
    CVec Mq_Pf = A * Pf - Kc * Pf;
    Cplx rhs = Pg.cwiseProduct(Mq_Pf).sum();
    double scale = std::abs(rhs) + norm_mb(ops, g) * norm_mb(ops, f);
    if (std::abs(lhs - rhs) > tol * scale) {
      throw std::runtime_error(
          "difference pairing self-check failed: |lhs-rhs|=" +
          std::to_string(std::abs(lhs - rhs)) + " scale=" + std::to_string(scale));
    }
  }
  return diff;
}

PartialDtnView::PartialDtnView(const DtnDifference& diff,
                               const BoundaryPartition& part) {
  nb_ = static_cast<int>(diff.D.rows());
  obs_ = part.obs_mask;
  src_ = part.src_mask;
  obs_rank_.assign(nb_, -1);
  src_rank_.assign(nb_, -1);
  for (int s = 0; s < nb_; ++s) {
    if (obs_[s]) {
      obs_rank_[s] = static_cast<int>(obs_slots_.size());
      obs_slots_.push_back(s);
    }
    if (src_[s]) {
      src_rank_[s] = static_cast<int>(src_slots_.size());
      src_slots_.push_back(s);
    }
  }
  block_.resize(obs_slots_.size(), src_slots_.size());
  for (int i = 0; i < (int)obs_slots_.size(); ++i) {
    for (int j = 0; j < (int)src_slots_.size(); ++j) {
      block_(i, j) = diff.D(obs_slots_[i], src_slots_[j]);
    }
  }
}

Cplx PartialDtnView::entry(int row_slot, int col_slot) const {
  if (row_slot < 0 || row_slot >= nb_ || col_slot < 0 || col_slot >= nb_) {
    throw std::out_of_range("boundary slot out of range");
  }
  if (!obs_[row_slot] || !src_[col_slot]) {
    throw MaskViolation("masked difference entry (" + std::to_string(row_slot) +
                        "," + std::to_string(col_slot) + ") is outside the " +
                        "observed-rows x source-columns window");
  }
  reads_.fetch_add(1, std::memory_order_relaxed);
  return block_(obs_rank_[row_slot], src_rank_[col_slot]);
}

CVec PartialDtnView::apply(const CVec& h) const {
  if (h.size() != nb_) throw std::invalid_argument("boundary vector size mismatch");
  for (int s = 0; s < nb_; ++s) {
    if (!src_[s] && h[s] != Cplx(0, 0)) {
      throw MaskViolation("apply() input has support outside the source mask at slot " +
                          std::to_string(s));
    }
  }
  CVec hs(src_slots_.size());
  for (int j = 0; j < (int)src_slots_.size(); ++j) hs[j] = h[src_slots_[j]];
  CVec ys = block_ * hs;
  reads_.fetch_add(static_cast<uint64_t>(block_.rows()) * block_.cols(),
                   std::memory_order_relaxed);
  CVec y = CVec::Zero(nb_);
  for (int i = 0; i < (int)obs_slots_.size(); ++i) y[obs_slots_[i]] = ys[i];
  return y;
}

std::unique_ptr<PartialDtnView> mask_partial(const DtnDifference& diff,
                                             const BoundaryPartition& part) {
  return std::make_unique<PartialDtnView>(diff, part);
}

void export_dtn_csv(const CMat& B, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot write " + path);
  std::fprintf(f, "row,col,re,im\n");
  for (int i = 0; i < B.rows(); ++i) {
    for (int j = 0; j < B.cols(); ++j) {
      std::fprintf(f, "%d,%d,%.17g,%.17g\n", i, j, B(i, j).real(), B(i, j).imag());
    }
  }
  std::fclose(f);
}

void export_partial_view(const PartialDtnView& view, const std::string& csv_path,
                         const std::string& sidecar_json_path) {
  std::FILE* f = std::fopen(csv_path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot write " + csv_path);
  std::fprintf(f, "row,col,re,im\n");
  for (int i : view.obs_slots()) {
    for (int j : view.src_slots()) {
      Cplx v = view.entry(i, j);
      std::fprintf(f, "%d,%d,%.17g,%.17g\n", i, j, v.real(), v.imag());
    }
  }
  std::fclose(f);

  nlohmann::json j;
  j["observed_row_slots"] = view.obs_slots();
  j["source_col_slots"] = view.src_slots();
  j["boundary_size"] = view.nb();
  std::FILE* s = std::fopen(sidecar_json_path.c_str(), "w");
  if (!s) throw std::runtime_error("cannot write " + sidecar_json_path);
  std::string text = j.dump(1);
  std::fwrite(text.data(), 1, text.size(), s);
  std::fputc('\n', s);
  std::fclose(s);
}

}  // namespace recon
