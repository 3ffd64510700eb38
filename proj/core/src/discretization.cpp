#include "recon/discretization.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace recon {

namespace {

// Volume and barycentric gradients of one tet.
struct TetGeom {
  double volume;
  Eigen::Matrix<double, 3, 4> grad;  // column a = grad lambda_a
};

TetGeom tet_geometry(const Mesh& mesh, const std::array<int, 4>& T) {
  Eigen::Vector3d p0 = mesh.vertices.col(T[0]);
  Eigen::Matrix3d E;
  E.col(0) = mesh.vertices.col(T[1]) - p0;
  E.col(1) = mesh.vertices.col(T[2]) - p0;
  E.col(2) = mesh.vertices.col(T[3]) - p0;
  double det = E.determinant();
  TetGeom g;
  g.volume = det / 6.0;
  Eigen::Matrix3d Einv = E.inverse();
  // rows of E^{-1} are grad lambda_1..3; lambda_0 completes the partition
  g.grad.rightCols<3>() = Einv.transpose();
  g.grad.col(0) = -(g.grad.col(1) + g.grad.col(2) + g.grad.col(3));
  return g;
}

}  // namespace

OperatorSet assemble_operators(const Mesh& mesh, const CoordinateFrame& frame) {
  OperatorSet ops;
  ops.mesh = &mesh;
  ops.nv = mesh.num_vertices();
  ops.nb = mesh.num_boundary();
  ops.ni = mesh.num_interior();
  ops.bvert = mesh.boundary_vertices;
  ops.ivert = mesh.interior_vertices;
  ops.bslot = mesh.boundary_slot;

  std::vector<Triplet> tK, tM;
  std::vector<CTriplet> tC;
  tK.reserve(mesh.tets.size() * 16);
  tM.reserve(mesh.tets.size() * 16);
  tC.reserve(mesh.tets.size() * 16);
  // Degree-2 tet rule for the conjugation coupling. ∇log z = (e1 + i e_r)/z
  // is smooth here (|z| ≥ axis distance − radius ≥ 1), so a low-order rule
  // keeps the element error at the same O(h²) as the P1 stiffness itself.
  constexpr double qa = 0.5854101966249685;
  constexpr double qb = 0.1381966011250105;
  const double bary[4][4] = {{qa, qb, qb, qb},
                             {qb, qa, qb, qb},
                             {qb, qb, qa, qb},
                             {qb, qb, qb, qa}};
  ops.Ml = Vec::Zero(ops.nv);
  for (const auto& T : mesh.tets) {
    TetGeom g = tet_geometry(mesh, T);
    for (int a = 0; a < 4; ++a) {
      ops.Ml[T[a]] += g.volume / 4.0;
      for (int b = 0; b < 4; ++b) {
        double k = g.volume * g.grad.col(a).dot(g.grad.col(b));
        double m = (a == b) ? g.volume / 10.0 : g.volume / 20.0;
        tK.emplace_back(T[a], T[b], k);
        tM.emplace_back(T[a], T[b], m);
      }
    }
    Eigen::Matrix<Cplx, 4, 4> Cloc = Eigen::Matrix<Cplx, 4, 4>::Zero();
    for (int qp = 0; qp < 4; ++qp) {
      Eigen::Vector3d p = Eigen::Vector3d::Zero();
      for (int a = 0; a < 4; ++a) p += bary[qp][a] * mesh.vertices.col(T[a]);
      double rr = std::hypot(p[1], p[2]);
      Cplx z(p[0], rr);
      // s_a = ∇log z · ∇φ_a at this point; e_r = (0, x2, x3)/r
      Cplx s[4];
      for (int a = 0; a < 4; ++a) {
        const auto& gr = g.grad.col(a);
        s[a] = (gr[0] + Cplx(0.0, (p[1] * gr[1] + p[2] * gr[2]) / rr)) / z;
      }
      double w = g.volume * 0.25;
      for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) {
          Cloc(a, b) += w * (bary[qp][a] * s[b] - bary[qp][b] * s[a]);
        }
      }
    }
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) {
        if (a != b) tC.emplace_back(T[a], T[b], Cloc(a, b));
      }
    }
  }
  ops.K.resize(ops.nv, ops.nv);
  ops.K.setFromTriplets(tK.begin(), tK.end());
  ops.M.resize(ops.nv, ops.nv);
  ops.M.setFromTriplets(tM.begin(), tM.end());
  ops.Cz.resize(ops.nv, ops.nv);
  ops.Cz.setFromTriplets(tC.begin(), tC.end());

  ops.Mb = Vec::Zero(ops.nb);
  for (const auto& F : mesh.boundary_faces) {
    Eigen::Vector3d a = mesh.vertices.col(F[0]);
    double area = 0.5 * (mesh.vertices.col(F[1]) - a)
                            .cross(mesh.vertices.col(F[2]) - a)
                            .norm();
    for (int v : F) ops.Mb[ops.bslot[v]] += area / 3.0;
  }

  // First-order operators: per-vertex weighted least squares over the one-ring
  // in the (x1, r, theta) chart. Exactness on chart-affine fields is what the
  // downstream operator expansions rely on, so the fit runs in chart offsets.
  std::vector<std::set<int>> ring(ops.nv);
  for (const auto& T : mesh.tets) {
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        if (i != j) ring[T[i]].insert(T[j]);
      }
    }
  }
  std::vector<Triplet> tDx1, tDr;
  for (int v = 0; v < ops.nv; ++v) {
    Eigen::Matrix3d N = Eigen::Matrix3d::Zero();
    std::vector<std::pair<int, Eigen::Vector3d>> wdelta;
    wdelta.reserve(ring[v].size());
    for (int j : ring[v]) {
      Eigen::Vector3d d(frame.x1[j] - frame.x1[v], frame.r[j] - frame.r[v],
                        frame.theta[j] - frame.theta[v]);
      double w = 1.0 / d.squaredNorm();
      N += w * d * d.transpose();
      wdelta.emplace_back(j, w * d);
    }
    Eigen::Matrix3d Ninv = N.fullPivLu().inverse();
    double self_x1 = 0.0, self_r = 0.0;
    for (const auto& [j, wd] : wdelta) {
      Eigen::Vector3d coef = Ninv * wd;
      tDx1.emplace_back(v, j, coef[0]);
      tDr.emplace_back(v, j, coef[1]);
      self_x1 -= coef[0];
      self_r -= coef[1];
    }
    tDx1.emplace_back(v, v, self_x1);
    tDr.emplace_back(v, v, self_r);
  }
  ops.Dx1.resize(ops.nv, ops.nv);
  ops.Dx1.setFromTriplets(tDx1.begin(), tDx1.end());
  ops.Dr.resize(ops.nv, ops.nv);
  ops.Dr.setFromTriplets(tDr.begin(), tDr.end());
  return ops;
}

CVec trace(const OperatorSet& ops, const CVec& u) {
  CVec g(ops.nb);
  for (int b = 0; b < ops.nb; ++b) g[b] = u[ops.bvert[b]];
  return g;
}

CVec extend_by_zero(const OperatorSet& ops, const CVec& g) {
  CVec u = CVec::Zero(ops.nv);
  for (int b = 0; b < ops.nb; ++b) u[ops.bvert[b]] = g[b];
  return u;
}

Potential make_potential(CVec nodal) {
  Potential q;
  q.sup_norm = nodal.size() ? nodal.cwiseAbs().maxCoeff() : 0.0;
  q.values = std::move(nodal);
  return q;
}

Potential zero_potential(int nv) { return make_potential(CVec::Zero(nv)); }

Potential gaussian_potential(const Mesh& mesh, Cplx amplitude,
                             const Eigen::Vector3d& center, double width) {
  CVec q(mesh.num_vertices());
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    double d2 = (mesh.vertices.col(v) - center).squaredNorm();
    q[v] = amplitude * std::exp(-d2 / (2.0 * width * width));
  }
  return make_potential(std::move(q));
}

Potential ball_potential(const Mesh& mesh, Cplx amplitude,
                         const Eigen::Vector3d& center, double radius) {
  CVec q = CVec::Zero(mesh.num_vertices());
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    if ((mesh.vertices.col(v) - center).norm() <= radius) q[v] = amplitude;
  }
  return make_potential(std::move(q));
}

SpCMat assemble_weighted_mass(const Mesh& mesh, const CVec& q) {
  std::vector<CTriplet> t;
  t.reserve(mesh.tets.size() * 16);
  for (const auto& T : mesh.tets) {
    double V = 0.0;
    {
      Eigen::Vector3d p0 = mesh.vertices.col(T[0]);
      V = (mesh.vertices.col(T[1]) - p0)
              .cross(mesh.vertices.col(T[2]) - p0)
              .dot(mesh.vertices.col(T[3]) - p0) /
          6.0;
    }
    Cplx s = q[T[0]] + q[T[1]] + q[T[2]] + q[T[3]];
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) {
        Cplx val = (a == b) ? V * (2.0 * q[T[a]] + s) / 60.0
                            : V * (q[T[a]] + q[T[b]] + s) / 120.0;
        t.emplace_back(T[a], T[b], val);
      }
    }
  }
  SpCMat Mq(mesh.num_vertices(), mesh.num_vertices());
  Mq.setFromTriplets(t.begin(), t.end());
  return Mq;
}

CVec laplacian_nodal(const OperatorSet& ops, const CVec& u) {
  CVec Ku = ops.K.cast<Cplx>() * u;
  return -(Ku.array() / ops.Ml.array().cast<Cplx>()).matrix();
}

CVec apply_dzbar(const OperatorSet& ops, const CVec& u) {
  CVec dx = ops.Dx1.cast<Cplx>() * u;
  CVec dr = ops.Dr.cast<Cplx>() * u;
  return 0.5 * (dx + Cplx(0, 1) * dr);
}

CVec apply_dz(const OperatorSet& ops, const CVec& u) {
  CVec dx = ops.Dx1.cast<Cplx>() * u;
  CVec dr = ops.Dr.cast<Cplx>() * u;
  return 0.5 * (dx - Cplx(0, 1) * dr);
}

namespace {

SpMat slice_real(const SpMat& A, const std::vector<int>& rows,
                 const std::vector<int>& cols, const std::vector<int>& rrank,
                 const std::vector<int>& crank) {
  std::vector<Triplet> t;
  for (int k = 0; k < A.outerSize(); ++k) {
    for (SpMat::InnerIterator it(A, k); it; ++it) {
      int ri = rrank[it.row()], ci = crank[it.col()];
      if (ri >= 0 && ci >= 0) t.emplace_back(ri, ci, it.value());
    }
  }
  SpMat S(static_cast<int>(rows.size()), static_cast<int>(cols.size()));
  S.setFromTriplets(t.begin(), t.end());
  return S;
}

SpCMat slice_cplx(const SpCMat& A, int nrows, int ncols,
                  const std::vector<int>& rrank, const std::vector<int>& crank) {
  std::vector<CTriplet> t;
  for (int k = 0; k < A.outerSize(); ++k) {
    for (SpCMat::InnerIterator it(A, k); it; ++it) {
      int ri = rrank[it.row()], ci = crank[it.col()];
      if (ri >= 0 && ci >= 0) t.emplace_back(ri, ci, it.value());
    }
  }
  SpCMat S(nrows, ncols);
  S.setFromTriplets(t.begin(), t.end());
  return S;
}

void make_ranks(const OperatorSet& ops, std::vector<int>& irank,
                std::vector<int>& brank) {
  irank.assign(ops.nv, -1);
  brank.assign(ops.nv, -1);
  for (int i = 0; i < ops.ni; ++i) irank[ops.ivert[i]] = i;
  for (int b = 0; b < ops.nb; ++b) brank[ops.bvert[b]] = b;
}

}  // namespace

std::unique_ptr<HarmonicCache> build_harmonic_cache(const OperatorSet& ops) {
  auto cache = std::make_unique<HarmonicCache>();
  std::vector<int> irank, brank;
  make_ranks(ops, irank, brank);
  SpMat K_II = slice_real(ops.K, ops.ivert, ops.ivert, irank, irank);
  cache->K_IB = slice_real(ops.K, ops.ivert, ops.bvert, irank, brank);
  cache->K_II.compute(K_II);
  if (cache->K_II.info() != Eigen::Success) {
    throw std::runtime_error("stiffness factorization failed");
  }
  Mat rhs = -Mat(cache->K_IB);
  Mat PI = cache->K_II.solve(rhs);
  cache->P0 = Mat::Zero(ops.nv, ops.nb);
  for (int i = 0; i < ops.ni; ++i) cache->P0.row(ops.ivert[i]) = PI.row(i);
  for (int b = 0; b < ops.nb; ++b) cache->P0(ops.bvert[b], b) = 1.0;
  return cache;
}

CVec harmonic_extension(const OperatorSet& ops, const HarmonicCache& cache,
                        const CVec& g) {
  return cache.P0 * g.real() + Cplx(0, 1) * (cache.P0 * g.imag());
}

double boundary_energy_norm(const OperatorSet& ops, const HarmonicCache& cache,
                            const CVec& g) {
  return norm_m(ops, harmonic_extension(ops, cache, g));
}

CVec PotentialSolver::dirichlet(const CVec& g, const CVec* f) const {
  CVec rhs = -(A_IB * g);
  if (f) {
    CVec Mf = ops->M.cast<Cplx>() * (*f);
    for (int i = 0; i < ops->ni; ++i) rhs[i] += Mf[ops->ivert[i]];
  }
  CVec uI = lu.solve(rhs);
  CVec u = CVec::Zero(ops->nv);
  for (int i = 0; i < ops->ni; ++i) u[ops->ivert[i]] = uI[i];
  for (int b = 0; b < ops->nb; ++b) u[ops->bvert[b]] = g[b];
  return u;
}

std::unique_ptr<PotentialSolver> make_potential_solver(const Mesh& mesh,
                                                       const OperatorSet& ops,
                                                       const Potential& q,
                                                       double cond_threshold) {
  auto ps = std::make_unique<PotentialSolver>();
  ps->ops = &ops;
  ps->A = ops.K.cast<Cplx>() + assemble_weighted_mass(mesh, q.values);
  std::vector<int> irank, brank;
  make_ranks(ops, irank, brank);
  ps->A_II = slice_cplx(ps->A, ops.ni, ops.ni, irank, irank);
  ps->A_IB = slice_cplx(ps->A, ops.ni, ops.nb, irank, brank);
  ps->lu.compute(ps->A_II);
  if (ps->lu.info() != Eigen::Success) {
    throw NearSingular("potential-shifted operator failed to factorize");
  }

  // Condition estimate: power iteration for the largest singular value, then
  // its mirror through the factorization for the smallest. A is complex
  // symmetric, so A^H x = conj(A conj(x)) and the adjoint solve reuses lu.
  std::mt19937 gen(12345);
  std::normal_distribution<double> dist;
  auto rand_vec = [&](int n) {
    CVec v(n);
    for (int i = 0; i < n; ++i) v[i] = Cplx(dist(gen), dist(gen));
    return v;
  };
  auto apply_AHA = [&](const CVec& x) -> CVec {
    CVec y = ps->A_II * x;
    return (ps->A_II * y.conjugate()).conjugate();
  };
  auto apply_inv = [&](const CVec& x) -> CVec {
    CVec y = ps->lu.solve(x.conjugate()).conjugate();  // A^{-H} x
    return ps->lu.solve(y);                            // A^{-1} A^{-H} x
  };
  CVec y = rand_vec(ops.ni).normalized();
  double smax2 = 0.0;
  for (int it = 0; it < 25; ++it) {
    y = apply_AHA(y);
    smax2 = y.norm();
    y /= smax2;
  }
  CVec w = rand_vec(ops.ni).normalized();
  double sinv2 = 0.0;
  for (int it = 0; it < 25; ++it) {
    w = apply_inv(w);
    sinv2 = w.norm();
    w /= sinv2;
  }
  ps->cond_estimate = std::sqrt(smax2) * std::sqrt(sinv2);
  if (ps->cond_estimate > cond_threshold) {
    throw NearSingular("potential-shifted operator nearly singular: cond ~ " +
                       std::to_string(ps->cond_estimate));
  }
  return ps;
}

CVec normal_derivative(const OperatorSet& ops, const SpCMat& A, const CVec& u,
                       const CVec* f) {
  CVec flux = A * u;
  if (f) flux -= ops.M.cast<Cplx>() * (*f);
  CVec b(ops.nb);
  for (int s = 0; s < ops.nb; ++s) b[s] = flux[ops.bvert[s]] / ops.Mb[s];
  return b;
}

Cplx inner_m(const OperatorSet& ops, const CVec& a, const CVec& b) {
  return a.dot(ops.M.cast<Cplx>() * b);
}

double norm_m(const OperatorSet& ops, const CVec& a) {
  return std::sqrt(std::abs(inner_m(ops, a, a)));
}

double norm_mb(const OperatorSet& ops, const CVec& g) {
  double s = 0.0;
  for (int b = 0; b < ops.nb; ++b) s += ops.Mb[b] * std::norm(g[b]);
  return std::sqrt(s);
}

}  // namespace recon
