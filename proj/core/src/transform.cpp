#include "recon/transform.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace recon {

namespace {

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

// Full field from a boundary trace and the solved interior part. The trace
// values are pinned literally, so exact zeros in g survive.
CVec full_from_parts(const OperatorSet& ops, const CVec& g, const CVec& ui) {
  CVec u(ops.nv);
  for (int i = 0; i < ops.ni; ++i) u[ops.ivert[i]] = ui[i];
  for (int b = 0; b < ops.nb; ++b) u[ops.bvert[b]] = g[b];
  return u;
}

}  // namespace

ResolventSystem::ResolventSystem(const GreensBundle& bundle, const Mesh& mesh,
                                 const Potential& q, ResolventMode mode,
                                 double contraction_cap, double damping,
                                 int max_iterations, double tolerance)
    : bundle_(&bundle),
      mode_(mode),
      cap_(contraction_cap),
      damping_(damping),
      max_iterations_(max_iterations),
      tolerance_(tolerance) {
  const OperatorSet& ops = *bundle.ops;
  if (q.values.size() != ops.nv)
    throw std::invalid_argument(
        "resolvent: potential lives on a different mesh");
  if (!(damping_ > 0.0 && damping_ <= 1.0))
    throw std::invalid_argument("resolvent: damping must lie in (0, 1]");

  zero_q_ = (q.sup_norm == 0.0);
  if (zero_q_) return;  // the series has a single term; nothing to factor

  Mq_ = assemble_weighted_mass(mesh, q.values);

  // Contraction factor of u -> G(q u) by power iteration in the M norm.
  // The estimate governs the Neumann series; the direct path records it
  // for reporting only.
  std::mt19937 rng(20240517u);
  std::normal_distribution<double> gauss(0.0, 1.0);
  CVec v(ops.nv);
  for (int i = 0; i < ops.nv; ++i) v[i] = Cplx(gauss(rng), gauss(rng));
  double prev = norm_m(ops, v);
  for (int it = 0; it < 24; ++it) {
    v = apply(CVec(v / prev));
    const double cur = norm_m(ops, v);
    if (it >= 16) contraction_ = std::max(contraction_, cur);
    if (cur == 0.0) break;
    prev = cur;
  }
  if (mode_ == ResolventMode::neumann && contraction_ >= cap_)
    throw NotContracting(
        "resolvent series: contraction estimate " +
        std::to_string(contraction_) +
        " at exponent " + std::to_string(bundle.tau) +
        "; raise the exponent or use the direct mode");

  if (mode_ == ResolventMode::direct) {
    // Dense map of the series term, one column per basis vector. Columns
    // of the weighted mass are sparse, so each load costs one sparse
    // column scan plus a Green's application.
    const int nv = ops.nv;
    CMat S = CMat::Identity(nv, nv);
    for (int j = 0; j < nv; ++j) {
      CVec load = CVec::Zero(nv);
      for (SpCMat::InnerIterator it(Mq_, j); it; ++it)
        load[it.row()] = it.value();
      S.col(j) -= bundle.green_from_load(load);
    }
    lu_.compute(S);
  }
}

CVec ResolventSystem::apply(const CVec& u) const {
  if (zero_q_) return CVec::Zero(u.size());
  return bundle_->green_from_load(CVec(Mq_ * u));
}

ScatteringSolution ResolventSystem::solve(const CgoHarmonic& mu) const {
  const OperatorSet& ops = *bundle_->ops;
  if (mu.field.size() != ops.nv || mu.field_solved.size() != ops.nv)
    throw std::invalid_argument(
        "resolvent: incident field lives on a different mesh");
  if (mu.tau != bundle_->tau)
    throw std::invalid_argument(
        "resolvent: incident field exponent differs from the bundle");

  ScatteringSolution out;
  out.tau = bundle_->tau;
  out.mode = mu.mode;
  out.direct = (mode_ == ResolventMode::direct);

  auto fixed_point = [&](const CVec& seed) {
    if (zero_q_) return seed;  // exact: every correction term vanishes
    if (mode_ == ResolventMode::direct) return CVec(lu_.solve(seed));
    const double scale = std::max(norm_m(ops, seed), 1e-300);
    CVec u = seed;
    for (;;) {
      CVec r = seed + apply(u) - u;
      const double res = norm_m(ops, r) / scale;
      if (res <= tolerance_) break;
      if (out.iterations >= max_iterations_)
        throw NotContracting("resolvent series stalled at relative residual " +
                             std::to_string(res));
      u += damping_ * r;
      ++out.iterations;
    }
    return u;
  };
  out.omega = fixed_point(mu.field);
  out.omega_solved = fixed_point(mu.field_solved);

  out.w = bundle_->w.wv.cwiseProduct(out.omega);
  out.residual = norm_m(ops, CVec(out.omega - mu.field - apply(out.omega))) /
                 std::max(norm_m(ops, mu.field), 1e-300);

  // Interior rows of the weak q-equation. With an exact fixed point this
  // equals the seed's own interior residual: consistency-order for omega,
  // rounding for omega_solved.
  auto defect = [&](const CVec& u) {
    CVec r = bundle_->A_weak * u;
    if (!zero_q_) r += Mq_ * u;
    double s2 = 0.0;
    for (int i : ops.ivert) s2 += std::norm(r[i]);
    return std::sqrt(s2) /
           (bundle_->A_weak.norm() * std::max(u.norm(), 1e-300));
  };
  out.interior_defect = defect(out.omega);
  out.solved_defect = defect(out.omega_solved);
  return out;
}

ScatteringSolution solve_omega(const GreensBundle& bundle, const Mesh& mesh,
                               const Potential& q, const CgoHarmonic& mu,
                               ResolventMode mode) {
  return ResolventSystem(bundle, mesh, q, mode).solve(mu);
}

ConjugatedDifference::ConjugatedDifference(const Mesh& mesh,
                                           const OperatorSet& ops,
                                           const CoordinateFrame& frame,
                                           const Potential& q, double tau,
                                           int check_pairs, double check_tol)
    : ops_(&ops), tau_(tau) {
  if (q.values.size() != ops.nv)
    throw std::invalid_argument(
        "difference: potential lives on a different mesh");

  const ConjugatedOperator L =
      assemble_conjugated(ops, frame, tau, false, ConjugationMode::weak);
  const SpCMat& A = L.A;

  // The exactly integrated conjugation keeps unknowns in plain nodal
  // variables, so the potential enters as the unmodified weighted mass.
  Mqc_ = assemble_weighted_mass(mesh, q.values);

  const SpCMat Bq = A + Mqc_;

  std::vector<int> irank, brank;
  make_ranks(ops, irank, brank);
  A_IB_ = slice_cplx(A, ops.ni, ops.nb, irank, brank);
  Bq_IB_ = slice_cplx(Bq, ops.ni, ops.nb, irank, brank);
  const SpCMat At = A.transpose();
  At_IB_ = slice_cplx(At, ops.ni, ops.nb, irank, brank);

  SpCMat A_II = slice_cplx(A, ops.ni, ops.ni, irank, irank);
  A_II.makeCompressed();
  lu0_.compute(A_II);
  if (lu0_.info() != Eigen::Success)
    throw NearSingular("difference: weighted Laplace interior block failed "
                       "to factor at exponent " +
                       std::to_string(tau));
  SpCMat Bq_II = slice_cplx(Bq, ops.ni, ops.ni, irank, irank);
  Bq_II.makeCompressed();
  luq_.compute(Bq_II);
  if (luq_.info() != Eigen::Success)
    throw NearSingular("difference: weighted Schrodinger interior block "
                       "failed to factor at exponent " +
                       std::to_string(tau));

  // Response difference, one boundary slot at a time. The q column is
  // written as (Laplace resolve) + (correction), and the correction is
  // solved for directly; subtracting two assembled conormal rows instead
  // would cancel their shared leading order and surrender exactly the
  // digits the masked pairing needs later.
  diff_.D.resize(ops.nb, ops.nb);
  CVec ej = CVec::Zero(ops.nb);
  const CVec zero_trace = CVec::Zero(ops.nb);
  for (int j = 0; j < ops.nb; ++j) {
    ej[j] = 1.0;
    const CVec u0 =
        full_from_parts(ops, ej, CVec(lu0_.solve(CVec(-A_IB_.col(j)))));
    const CVec m = Mqc_ * u0;
    CVec mi(ops.ni);
    for (int i = 0; i < ops.ni; ++i) mi[i] = -m[ops.ivert[i]];
    const CVec d = full_from_parts(ops, zero_trace, CVec(luq_.solve(mi)));
    const CVec row = m + Bq * d;
    for (int b = 0; b < ops.nb; ++b)
      diff_.D(b, j) = row[ops.bvert[b]] / ops.Mb[b];
    ej[j] = 0.0;
  }

  // Pairing self-check: the stored difference against random traces must
  // reproduce the volume pairing of the two resolves. The identity is exact
  // for the discretization, so disagreement beyond roundoff means the weight
  // conventions of the two sides drifted apart.
  std::mt19937 gen(73190u);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int k = 0; k < check_pairs; ++k) {
    CVec g(ops.nb), f(ops.nb);
    for (int b = 0; b < ops.nb; ++b) {
      g[b] = Cplx(dist(gen), dist(gen));
      f[b] = Cplx(dist(gen), dist(gen));
    }
    const CVec vg = extend_test(g);
    const CVec uf = extend_schrodinger(f);
    Cplx lhs = 0.0;
    const CVec Df = diff_.D * f;
    for (int b = 0; b < ops.nb; ++b) lhs += g[b] * ops.Mb[b] * Df[b];
    const Cplx rhs = vg.cwiseProduct(Mqc_ * uf).sum();
    const double scale =
        std::abs(rhs) + norm_mb(ops, g) * norm_mb(ops, f) * q.sup_norm;
    if (std::abs(lhs - rhs) > check_tol * scale)
      throw std::runtime_error(
          "difference pairing self-check failed: |lhs-rhs|=" +
          std::to_string(std::abs(lhs - rhs)) +
          " scale=" + std::to_string(scale));
  }
}

CVec ConjugatedDifference::extend_schrodinger(const CVec& g) const {
  if (g.size() != ops_->nb)
    throw std::invalid_argument("difference: trace size mismatch");
  return full_from_parts(*ops_, g, CVec(luq_.solve(CVec(-(Bq_IB_ * g)))));
}

CVec ConjugatedDifference::extend_test(const CVec& g) const {
  if (g.size() != ops_->nb)
    throw std::invalid_argument("difference: trace size mismatch");
  return full_from_parts(
      *ops_, g, CVec(lu0_.transpose().solve(CVec(-(At_IB_ * g)))));
}

Cplx transform_volume(const OperatorSet& ops, const ConjugatedDifference& data,
                      const CgoHarmonic& nu, const ScatteringSolution& omega) {
  if (nu.field.size() != ops.nv || omega.omega.size() != ops.nv)
    throw std::invalid_argument("transform: fields live on a different mesh");
  if (omega.tau != data.tau())
    throw std::invalid_argument(
        "transform: scattering exponent differs from the data bundle");
  if (nu.tau != -data.tau())
    throw std::invalid_argument(
        "transform: test exponent must be opposite the data exponent");
  const CVec vhat = data.extend_test(trace(ops, nu.field_solved));
  const CVec uhat = data.extend_schrodinger(trace(ops, omega.omega_solved));
  return vhat.cwiseProduct(data.conjugated_mass() * uhat).sum();
}

Cplx transform_boundary(const OperatorSet& ops, const PartialDtnView& view,
                        const CVec& nu_trace, const CVec& omega_trace) {
  if (nu_trace.size() != ops.nb || omega_trace.size() != ops.nb)
    throw std::invalid_argument("transform: traces live on a different mesh");
  for (int s = 0; s < ops.nb; ++s)
    if (!view.obs_mask()[s] && nu_trace[s] != Cplx(0.0, 0.0))
      throw MaskViolation(
          "transform: observation trace has support outside the observed "
          "mask at slot " +
          std::to_string(s));
  const CVec resp = view.apply(omega_trace);  // guards the source-side support
  Cplx t = 0.0;
  for (int s : view.obs_slots()) t += nu_trace[s] * ops.Mb[s] * resp[s];
  return t;
}

Cplx reference_integral(const OperatorSet& ops, const CoordinateFrame& frame,
                        const Potential& q, const AngularMode& mode) {
  if (q.values.size() != ops.nv)
    throw std::invalid_argument(
        "reference integral: potential lives on a different mesh");
  Cplx acc = 0.0;
  for (int i = 0; i < ops.nv; ++i)
    acc += ops.Ml[i] * q.values[i] * angular_value(mode, frame.theta[i]) /
           frame.r[i];
  return acc;
}

RadonReport radon_limit(std::vector<TransformSample> samples) {
  if (samples.size() < 2)
    throw std::invalid_argument(
        "radon limit needs at least two samples to report a trend");
  std::sort(samples.begin(), samples.end(),
            [](const TransformSample& a, const TransformSample& b) {
              return a.tau < b.tau;
            });
  RadonReport rep;
  for (const TransformSample& s : samples) {
    rep.taus.push_back(s.tau);
    rep.errors.push_back(std::abs(s.t_volume / s.limit_constant - s.oracle));
  }
  rep.estimate = samples.back().t_volume / samples.back().limit_constant;
  rep.strictly_decreasing = true;
  for (size_t i = 1; i < rep.errors.size(); ++i)
    if (!(rep.errors[i] < rep.errors[i - 1])) rep.strictly_decreasing = false;
  return rep;
}

}  // namespace recon
