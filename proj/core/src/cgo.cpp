#include "recon/cgo.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

#include <Eigen/Cholesky>

namespace recon {

namespace {

constexpr double kPi = 3.14159265358979323846;

CMat real_apply_mat(const SpMat& S, const CMat& X) {
  Mat xr = X.real();
  Mat xi = X.imag();
  CMat y(S.rows(), X.cols());
  y.real() = S * xr;
  y.imag() = S * xi;
  return y;
}

void validate_mode(const AngularMode& mode) {
  if (static_cast<int>(mode.cosines.size()) > kMaxAngularFrequency ||
      static_cast<int>(mode.sines.size()) > kMaxAngularFrequency)
    throw std::invalid_argument(
        "angular frequency outside the resolved window [1, 4]");
  if (!std::isfinite(mode.constant))
    throw std::invalid_argument("angular coefficient is not finite");
  for (double c : mode.cosines)
    if (!std::isfinite(c))
      throw std::invalid_argument("angular coefficient is not finite");
  for (double c : mode.sines)
    if (!std::isfinite(c))
      throw std::invalid_argument("angular coefficient is not finite");
}

bool is_constant_one(const AngularMode& mode) {
  if (mode.constant != 1.0) return false;
  for (double c : mode.cosines)
    if (c != 0.0) return false;
  for (double c : mode.sines)
    if (c != 0.0) return false;
  return true;
}

// g with every frequency-k coefficient scaled by (1 - 4k^2): the angular part
// of the transverse Laplacian of (2r)^{-1/2} g(theta)
double laplacian_symbol(const AngularMode& mode, double theta) {
  double s = mode.constant;
  for (size_t j = 0; j < mode.cosines.size(); ++j) {
    const double k = static_cast<double>(j + 1);
    s += (1.0 - 4.0 * k * k) * mode.cosines[j] * std::cos(k * theta);
  }
  for (size_t j = 0; j < mode.sines.size(); ++j) {
    const double k = static_cast<double>(j + 1);
    s += (1.0 - 4.0 * k * k) * mode.sines[j] * std::sin(k * theta);
  }
  return s;
}

// shared body of build_mu and build_nu at a signed exponent
CgoHarmonic build_field(const OperatorSet& ops, const CoordinateFrame& frame,
                        const BoundaryPartition& part, const Vec& chi,
                        double tau, const IncidentProfile& prof,
                        TraceSupport support) {
  ConjugatedOperator op =
      assemble_conjugated(ops, frame, tau, false, ConjugationMode::weak);
  const auto solver = make_conjugated_solver(ops, tau);

  // masked trace payload chi * tr h: exact copies of h on the deep cap where
  // chi == 1, exact zeros on the free half where chi vanishes
  CVec v_minus(ops.nb);
  for (int b = 0; b < ops.nb; ++b) v_minus[b] = chi[b] * prof.h[ops.bvert[b]];

  // two remainders over one kernel basis and one pinned extension: the
  // analytic transverse Laplacian gives the asymptotics-faithful field, the
  // discrete residual of h gives the exactly-solving companion
  CVec ext = solver->extension(op.w, [&] {
    CVec payload = CVec::Zero(ops.nb);
    const bool plus_side = op.w.tau > 0.0;
    for (int b = 0; b < ops.nb; ++b) {
      const bool free_slot = plus_side ? part.plus_free(b) : part.minus_free(b);
      if (!free_slot) payload[b] = v_minus[b];
    }
    return payload;
  }());
  KernelBasis basis = kernel_basis(ops, *solver, part, op.w);
  const CVec up_a =
      solver->zero_dirichlet(op.w, real_apply(ops.M, prof.laplacian));
  const CVec up_s = solver->zero_dirichlet(op.w, CVec(-(op.A * prof.h)));
  CVec rem = solve_remainder(ops, basis, part, op.w.tau, CVec(up_a + ext)).field;
  CVec rem_s =
      solve_remainder(ops, basis, part, op.w.tau, CVec(up_s + ext)).field;

  CgoHarmonic out;
  out.tau = tau;
  out.mode = prof.mode;
  out.support = support;
  out.incident = prof.h;
  // where chi == 1 the remainder trace is a bitwise copy of h, so the
  // subtraction cancels to an exact zero
  out.field = prof.h - rem;
  out.unweighted = op.w.wv.cwiseProduct(out.field);
  out.field_solved = prof.h - rem_s;
  out.unweighted_solved = op.w.wv.cwiseProduct(out.field_solved);
  out.remainder_norm = norm_m(ops, rem);
  CVec rem_i = rem;
  for (int b : ops.bvert) rem_i[b] = Cplx(0.0, 0.0);
  out.remainder_norm_interior = norm_m(ops, rem_i);

  auto defect = [&](const CVec& field) {
    CVec res = op.apply(field);
    double num = 0.0;
    for (int v : ops.ivert) num += std::norm(res[v]);
    return std::sqrt(num) / (op.A.norm() * std::max(field.norm(), 1e-300));
  };
  out.harmonic_defect = defect(out.field);
  out.solved_defect = defect(out.field_solved);
  return out;
}

}  // namespace

AngularMode parse_angular_mode(const std::string& name) {
  if (name == "1") {
    AngularMode mode;
    mode.constant = 1.0;
    return mode;
  }
  bool sine = false;
  if (name.rfind("cos", 0) == 0) {
    sine = false;
  } else if (name.rfind("sin", 0) == 0) {
    sine = true;
  } else {
    throw std::invalid_argument("unknown angular mode '" + name + "'");
  }
  if (name.size() != 4 || name[3] < '1' ||
      name[3] > '0' + kMaxAngularFrequency)
    throw std::invalid_argument("unknown angular mode '" + name + "'");
  const int k = name[3] - '0';
  AngularMode mode;
  (sine ? mode.sines : mode.cosines).assign(k, 0.0);
  (sine ? mode.sines : mode.cosines)[k - 1] = 1.0;
  return mode;
}

std::string angular_mode_name(const AngularMode& mode) {
  if (is_constant_one(mode)) return "1";
  int hits = (mode.constant != 0.0) ? 2 : 0;
  int freq = 0;
  bool sine = false;
  for (size_t j = 0; j < mode.cosines.size() && hits < 2; ++j)
    if (mode.cosines[j] != 0.0) {
      hits += (mode.cosines[j] == 1.0) ? 1 : 2;
      freq = static_cast<int>(j + 1);
      sine = false;
    }
  for (size_t j = 0; j < mode.sines.size() && hits < 2; ++j)
    if (mode.sines[j] != 0.0) {
      hits += (mode.sines[j] == 1.0) ? 1 : 2;
      freq = static_cast<int>(j + 1);
      sine = true;
    }
  if (hits == 1) return (sine ? "sin" : "cos") + std::to_string(freq);
  return "combo";
}

double angular_value(const AngularMode& mode, double theta) {
  double s = mode.constant;
  for (size_t j = 0; j < mode.cosines.size(); ++j)
    s += mode.cosines[j] * std::cos((j + 1) * theta);
  for (size_t j = 0; j < mode.sines.size(); ++j)
    s += mode.sines[j] * std::sin((j + 1) * theta);
  return s;
}

IncidentProfile incident_profile(const CoordinateFrame& frame,
                                 const AngularMode& mode, ProfileSign sign) {
  validate_mode(mode);
  if (sign == ProfileSign::minus && !is_constant_one(mode))
    throw std::invalid_argument("the minus profile carries no angular factor");
  IncidentProfile prof;
  prof.mode = mode;
  prof.sign = sign;
  const Cplx phase = std::polar(1.0, -kPi / 4.0);  // (2i)^{-1/2} direction
  const int nv = static_cast<int>(frame.r.size());
  prof.h.resize(nv);
  prof.laplacian.resize(nv);
  for (int i = 0; i < nv; ++i) {
    const double r = frame.r[i];
    const Cplx radial = phase / std::sqrt(2.0 * r);
    prof.h[i] = radial * angular_value(mode, frame.theta[i]);
    prof.laplacian[i] =
        radial * laplacian_symbol(mode, frame.theta[i]) / (4.0 * r * r);
  }
  return prof;
}

SidedCorrection solve_remainder(const OperatorSet& ops,
                                const KernelBasis& basis,
                                const BoundaryPartition& part, double tau,
                                const CVec& u0) {
  if (tau == 0.0)
    throw std::invalid_argument("remainder penalty needs a nonzero exponent");
  const int k = static_cast<int>(basis.slots.size());
  const double at_inv = 1.0 / std::abs(tau);

  SidedCorrection out;
  if (k == 0) {
    out.field = u0;
    out.coeff = CVec();
  } else {
    // penalty weights per free slot, and the trace of u0 there
    Vec wpen(k);
    CVec t0(k);
    for (int j = 0; j < k; ++j) {
      const int s = basis.slots[j];
      const double gc = part.gamma_clamped[s];
      wpen[j] = at_inv * ops.Mb[s] / (gc * gc);
      t0[j] = u0[ops.bvert[s]];
    }

    // normal equations of J: (N^H M N + diag(wpen)) c = -(N^H M u0 + wpen t0).
    // Unit-trace columns keep the Gram uniformly conditioned in tau, and the
    // penalty only adds to the diagonal, so a plain LDLT is enough.
    CMat mn = real_apply_mat(ops.M, basis.columns);
    CMat gram = basis.columns.adjoint() * mn;
    for (int j = 0; j < k; ++j) gram(j, j) += wpen[j];
    CVec rhs = -(mn.adjoint() * u0) - wpen.cast<Cplx>().cwiseProduct(t0);
    out.coeff = Eigen::LDLT<CMat>(gram).solve(rhs);
    out.field = u0 + basis.columns * out.coeff;
  }

  double pen = 0.0;
  for (int j = 0; j < k; ++j) {
    const int s = basis.slots[j];
    const double gc = part.gamma_clamped[s];
    pen += at_inv * ops.Mb[s] / (gc * gc) * std::norm(out.field[ops.bvert[s]]);
  }
  const double nm = norm_m(ops, out.field);
  out.objective = nm * nm + pen;
  return out;
}

CVec solve_R(const OperatorSet& ops, const ConjugatedOperator& op,
             const BoundaryPartition& part, const CVec& v,
             const CVec& v_minus) {
  const WeightSet& w = op.w;
  if (w.tau == 0.0)
    throw std::invalid_argument("the sided solve needs a nonzero exponent");
  const auto solver = make_conjugated_solver(ops, w.tau);

  // particular solution with zero trace: [A u + M v]_I = 0
  CVec up = solver->zero_dirichlet(w, real_apply(ops.M, v));

  // pin the constrained hemisphere literally; the free half is padded with
  // exact zeros so only the kernel step below can move it
  CVec payload = CVec::Zero(ops.nb);
  const bool plus_side = w.tau > 0.0;
  for (int b = 0; b < ops.nb; ++b) {
    const bool free_slot = plus_side ? part.plus_free(b) : part.minus_free(b);
    if (!free_slot) payload[b] = v_minus[b];
  }
  CVec u0 = up + solver->extension(w, payload);

  KernelBasis basis = kernel_basis(ops, *solver, part, w);
  return solve_remainder(ops, basis, part, w.tau, u0).field;
}

CgoHarmonic build_mu(const OperatorSet& ops, const CoordinateFrame& frame,
                     const BoundaryPartition& part, const CutoffPair& cutoffs,
                     double tau, const AngularMode& mode) {
  if (!(tau > 0.0))
    throw std::invalid_argument("mu wants a positive exponent");
  IncidentProfile prof = incident_profile(frame, mode, ProfileSign::plus);
  return build_field(ops, frame, part, cutoffs.chi_plus, tau, prof,
                     TraceSupport::source_side);
}

CgoHarmonic build_nu(const OperatorSet& ops, const CoordinateFrame& frame,
                     const BoundaryPartition& part, const CutoffPair& cutoffs,
                     double tau) {
  if (!(tau > 0.0))
    throw std::invalid_argument("nu wants a positive exponent");
  AngularMode one;
  one.constant = 1.0;
  IncidentProfile prof = incident_profile(frame, one, ProfileSign::minus);
  return build_field(ops, frame, part, cutoffs.chi_minus, -tau, prof,
                     TraceSupport::observation_side);
}

}  // namespace recon
