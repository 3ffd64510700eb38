#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "recon/carleman.hpp"

using namespace recon;

namespace {

struct Setup {
  Mesh mesh;
  CoordinateFrame frame;
  OperatorSet ops;
  BoundaryPartition part;
  std::unique_ptr<HarmonicCache> cache;
  explicit Setup(int level, double delta = 0.15)
      : mesh(build_ball_mesh(DomainSpec{}, level)),
        frame(make_frame(mesh)),
        ops(assemble_operators(mesh, frame)),
        part(make_partition(mesh, delta)),
        cache(build_harmonic_cache(ops)) {}
};

CVec random_cvec(int n, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> dist;
  CVec v(n);
  for (int i = 0; i < n; ++i) v[i] = Cplx(dist(gen), dist(gen));
  return v;
}

CVec random_zero_trace(const OperatorSet& ops, unsigned seed) {
  CVec v = random_cvec(ops.nv, seed);
  for (int b : ops.bvert) v[b] = Cplx(0.0, 0.0);
  return v;
}

// smooth complex field with exact zeros on the sphere: quadratic bubble in
// |x - center|^2 times a low-order modulation
CVec smooth_zero_trace(const Mesh& mesh, const OperatorSet& ops, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> dist;
  Cplx c0(dist(gen), dist(gen)), c1(dist(gen), dist(gen));
  const Eigen::Vector3d c = mesh.domain.center();
  const double r2 = mesh.domain.radius * mesh.domain.radius;
  CVec v(ops.nv);
  for (int i = 0; i < ops.nv; ++i) {
    const Eigen::Vector3d x = mesh.vertices.col(i);
    v[i] = (r2 - (x - c).squaredNorm()) * (c0 + c1 * x[0]);
  }
  for (int b : ops.bvert) v[b] = Cplx(0.0, 0.0);
  return v;
}

}  // namespace

TEST_CASE("weights: zero exponent, conjugate symmetry, dynamic range guard") {
  Setup s(0);
  WeightSet w0 = make_weights(s.frame, s.ops, 0.0, false);
  for (int i = 0; i < s.ops.nv; ++i) {
    CHECK(w0.wv[i] == Cplx(1.0, 0.0));
    CHECK(w0.wv_inv[i] == Cplx(1.0, 0.0));
  }

  WeightSet w = make_weights(s.frame, s.ops, 6.0, false);
  WeightSet wb = make_weights(s.frame, s.ops, 6.0, true);
  for (int i = 0; i < s.ops.nv; ++i) {
    CHECK(std::abs(w.wv[i] * w.wv_inv[i] - 1.0) < 1e-12);
    CHECK(std::abs(wb.wv[i] - std::conj(w.wv[i])) < 1e-13 * std::abs(w.wv[i]));
  }
  for (int b = 0; b < s.ops.nb; ++b)
    CHECK(w.wb[b] == w.wv[s.ops.bvert[b]]);

  // |zeta| spans [1/2, 3/2], so 2^tau is the controlling factor
  CHECK_NOTHROW(make_weights(s.frame, s.ops, 32.0, false));
  CHECK_THROWS_AS(make_weights(s.frame, s.ops, 48.0, false), TauTooLarge);
  CHECK_THROWS_AS(make_weights(s.frame, s.ops, -48.0, true), TauTooLarge);
}

TEST_CASE("conjugated operator: stiffness at zero exponent, exact adjoint pairing") {
  Setup s(1);
  ConjugatedOperator a0 =
      assemble_conjugated(s.ops, s.frame, 0.0, false, ConjugationMode::weak);
  SpCMat diff = a0.A - SpCMat(s.ops.K.cast<Cplx>());
  CHECK(diff.norm() == 0.0);

  const double tau = 8.0;
  ConjugatedOperator at =
      assemble_conjugated(s.ops, s.frame, tau, false, ConjugationMode::weak);
  ConjugatedOperator ab =
      assemble_conjugated(s.ops, s.frame, -tau, true, ConjugationMode::weak);
  // the barred assembly at -tau is the conjugate transpose of the unbarred one
  SpCMat adj = SpCMat(at.A.adjoint());
  SpCMat gap = ab.A - adj;
  CHECK(gap.norm() < 1e-12 * at.A.norm());
}

TEST_CASE("conjugated operator: weak and expanded modes agree to mesh order") {
  const double tau = 4.0;
  // nodal readings of either mode are not pointwise consistent on an
  // unstructured mesh, so the gap between the weak load A u and the expanded
  // load M L(u) is measured after a zero-Dirichlet energy solve
  auto solve_ii = [](const Setup& s, const CVec& load) {
    Mat packed(s.ops.ni, 2);
    CVec li(s.ops.ni);
    for (int k = 0; k < s.ops.ni; ++k) li[k] = load[s.ops.ivert[k]];
    packed.col(0) = li.real();
    packed.col(1) = li.imag();
    Mat sol = s.cache->K_II.solve(packed);
    CVec u = CVec::Zero(s.ops.nv);
    for (int k = 0; k < s.ops.ni; ++k)
      u[s.ops.ivert[k]] = Cplx(sol(k, 0), sol(k, 1));
    return u;
  };
  std::vector<double> gaps;
  for (int level : {0, 1}) {
    Setup s(level);
    ConjugatedOperator weak =
        assemble_conjugated(s.ops, s.frame, tau, false, ConjugationMode::weak);
    ConjugatedOperator expanded =
        assemble_conjugated(s.ops, s.frame, tau, false, ConjugationMode::expanded);
    double worst = 0.0;
    for (unsigned seed = 0; seed < 5; ++seed) {
      CVec u = smooth_zero_trace(s.mesh, s.ops, 100 + seed);
      CVec load_weak = weak.A * u;
      CVec le = expanded.apply(u);
      CVec load_exp = -(CVec(s.ops.M * le.real()) + Cplx(0, 1) * CVec(s.ops.M * le.imag()));
      CVec gap = solve_ii(s, CVec(load_weak - load_exp));
      CVec ref = solve_ii(s, load_exp);
      worst = std::max(worst, norm_m(s.ops, gap) / norm_m(s.ops, ref));
    }
    gaps.push_back(worst);
  }
  CHECK(gaps[1] < gaps[0]);
  CHECK(gaps[1] < 0.8);

  // barred expanded action is the conjugate sandwich of the unbarred one
  Setup s(0);
  ConjugatedOperator eb =
      assemble_conjugated(s.ops, s.frame, tau, true, ConjugationMode::expanded);
  ConjugatedOperator eu =
      assemble_conjugated(s.ops, s.frame, tau, false, ConjugationMode::expanded);
  CVec u = random_cvec(s.ops.nv, 3);
  CVec lhsv = eb.apply(u);
  CVec rhsv = eu.apply(u.conjugate()).conjugate();
  CHECK((lhsv - rhsv).norm() == 0.0);
}

TEST_CASE("kernel basis: traces are exact unit vectors and columns solve the equation") {
  Setup s(1);
  const double tau = 8.0;
  WeightSet w = make_weights(s.frame, s.ops, tau, false);
  auto solver = make_conjugated_solver(s.ops, tau);
  KernelBasis basis = kernel_basis(s.ops, *solver, s.part, w);

  int expected = 0;
  for (int b = 0; b < s.ops.nb; ++b)
    if (s.part.plus_free(b)) ++expected;
  CHECK(static_cast<int>(basis.slots.size()) == expected);
  CHECK(basis.gram_min_singular > 1e-10);

  ConjugatedOperator op =
      assemble_conjugated(s.ops, s.frame, tau, false, ConjugationMode::weak);
  for (int j : {0, expected / 2, expected - 1}) {
    const int vj = s.ops.bvert[basis.slots[j]];
    CVec col = basis.columns.col(j);
    CHECK(col[vj] == Cplx(1.0, 0.0));
    for (int b = 0; b < s.ops.nb; ++b) {
      if (s.ops.bvert[b] == vj) continue;
      CHECK(col[s.ops.bvert[b]] == Cplx(0.0, 0.0));
    }
    CVec resid = op.A * col;
    double num = 0.0;
    for (int v : s.ops.ivert) num += std::norm(resid[v]);
    CHECK(std::sqrt(num) < 1e-8 * col.norm() * s.ops.K.norm());
  }

  // the barred family at -tau lives on the opposite half and reuses the
  // same factorization through the conjugate-transpose dispatch
  WeightSet wb = make_weights(s.frame, s.ops, -tau, true);
  KernelBasis bar = kernel_basis(s.ops, *solver, s.part, wb);
  int expected_minus = 0;
  for (int b = 0; b < s.ops.nb; ++b)
    if (s.part.minus_free(b)) ++expected_minus;
  CHECK(static_cast<int>(bar.slots.size()) == expected_minus);
  CHECK(bar.gram_min_singular > 1e-10);
}

TEST_CASE("projector: idempotent, self-adjoint, identity on its span") {
  Setup s(1);
  WeightSet w = make_weights(s.frame, s.ops, 8.0, false);
  auto solver = make_conjugated_solver(s.ops, 8.0);
  KernelBasis basis = kernel_basis(s.ops, *solver, s.part, w);
  Projector pi = make_projector(s.ops, basis);

  // M-orthonormal factor
  CMat gram = pi.Q.adjoint() * pi.MQ;
  CHECK((gram - CMat::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff() <
        1e-12);

  CVec x = random_cvec(s.ops.nv, 21), y = random_cvec(s.ops.nv, 22);
  CVec px = pi.apply(x);
  CHECK(norm_m(s.ops, CVec(pi.apply(px) - px)) < 1e-10 * norm_m(s.ops, x));
  Cplx lhs = inner_m(s.ops, px, y);
  Cplx rhs = inner_m(s.ops, x, pi.apply(y));
  CHECK(std::abs(lhs - rhs) < 1e-10 * norm_m(s.ops, x) * norm_m(s.ops, y));

  CVec col = basis.columns.col(2);
  CHECK(norm_m(s.ops, pi.complement(col)) < 1e-10 * norm_m(s.ops, col));
}

TEST_CASE("green bundle: interior equation, trace support, adjoint pairing") {
  Setup s(1);
  const double tau = 8.0;
  GreensBundle g = make_greens_bundle(s.ops, s.frame, s.part, tau);

  CHECK_THROWS_AS(make_greens_bundle(s.ops, s.frame, s.part, 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_greens_bundle(s.ops, s.frame, s.part, 64.0),
                  TauTooLarge);

  // zero in, zero out
  CVec z = g.green(CVec::Zero(s.ops.nv));
  CHECK(z.norm() == 0.0);

  CVec f = random_cvec(s.ops.nv, 31);
  CVec load = CVec(s.ops.M * f.real()) + Cplx(0, 1) * CVec(s.ops.M * f.imag());
  CVec u = g.green_from_load(load);

  CVec r = g.A_weak * u + load;
  double num = 0.0, den = 0.0;
  for (int v : s.ops.ivert) {
    num += std::norm(r[v]);
    den += std::norm(load[v]);
  }
  CHECK(std::sqrt(num / den) < 1e-9);

  // the trace lives on the positive half only, as exact zeros elsewhere
  for (int b = 0; b < s.ops.nb; ++b)
    if (!s.part.plus_free(b)) CHECK(u[s.ops.bvert[b]] == Cplx(0.0, 0.0));

  CVec h = random_cvec(s.ops.nv, 32);
  Cplx lhs = inner_m(s.ops, g.green(f), h);
  Cplx rhs = inner_m(s.ops, f, g.green_adjoint(h));
  CHECK(std::abs(lhs - rhs) < 1e-10 * norm_m(s.ops, f) * norm_m(s.ops, h));
}

TEST_CASE("green bundle: particular solve recovers zero-trace fields") {
  Setup s(1);
  const double tau = 8.0;
  GreensBundle g = make_greens_bundle(s.ops, s.frame, s.part, tau);

  // any zero-trace v is recovered by the particular solve from its own load
  CVec v = random_zero_trace(s.ops, 41);
  CVec vr = g.particular_from_load(CVec(-(g.A_weak * v)));
  CHECK(norm_m(s.ops, CVec(vr - v)) < 1e-9 * norm_m(s.ops, v));

  // and by the full composed operator, kernel corrections included
  CVec vs = smooth_zero_trace(s.mesh, s.ops, 42);
  CVec vg = g.green_from_load(CVec(-(g.A_weak * vs)));
  CHECK(norm_m(s.ops, CVec(vg - vs)) < 1e-9 * norm_m(s.ops, vs));

  // one-sided solve: remove the kernel component inside the zero-trace space
  // by a least-norm interior correction y with (MQ_I)^H y matching the
  // kernel coefficients of x
  const int k = static_cast<int>(g.pi_plus.Q.cols());
  REQUIRE(k > 0);
  CMat MQI = g.pi_plus.MQ;
  for (int b : s.ops.bvert) MQI.row(b).setZero();
  CMat gramI = MQI.adjoint() * MQI;
  CVec x = random_zero_trace(s.ops, 43);
  CVec coef = gramI.llt().solve(g.pi_plus.MQ.adjoint() * x);
  CVec vp = x - MQI * coef;
  CHECK(norm_m(s.ops, g.pi_plus.apply(vp)) < 1e-8 * norm_m(s.ops, vp));
  CVec up = g.pi_plus.complement(g.particular_from_load(CVec(-(g.A_weak * vp))));
  CHECK(norm_m(s.ops, CVec(up - vp)) < 1e-8 * norm_m(s.ops, vp));
}

TEST_CASE("green bundle: conjugate equivariance and boundary source locality") {
  Setup s(1);
  const double tau = 6.0;
  GreensBundle gp = make_greens_bundle(s.ops, s.frame, s.part, tau);
  GreensBundle gm = make_greens_bundle(s.ops, s.frame, s.part, -tau);

  // the barred adjoint at -tau is the conjugate of the unbarred one at -tau
  CVec f = random_cvec(s.ops.nv, 51);
  CVec lhs = gm.green(f);
  CVec rhs = gp.green_adjoint(f.conjugate()).conjugate();
  CHECK((lhs - rhs).norm() < 1e-12 * lhs.norm());

  // a boundary functional on the wrong half cannot reach the adjoint image:
  // the response is zero in exact bits
  CVec h = CVec::Zero(s.ops.nb);
  for (int b = 0; b < s.ops.nb; ++b)
    if (s.part.minus_free(b)) h[b] = Cplx(1.0, -0.5);
  CVec resp = gp.boundary_source_response(h);
  CHECK(resp.norm() == 0.0);

  // on the correct half it does respond
  CVec h2 = CVec::Zero(s.ops.nb);
  for (int b = 0; b < s.ops.nb; ++b)
    if (s.part.plus_free(b)) h2[b] = Cplx(1.0, 0.0);
  CHECK(gp.boundary_source_response(h2).norm() > 0.0);
}

TEST_CASE("green bundle: norm decays with the exponent") {
  Setup s(1);
  std::vector<double> norms;
  for (double tau : {4.0, 8.0, 16.0}) {
    GreensBundle g = make_greens_bundle(s.ops, s.frame, s.part, tau);
    norms.push_back(g.norm_estimate());
  }
  CHECK(norms[0] > norms[1]);
  CHECK(norms[1] > norms[2]);
  CHECK(norms[2] > 0.0);
}

TEST_CASE("green property report: residuals at the expected scales") {
  Setup s(1);
  const double tau = 8.0;
  GreensBundle g = make_greens_bundle(s.ops, s.frame, s.part, tau);
  GreensPropertyReport rep = greens_check(g, s.part, 8, 2024);

  CHECK(rep.identity_residual < 1e-8);
  CHECK(rep.trace_support_residual == 0.0);
  CHECK(rep.adjoint_residual < 1e-9);
  CHECK(rep.t_adjoint_residual < 1e-9);
  CHECK(rep.inverse_residual_weak < 1e-8);
  CHECK(rep.inverse_residual_expanded < 1.0);
  CHECK(rep.norm_g > 0.0);

  // the expanded-mode inverse residual is a discretization gap: it shrinks
  // under refinement
  Setup s0(0);
  GreensBundle g0 = make_greens_bundle(s0.ops, s0.frame, s0.part, tau);
  GreensPropertyReport rep0 = greens_check(g0, s0.part, 8, 2024);
  CHECK(rep.inverse_residual_expanded < rep0.inverse_residual_expanded);
}

TEST_CASE("carleman ratios stay bounded across exponents and both operators") {
  Setup s(1);
  std::vector<double> maxima;
  for (double tau : {4.0, 8.0, 16.0, 32.0}) {
    for (bool barred : {false, true}) {
      CarlemanReport rep = carleman_check(s.ops, s.frame, s.part, tau,
                                          barred, 30, 7u);
      REQUIRE(!rep.ratios.empty());
      for (double rho : rep.ratios) CHECK(rho > 0.0);
      maxima.push_back(rep.max_ratio);
    }
  }
  const double hi = *std::max_element(maxima.begin(), maxima.end());
  const double lo = *std::min_element(maxima.begin(), maxima.end());
  CHECK(hi / lo < 3.0);
  CHECK(hi < 10.0);
}
