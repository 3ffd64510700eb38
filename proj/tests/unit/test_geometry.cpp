#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <set>

#include "recon/geometry.hpp"

using namespace recon;

TEST_CASE("domain validation rejects a ball touching the axis") {
  CHECK_THROWS_WITH_AS(build_ball_mesh({1.0, 1.0}, 0),
                       doctest::Contains("domain touches axis"),
                       std::invalid_argument);
  CHECK_THROWS_AS(build_ball_mesh({0.5, 1.0}, 0), std::invalid_argument);
  CHECK_THROWS_AS(build_ball_mesh({2.0, -1.0}, 0), std::invalid_argument);
}

TEST_CASE("mesh level scaling, determinism, and volume") {
  DomainSpec dom;
  Mesh m0 = build_ball_mesh(dom, 0);
  Mesh m1 = build_ball_mesh(dom, 1);
  Mesh m2 = build_ball_mesh(dom, 2);

  CHECK(m0.tets.size() == 160);
  CHECK(m1.tets.size() == 8 * m0.tets.size());
  CHECK(m2.tets.size() == 8 * m1.tets.size());
  // vertex counts grow by roughly 8x per level
  double g1 = double(m1.num_vertices()) / m0.num_vertices();
  double g2 = double(m2.num_vertices()) / m1.num_vertices();
  CHECK(g1 > 5.0);
  CHECK(g2 > 6.0);
  CHECK(g2 < 8.5);
  CHECK(m2.num_vertices() >= 2000);
  CHECK(m2.num_vertices() <= 4000);

  // level 2 fills the ball to within 2%
  CHECK(std::abs(m2.total_volume() - m2.ball_volume()) / m2.ball_volume() < 0.02);

  // identical bits on a rebuild
  Mesh m1b = build_ball_mesh(dom, 1);
  REQUIRE(m1b.num_vertices() == m1.num_vertices());
  CHECK((m1b.vertices - m1.vertices).cwiseAbs().maxCoeff() == 0.0);
  CHECK(m1b.tets == m1.tets);
  CHECK(m1b.boundary_faces == m1.boundary_faces);
}

TEST_CASE("mesh integrity: volumes, normals, closed boundary, axis distance") {
  Mesh mesh = build_ball_mesh({2.0, 1.0}, 1);

  for (int t = 0; t < (int)mesh.tets.size(); ++t) {
    CHECK(mesh.tet_volume(t) > 0.0);
  }

  const Eigen::Vector3d c = mesh.domain.center();
  for (int f = 0; f < (int)mesh.boundary_faces.size(); ++f) {
    Eigen::Vector3d n = mesh.face_normal(f);
    CHECK(std::abs(n.norm() - 1.0) < 1e-12);
    const auto& F = mesh.boundary_faces[f];
    Eigen::Vector3d centroid = (mesh.vertices.col(F[0]) + mesh.vertices.col(F[1]) +
                                mesh.vertices.col(F[2])) /
                               3.0;
    CHECK(n.dot(centroid - c) > 0.0);  // outward
  }

  // every boundary edge is shared by exactly two boundary faces
  std::map<std::pair<int, int>, int> edge_count;
  for (const auto& F : mesh.boundary_faces) {
    for (int e = 0; e < 3; ++e) {
      int a = F[e], b = F[(e + 1) % 3];
      edge_count[{std::min(a, b), std::max(a, b)}]++;
    }
  }
  for (const auto& [e, cnt] : edge_count) CHECK(cnt == 2);

  // boundary vertices sit on the sphere; every vertex stays off the axis
  for (int v : mesh.boundary_vertices) {
    CHECK(std::abs((mesh.vertices.col(v) - c).norm() - mesh.domain.radius) < 1e-12);
  }
  double min_r = 1e300;
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    min_r = std::min(min_r, std::hypot(mesh.vertices(1, v), mesh.vertices(2, v)));
  }
  CHECK(min_r >= mesh.domain.offset - mesh.domain.radius - 1e-12);
}

TEST_CASE("refinement preserves vertex identity and boundary classification") {
  Mesh m0 = build_ball_mesh({2.0, 1.0}, 0);
  Mesh m1 = refine(m0);
  REQUIRE(m1.num_vertices() > m0.num_vertices());
  // parent vertices appear first with identical coordinates
  CHECK((m1.vertices.leftCols(m0.num_vertices()) - m0.vertices)
            .cwiseAbs()
            .maxCoeff() == 0.0);
  for (int v = 0; v < m0.num_vertices(); ++v) {
    CHECK(m1.is_boundary(v) == m0.is_boundary(v));
  }
}

TEST_CASE("coordinate frame: chart ranges and weight base") {
  Mesh mesh = build_ball_mesh({2.0, 1.0}, 1);
  CoordinateFrame fr = make_frame(mesh);

  for (int v = 0; v < mesh.num_vertices(); ++v) {
    CHECK(fr.r[v] > 0.0);
    CHECK(fr.z[v].imag() == fr.r[v]);
    CHECK(std::abs(fr.theta[v]) < std::numbers::pi / 2);
    // zeta = z/(i*offset) lies in the right half-plane: principal powers are safe
    CHECK(fr.zeta[v].real() > 0.0);
  }
  CHECK(fr.zeta_abs_min >= 0.5 - 1e-12);
  CHECK(fr.zeta_abs_max <= 1.5 + 1e-12);

  // |zeta| = |x|/offset, so the extremes are met at the polar vertices
  CHECK(fr.zeta_abs_min < 0.5 + 0.05);
  CHECK(fr.zeta_abs_max > 1.5 - 0.05);

  // no chart seam: theta varies mildly along any edge
  for (const auto& T : mesh.tets) {
    for (int i = 0; i < 4; ++i) {
      for (int j = i + 1; j < 4; ++j) {
        CHECK(std::abs(fr.theta[T[i]] - fr.theta[T[j]]) < std::numbers::pi / 2);
      }
    }
  }
}

TEST_CASE("boundary partition: masks, latitude, and weights") {
  Mesh mesh = build_ball_mesh({2.0, 1.0}, 1);
  BoundaryPartition part = make_partition(mesh, 0.15);
  const int nb = mesh.num_boundary();

  int overlap = 0;
  for (int b = 0; b < nb; ++b) {
    CHECK((part.plus_mask[b] || part.minus_mask[b]));
    if (part.plus_mask[b] && part.minus_mask[b]) {
      ++overlap;
      CHECK(std::abs(part.t[b]) <= part.node_tol);
    }
    CHECK(part.t[b] >= -1.0 - 1e-12);
    CHECK(part.t[b] <= 1.0 + 1e-12);
    // the equatorial sign split is nowhere marginal on this vertex set
    CHECK(std::abs(part.t[b]) > 1e-9);
    if (part.minus_mask[b]) CHECK(part.obs_mask[b]);   // observed side covers it
    if (part.plus_mask[b]) CHECK(part.src_mask[b]);    // source side covers it
    if (part.src_core_mask[b]) CHECK(part.src_mask[b]);
    CHECK(part.gamma_clamped[b] >= 1e-6);
    CHECK(part.gamma[b] <= 1.0 + 1e-12);
  }
  CHECK(overlap == 0);

  // polar vertices: x = (0,3,0) has t=1, gamma=|x|^{-1/2}; x=(0,1,0) has t=-1
  int top = -1, bot = -1;
  for (int b = 0; b < nb; ++b) {
    int v = mesh.boundary_vertices[b];
    Eigen::Vector3d x = mesh.vertices.col(v);
    if ((x - Eigen::Vector3d(0, 3, 0)).norm() < 1e-12) top = b;
    if ((x - Eigen::Vector3d(0, 1, 0)).norm() < 1e-12) bot = b;
  }
  REQUIRE(top >= 0);
  REQUIRE(bot >= 0);
  CHECK(part.t[top] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(part.gamma[top] == doctest::Approx(1.0 / std::sqrt(3.0)).epsilon(1e-12));
  CHECK(part.t[bot] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(part.gamma[bot] == doctest::Approx(1.0).epsilon(1e-12));

  // masks grow monotonically with delta
  BoundaryPartition wide = make_partition(mesh, 0.3);
  for (int b = 0; b < nb; ++b) {
    if (part.obs_mask[b]) CHECK(wide.obs_mask[b]);
    if (part.src_mask[b]) CHECK(wide.src_mask[b]);
  }

  CHECK_THROWS_AS(make_partition(mesh, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(make_partition(mesh, 1.5), std::invalid_argument);
}

TEST_CASE("smoothstep and cutoff profiles") {
  CHECK(smoothstep(0.0, 1.0, -1.0) == 0.0);
  CHECK(smoothstep(0.0, 1.0, 2.0) == 1.0);
  CHECK(smoothstep(0.0, 1.0, 0.5) == doctest::Approx(0.5).epsilon(1e-15));
  // C1 at the edges: one-sided slopes vanish
  double eps = 1e-6;
  CHECK(std::abs(smoothstep(0, 1, eps) / eps) < 1e-5);
  CHECK(std::abs((1.0 - smoothstep(0, 1, 1 - eps)) / eps) < 1e-5);

  Mesh mesh = build_ball_mesh({2.0, 1.0}, 1);
  BoundaryPartition part = make_partition(mesh, 0.15);
  const double band = 0.05;
  CutoffPair cut = make_cutoffs(part, band);
  const double delta = part.delta;

  for (int b = 0; b < mesh.num_boundary(); ++b) {
    double t = part.t[b];
    double cp = cut.chi_plus[b], cm = cut.chi_minus[b];
    CHECK(cp >= 0.0);
    CHECK(cp <= 1.0);
    CHECK(cm >= 0.0);
    CHECK(cm <= 1.0);
    if (t <= -delta) CHECK(cp == 1.0);
    if (t >= -delta + band) CHECK(cp == 0.0);
    if (t >= delta) CHECK(cm == 1.0);
    if (t <= delta - band) CHECK(cm == 0.0);
    CHECK(cp * cm == 0.0);  // supports are separated by construction
  }
  CHECK(CutoffPair::plus_profile(-delta + band / 2, delta, band) ==
        doctest::Approx(0.5).epsilon(1e-15));
  CHECK(CutoffPair::minus_profile(delta - band / 2, delta, band) ==
        doctest::Approx(0.5).epsilon(1e-15));

  CHECK_THROWS_AS(make_cutoffs(part, delta / 2), std::invalid_argument);
  CHECK_THROWS_AS(make_cutoffs(part, 0.0), std::invalid_argument);
}

TEST_CASE("mesh json round trip") {
  Mesh mesh = build_ball_mesh({2.0, 1.0}, 0);
  const char* path = "geometry_roundtrip.json";
  save_mesh_json(mesh, path);
  Mesh back = load_mesh_json(path);
  std::remove(path);

  REQUIRE(back.num_vertices() == mesh.num_vertices());
  CHECK((back.vertices - mesh.vertices).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.tets == mesh.tets);
  CHECK(back.boundary_faces == mesh.boundary_faces);
  CHECK(back.boundary_vertices == mesh.boundary_vertices);
  CHECK(back.domain.offset == mesh.domain.offset);
  CHECK(back.domain.radius == mesh.domain.radius);
}

TEST_CASE("inscribed-mesh energy deficit for an affine harmonic field decays") {
  // The P1 interpolant of Re z = x1 is exact on straight tets, so the H1 error
  // against the field on the full ball is the gradient energy of the uncovered
  // sliver: ball volume minus mesh volume. Expect ~2x decay per level.
  DomainSpec dom;
  double prev = -1.0;
  for (int level = 0; level <= 2; ++level) {
    Mesh mesh = build_ball_mesh(dom, level);
    double err = std::sqrt(mesh.ball_volume() - mesh.total_volume());
    if (prev > 0.0) CHECK(prev / err >= 1.7);
    prev = err;
  }
}
