#pragma once

#include <array>
#include <string>
#include <vector>

#include "recon/types.hpp"

namespace recon {

// Ball domain kept away from the x1-axis: center (0, offset, 0), radius rho.
// The axis distance controls the spread of the complex weight base; the domain
// must not touch the axis or the cylindrical frame degenerates.
struct DomainSpec {
  double offset = 2.0;  // distance from the x1-axis to the ball center
  double radius = 1.0;

  Eigen::Vector3d center() const { return {0.0, offset, 0.0}; }
  void validate() const;
};

// Tetrahedral mesh of the ball. Vertices are columns; tets and boundary faces
// are vertex-index quadruples/triples. Boundary faces are oriented outward.
// Refinement appends new vertices after the parent's, so a vertex id keeps its
// meaning (and its boundary flag) across levels.
struct Mesh {
  DomainSpec domain;
  int level = 0;
  Eigen::Matrix<double, 3, Eigen::Dynamic> vertices;
  std::vector<std::array<int, 4>> tets;
  std::vector<std::array<int, 3>> boundary_faces;
  std::vector<int> boundary_vertices;  // sorted global vertex ids
  std::vector<int> boundary_slot;      // global id -> boundary slot, or -1
  std::vector<int> interior_vertices;  // sorted global vertex ids

  int num_vertices() const { return static_cast<int>(vertices.cols()); }
  int num_boundary() const { return static_cast<int>(boundary_vertices.size()); }
  int num_interior() const { return static_cast<int>(interior_vertices.size()); }
  bool is_boundary(int v) const { return boundary_slot[v] >= 0; }

  double tet_volume(int t) const;
  double total_volume() const;
  double ball_volume() const;

  // Unit outward normal of the exact sphere at a boundary vertex.
  Eigen::Vector3d vertex_normal(int v) const;
  // Unit normal of a boundary face as oriented in boundary_faces.
  Eigen::Vector3d face_normal(int f) const;
};

// Icosahedral ball mesh: a 20-tet seed (polar icosahedron plus center) is
// uniformly refined level+1 times, with boundary edge midpoints projected to
// the sphere. Level 2 lands near 2k vertices. Throws std::invalid_argument
// ("domain touches axis") when offset <= radius.
Mesh build_ball_mesh(const DomainSpec& domain, int level);

// One uniform 1:8 refinement pass (midpoint split, shortest octahedron
// diagonal, boundary midpoints projected to the sphere).
Mesh refine(const Mesh& mesh);

void save_mesh_json(const Mesh& mesh, const std::string& path);
Mesh load_mesh_json(const std::string& path);

// Cylindrical chart around the x1-axis evaluated at every vertex:
//   r = distance to the axis,  theta = angle in the cross-section plane,
//   z = x1 + i r,              zeta = z / (i * offset).
// The domain stays in the half-space x2 > 0, so theta lies in (-pi/2, pi/2)
// and the chart has no branch seam inside the mesh. zeta takes values in the
// right half-plane, making principal powers zeta^tau smooth.
struct CoordinateFrame {
  Vec x1, r, theta;
  CVec z, zeta;
  double zeta_abs_min = 0.0, zeta_abs_max = 0.0;
};
CoordinateFrame make_frame(const Mesh& mesh);

// Splits the boundary by the sign of x.nu (nu = unit outward normal) and
// carves the overlapping control regions used for masking, all per boundary
// slot. t = x.nu/|x| is the latitude-like parameter in [-1, 1].
//   plus_mask  : t >= -node_tol         (x.nu >= 0 side)
//   minus_mask : t <= +node_tol         (x.nu <= 0 side)
//   obs_mask   : t <  delta             (where differences are observed)
//   src_mask   : t > -delta             (where sources are supported)
//   src_core   : t > -delta/2           (strictly inside the source side)
// gamma = sqrt(|x.nu|)/|x| weights boundary norms; it degenerates on the
// equator t = 0 and is clamped from below for use in weighted least squares.
struct BoundaryPartition {
  double delta = 0.0, node_tol = 0.0;
  Vec t;
  std::vector<char> plus_mask, minus_mask;
  std::vector<char> obs_mask, src_mask, src_core_mask;
  Vec gamma, gamma_clamped;

  int count(const std::vector<char>& mask) const;
  bool plus_free(int slot) const { return t[slot] > node_tol; }
  bool minus_free(int slot) const { return t[slot] < -node_tol; }
};
BoundaryPartition make_partition(const Mesh& mesh, double delta,
                                 double node_tol = 1e-12,
                                 double gamma_min = 1e-6);

double smoothstep(double edge0, double edge1, double x);

// C1 cutoffs in the latitude parameter t, evaluated per boundary slot.
//   chi_plus  = 1 for t <= -delta, 0 for t >= -delta + band
//   chi_minus = 1 for t >= +delta, 0 for t <= +delta - band
// Requires 0 < band < delta/2 so each ramp finishes strictly inside its
// hemisphere. Scalar profiles are exposed for direct evaluation in tests.
struct CutoffPair {
  double delta = 0.0, band = 0.0;
  Vec chi_plus, chi_minus;

  static double plus_profile(double t, double delta, double band);
  static double minus_profile(double t, double delta, double band);
};
CutoffPair make_cutoffs(const BoundaryPartition& partition, double band);

}  // namespace recon
