#include "recon/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <utility>

#include <json.hpp>

namespace recon {

void DomainSpec::validate() const {
  if (!(radius > 0.0) || !(offset > radius)) {
    throw std::invalid_argument(
        "domain touches axis: need offset > radius > 0, got offset=" +
        std::to_string(offset) + " radius=" + std::to_string(radius));
  }
}

double Mesh::tet_volume(int t) const {
  const auto& T = tets[t];
  Eigen::Vector3d a = vertices.col(T[0]);
  Eigen::Vector3d u = vertices.col(T[1]) - a;
  Eigen::Vector3d v = vertices.col(T[2]) - a;
  Eigen::Vector3d w = vertices.col(T[3]) - a;
  return u.cross(v).dot(w) / 6.0;
}

double Mesh::total_volume() const {
  double s = 0.0;
  for (int t = 0; t < static_cast<int>(tets.size()); ++t) s += tet_volume(t);
  return s;
}

double Mesh::ball_volume() const {
  const double rho = domain.radius;
  return 4.0 / 3.0 * std::numbers::pi * rho * rho * rho;
}

Eigen::Vector3d Mesh::vertex_normal(int v) const {
  Eigen::Vector3d d = vertices.col(v) - domain.center();
  return d / d.norm();
}

Eigen::Vector3d Mesh::face_normal(int f) const {
  const auto& F = boundary_faces[f];
  Eigen::Vector3d a = vertices.col(F[0]);
  Eigen::Vector3d n =
      (vertices.col(F[1]) - a).cross(vertices.col(F[2]) - a);
  return n / n.norm();
}

namespace {

// Orient a tet to positive signed volume by swapping the last two vertices.
void orient_positive(const Eigen::Matrix<double, 3, Eigen::Dynamic>& X,
                     std::array<int, 4>& T) {
  Eigen::Vector3d a = X.col(T[0]);
  double vol = (X.col(T[1]) - a)
                   .cross(X.col(T[2]) - a)
                   .dot(X.col(T[3]) - a);
  if (vol < 0.0) std::swap(T[2], T[3]);
  if (vol == 0.0) throw std::runtime_error("degenerate tetrahedron in mesh build");
}

// Rebuild boundary combinatorics from the tet list: a face belongs to the
// boundary exactly when it appears in a single tet. Faces are stored with the
// smallest vertex first and wound so the normal points away from the owning
// tet's opposite vertex.
void finalize_connectivity(Mesh& mesh) {
  std::map<std::array<int, 3>, std::pair<int, int>> faces;  // key -> (count, tet)
  for (int t = 0; t < static_cast<int>(mesh.tets.size()); ++t) {
    const auto& T = mesh.tets[t];
    const std::array<std::array<int, 3>, 4> local = {{
        {T[1], T[2], T[3]}, {T[0], T[2], T[3]},
        {T[0], T[1], T[3]}, {T[0], T[1], T[2]}}};
    for (auto f : local) {
      std::sort(f.begin(), f.end());
      auto [it, inserted] = faces.emplace(f, std::make_pair(1, t));
      if (!inserted) it->second.first++;
    }
  }

  mesh.boundary_faces.clear();
  std::vector<char> on_boundary(mesh.num_vertices(), 0);
  for (const auto& [key, info] : faces) {
    if (info.first != 1) continue;
    const auto& T = mesh.tets[info.second];
    int opp = -1;
    for (int v : T) {
      if (v != key[0] && v != key[1] && v != key[2]) opp = v;
    }
    std::array<int, 3> f = key;
    Eigen::Vector3d a = mesh.vertices.col(f[0]);
    double det = (mesh.vertices.col(f[1]) - a)
                     .cross(mesh.vertices.col(f[2]) - a)
                     .dot(mesh.vertices.col(opp) - a);
    if (det > 0.0) std::swap(f[1], f[2]);
    mesh.boundary_faces.push_back(f);
    for (int v : f) on_boundary[v] = 1;
  }

  mesh.boundary_vertices.clear();
  mesh.interior_vertices.clear();
  mesh.boundary_slot.assign(mesh.num_vertices(), -1);
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    if (on_boundary[v]) {
      mesh.boundary_slot[v] = static_cast<int>(mesh.boundary_vertices.size());
      mesh.boundary_vertices.push_back(v);
    } else {
      mesh.interior_vertices.push_back(v);
    }
  }
}

// Polar icosahedron ball: poles on the x2-axis through the ball center so the
// mesh carries vertices exactly at the nearest/farthest points from the
// origin, plus the center vertex; 20 tets fan out from the center.
Mesh seed_mesh(const DomainSpec& domain) {
  domain.validate();
  Mesh mesh;
  mesh.domain = domain;
  mesh.level = -1;  // pre-refinement seed

  const double rho = domain.radius;
  const Eigen::Vector3d c = domain.center();
  std::vector<Eigen::Vector3d> pts;
  pts.reserve(13);
  pts.push_back(c);                                 // 0: center
  pts.push_back(c + rho * Eigen::Vector3d(0, 1, 0));   // 1: top pole
  pts.push_back(c + rho * Eigen::Vector3d(0, -1, 0));  // 2: bottom pole
  const double lat = 1.0 / std::sqrt(5.0);
  const double rad = 2.0 / std::sqrt(5.0);
  for (int k = 0; k < 5; ++k) {  // 3..7: upper ring
    double phi = 2.0 * std::numbers::pi * k / 5.0;
    pts.push_back(c + rho * Eigen::Vector3d(rad * std::cos(phi), lat,
                                            rad * std::sin(phi)));
  }
  for (int k = 0; k < 5; ++k) {  // 8..12: lower ring
    double phi = 2.0 * std::numbers::pi * k / 5.0 + std::numbers::pi / 5.0;
    pts.push_back(c + rho * Eigen::Vector3d(rad * std::cos(phi), -lat,
                                            rad * std::sin(phi)));
  }
  mesh.vertices.resize(3, 13);
  for (int i = 0; i < 13; ++i) mesh.vertices.col(i) = pts[i];

  auto up = [](int k) { return 3 + (k % 5); };
  auto lo = [](int k) { return 8 + (k % 5); };
  std::vector<std::array<int, 3>> surf;
  for (int k = 0; k < 5; ++k) {
    surf.push_back({1, up(k), up(k + 1)});
    surf.push_back({2, lo(k + 1), lo(k)});
    surf.push_back({up(k), lo(k), up(k + 1)});
    surf.push_back({up(k + 1), lo(k), lo(k + 1)});
  }
  for (const auto& f : surf) {
    std::array<int, 4> T = {0, f[0], f[1], f[2]};
    orient_positive(mesh.vertices, T);
    mesh.tets.push_back(T);
  }
  finalize_connectivity(mesh);
  return mesh;
}

}  // namespace

Mesh refine(const Mesh& mesh) {
  Mesh out;
  out.domain = mesh.domain;
  out.level = mesh.level + 1;

  // Edges of boundary faces: midpoints of these land on the sphere.
  std::map<std::pair<int, int>, char> surf_edges;
  for (const auto& f : mesh.boundary_faces) {
    for (int e = 0; e < 3; ++e) {
      int a = f[e], b = f[(e + 1) % 3];
      surf_edges[{std::min(a, b), std::max(a, b)}] = 1;
    }
  }

  std::vector<Eigen::Vector3d> added;
  std::map<std::pair<int, int>, int> midpoint;
  const Eigen::Vector3d c = mesh.domain.center();
  const double rho = mesh.domain.radius;
  auto mid = [&](int a, int b) {
    std::pair<int, int> key{std::min(a, b), std::max(a, b)};
    auto it = midpoint.find(key);
    if (it != midpoint.end()) return it->second;
    Eigen::Vector3d m =
        0.5 * (mesh.vertices.col(a) + mesh.vertices.col(b));
    if (surf_edges.count(key)) m = c + rho * (m - c).normalized();
    int id = mesh.num_vertices() + static_cast<int>(added.size());
    added.push_back(m);
    midpoint.emplace(key, id);
    return id;
  };

  std::vector<std::array<int, 4>> child_tets;
  child_tets.reserve(mesh.tets.size() * 8);
  for (const auto& T : mesh.tets) {
    int v0 = T[0], v1 = T[1], v2 = T[2], v3 = T[3];
    int m01 = mid(v0, v1), m02 = mid(v0, v2), m03 = mid(v0, v3);
    int m12 = mid(v1, v2), m13 = mid(v1, v3), m23 = mid(v2, v3);
    child_tets.push_back({v0, m01, m02, m03});
    child_tets.push_back({v1, m01, m12, m13});
    child_tets.push_back({v2, m02, m12, m23});
    child_tets.push_back({v3, m03, m13, m23});

    // Split the interior octahedron along its shortest diagonal; the four
    // remaining midpoints form a cycle with no antipodal neighbors.
    auto pos = [&](int i) -> Eigen::Vector3d {
      return i < mesh.num_vertices() ? mesh.vertices.col(i)
                                     : added[i - mesh.num_vertices()];
    };
    struct Choice {
      int p, q;
      std::array<int, 4> cyc;
    };
    const std::array<Choice, 3> choices = {{
        {m01, m23, {m02, m03, m13, m12}},
        {m02, m13, {m01, m03, m23, m12}},
        {m03, m12, {m01, m02, m23, m13}}}};
    int best = 0;
    double best_len = (pos(choices[0].p) - pos(choices[0].q)).squaredNorm();
    for (int i = 1; i < 3; ++i) {
      double len = (pos(choices[i].p) - pos(choices[i].q)).squaredNorm();
      if (len < best_len) {
        best_len = len;
        best = i;
      }
    }
    const Choice& ch = choices[best];
    for (int i = 0; i < 4; ++i) {
      child_tets.push_back({ch.p, ch.q, ch.cyc[i], ch.cyc[(i + 1) % 4]});
    }
  }

  out.vertices.resize(3, mesh.num_vertices() + static_cast<int>(added.size()));
  out.vertices.leftCols(mesh.num_vertices()) = mesh.vertices;
  for (int i = 0; i < static_cast<int>(added.size()); ++i) {
    out.vertices.col(mesh.num_vertices() + i) = added[i];
  }
  out.tets = std::move(child_tets);
  for (auto& T : out.tets) orient_positive(out.vertices, T);
  finalize_connectivity(out);
  return out;
}

Mesh build_ball_mesh(const DomainSpec& domain, int level) {
  if (level < 0) throw std::invalid_argument("mesh level must be >= 0");
  Mesh mesh = seed_mesh(domain);
  for (int l = 0; l <= level; ++l) mesh = refine(mesh);
  return mesh;
}

void save_mesh_json(const Mesh& mesh, const std::string& path) {
  nlohmann::json j;
  j["domain"] = {{"offset", mesh.domain.offset}, {"radius", mesh.domain.radius}};
  j["level"] = mesh.level;
  auto& jv = j["vertices"] = nlohmann::json::array();
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    jv.push_back({mesh.vertices(0, v), mesh.vertices(1, v), mesh.vertices(2, v)});
  }
  auto& jt = j["tets"] = nlohmann::json::array();
  for (const auto& T : mesh.tets) jt.push_back({T[0], T[1], T[2], T[3]});
  auto& jf = j["boundary_faces"] = nlohmann::json::array();
  for (const auto& F : mesh.boundary_faces) jf.push_back({F[0], F[1], F[2]});

  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write mesh file: " + path);
  os << j.dump(1) << "\n";
}

Mesh load_mesh_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read mesh file: " + path);
  nlohmann::json j = nlohmann::json::parse(is);

  Mesh mesh;
  mesh.domain.offset = j.at("domain").at("offset").get<double>();
  mesh.domain.radius = j.at("domain").at("radius").get<double>();
  mesh.level = j.value("level", 0);
  const auto& jv = j.at("vertices");
  mesh.vertices.resize(3, static_cast<int>(jv.size()));
  for (int v = 0; v < static_cast<int>(jv.size()); ++v) {
    for (int k = 0; k < 3; ++k) mesh.vertices(k, v) = jv[v][k].get<double>();
  }
  for (const auto& t : j.at("tets")) {
    mesh.tets.push_back({t[0].get<int>(), t[1].get<int>(), t[2].get<int>(),
                         t[3].get<int>()});
  }
  finalize_connectivity(mesh);
  return mesh;
}

CoordinateFrame make_frame(const Mesh& mesh) {
  const int n = mesh.num_vertices();
  CoordinateFrame fr;
  fr.x1.resize(n);
  fr.r.resize(n);
  fr.theta.resize(n);
  fr.z.resize(n);
  fr.zeta.resize(n);
  const double d = mesh.domain.offset;
  const Cplx base(0.0, d);  // weight base z_c = i*offset
  fr.zeta_abs_min = std::numeric_limits<double>::max();
  fr.zeta_abs_max = 0.0;
  for (int v = 0; v < n; ++v) {
    double x1 = mesh.vertices(0, v);
    double y = mesh.vertices(1, v);
    double w = mesh.vertices(2, v);
    double r = std::hypot(y, w);
    if (!(r > 0.0)) throw std::runtime_error("vertex on the x1-axis");
    fr.x1[v] = x1;
    fr.r[v] = r;
    fr.theta[v] = std::atan2(w, y);
    fr.z[v] = Cplx(x1, r);
    fr.zeta[v] = fr.z[v] / base;
    double a = std::abs(fr.zeta[v]);
    fr.zeta_abs_min = std::min(fr.zeta_abs_min, a);
    fr.zeta_abs_max = std::max(fr.zeta_abs_max, a);
  }
  return fr;
}

int BoundaryPartition::count(const std::vector<char>& mask) const {
  int n = 0;
  for (char m : mask) n += (m != 0);
  return n;
}

BoundaryPartition make_partition(const Mesh& mesh, double delta,
                                 double node_tol, double gamma_min) {
  if (!(delta > 0.0) || !(delta < 1.0)) {
    throw std::invalid_argument("partition width delta must lie in (0, 1)");
  }
  if (!(node_tol >= 0.0) || !(gamma_min > 0.0)) {
    throw std::invalid_argument("invalid partition tolerances");
  }
  const int nb = mesh.num_boundary();
  BoundaryPartition part;
  part.delta = delta;
  part.node_tol = node_tol;
  part.t.resize(nb);
  part.gamma.resize(nb);
  part.gamma_clamped.resize(nb);
  part.plus_mask.assign(nb, 0);
  part.minus_mask.assign(nb, 0);
  part.obs_mask.assign(nb, 0);
  part.src_mask.assign(nb, 0);
  part.src_core_mask.assign(nb, 0);

  for (int b = 0; b < nb; ++b) {
    int v = mesh.boundary_vertices[b];
    Eigen::Vector3d x = mesh.vertices.col(v);
    Eigen::Vector3d nu = mesh.vertex_normal(v);
    double xn = x.dot(nu);
    double ax = x.norm();
    double t = xn / ax;
    part.t[b] = t;
    part.plus_mask[b] = (t >= -node_tol);
    part.minus_mask[b] = (t <= node_tol);
    part.obs_mask[b] = (t < delta);
    part.src_mask[b] = (t > -delta);
    part.src_core_mask[b] = (t > -delta / 2.0);
    part.gamma[b] = std::sqrt(std::abs(xn)) / ax;
    part.gamma_clamped[b] = std::max(part.gamma[b], gamma_min);
  }
  return part;
}

double smoothstep(double edge0, double edge1, double x) {
  double s = (x - edge0) / (edge1 - edge0);
  s = std::clamp(s, 0.0, 1.0);
  return s * s * (3.0 - 2.0 * s);
}

double CutoffPair::plus_profile(double t, double delta, double band) {
  return 1.0 - smoothstep(-delta, -delta + band, t);
}

double CutoffPair::minus_profile(double t, double delta, double band) {
  return smoothstep(delta - band, delta, t);
}

CutoffPair make_cutoffs(const BoundaryPartition& partition, double band) {
  if (!(band > 0.0) || !(band < partition.delta / 2.0)) {
    throw std::invalid_argument(
        "cutoff band must satisfy 0 < band < delta/2");
  }
  const int nb = static_cast<int>(partition.t.size());
  CutoffPair cut;
  cut.delta = partition.delta;
  cut.band = band;
  cut.chi_plus.resize(nb);
  cut.chi_minus.resize(nb);
  for (int b = 0; b < nb; ++b) {
    cut.chi_plus[b] = CutoffPair::plus_profile(partition.t[b], partition.delta, band);
    cut.chi_minus[b] = CutoffPair::minus_profile(partition.t[b], partition.delta, band);
  }
  return cut;
}

}  // namespace recon
