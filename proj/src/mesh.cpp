#include "gears/mesh.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>

#include "gears/errors.hpp"

namespace gears {

Aabb bounds(std::span<const Vec3> points) {
  Aabb box;
  for (const auto& p : points) box.extend(p);
  return box;
}

void validate(const TriMesh& mesh) {
  const auto n = static_cast<int>(mesh.vertices.size());
  for (const auto& v : mesh.vertices) {
    if (!v.allFinite()) throw ValidationError("mesh has a non-finite vertex");
  }
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    for (int idx : mesh.faces[f]) {
      if (idx < 0 || idx >= n) {
        throw ValidationError("face " + std::to_string(f) + " references vertex " +
                              std::to_string(idx) + " outside [0, " + std::to_string(n) + ")");
      }
    }
    if (face_area(mesh, f) <= 0.0) {
      throw ValidationError("face " + std::to_string(f) + " is degenerate");
    }
  }
  if (!mesh.normals.empty()) {
    if (mesh.normals.size() != mesh.vertices.size()) {
      throw ValidationError("normal count does not match vertex count");
    }
    for (const auto& nrm : mesh.normals) {
      if (std::abs(nrm.norm() - 1.0) > 1e-6) throw ValidationError("mesh normal is not unit length");
    }
  }
}

TriMesh remove_degenerate_faces(TriMesh mesh, double min_area) {
  std::vector<Face> kept;
  kept.reserve(mesh.faces.size());
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& [a, b, c] = mesh.faces[f];
    if (a == b || b == c || a == c) continue;
    if (face_area(mesh, f) <= min_area) continue;
    kept.push_back(mesh.faces[f]);
  }
  mesh.faces = std::move(kept);
  return mesh;
}

namespace {
Vec3 face_cross(const TriMesh& m, std::size_t f) {
  const auto& [a, b, c] = m.faces[f];
  return (m.vertices[b] - m.vertices[a]).cross(m.vertices[c] - m.vertices[a]);
}
}  // namespace

Vec3 face_normal(const TriMesh& mesh, std::size_t face) { return face_cross(mesh, face).normalized(); }

double face_area(const TriMesh& mesh, std::size_t face) { return 0.5 * face_cross(mesh, face).norm(); }

double surface_area(const TriMesh& mesh) {
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) total += face_area(mesh, f);
  return total;
}

std::vector<Vec3> vertex_normals(const TriMesh& mesh) {
  std::vector<Vec3> acc(mesh.vertices.size(), Vec3::Zero());
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const Vec3 n = face_cross(mesh, f);  // length = 2 * area
    for (int idx : mesh.faces[f]) acc[idx] += n;
  }
  for (auto& n : acc) {
    const double len = n.norm();
    n = len > 0.0 ? Vec3(n / len) : Vec3(Vec3::UnitZ());
  }
  return acc;
}

namespace {
std::map<std::pair<int, int>, int> directed_edge_counts(const TriMesh& mesh) {
  std::map<std::pair<int, int>, int> counts;
  for (const auto& f : mesh.faces) {
    for (int e = 0; e < 3; ++e) ++counts[{f[e], f[(e + 1) % 3]}];
  }
  return counts;
}
}  // namespace

bool is_watertight(const TriMesh& mesh) {
  if (mesh.faces.empty()) return false;
  const auto counts = directed_edge_counts(mesh);
  for (const auto& [edge, count] : counts) {
    if (count != 1) return false;
    const auto twin = counts.find({edge.second, edge.first});
    if (twin == counts.end() || twin->second != 1) return false;
  }
  return true;
}

std::size_t edge_count(const TriMesh& mesh) {
  std::map<std::pair<int, int>, int> undirected;
  for (const auto& f : mesh.faces) {
    for (int e = 0; e < 3; ++e) {
      const int a = f[e], b = f[(e + 1) % 3];
      ++undirected[{std::min(a, b), std::max(a, b)}];
    }
  }
  return undirected.size();
}

TriMesh transformed(const TriMesh& mesh, const RigidTransform& tf) {
  TriMesh out;
  out.faces = mesh.faces;
  out.vertices.reserve(mesh.vertices.size());
  for (const auto& v : mesh.vertices) out.vertices.push_back(tf.apply(v));
  out.normals.reserve(mesh.normals.size());
  for (const auto& n : mesh.normals) out.normals.push_back(tf.rotation * n);
  return out;
}

TriMesh merge(std::span<const TriMesh> parts) {
  TriMesh out;
  bool all_normals = !parts.empty();
  for (const auto& p : parts) all_normals = all_normals && p.has_normals();
  for (const auto& p : parts) {
    const int offset = static_cast<int>(out.vertices.size());
    out.vertices.insert(out.vertices.end(), p.vertices.begin(), p.vertices.end());
    if (all_normals) out.normals.insert(out.normals.end(), p.normals.begin(), p.normals.end());
    for (const auto& f : p.faces) out.faces.push_back({f[0] + offset, f[1] + offset, f[2] + offset});
  }
  return out;
}

// Ericson, Real-Time Collision Detection, 5.1.5.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  }
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

double distance_to_surface(const TriMesh& mesh, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& f : mesh.faces) {
    const Vec3 q = closest_point_on_triangle(p, mesh.vertices[f[0]], mesh.vertices[f[1]],
                                             mesh.vertices[f[2]]);
    best = std::min(best, (q - p).squaredNorm());
  }
  return std::sqrt(best);
}

namespace {
int parse_obj_index(std::string_view token, int count) {
  const auto slash = token.find('/');
  const auto head = token.substr(0, slash);
  int idx = 0;
  const auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), idx);
  if (ec != std::errc{} || idx == 0) throw ValidationError("bad OBJ face index '" + std::string(token) + "'");
  return idx > 0 ? idx - 1 : count + idx;
}
}  // namespace

TriMesh read_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  TriMesh mesh;
  std::vector<Vec3> file_normals;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    if (tag == "v") {
      Vec3 v;
      ss >> v.x() >> v.y() >> v.z();
      mesh.vertices.push_back(v);
    } else if (tag == "vn") {
      Vec3 n;
      ss >> n.x() >> n.y() >> n.z();
      file_normals.push_back(n);
    } else if (tag == "f") {
      std::vector<int> poly;
      std::string tok;
      const int count = static_cast<int>(mesh.vertices.size());
      while (ss >> tok) poly.push_back(parse_obj_index(tok, count));
      for (std::size_t i = 1; i + 1 < poly.size(); ++i) mesh.faces.push_back({poly[0], poly[i], poly[i + 1]});
    }
  }
  // Normals are only kept when they pair one-to-one with vertices, which is
  // what write_obj produces.
  if (file_normals.size() == mesh.vertices.size()) {
    for (auto& n : file_normals) n.normalize();
    mesh.normals = std::move(file_normals);
  }
  mesh = remove_degenerate_faces(std::move(mesh));
  validate(mesh);
  return mesh;
}

void write_obj(const std::filesystem::path& path, const TriMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  char buf[128];
  for (const auto& v : mesh.vertices) {
    std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g\n", v.x(), v.y(), v.z());
    out << buf;
  }
  const bool normals = mesh.has_normals();
  if (normals) {
    for (const auto& n : mesh.normals) {
      std::snprintf(buf, sizeof buf, "vn %.17g %.17g %.17g\n", n.x(), n.y(), n.z());
      out << buf;
    }
  }
  for (const auto& f : mesh.faces) {
    if (normals) {
      out << "f " << f[0] + 1 << "//" << f[0] + 1 << ' ' << f[1] + 1 << "//" << f[1] + 1 << ' '
          << f[2] + 1 << "//" << f[2] + 1 << '\n';
    } else {
      out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
    }
  }
}

}  // namespace gears
