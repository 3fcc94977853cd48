#pragma once

#include <array>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include "gears/rotation.hpp"

namespace gears {

using Face = std::array<int, 3>;

/// Indexed triangle mesh. Normals are optional and per vertex.
struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::vector<Vec3> normals;

  bool empty() const { return faces.empty(); }
  bool has_normals() const { return !normals.empty() && normals.size() == vertices.size(); }
};

struct Aabb {
  Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void extend(const Vec3& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }
  bool valid() const { return (min.array() <= max.array()).all(); }
  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
  Aabb intersection(const Aabb& o) const { return {min.cwiseMax(o.min), max.cwiseMin(o.max)}; }
};

Aabb bounds(std::span<const Vec3> points);
inline Aabb bounds(const TriMesh& m) { return bounds(m.vertices); }

/// Throws ValidationError on out-of-range indices, non-finite vertices,
/// degenerate faces or non-unit normals.
void validate(const TriMesh& mesh);

/// Drops zero-area faces and faces repeating an index.
TriMesh remove_degenerate_faces(TriMesh mesh, double min_area = 1e-18);

Vec3 face_normal(const TriMesh& mesh, std::size_t face);  // unit
double face_area(const TriMesh& mesh, std::size_t face);
double surface_area(const TriMesh& mesh);

/// Area-weighted unit vertex normals.
std::vector<Vec3> vertex_normals(const TriMesh& mesh);

/// Every undirected edge is used by exactly two faces, once in each direction.
bool is_watertight(const TriMesh& mesh);

/// Number of distinct undirected edges.
std::size_t edge_count(const TriMesh& mesh);

TriMesh transformed(const TriMesh& mesh, const RigidTransform& tf);

/// Concatenates meshes, offsetting indices. Normals kept only if all inputs have them.
TriMesh merge(std::span<const TriMesh> parts);

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Unsigned distance from p to the closest face of the mesh (brute force).
double distance_to_surface(const TriMesh& mesh, const Vec3& p);

/// Wavefront OBJ. Polygons are fan-triangulated on load, degenerate faces removed.
TriMesh read_obj(const std::filesystem::path& path);
void write_obj(const std::filesystem::path& path, const TriMesh& mesh);

}  // namespace gears
