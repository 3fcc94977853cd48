#include "gears/primitives.hpp"

#include <array>
#include <cmath>
#include <map>
#include <numbers>

#include "gears/errors.hpp"

namespace gears {

TriMesh make_box(const Vec3& min, const Vec3& max, int n) {
  if (n < 1) throw ValidationError("box subdivisions must be >= 1");
  TriMesh mesh;
  std::map<std::array<int, 3>, int> index;
  auto vertex = [&](std::array<int, 3> lattice) {
    auto [it, inserted] = index.try_emplace(lattice, static_cast<int>(mesh.vertices.size()));
    if (inserted) {
      Vec3 p;
      for (int a = 0; a < 3; ++a) {
        // Exact endpoints so the extents are exactly max - min.
        p[a] = lattice[a] == 0   ? min[a]
               : lattice[a] == n ? max[a]
                                 : min[a] + (max[a] - min[a]) * lattice[a] / n;
      }
      mesh.vertices.push_back(p);
    }
    return it->second;
  };
  for (int axis = 0; axis < 3; ++axis) {
    const int u = (axis + 1) % 3, v = (axis + 2) % 3;
    for (int side : {0, n}) {
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          auto at = [&](int di, int dj) {
            std::array<int, 3> l{};
            l[axis] = side;
            l[u] = i + di;
            l[v] = j + dj;
            return vertex(l);
          };
          const int a = at(0, 0), b = at(1, 0), c = at(1, 1), d = at(0, 1);
          if (side == n) {
            mesh.faces.push_back({a, b, c});
            mesh.faces.push_back({a, c, d});
          } else {
            mesh.faces.push_back({a, c, b});
            mesh.faces.push_back({a, d, c});
          }
        }
      }
    }
  }
  mesh.normals = vertex_normals(mesh);
  return mesh;
}

TriMesh make_icosphere(double radius, int level) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> verts = {
      {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
      {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  std::vector<Face> faces = {
      {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
      {11, 10, 2}, {10, 7, 6}, {7, 1, 8}, {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8},
      {3, 8, 9}, {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};
  for (auto& v : verts) v.normalize();
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto [it, inserted] = mid.try_emplace({key.first, key.second}, static_cast<int>(verts.size()));
      if (inserted) verts.push_back((verts[a] + verts[b]).normalized());
      return it->second;
    };
    std::vector<Face> next;
    next.reserve(faces.size() * 4);
    for (const auto& [a, b, c] : faces) {
      const int ab = midpoint(a, b), bc = midpoint(b, c), ca = midpoint(c, a);
      next.push_back({a, ab, ca});
      next.push_back({b, bc, ab});
      next.push_back({c, ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }
  TriMesh mesh;
  mesh.normals = verts;
  for (auto& v : verts) v *= radius;
  mesh.vertices = std::move(verts);
  mesh.faces = std::move(faces);
  return mesh;
}

namespace {

// Stacks rings of (z, radius) pairs between two poles into a closed surface.
TriMesh revolve(const std::vector<std::pair<double, double>>& rings, double z_bottom, double z_top,
                int segments) {
  TriMesh mesh;
  const int bottom = 0;
  mesh.vertices.push_back({0, 0, z_bottom});
  for (const auto& [z, r] : rings) {
    for (int s = 0; s < segments; ++s) {
      const double phi = 2.0 * std::numbers::pi * s / segments;
      mesh.vertices.push_back({r * std::cos(phi), r * std::sin(phi), z});
    }
  }
  const int top = static_cast<int>(mesh.vertices.size());
  mesh.vertices.push_back({0, 0, z_top});
  auto ring = [&](int i, int s) { return 1 + i * segments + (s % segments); };
  const int nr = static_cast<int>(rings.size());
  for (int s = 0; s < segments; ++s) mesh.faces.push_back({bottom, ring(0, s + 1), ring(0, s)});
  for (int i = 0; i + 1 < nr; ++i) {
    for (int s = 0; s < segments; ++s) {
      mesh.faces.push_back({ring(i, s), ring(i, s + 1), ring(i + 1, s + 1)});
      mesh.faces.push_back({ring(i, s), ring(i + 1, s + 1), ring(i + 1, s)});
    }
  }
  for (int s = 0; s < segments; ++s) mesh.faces.push_back({ring(nr - 1, s), ring(nr - 1, s + 1), top});
  mesh.normals = vertex_normals(mesh);
  return mesh;
}

}  // namespace

TriMesh make_cylinder(double radius, double height, int segments, int stacks) {
  if (segments < 3 || stacks < 1) throw ValidationError("cylinder needs >= 3 segments and >= 1 stack");
  std::vector<std::pair<double, double>> rings;
  const double h = height / 2.0;
  // Cap rings at half radius keep the cap triangles well shaped.
  rings.emplace_back(-h, radius / 2.0);
  for (int i = 0; i <= stacks; ++i) rings.emplace_back(-h + height * i / stacks, radius);
  rings.emplace_back(h, radius / 2.0);
  return revolve(rings, -h, h, segments);
}

TriMesh make_capsule(double radius, double length, int segments, int cap_rings) {
  if (segments < 3 || cap_rings < 1) throw ValidationError("capsule needs >= 3 segments and >= 1 cap ring");
  std::vector<std::pair<double, double>> rings;
  const double h = length / 2.0;
  for (int i = 1; i <= cap_rings; ++i) {
    const double a = std::numbers::pi / 2.0 * i / cap_rings;  // from the pole
    rings.emplace_back(-h - radius * std::cos(a), radius * std::sin(a));
  }
  for (int i = cap_rings; i >= 1; --i) {
    const double a = std::numbers::pi / 2.0 * i / cap_rings;
    rings.emplace_back(h + radius * std::cos(a), radius * std::sin(a));
  }
  return revolve(rings, -h - radius, h + radius, segments);
}

}  // namespace gears
