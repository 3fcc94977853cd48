#pragma once

#include "gears/mesh.hpp"

namespace gears {

/// Axis-aligned box with `subdivisions` segments per edge. Watertight,
/// outward-facing triangles.
TriMesh make_box(const Vec3& min, const Vec3& max, int subdivisions = 1);

/// Icosahedron subdivided `level` times and projected onto the sphere.
TriMesh make_icosphere(double radius, int level);

/// Closed cylinder along z, centred at the origin.
TriMesh make_cylinder(double radius, double height, int segments, int stacks);

/// Capsule along z: cylinder of `length` between two hemispherical caps.
TriMesh make_capsule(double radius, double length, int segments, int cap_rings);

}  // namespace gears
