#pragma once

// Object-side inputs of the networks: posed and cropped object meshes, the
// wrist-attached cube sensor, trajectory windows, and the joint-local sphere
// sensor that expresses nearby surface points in each joint's template frame.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "gears/hand.hpp"
#include "gears/mesh.hpp"

namespace gears {

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Per-frame rigid poses sampled at `fps`.
struct RigidTrajectory {
  std::vector<Mat3> rotation;
  std::vector<Vec3> translation;
  double fps = 30.0;

  std::size_t frames() const { return rotation.size(); }
  RigidTransform at(std::size_t t) const { return {rotation.at(t), translation.at(t)}; }
  void push_back(const Mat3& r, const Vec3& t) {
    rotation.push_back(r);
    translation.push_back(t);
  }
  /// Throws ValidationError unless sizes agree, frames >= 1 and rotations are in SO(3).
  void validate() const;
};

/// Object pose per frame: vertices map as R_O v + o.
struct ObjectTrajectory : RigidTrajectory {};
/// Wrist position and hand orientation per frame.
struct HandTrajectory : RigidTrajectory {};

struct CubeSensor {
  double side = 0.18;
};

TriMesh posed_mesh(const TriMesh& object, const ObjectTrajectory& traj, std::size_t t);

/// Keeps vertices inside the cube centred at the wrist with axes `rot`, and the
/// faces whose three vertices survive. Vertex order is preserved.
TriMesh crop_with_cube(const TriMesh& mesh, const CubeSensor& sensor, const Vec3& wrist, const Mat3& rot);

/// Area-weighted uniform surface samples with flat face normals.
PointCloud sample_surface(const TriMesh& mesh, std::size_t n, std::uint64_t seed);

/// rot^T (p - wrist) per point; normals rotated by rot^T.
PointCloud canonicalize_to_wrist(const PointCloud& cloud, const Vec3& wrist, const Mat3& rot);

/// 2k + 1 wrist poses around frame t expressed relative to frame t.
struct TrajectoryWindow {
  std::vector<Vec3> wrist;
  std::vector<Mat3> rotation;

  /// 12 values per entry: position, then the rotation matrix row-major.
  std::vector<double> flatten() const;
};

/// Frames at offsets i * window_s * fps / k for i in [-k, k], rounded to the
/// nearest frame and clamped to the sequence.
TrajectoryWindow sample_trajectory_window(const HandTrajectory& traj, std::size_t t, int k, double window_s);

/// Uniform hash grid for fixed-radius queries.
class HashGrid {
 public:
  HashGrid(std::span<const Vec3> points, double cell);

  /// Indices of points with |p - centre| < radius, ascending. radius <= cell.
  std::vector<int> within(const Vec3& centre, double radius) const;

 private:
  struct KeyHash {
    std::size_t operator()(const std::array<std::int64_t, 3>& k) const noexcept;
  };
  std::array<std::int64_t, 3> key(const Vec3& p) const;

  std::vector<Vec3> points_;
  double cell_;
  std::unordered_map<std::array<std::int64_t, 3>, std::vector<int>, KeyHash> cells_;
};

/// Surface points and normals near each joint, in that joint's template frame.
struct JointSensorSample {
  std::array<std::vector<Vec3>, hand::kNumJoints> points;
  std::array<std::vector<Vec3>, hand::kNumJoints> normals;

  std::size_t count(int joint) const { return points[joint].size(); }
  std::size_t total() const;
};

/// Sphere sensor over a sampled object surface. Build once per frame, query
/// any number of joint sets.
class JointSensor {
 public:
  JointSensor(PointCloud surface, double radius);

  double radius() const { return radius_; }
  const PointCloud& surface() const { return surface_; }

  /// Surface indices within the radius of `centre`, ascending.
  std::vector<int> neighbours(const Vec3& centre) const;

  /// Gathers up to max_points per joint (seeded random subset when more are in
  /// range), then maps p -> R_k^T (p - j_k) and n -> R_k^T n.
  JointSensorSample query(const hand::JointSet& joints, const hand::TemplateFrames& frames,
                          std::size_t max_points, std::uint64_t seed) const;

 private:
  PointCloud surface_;
  double radius_;
  std::optional<HashGrid> grid_;
};

JointSensorSample joint_radius_query(const PointCloud& surface, const hand::JointSet& joints,
                                     const hand::TemplateFrames& frames, double radius,
                                     std::size_t max_points, std::uint64_t seed);

}  // namespace gears
