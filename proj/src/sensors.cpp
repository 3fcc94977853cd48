#include "gears/sensors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gears/errors.hpp"
#include "gears/random.hpp"

namespace gears {

void RigidTrajectory::validate() const {
  if (rotation.size() != translation.size()) throw ValidationError("trajectory arrays differ in length");
  if (rotation.empty()) throw ValidationError("trajectory has no frames");
  if (!(fps > 0.0)) throw ValidationError("trajectory fps must be positive");
  for (std::size_t t = 0; t < rotation.size(); ++t) {
    if (!is_rotation(rotation[t])) throw ValidationError("trajectory rotation " + std::to_string(t) + " is not in SO(3)");
    if (!translation[t].allFinite()) throw ValidationError("trajectory translation is not finite");
  }
}

TriMesh posed_mesh(const TriMesh& object, const ObjectTrajectory& traj, std::size_t t) {
  if (t >= traj.frames()) throw FrameOutOfRange(t, traj.frames());
  return transformed(object, traj.at(t));
}

TriMesh crop_with_cube(const TriMesh& mesh, const CubeSensor& sensor, const Vec3& wrist, const Mat3& rot) {
  const double half = sensor.side / 2.0;
  std::vector<int> remap(mesh.vertices.size(), -1);
  TriMesh out;
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3 local = rot.transpose() * (mesh.vertices[i] - wrist);
    if (local.cwiseAbs().maxCoeff() <= half) {
      remap[i] = static_cast<int>(out.vertices.size());
      out.vertices.push_back(mesh.vertices[i]);
      if (mesh.has_normals()) out.normals.push_back(mesh.normals[i]);
    }
  }
  for (const auto& f : mesh.faces) {
    if (remap[f[0]] >= 0 && remap[f[1]] >= 0 && remap[f[2]] >= 0) {
      out.faces.push_back({remap[f[0]], remap[f[1]], remap[f[2]]});
    }
  }
  return out;
}

PointCloud sample_surface(const TriMesh& mesh, std::size_t n, std::uint64_t seed) {
  std::vector<double> cdf(mesh.faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    total += face_area(mesh, f);
    cdf[f] = total;
  }
  if (mesh.faces.empty() || !(total > 0.0)) throw EmptyMesh();

  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PointCloud cloud;
  cloud.points.reserve(n);
  cloud.normals.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double pick = unit(rng) * total;
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), pick);
    const std::size_t f = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
    const double su = std::sqrt(unit(rng));
    const double v = unit(rng);
    const auto& [a, b, c] = mesh.faces[f];
    cloud.points.push_back((1.0 - su) * mesh.vertices[a] + su * (1.0 - v) * mesh.vertices[b] +
                           su * v * mesh.vertices[c]);
    cloud.normals.push_back(face_normal(mesh, f));
  }
  return cloud;
}

PointCloud canonicalize_to_wrist(const PointCloud& cloud, const Vec3& wrist, const Mat3& rot) {
  PointCloud out;
  out.points.reserve(cloud.size());
  out.normals.reserve(cloud.normals.size());
  const Mat3 rt = rot.transpose();
  for (const auto& p : cloud.points) out.points.push_back(rt * (p - wrist));
  for (const auto& n : cloud.normals) out.normals.push_back(rt * n);
  return out;
}

std::vector<double> TrajectoryWindow::flatten() const {
  std::vector<double> out;
  out.reserve(wrist.size() * 12);
  for (std::size_t i = 0; i < wrist.size(); ++i) {
    out.insert(out.end(), {wrist[i].x(), wrist[i].y(), wrist[i].z()});
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) out.push_back(rotation[i](r, c));
    }
  }
  return out;
}

TrajectoryWindow sample_trajectory_window(const HandTrajectory& traj, std::size_t t, int k, double window_s) {
  if (k < 1) throw ValidationError("trajectory window needs k >= 1");
  if (t >= traj.frames()) throw FrameOutOfRange(t, traj.frames());
  const double step = window_s * traj.fps / k;
  const auto last = static_cast<long>(traj.frames()) - 1;
  const Mat3 rt = traj.rotation[t].transpose();
  TrajectoryWindow w;
  for (int i = -k; i <= k; ++i) {
    const long s = std::clamp(std::lround(static_cast<double>(t) + i * step), 0L, last);
    w.wrist.push_back(rt * (traj.translation[s] - traj.translation[t]));
    w.rotation.push_back(rt * traj.rotation[s]);
  }
  return w;
}

std::size_t HashGrid::KeyHash::operator()(const std::array<std::int64_t, 3>& k) const noexcept {
  std::uint64_t h = static_cast<std::uint64_t>(k[0]) * 73856093ull;
  h ^= static_cast<std::uint64_t>(k[1]) * 19349663ull;
  h ^= static_cast<std::uint64_t>(k[2]) * 83492791ull;
  return static_cast<std::size_t>(h);
}

HashGrid::HashGrid(std::span<const Vec3> points, double cell)
    : points_(points.begin(), points.end()), cell_(cell) {
  if (!(cell > 0.0)) throw ValidationError("hash grid cell size must be positive");
  for (std::size_t i = 0; i < points_.size(); ++i) cells_[key(points_[i])].push_back(static_cast<int>(i));
}

std::array<std::int64_t, 3> HashGrid::key(const Vec3& p) const {
  return {static_cast<std::int64_t>(std::floor(p.x() / cell_)),
          static_cast<std::int64_t>(std::floor(p.y() / cell_)),
          static_cast<std::int64_t>(std::floor(p.z() / cell_))};
}

std::vector<int> HashGrid::within(const Vec3& centre, double radius) const {
  std::vector<int> out;
  const auto lo = key(centre - Vec3::Constant(radius));
  const auto hi = key(centre + Vec3::Constant(radius));
  const double r2 = radius * radius;
  for (auto x = lo[0]; x <= hi[0]; ++x) {
    for (auto y = lo[1]; y <= hi[1]; ++y) {
      for (auto z = lo[2]; z <= hi[2]; ++z) {
        const auto it = cells_.find({x, y, z});
        if (it == cells_.end()) continue;
        for (int i : it->second) {
          if ((points_[i] - centre).squaredNorm() < r2) out.push_back(i);
        }
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t JointSensorSample::total() const {
  std::size_t n = 0;
  for (const auto& p : points) n += p.size();
  return n;
}

JointSensor::JointSensor(PointCloud surface, double radius) : surface_(std::move(surface)), radius_(radius) {
  if (radius < 0.0) throw ValidationError("sensor radius must be non-negative");
  if (radius > 0.0 && !surface_.empty()) grid_.emplace(surface_.points, radius);
}

std::vector<int> JointSensor::neighbours(const Vec3& centre) const {
  if (!grid_) return {};
  return grid_->within(centre, radius_);
}

JointSensorSample JointSensor::query(const hand::JointSet& joints, const hand::TemplateFrames& frames,
                                     std::size_t max_points, std::uint64_t seed) const {
  JointSensorSample out;
  for (int k = 0; k < hand::kNumJoints; ++k) {
    std::vector<int> idx = neighbours(joints[k]);
    if (idx.size() > max_points) {
      // Partial Fisher-Yates over the sorted candidate list, re-sorted so the
      // selection depends only on the seed and the candidate set.
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
      for (std::size_t i = 0; i < max_points; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
        std::swap(idx[i], idx[pick(rng)]);
      }
      idx.resize(max_points);
      std::sort(idx.begin(), idx.end());
    }
    const Mat3 rt = frames.rotation[k].transpose();
    out.points[k].reserve(idx.size());
    out.normals[k].reserve(idx.size());
    for (int i : idx) {
      out.points[k].push_back(rt * (surface_.points[i] - joints[k]));
      out.normals[k].push_back(rt * surface_.normals[i]);
    }
  }
  return out;
}

JointSensorSample joint_radius_query(const PointCloud& surface, const hand::JointSet& joints,
                                     const hand::TemplateFrames& frames, double radius,
                                     std::size_t max_points, std::uint64_t seed) {
  return JointSensor(surface, radius).query(joints, frames, max_points, seed);
}

}  // namespace gears
