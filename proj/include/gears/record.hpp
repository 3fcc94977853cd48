#pragma once

// On-disk sequence format: a JSON document with a little-endian float64
// sidecar (`<name>.bin`) holding the numeric arrays, and the object mesh as
// an OBJ file referenced by a path relative to the JSON file.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gears/hand.hpp"
#include "gears/mesh.hpp"
#include "gears/sensors.hpp"

namespace gears {

inline constexpr int kRecordSchemaVersion = 1;

struct PoseSequence {
  hand::HandShape shape;
  std::vector<std::array<Vec3, hand::kNumArticulated>> theta;  // per frame

  hand::HandPose pose(std::size_t t, const Mat3& global_rot, const Vec3& wrist) const;
};

struct Provenance {
  std::uint64_t seed = 0;
  std::string config_hash;
  /// For derived records: identity() of the record they were computed from.
  std::string source;

  std::string identity() const { return std::to_string(seed) + ":" + config_hash; }
};

struct SequenceRecord {
  int schema_version = kRecordSchemaVersion;
  double fps = 30.0;
  std::string object_mesh_path;
  TriMesh object_mesh;
  ObjectTrajectory object_traj;
  HandTrajectory hand_traj;
  std::optional<std::vector<hand::JointSet>> gt_joints;
  std::optional<PoseSequence> gt_pose;
  std::optional<std::vector<hand::JointSet>> pred_joints;
  std::optional<PoseSequence> fit_pose;
  Provenance provenance;

  std::size_t frames() const { return hand_traj.frames(); }
  /// Throws ValidationError on inconsistent lengths or invalid rotations.
  void validate() const;
};

/// Writes `path` and its sidecar. The mesh is written to object_mesh_path
/// (relative to the record's directory) when `write_mesh` is set.
void write_record(const std::filesystem::path& path, const SequenceRecord& record, bool write_mesh = true);

/// Loads a record and its mesh. Rotations drifting from SO(3) by less than
/// 1e-4 are re-orthonormalized; larger drift is a ValidationError.
SequenceRecord read_record(const std::filesystem::path& path);

/// FNV-1a 64-bit hash of a string, as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

}  // namespace gears
