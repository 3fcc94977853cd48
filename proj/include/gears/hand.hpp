#pragma once

// Simplified right-hand model: a 21-joint skeleton, bone-group shape
// coefficients, axis-angle joint rotations and a capsule surface.
//
// Joint order: wrist, then thumb, index, middle, ring, pinky chains, each
// listed root to tip. Bone b connects joint b + 1 to its parent.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "gears/mesh.hpp"
#include "gears/rotation.hpp"

namespace gears::hand {

inline constexpr int kNumJoints = 21;
inline constexpr int kNumBones = 20;
inline constexpr int kNumFingers = 5;
inline constexpr int kNumArticulated = 15;
inline constexpr int kNumShape = 10;
inline constexpr double kMinBoneLength = 1e-3;

using JointSet = std::array<Vec3, kNumJoints>;

/// Joint index of the i-th articulated (non-tip, non-wrist) joint.
constexpr int articulated_joint(int i) { return 1 + 4 * (i / 3) + i % 3; }
/// Articulated slot of a joint, or -1 for the wrist and the fingertips.
constexpr int articulated_slot(int joint) {
  if (joint <= 0 || joint % 4 == 0) return -1;
  return 3 * ((joint - 1) / 4) + (joint - 1) % 4;
}
constexpr int finger_root(int finger) { return 1 + 4 * finger; }
constexpr int fingertip(int finger) { return 4 + 4 * finger; }
constexpr bool is_tip(int joint) { return joint > 0 && joint % 4 == 0; }

struct PalmBox {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();
};

struct Skeleton {
  JointSet rest_joints{};
  std::array<int, kNumJoints> parent{};
  std::array<double, kNumBones> capsule_radius{};
  std::array<int, kNumBones> shape_group{};
  PalmBox palm;

  /// Throws ValidationError when an invariant is violated.
  void validate() const;

  Vec3 rest_bone(int joint) const { return rest_joints[joint] - rest_joints[parent[joint]]; }

  static Skeleton from_json(const nlohmann::json& j);
  static Skeleton load(const std::filesystem::path& path);
  /// The hand template shipped with the library (data/hand_template.json).
  static const Skeleton& standard();
};

nlohmann::json to_json(const Skeleton& s);

struct HandShape {
  std::array<double, kNumShape> beta{};

  /// Length multiplier of bone-group `group`: clamp(1 + 0.1 beta, 0.5, 1.5).
  double group_scale(int group) const;
};

struct HandPose {
  std::array<Vec3, kNumArticulated> theta{};
  Mat3 global_rot = Mat3::Identity();
  Vec3 wrist_pos = Vec3::Zero();

  HandPose() { theta.fill(Vec3::Zero()); }
  void validate() const;
};

/// Per-joint rigid frames mapping the joint's template frame into the global
/// frame. `relative[k]` is the rotation of joint k relative to its parent
/// (global_rot for the root); `rotation[k]` is the accumulated product along
/// the chain and `origin[k]` the joint position.
struct TemplateFrames {
  std::array<Mat3, kNumJoints> relative;
  std::array<Mat3, kNumJoints> rotation;
  JointSet origin;

  RigidTransform frame(int joint) const { return {rotation[joint], origin[joint]}; }
};

JointSet forward_kinematics(const HandShape& shape, const HandPose& pose,
                            const Skeleton& skel = Skeleton::standard());

/// FK that also returns the per-joint frames of the posed skeleton.
TemplateFrames posed_frames(const HandShape& shape, const HandPose& pose,
                            const Skeleton& skel = Skeleton::standard());

enum class DegenerateBonePolicy { Throw, UseParentRotation };

/// Recovers per-joint rotations from joint positions. Each articulated joint
/// gets the smallest rotation aligning its rest child bone with the observed
/// one (zero twist); tips inherit their parent's rotation.
TemplateFrames inverse_kinematics(const JointSet& joints, const Mat3& global_rot,
                                  DegenerateBonePolicy policy = DegenerateBonePolicy::Throw,
                                  const Skeleton& skel = Skeleton::standard());

/// Rebuilds joints by chaining shape-scaled rest bones through `frames`.
JointSet repose(const TemplateFrames& frames, const HandShape& shape,
                const Skeleton& skel = Skeleton::standard());

/// Converts recovered frames back to pose parameters.
HandPose pose_from_frames(const TemplateFrames& frames);

/// Capsule-per-bone surface plus a palm slab. Vertex order depends only on the
/// skeleton topology.
TriMesh hand_surface_mesh(const HandShape& shape, const HandPose& pose,
                          const Skeleton& skel = Skeleton::standard());

/// Number of vertices produced by hand_surface_mesh.
std::size_t hand_vertex_count();

/// Fixed sparse linear map from hand_surface_mesh vertices to joints.
JointSet joint_regressor(std::span<const Vec3> vertices);

/// Bone lengths (index b = bone ending at joint b + 1).
std::array<double, kNumBones> bone_lengths(const JointSet& joints,
                                           const Skeleton& skel = Skeleton::standard());

/// Unit palm normal (pointing out of the palm side) for a hand orientation.
Vec3 palm_normal(const Mat3& global_rot);
/// Centre of the palm-side face of the palm slab, in the rest frame.
Vec3 palm_center_local(const Skeleton& skel = Skeleton::standard());

JointSet transform_joints(const JointSet& joints, const RigidTransform& tf);

}  // namespace gears::hand
