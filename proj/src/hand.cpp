#include "gears/hand.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "gears/errors.hpp"
#include "gears/hand_template_data.hpp"
#include "gears/primitives.hpp"

namespace gears::hand {

namespace {

constexpr int kRingSegments = 10;
// Per capsule: two poles, a 45-degree cap ring and an equator ring at each end.
constexpr int kCapsuleVertices = 2 + 4 * kRingSegments;
constexpr int kPalmVertices = 8;
// Bone used to anchor the wrist joint in the regressor (wrist -> middle root).
constexpr int kWristAnchorBone = 8;

int capsule_base(int bone) { return bone * kCapsuleVertices; }
int proximal_equator(int bone) { return capsule_base(bone) + 1 + kRingSegments; }
int distal_equator(int bone) { return capsule_base(bone) + 1 + 2 * kRingSegments; }
int distal_pole(int bone) { return capsule_base(bone) + kCapsuleVertices - 1; }

Vec3 vec3_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

// Unit vectors perpendicular to a rest bone, fixed per bone so the capsule
// surface moves rigidly with the parent frame.
std::pair<Vec3, Vec3> rest_ring_basis(const Vec3& axis) {
  Vec3 e1 = axis.cross(Vec3::UnitZ());
  if (e1.norm() < 1e-6) e1 = axis.cross(Vec3::UnitX());
  e1.normalize();
  return {e1, axis.cross(e1)};
}

}  // namespace

void Skeleton::validate() const {
  int roots = 0;
  for (int k = 0; k < kNumJoints; ++k) {
    if (parent[k] < 0) {
      ++roots;
      continue;
    }
    if (parent[k] >= k) throw ValidationError("skeleton parents must precede children");
    if (rest_bone(k).norm() <= kMinBoneLength) throw ValidationError("rest bone shorter than 1 mm");
  }
  if (roots != 1 || parent[0] != -1) throw ValidationError("skeleton must have exactly one root at index 0");
  for (int b = 0; b < kNumBones; ++b) {
    if (capsule_radius[b] <= 0.0) throw ValidationError("capsule radius must be positive");
    if (shape_group[b] < 0 || shape_group[b] >= kNumShape) throw ValidationError("shape group out of range");
    if (is_tip(b + 1) && capsule_radius[b] >= rest_bone(b + 1).norm() * 0.5) {
      throw ValidationError("fingertip capsule radius too large for its bone");
    }
  }
  if (!(palm.min.array() < palm.max.array()).all()) throw ValidationError("palm box is empty");
}

Skeleton Skeleton::from_json(const nlohmann::json& j) {
  Skeleton s;
  const auto& rest = j.at("rest_joints");
  const auto& parent = j.at("parent");
  const auto& radius = j.at("capsule_radius");
  const auto& groups = j.at("shape_groups");
  if (rest.size() != kNumJoints || parent.size() != kNumJoints || radius.size() != kNumBones ||
      groups.size() != kNumBones) {
    throw ValidationError("hand template has wrong array sizes");
  }
  for (int k = 0; k < kNumJoints; ++k) {
    s.rest_joints[k] = vec3_from(rest[k]);
    s.parent[k] = parent[k].get<int>();
  }
  for (int b = 0; b < kNumBones; ++b) {
    s.capsule_radius[b] = radius[b].get<double>();
    s.shape_group[b] = groups[b].get<int>();
  }
  s.palm.min = vec3_from(j.at("palm_box").at("min"));
  s.palm.max = vec3_from(j.at("palm_box").at("max"));
  s.validate();
  return s;
}

Skeleton Skeleton::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return from_json(nlohmann::json::parse(in));
}

const Skeleton& Skeleton::standard() {
  static const Skeleton skel = from_json(nlohmann::json::parse(kHandTemplateJson));
  return skel;
}

nlohmann::json to_json(const Skeleton& s) {
  nlohmann::json j;
  for (const auto& p : s.rest_joints) j["rest_joints"].push_back({p.x(), p.y(), p.z()});
  j["parent"] = s.parent;
  j["capsule_radius"] = s.capsule_radius;
  j["shape_groups"] = s.shape_group;
  j["palm_box"] = {{"min", {s.palm.min.x(), s.palm.min.y(), s.palm.min.z()}},
                   {"max", {s.palm.max.x(), s.palm.max.y(), s.palm.max.z()}}};
  return j;
}

double HandShape::group_scale(int group) const {
  return std::clamp(1.0 + 0.1 * beta[group], 0.5, 1.5);
}

void HandPose::validate() const {
  if (!is_rotation(global_rot)) throw ValidationError("hand global rotation is not in SO(3)");
  if (!wrist_pos.allFinite()) throw ValidationError("wrist position is not finite");
  for (const auto& t : theta) {
    if (!t.allFinite() || t.norm() >= std::numbers::pi) {
      throw ValidationError("joint rotation magnitude must be below pi");
    }
  }
}

TemplateFrames posed_frames(const HandShape& shape, const HandPose& pose, const Skeleton& skel) {
  TemplateFrames f;
  f.relative[0] = pose.global_rot;
  f.rotation[0] = pose.global_rot;
  f.origin[0] = pose.wrist_pos;
  for (int k = 1; k < kNumJoints; ++k) {
    const int p = skel.parent[k];
    const double scale = shape.group_scale(skel.shape_group[k - 1]);
    f.origin[k] = f.origin[p] + f.rotation[p] * (scale * skel.rest_bone(k));
    const int slot = articulated_slot(k);
    f.relative[k] = slot >= 0 ? exp_so3(pose.theta[slot]) : Mat3(Mat3::Identity());
    f.rotation[k] = f.rotation[p] * f.relative[k];
  }
  return f;
}

JointSet forward_kinematics(const HandShape& shape, const HandPose& pose, const Skeleton& skel) {
  return posed_frames(shape, pose, skel).origin;
}

TemplateFrames inverse_kinematics(const JointSet& joints, const Mat3& global_rot,
                                  DegenerateBonePolicy policy, const Skeleton& skel) {
  TemplateFrames f;
  f.origin = joints;
  f.relative[0] = global_rot;
  f.rotation[0] = global_rot;
  for (int k = 1; k < kNumJoints; ++k) {
    const int p = skel.parent[k];
    f.relative[k] = Mat3::Identity();
    if (!is_tip(k)) {
      // Articulated joints in this skeleton have exactly one child, k + 1.
      const Vec3 observed = joints[k + 1] - joints[k];
      if (observed.norm() < kMinBoneLength) {
        if (policy == DegenerateBonePolicy::Throw) throw DegenerateBone(k + 1);
      } else {
        const Vec3 local = f.rotation[p].transpose() * observed;
        f.relative[k] = minimal_rotation(skel.rest_bone(k + 1), local);
      }
    }
    f.rotation[k] = f.rotation[p] * f.relative[k];
  }
  return f;
}

JointSet repose(const TemplateFrames& frames, const HandShape& shape, const Skeleton& skel) {
  JointSet out;
  out[0] = frames.origin[0];
  for (int k = 1; k < kNumJoints; ++k) {
    const int p = skel.parent[k];
    const double scale = shape.group_scale(skel.shape_group[k - 1]);
    out[k] = out[p] + frames.rotation[p] * (scale * skel.rest_bone(k));
  }
  return out;
}

HandPose pose_from_frames(const TemplateFrames& frames) {
  HandPose pose;
  pose.global_rot = frames.relative[0];
  pose.wrist_pos = frames.origin[0];
  for (int a = 0; a < kNumArticulated; ++a) pose.theta[a] = log_so3(frames.relative[articulated_joint(a)]);
  return pose;
}

std::size_t hand_vertex_count() { return kNumBones * kCapsuleVertices + kPalmVertices; }

TriMesh hand_surface_mesh(const HandShape& shape, const HandPose& pose, const Skeleton& skel) {
  const TemplateFrames f = posed_frames(shape, pose, skel);
  TriMesh mesh;
  mesh.vertices.reserve(hand_vertex_count());
  const double c45 = std::cos(std::numbers::pi / 4.0);
  for (int b = 0; b < kNumBones; ++b) {
    const int k = b + 1;
    const int p = skel.parent[k];
    const double r = skel.capsule_radius[b];
    const Vec3 rest_axis = skel.rest_bone(k).normalized();
    const auto [re1, re2] = rest_ring_basis(rest_axis);
    const Mat3& g = f.rotation[p];
    const Vec3 axis = g * rest_axis, e1 = g * re1, e2 = g * re2;
    const Vec3 start = f.origin[p];
    // Fingertip joints sit on the skin, so the distal cap ends at the joint.
    const Vec3 end = is_tip(k) ? Vec3(f.origin[k] - r * axis) : f.origin[k];
    const int base = static_cast<int>(mesh.vertices.size());
    auto ring = [&](const Vec3& centre, double radius) {
      for (int s = 0; s < kRingSegments; ++s) {
        const double phi = 2.0 * std::numbers::pi * s / kRingSegments;
        mesh.vertices.push_back(centre + radius * (std::cos(phi) * e1 + std::sin(phi) * e2));
      }
    };
    mesh.vertices.push_back(start - r * axis);
    ring(start - r * c45 * axis, r * c45);
    ring(start, r);
    ring(end, r);
    ring(end + r * c45 * axis, r * c45);
    mesh.vertices.push_back(end + r * axis);

    auto at = [&](int ring_index, int s) { return base + 1 + ring_index * kRingSegments + s % kRingSegments; };
    const int pole0 = base, pole1 = base + kCapsuleVertices - 1;
    for (int s = 0; s < kRingSegments; ++s) mesh.faces.push_back({pole0, at(0, s + 1), at(0, s)});
    for (int i = 0; i < 3; ++i) {
      for (int s = 0; s < kRingSegments; ++s) {
        mesh.faces.push_back({at(i, s), at(i, s + 1), at(i + 1, s + 1)});
        mesh.faces.push_back({at(i, s), at(i + 1, s + 1), at(i + 1, s)});
      }
    }
    for (int s = 0; s < kRingSegments; ++s) mesh.faces.push_back({at(3, s), at(3, s + 1), pole1});
  }
  const TriMesh palm = transformed(make_box(skel.palm.min, skel.palm.max, 1),
                                   {pose.global_rot, pose.wrist_pos});
  const int offset = static_cast<int>(mesh.vertices.size());
  mesh.vertices.insert(mesh.vertices.end(), palm.vertices.begin(), palm.vertices.end());
  for (const auto& face : palm.faces) mesh.faces.push_back({face[0] + offset, face[1] + offset, face[2] + offset});
  mesh.normals = vertex_normals(mesh);
  return mesh;
}

JointSet joint_regressor(std::span<const Vec3> vertices) {
  if (vertices.size() != hand_vertex_count()) {
    throw VertexCountMismatch("joint regressor expects " + std::to_string(hand_vertex_count()) +
                              " vertices, got " + std::to_string(vertices.size()));
  }
  auto ring_mean = [&](int first) {
    Vec3 sum = Vec3::Zero();
    for (int s = 0; s < kRingSegments; ++s) sum += vertices[first + s];
    return Vec3(sum / kRingSegments);
  };
  JointSet joints;
  joints[0] = ring_mean(proximal_equator(kWristAnchorBone));
  for (int k = 1; k < kNumJoints; ++k) {
    const int bone = k - 1;
    joints[k] = is_tip(k) ? vertices[distal_pole(bone)] : ring_mean(distal_equator(bone));
  }
  return joints;
}

std::array<double, kNumBones> bone_lengths(const JointSet& joints, const Skeleton& skel) {
  std::array<double, kNumBones> out{};
  for (int k = 1; k < kNumJoints; ++k) out[k - 1] = (joints[k] - joints[skel.parent[k]]).norm();
  return out;
}

Vec3 palm_normal(const Mat3& global_rot) { return global_rot * Vec3(0.0, 0.0, -1.0); }

Vec3 palm_center_local(const Skeleton& skel) {
  Vec3 c = 0.5 * (skel.palm.min + skel.palm.max);
  c.z() = skel.palm.min.z();
  return c;
}

JointSet transform_joints(const JointSet& joints, const RigidTransform& tf) {
  JointSet out;
  for (int k = 0; k < kNumJoints; ++k) out[k] = tf.apply(joints[k]);
  return out;
}

}  // namespace gears::hand
