#include "doctest.h"

#include "gears/errors.hpp"
#include "gears/hand.hpp"
#include "gears/mesh.hpp"
#include "support.hpp"

using namespace gears;
using namespace gears::hand;
using gears::testing::max_joint_error;

TEST_CASE("skeleton asset satisfies its invariants") {
  const Skeleton& s = Skeleton::standard();
  CHECK_NOTHROW(s.validate());
  int roots = 0;
  for (int k = 0; k < kNumJoints; ++k) {
    if (s.parent[k] < 0) {
      ++roots;
    } else {
      CHECK(s.parent[k] < k);
      CHECK(s.rest_bone(k).norm() > kMinBoneLength);
    }
  }
  CHECK(roots == 1);
}

TEST_CASE("skeleton JSON round trip") {
  const Skeleton& s = Skeleton::standard();
  const Skeleton t = Skeleton::from_json(to_json(s));
  for (int k = 0; k < kNumJoints; ++k) {
    CHECK(t.rest_joints[k] == s.rest_joints[k]);
    CHECK(t.parent[k] == s.parent[k]);
  }
}

TEST_CASE("rest pose FK returns the rest joints") {
  const JointSet j = forward_kinematics(HandShape{}, HandPose{});
  for (int k = 0; k < kNumJoints; ++k) CHECK((j[k] - Skeleton::standard().rest_joints[k]).norm() == 0.0);
}

TEST_CASE("FK with a global 90 degree turn rotates every rest joint") {
  HandPose p;
  p.global_rot = rot_z(std::numbers::pi / 2);
  const JointSet j = forward_kinematics(HandShape{}, p);
  for (int k = 0; k < kNumJoints; ++k) {
    const Vec3 r = Skeleton::standard().rest_joints[k];
    CHECK((j[k] - Vec3(-r.y(), r.x(), r.z())).norm() < 1e-12);
  }
}

TEST_CASE("index finger group scale changes only index bones") {
  HandShape s;
  // index finger bones 4..7 are split over groups 2 and 3
  s.beta[2] = 2.0;
  s.beta[3] = 2.0;
  const auto rest = bone_lengths(forward_kinematics(HandShape{}, HandPose{}));
  const auto scaled = bone_lengths(forward_kinematics(s, HandPose{}));
  for (int b = 0; b < kNumBones; ++b) {
    const double expected = (b >= 4 && b < 8) ? 1.2 : 1.0;
    CHECK(scaled[b] / rest[b] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("shape coefficients scale exactly their own bone group") {
  Rng rng(3);
  const HandShape base = testing::random_shape(rng, 1.0);
  const auto l0 = bone_lengths(forward_kinematics(base, HandPose{}));
  for (int g = 0; g < kNumShape; ++g) {
    HandShape s = base;
    s.beta[g] += 0.5;
    const auto l1 = bone_lengths(forward_kinematics(s, HandPose{}));
    for (int b = 0; b < kNumBones; ++b) {
      if (Skeleton::standard().shape_group[b] == g) {
        CHECK(l1[b] > l0[b]);
      } else {
        CHECK(l1[b] == doctest::Approx(l0[b]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("shape scale is clamped") {
  HandShape s;
  s.beta[0] = 100.0;
  s.beta[1] = -100.0;
  CHECK(s.group_scale(0) == 1.5);
  CHECK(s.group_scale(1) == 0.5);
}

TEST_CASE("FK is rigidly equivariant") {
  Rng rng(11);
  for (int i = 0; i < 50; ++i) {
    const HandShape s = testing::random_shape(rng);
    HandPose p = testing::random_pose(rng);
    const RigidTransform tf{testing::random_rotation(rng), testing::random_vec(rng)};
    const JointSet a = transform_joints(forward_kinematics(s, p), tf);
    p.global_rot = tf.rotation * p.global_rot;
    p.wrist_pos = tf.apply(p.wrist_pos);
    CHECK(max_joint_error(a, forward_kinematics(s, p)) < 1e-9);
  }
}

TEST_CASE("template frames compose with rest bones to reproduce children") {
  Rng rng(5);
  const HandShape s = testing::random_shape(rng);
  const HandPose p = testing::random_pose(rng);
  const TemplateFrames f = posed_frames(s, p);
  CHECK((f.rotation[0] - p.global_rot).norm() == 0.0);
  CHECK((f.origin[0] - p.wrist_pos).norm() == 0.0);
  const auto& sk = Skeleton::standard();
  for (int k = 1; k < kNumJoints; ++k) {
    CHECK(is_rotation(f.rotation[k], 1e-9));
    const int pa = sk.parent[k];
    const Vec3 child = f.frame(pa).apply(s.group_scale(sk.shape_group[k - 1]) * sk.rest_bone(k));
    CHECK((child - f.origin[k]).norm() < 1e-6);
  }
}

TEST_CASE("IK on a rest pose gives identity relative rotations") {
  Rng rng(2);
  HandPose p;
  p.global_rot = testing::random_rotation(rng);
  p.wrist_pos = testing::random_vec(rng);
  const TemplateFrames f = inverse_kinematics(forward_kinematics(HandShape{}, p), p.global_rot);
  for (int k = 1; k < kNumJoints; ++k) CHECK((f.relative[k] - Mat3::Identity()).norm() < 1e-9);
}

TEST_CASE("IK round trip reproduces joints") {
  Rng rng(17);
  for (int i = 0; i < 100; ++i) {
    const HandShape s = testing::random_shape(rng);
    const HandPose p = testing::random_pose(rng, 1.2);
    const JointSet j = forward_kinematics(s, p);
    const TemplateFrames f = inverse_kinematics(j, p.global_rot);
    CHECK(max_joint_error(repose(f, s), j) < 1e-6);
    CHECK(max_joint_error(forward_kinematics(s, pose_from_frames(f)), j) < 1e-6);
  }
}

TEST_CASE("IK recovers a single bend orthogonal to the bone exactly") {
  const auto& sk = Skeleton::standard();
  for (int slot = 0; slot < kNumArticulated; ++slot) {
    const int a = articulated_joint(slot);
    const Vec3 bone = sk.rest_bone(a + 1).normalized();
    const Vec3 axis = bone.cross(Vec3::UnitZ()).normalized();
    HandPose p;
    p.theta[slot] = axis * (std::numbers::pi / 6);
    const TemplateFrames f = inverse_kinematics(forward_kinematics(HandShape{}, p), p.global_rot);
    CHECK((f.relative[a] - exp_so3(p.theta[slot])).norm() < 1e-9);
  }
}

TEST_CASE("IK reports coincident joints") {
  JointSet j = forward_kinematics(HandShape{}, HandPose{});
  j[7] = j[6];
  CHECK_THROWS_AS(inverse_kinematics(j, Mat3::Identity()), DegenerateBone);
  const TemplateFrames f = inverse_kinematics(j, Mat3::Identity(), DegenerateBonePolicy::UseParentRotation);
  CHECK((f.rotation[6] - f.rotation[5]).norm() < 1e-12);
}

TEST_CASE("pose validation") {
  HandPose p;
  CHECK_NOTHROW(p.validate());
  p.theta[3] = Vec3(4.0, 0.0, 0.0);
  CHECK_THROWS_AS(p.validate(), ValidationError);
  p = HandPose{};
  p.global_rot(0, 0) = 2.0;
  CHECK_THROWS_AS(p.validate(), ValidationError);
}

TEST_CASE("hand surface mesh") {
  const TriMesh m = hand_surface_mesh(HandShape{}, HandPose{});
  CHECK(m.vertices.size() == hand_vertex_count());
  CHECK(m.vertices.size() > 700);
  CHECK(m.vertices.size() < 1000);
  CHECK(is_watertight(m));
  CHECK_NOTHROW(validate(m));
  const Aabb box = bounds(m);
  const double span = box.max.x() - box.min.x();
  CHECK(span >= 0.18);
  CHECK(span <= 0.22);
}

TEST_CASE("hand mesh is rigidly equivariant and deterministic") {
  Rng rng(8);
  const HandShape s = testing::random_shape(rng);
  HandPose p = testing::random_pose(rng);
  const TriMesh a = hand_surface_mesh(s, p);
  CHECK(a.vertices == hand_surface_mesh(s, p).vertices);
  const RigidTransform tf{testing::random_rotation(rng), testing::random_vec(rng)};
  p.global_rot = tf.rotation * p.global_rot;
  p.wrist_pos = tf.apply(p.wrist_pos);
  const TriMesh b = hand_surface_mesh(s, p);
  double err = 0.0;
  for (std::size_t i = 0; i < a.vertices.size(); ++i) err = std::max(err, (tf.apply(a.vertices[i]) - b.vertices[i]).norm());
  CHECK(err < 1e-9);
  CHECK(a.faces == b.faces);
}

TEST_CASE("joint regressor matches FK") {
  CHECK(max_joint_error(joint_regressor(hand_surface_mesh(HandShape{}, HandPose{}).vertices),
                        Skeleton::standard().rest_joints) < 1e-9);
  Rng rng(21);
  for (int i = 0; i < 20; ++i) {
    const HandShape s = testing::random_shape(rng);
    const HandPose p = testing::random_pose(rng);
    CHECK(max_joint_error(joint_regressor(hand_surface_mesh(s, p).vertices), forward_kinematics(s, p)) < 1e-6);
  }
}

TEST_CASE("joint regressor is linear") {
  Rng rng(4);
  std::vector<Vec3> v1(hand_vertex_count()), v2(hand_vertex_count()), mix(hand_vertex_count());
  for (auto& v : v1) v = testing::random_vec(rng);
  for (auto& v : v2) v = testing::random_vec(rng);
  const double a = 0.7, b = -1.3;
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * v1[i] + b * v2[i];
  const JointSet j1 = joint_regressor(v1), j2 = joint_regressor(v2), jm = joint_regressor(mix);
  for (int k = 0; k < kNumJoints; ++k) CHECK((jm[k] - (a * j1[k] + b * j2[k])).norm() < 1e-12);
  CHECK_THROWS_AS(joint_regressor(std::vector<Vec3>(10)), VertexCountMismatch);
}

TEST_CASE("palm normal points out of the palm side") {
  CHECK((palm_normal(Mat3::Identity()) - Vec3(0, 0, -1)).norm() < 1e-12);
  const Mat3 r = rot_x(0.3);
  CHECK((palm_normal(r) - r * Vec3(0, 0, -1)).norm() < 1e-12);
}
