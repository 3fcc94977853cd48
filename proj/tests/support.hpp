#pragma once

// Random generators shared by the unit and acceptance tests.

#include <cmath>
#include <numbers>
#include <random>

#include "gears/hand.hpp"
#include "gears/random.hpp"
#include "gears/record.hpp"
#include "gears/rotation.hpp"

namespace gears::testing {

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline Vec3 random_vec(Rng& rng, double lo = -1.0, double hi = 1.0) {
  return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)};
}

inline Vec3 random_unit(Rng& rng) {
  std::normal_distribution<double> n;
  Vec3 v(n(rng), n(rng), n(rng));
  return v.normalized();
}

inline Mat3 random_rotation(Rng& rng) {
  return exp_so3(random_unit(rng) * uniform(rng, 0.0, std::numbers::pi - 1e-3));
}

/// Random axis-angle per articulated joint with magnitude below max_angle.
inline hand::HandPose random_pose(Rng& rng, double max_angle = 1.2) {
  hand::HandPose p;
  for (auto& t : p.theta) t = random_unit(rng) * uniform(rng, 0.0, max_angle);
  p.global_rot = random_rotation(rng);
  p.wrist_pos = random_vec(rng, -0.5, 0.5);
  return p;
}

inline hand::HandShape random_shape(Rng& rng, double range = 2.0) {
  hand::HandShape s;
  for (auto& b : s.beta) b = uniform(rng, -range, range);
  return s;
}

inline double max_joint_error(const hand::JointSet& a, const hand::JointSet& b) {
  double e = 0.0;
  for (int k = 0; k < hand::kNumJoints; ++k) e = std::max(e, (a[k] - b[k]).norm());
  return e;
}

/// The same scene seen through a rigid change of world frame.
inline SequenceRecord moved_record(const SequenceRecord& r, const RigidTransform& tf) {
  SequenceRecord m = r;
  for (std::size_t t = 0; t < m.frames(); ++t) {
    m.object_traj.rotation[t] = tf.rotation * m.object_traj.rotation[t];
    m.object_traj.translation[t] = tf.apply(m.object_traj.translation[t]);
    m.hand_traj.rotation[t] = tf.rotation * m.hand_traj.rotation[t];
    m.hand_traj.translation[t] = tf.apply(m.hand_traj.translation[t]);
  }
  for (auto* joints : {&m.gt_joints, &m.pred_joints})
    if (*joints)
      for (auto& j : **joints) j = hand::transform_joints(j, tf);
  return m;
}

}  // namespace gears::testing
