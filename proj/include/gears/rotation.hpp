#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace gears {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

/// Rigid transform x -> rotation * x + translation.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
  Vec3 apply_inverse(const Vec3& x) const { return rotation.transpose() * (x - translation); }
  RigidTransform inverse() const {
    return {rotation.transpose(), -(rotation.transpose() * translation)};
  }
  RigidTransform operator*(const RigidTransform& rhs) const {
    return {rotation * rhs.rotation, rotation * rhs.translation + translation};
  }
};

Mat3 skew(const Vec3& v);

/// Rodrigues' formula.
Mat3 exp_so3(const Vec3& axis_angle);

/// Inverse of exp_so3; returned angle lies in [0, pi].
Vec3 log_so3(const Mat3& rotation);

/// Right Jacobian of the exponential map: exp(w + dw) ~= exp(w) exp(Jr(w) dw).
Mat3 right_jacobian_so3(const Vec3& axis_angle);

/// Rotation of smallest angle taking direction `from` onto direction `to`.
Mat3 minimal_rotation(const Vec3& from, const Vec3& to);

Mat3 rot_x(double radians);
Mat3 rot_y(double radians);
Mat3 rot_z(double radians);

/// ||R^T R - I||_F.
double orthonormality_error(const Mat3& r);

bool is_rotation(const Mat3& r, double tol = 1e-6);

/// Nearest rotation in the Frobenius sense (polar decomposition).
Mat3 nearest_rotation(const Mat3& m);

/// Geodesic angle between two rotations, radians.
double rotation_angle_between(const Mat3& a, const Mat3& b);

}  // namespace gears
