#include "gears/rotation.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

namespace gears {

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return s;
}

Mat3 exp_so3(const Vec3& w) {
  const double angle = w.norm();
  const Mat3 k = skew(w);
  if (angle < 1e-8) {
    return Mat3::Identity() + k + 0.5 * k * k;
  }
  const double a = std::sin(angle) / angle;
  const double b = (1.0 - std::cos(angle)) / (angle * angle);
  return Mat3::Identity() + a * k + b * k * k;
}

Vec3 log_so3(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

Mat3 right_jacobian_so3(const Vec3& w) {
  const double angle = w.norm();
  const Mat3 k = skew(w);
  if (angle < 1e-6) {
    return Mat3::Identity() - 0.5 * k + (1.0 / 6.0) * k * k;
  }
  const double a2 = angle * angle;
  const double c1 = (1.0 - std::cos(angle)) / a2;
  const double c2 = (angle - std::sin(angle)) / (a2 * angle);
  return Mat3::Identity() - c1 * k + c2 * k * k;
}

Mat3 minimal_rotation(const Vec3& from, const Vec3& to) {
  return Quat::FromTwoVectors(from, to).toRotationMatrix();
}

Mat3 rot_x(double t) { return Eigen::AngleAxisd(t, Vec3::UnitX()).toRotationMatrix(); }
Mat3 rot_y(double t) { return Eigen::AngleAxisd(t, Vec3::UnitY()).toRotationMatrix(); }
Mat3 rot_z(double t) { return Eigen::AngleAxisd(t, Vec3::UnitZ()).toRotationMatrix(); }

double orthonormality_error(const Mat3& r) {
  return (r.transpose() * r - Mat3::Identity()).norm();
}

bool is_rotation(const Mat3& r, double tol) {
  return r.allFinite() && orthonormality_error(r) < tol && std::abs(r.determinant() - 1.0) < tol;
}

Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return u * v.transpose();
}

double rotation_angle_between(const Mat3& a, const Mat3& b) {
  // Quaternion form stays accurate for tiny angles, unlike acos of the trace.
  const Quat qa(a), qb(b);
  return qa.angularDistance(qb);
}

}  // namespace gears
