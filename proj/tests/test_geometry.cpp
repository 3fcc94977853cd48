#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <set>

#include "gears/errors.hpp"
#include "gears/mesh.hpp"
#include "gears/primitives.hpp"
#include "gears/sensors.hpp"
#include "support.hpp"

using namespace gears;
namespace gt = gears::testing;

namespace {

ObjectTrajectory single_frame(const Mat3& r, const Vec3& t) {
  ObjectTrajectory tr;
  tr.push_back(r, t);
  return tr;
}

TriMesh single_triangle() {
  TriMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  m.faces = {{0, 1, 2}};
  return m;
}

}  // namespace

// ---- meshes and primitives ----------------------------------------------------

TEST_CASE("primitive meshes are closed with Euler characteristic 2") {
  const std::vector<TriMesh> meshes = {make_box({0, 0, 0}, {0.1, 0.2, 0.3}, 3), make_icosphere(1.0, 3),
                                       make_cylinder(0.05, 0.2, 24, 4), make_capsule(0.03, 0.1, 16, 4)};
  for (const auto& m : meshes) {
    CHECK(is_watertight(m));
    const long euler = static_cast<long>(m.vertices.size()) - static_cast<long>(edge_count(m)) +
                       static_cast<long>(m.faces.size());
    CHECK(euler == 2);
    CHECK_NOTHROW(validate(m));
  }
}

TEST_CASE("icosphere vertices lie on the sphere") {
  const TriMesh m = make_icosphere(1.0, 3);
  for (const auto& v : m.vertices) CHECK(std::abs(v.norm() - 1.0) < 1e-6);
}

TEST_CASE("box extents are exact") {
  const TriMesh m = make_box({-0.01, 0.02, 0.0}, {0.04, 0.05, 0.07}, 2);
  const Aabb b = bounds(m);
  CHECK((b.max - b.min - Vec3(0.05, 0.03, 0.07)).norm() < 1e-15);
}

TEST_CASE("OBJ round trip is exact") {
  const TriMesh m = make_icosphere(0.123456789, 2);
  const auto path = std::filesystem::temp_directory_path() / "gears_obj_roundtrip.obj";
  write_obj(path, m);
  const TriMesh r = read_obj(path);
  CHECK(r.vertices == m.vertices);
  CHECK(r.faces == m.faces);
  std::filesystem::remove(path);
}

TEST_CASE("degenerate faces are removed") {
  TriMesh m = single_triangle();
  m.faces.push_back({0, 1, 1});
  m = remove_degenerate_faces(m);
  CHECK(m.faces.size() == 1);
}

TEST_CASE("closest point distance on a box") {
  const TriMesh box = make_box({0, 0, 0}, {1, 1, 1}, 1);
  CHECK(distance_to_surface(box, {0.5, 0.5, 0.5}) == doctest::Approx(0.5));
  CHECK(distance_to_surface(box, {0.5, 0.5, 3.0}) == doctest::Approx(2.0));
  CHECK(distance_to_surface(box, {2.0, 2.0, 0.5}) == doctest::Approx(std::sqrt(2.0)));
}

// ---- posed meshes and cube crop -------------------------------------------------

TEST_CASE("posed_mesh applies the object pose") {
  const TriMesh cube = make_box({0, 0, 0}, {1, 1, 1}, 1);
  CHECK(posed_mesh(cube, single_frame(Mat3::Identity(), Vec3::Zero()), 0).vertices == cube.vertices);
  const TriMesh shifted = posed_mesh(cube, single_frame(Mat3::Identity(), {1, 0, 0}), 0);
  for (std::size_t i = 0; i < cube.vertices.size(); ++i)
    CHECK((shifted.vertices[i] - cube.vertices[i] - Vec3(1, 0, 0)).norm() == 0.0);
  const Vec3 o(0.2, -0.1, 0.3);
  const TriMesh turned = posed_mesh(cube, single_frame(rot_z(std::numbers::pi / 2), o), 0);
  for (std::size_t i = 0; i < cube.vertices.size(); ++i) {
    if ((cube.vertices[i] - Vec3(1, 0, 0)).norm() == 0.0) CHECK((turned.vertices[i] - (Vec3(0, 1, 0) + o)).norm() < 1e-15);
  }
  CHECK(turned.faces == cube.faces);
  CHECK_THROWS_AS(posed_mesh(cube, single_frame(Mat3::Identity(), Vec3::Zero()), 1), FrameOutOfRange);
}

TEST_CASE("cube crop keeps everything or nothing") {
  const TriMesh s = make_icosphere(0.03, 2);
  const TriMesh in = crop_with_cube(s, CubeSensor{}, Vec3::Zero(), Mat3::Identity());
  CHECK(in.vertices == s.vertices);
  CHECK(in.faces == s.faces);
  const TriMesh out = crop_with_cube(s, CubeSensor{}, Vec3(1, 0, 0), Mat3::Identity());
  CHECK(out.vertices.empty());
  CHECK(out.faces.empty());
}

namespace {

// Brute-force crop: the vertex subset inside the oriented cube, and faces with all corners kept.
std::pair<std::vector<Vec3>, std::vector<std::array<Vec3, 3>>> brute_crop(const TriMesh& m, double side,
                                                                           const Vec3& w, const Mat3& r) {
  std::vector<bool> keep(m.vertices.size());
  std::vector<Vec3> verts;
  for (std::size_t i = 0; i < m.vertices.size(); ++i) {
    const Vec3 local = r.transpose() * (m.vertices[i] - w);
    keep[i] = std::abs(local.x()) <= side / 2 && std::abs(local.y()) <= side / 2 && std::abs(local.z()) <= side / 2;
    if (keep[i]) verts.push_back(m.vertices[i]);
  }
  std::vector<std::array<Vec3, 3>> faces;
  for (const auto& f : m.faces)
    if (keep[f[0]] && keep[f[1]] && keep[f[2]]) faces.push_back({m.vertices[f[0]], m.vertices[f[1]], m.vertices[f[2]]});
  return {verts, faces};
}

}  // namespace

TEST_CASE("cube crop at a unit cube corner matches a brute-force count") {
  const TriMesh cube = make_box({0, 0, 0}, {1, 1, 1}, 40);
  const TriMesh c = crop_with_cube(cube, CubeSensor{0.18}, Vec3(0, 0, 0), Mat3::Identity());
  CHECK(c.vertices.size() == brute_crop(cube, 0.18, Vec3::Zero(), Mat3::Identity()).first.size());
  CHECK(!c.vertices.empty());
}

TEST_CASE("cube crop equals brute force on random scenes and is a sub-mesh") {
  Rng rng(99);
  for (int scene = 0; scene < 50; ++scene) {
    const TriMesh obj = transformed(make_icosphere(gt::uniform(rng, 0.03, 0.2), 3),
                                    {gt::random_rotation(rng), gt::random_vec(rng, -0.05, 0.05)});
    const Vec3 w = gt::random_vec(rng, -0.15, 0.15);
    const Mat3 r = gt::random_rotation(rng);
    const TriMesh c = crop_with_cube(obj, CubeSensor{0.18}, w, r);
    const auto [verts, faces] = brute_crop(obj, 0.18, w, r);
    CHECK(c.vertices == verts);
    REQUIRE(c.faces.size() == faces.size());
    for (std::size_t f = 0; f < faces.size(); ++f)
      for (int i = 0; i < 3; ++i) CHECK(c.vertices[c.faces[f][i]] == faces[f][i]);
  }
}

// ---- sampling and canonicalization -------------------------------------------------

TEST_CASE("samples on a single triangle stay in its plane") {
  const PointCloud pc = sample_surface(single_triangle(), 1000, 1);
  CHECK(pc.size() == 1000);
  for (std::size_t i = 0; i < pc.size(); ++i) {
    const Vec3& p = pc.points[i];
    CHECK(std::abs(p.z()) < 1e-9);
    CHECK(p.x() >= -1e-12);
    CHECK(p.y() >= -1e-12);
    CHECK(p.x() + p.y() <= 1.0 + 1e-12);
    CHECK((pc.normals[i] - Vec3(0, 0, 1)).norm() < 1e-12);
  }
}

TEST_CASE("sampling is area weighted") {
  TriMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {2, 0, 0}, {5, 0, 0}, {2, 1, 0}};
  m.faces = {{0, 1, 2}, {3, 4, 5}};  // areas 0.5 and 1.5
  const PointCloud pc = sample_surface(m, 40000, 7);
  const auto small = std::count_if(pc.points.begin(), pc.points.end(), [](const Vec3& p) { return p.x() <= 1.0; });
  CHECK(static_cast<double>(small) / 40000.0 == doctest::Approx(0.25).epsilon(0.02));
}

TEST_CASE("sphere samples have unit mean norm") {
  const PointCloud pc = sample_surface(make_icosphere(1.0, 4), 5000, 3);
  double mean = 0.0;
  for (const auto& p : pc.points) mean += p.norm();
  mean /= static_cast<double>(pc.size());
  CHECK(mean >= 0.99);
  CHECK(mean <= 1.01);
}

TEST_CASE("sampling is deterministic and rejects empty meshes") {
  const TriMesh s = make_icosphere(0.1, 2);
  CHECK(sample_surface(s, 100, 5).points == sample_surface(s, 100, 5).points);
  CHECK(sample_surface(s, 100, 5).points != sample_surface(s, 100, 6).points);
  CHECK_THROWS_AS(sample_surface(TriMesh{}, 10, 1), EmptyMesh);
}

TEST_CASE("canonicalize_to_wrist") {
  PointCloud pc;
  pc.points = {{1, 0, 0}, {0.3, 0.2, 0.1}};
  pc.normals = {{1, 0, 0}, {0, 1, 0}};
  const PointCloud same = canonicalize_to_wrist(pc, Vec3::Zero(), Mat3::Identity());
  CHECK(same.points == pc.points);
  const PointCloud at_wrist = canonicalize_to_wrist(pc, pc.points[1], Mat3::Identity());
  CHECK(at_wrist.points[1].norm() == 0.0);
  const PointCloud turned = canonicalize_to_wrist(pc, Vec3::Zero(), rot_z(std::numbers::pi / 2));
  CHECK((turned.points[0] - Vec3(0, -1, 0)).norm() < 1e-15);
  CHECK((turned.normals[0] - Vec3(0, -1, 0)).norm() < 1e-15);
}

// ---- trajectory windows ---------------------------------------------------------------

TEST_CASE("trajectory window of a constant trajectory is trivial") {
  HandTrajectory tr;
  for (int t = 0; t < 30; ++t) tr.push_back(rot_x(0.4), Vec3(0.1, 0.2, 0.3));
  const TrajectoryWindow w = sample_trajectory_window(tr, 12, 10, 1.0);
  REQUIRE(w.wrist.size() == 21);
  for (std::size_t i = 0; i < w.wrist.size(); ++i) {
    CHECK(w.wrist[i].norm() < 1e-15);
    CHECK((w.rotation[i] - Mat3::Identity()).norm() < 1e-12);
  }
  CHECK(w.flatten().size() == 21 * 12);
}

TEST_CASE("trajectory window centre is the identity and linear motion is recovered") {
  HandTrajectory tr;
  for (int t = 0; t < 10; ++t) tr.push_back(Mat3::Identity(), Vec3(0.01 * t, 0, 0));
  const TrajectoryWindow w = sample_trajectory_window(tr, 5, 1, 1.0 / tr.fps);
  REQUIRE(w.wrist.size() == 3);
  CHECK((w.wrist[0] - Vec3(-0.01, 0, 0)).norm() < 1e-15);
  CHECK(w.wrist[1].norm() == 0.0);
  CHECK((w.wrist[2] - Vec3(0.01, 0, 0)).norm() < 1e-15);

  Rng rng(1);
  HandTrajectory rnd;
  for (int t = 0; t < 40; ++t) rnd.push_back(gt::random_rotation(rng), gt::random_vec(rng));
  for (std::size_t t : {0u, 17u, 39u}) {
    const TrajectoryWindow c = sample_trajectory_window(rnd, t, 10, 1.0);
    CHECK(c.wrist[10].norm() == 0.0);
    CHECK((c.rotation[10] - Mat3::Identity()).norm() < 1e-12);
  }
}

TEST_CASE("trajectory window clamps at sequence ends") {
  HandTrajectory tr;
  for (int t = 0; t < 5; ++t) tr.push_back(Mat3::Identity(), Vec3(t, 0, 0));
  const TrajectoryWindow w = sample_trajectory_window(tr, 0, 10, 1.0);
  CHECK(w.wrist.front().norm() == 0.0);
  CHECK((w.wrist.back() - Vec3(4, 0, 0)).norm() == 0.0);
}

// ---- joint sensor -----------------------------------------------------------------------

namespace {

hand::TemplateFrames identity_frames(const hand::JointSet& joints) {
  hand::TemplateFrames f;
  f.origin = joints;
  f.relative.fill(Mat3::Identity());
  f.rotation.fill(Mat3::Identity());
  return f;
}

}  // namespace

TEST_CASE("joint sensor: far joints see nothing, near points map to the template frame") {
  PointCloud pc;
  hand::JointSet j;
  j.fill(Vec3(5, 5, 5));
  j[3] = Vec3(0.1, 0.2, 0.3);
  pc.points = {j[3] + Vec3(0.0125, 0, 0)};
  pc.normals = {Vec3(0, 0, 1)};
  const JointSensorSample s = joint_radius_query(pc, j, identity_frames(j), 0.025, 300, 1);
  for (int k = 0; k < hand::kNumJoints; ++k) CHECK(s.count(k) == (k == 3 ? 1u : 0u));
  CHECK((s.points[3][0] - Vec3(0.0125, 0, 0)).norm() < 1e-15);
  CHECK(s.total() == 1);
}

TEST_CASE("hash grid radius query equals brute force") {
  Rng rng(42);
  for (int scene = 0; scene < 50; ++scene) {
    std::vector<Vec3> pts(2000);
    for (auto& p : pts) p = gt::random_vec(rng, -0.1, 0.1);
    const double r = gt::uniform(rng, 0.005, 0.04);
    const HashGrid grid(pts, r);
    for (int q = 0; q < 21; ++q) {
      const Vec3 c = gt::random_vec(rng, -0.12, 0.12);
      std::vector<int> expected;
      for (int i = 0; i < static_cast<int>(pts.size()); ++i)
        if ((pts[i] - c).norm() < r) expected.push_back(i);
      CHECK(grid.within(c, r) == expected);
    }
  }
}

TEST_CASE("joint radius query equals a brute-force scan and subsamples deterministically") {
  Rng rng(7);
  for (int scene = 0; scene < 50; ++scene) {
    const TriMesh obj = transformed(make_icosphere(gt::uniform(rng, 0.02, 0.08), 3), {gt::random_rotation(rng), Vec3::Zero()});
    const PointCloud pc = sample_surface(obj, 3000, rng());
    hand::HandPose pose = gt::random_pose(rng);
    pose.wrist_pos = gt::random_vec(rng, -0.1, 0.1);
    const hand::TemplateFrames f = hand::posed_frames(hand::HandShape{}, pose);
    const double r = 0.025;
    const JointSensor sensor(pc, r);
    const JointSensorSample s = sensor.query(f.origin, f, 100000, 1);
    for (int k = 0; k < hand::kNumJoints; ++k) {
      std::vector<int> expected;
      for (int i = 0; i < static_cast<int>(pc.size()); ++i)
        if ((pc.points[i] - f.origin[k]).norm() < r) expected.push_back(i);
      CHECK(sensor.neighbours(f.origin[k]) == expected);
      REQUIRE(s.count(k) == expected.size());
      for (std::size_t i = 0; i < expected.size(); ++i) {
        const Vec3 local = f.rotation[k].transpose() * (pc.points[expected[i]] - f.origin[k]);
        CHECK((s.points[k][i] - local).norm() < 1e-15);
      }
      for (const auto& p : s.points[k]) CHECK(p.norm() < r + 1e-9);
      for (const auto& n : s.normals[k]) CHECK(std::abs(n.norm() - 1.0) < 1e-9);
    }
    const JointSensorSample a = joint_radius_query(pc, f.origin, f, r, 20, 5);
    const JointSensorSample b = joint_radius_query(pc, f.origin, f, r, 20, 5);
    for (int k = 0; k < hand::kNumJoints; ++k) {
      CHECK(a.count(k) <= 20);
      CHECK(a.points[k] == b.points[k]);
      CHECK(a.count(k) == std::min<std::size_t>(20, s.count(k)));
      // the subset is drawn from the full neighbourhood
      for (const auto& p : a.points[k]) CHECK(std::find(s.points[k].begin(), s.points[k].end(), p) != s.points[k].end());
    }
  }
}

TEST_CASE("sensor outputs are invariant to a rigid scene transform") {
  Rng rng(13);
  const TriMesh obj = make_icosphere(0.05, 3);
  const PointCloud pc = sample_surface(obj, 4000, 2);
  hand::HandPose pose;
  pose.wrist_pos = Vec3(0.0, 0.0, 0.07);
  pose.global_rot = rot_x(std::numbers::pi);
  const hand::TemplateFrames f = hand::posed_frames(hand::HandShape{}, pose);
  const JointSensorSample s0 = joint_radius_query(pc, f.origin, f, 0.025, 50, 3);

  const RigidTransform tf{gt::random_rotation(rng), gt::random_vec(rng)};
  PointCloud moved;
  for (std::size_t i = 0; i < pc.size(); ++i) {
    moved.points.push_back(tf.apply(pc.points[i]));
    moved.normals.push_back(tf.rotation * pc.normals[i]);
  }
  hand::HandPose p2 = pose;
  p2.global_rot = tf.rotation * pose.global_rot;
  p2.wrist_pos = tf.apply(pose.wrist_pos);
  const hand::TemplateFrames f2 = hand::posed_frames(hand::HandShape{}, p2);
  const JointSensorSample s1 = joint_radius_query(moved, f2.origin, f2, 0.025, 50, 3);
  CHECK(s0.total() > 0);
  for (int k = 0; k < hand::kNumJoints; ++k) {
    REQUIRE(s0.count(k) == s1.count(k));
    for (std::size_t i = 0; i < s0.count(k); ++i) {
      CHECK((s0.points[k][i] - s1.points[k][i]).norm() < 1e-9);
      CHECK((s0.normals[k][i] - s1.normals[k][i]).norm() < 1e-9);
    }
  }

  // wrist canonicalization is invariant under the same transform
  const PointCloud c0 = canonicalize_to_wrist(pc, pose.wrist_pos, pose.global_rot);
  const PointCloud c1 = canonicalize_to_wrist(moved, p2.wrist_pos, p2.global_rot);
  for (std::size_t i = 0; i < pc.size(); ++i) CHECK((c0.points[i] - c1.points[i]).norm() < 1e-9);
}

TEST_CASE("zero radius senses nothing") {
  const PointCloud pc = sample_surface(make_icosphere(0.05, 2), 500, 1);
  const hand::JointSet j = hand::forward_kinematics(hand::HandShape{}, hand::HandPose{});
  CHECK(joint_radius_query(pc, j, identity_frames(j), 0.0, 300, 1).total() == 0);
}
