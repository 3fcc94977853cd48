#include "gears/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "gears/errors.hpp"
#include "gears/metrics.hpp"
#include "gears/primitives.hpp"
#include "gears/random.hpp"

namespace gears::synth {

std::string to_string(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::Box: return "box";
    case PrimitiveKind::Sphere: return "sphere";
    case PrimitiveKind::Cylinder: return "cylinder";
    case PrimitiveKind::Capsule: return "capsule";
  }
  return "unknown";
}

PrimitiveKind primitive_from_string(const std::string& name) {
  for (auto k : {PrimitiveKind::Box, PrimitiveKind::Sphere, PrimitiveKind::Cylinder, PrimitiveKind::Capsule})
    if (to_string(k) == name) return k;
  throw ValidationError("unknown primitive kind '" + name + "'");
}

double ProceduralObject::max_extent() const {
  switch (kind) {
    case PrimitiveKind::Box: return size.maxCoeff();
    case PrimitiveKind::Sphere: return 2.0 * size.x();
    case PrimitiveKind::Cylinder: return std::max(2.0 * size.x(), size.y());
    case PrimitiveKind::Capsule: return std::max(2.0 * size.x(), size.y() + 2.0 * size.x());
  }
  return 0.0;
}

void ProceduralObject::validate() const {
  const int used = kind == PrimitiveKind::Box ? 3 : kind == PrimitiveKind::Sphere ? 1 : 2;
  for (int i = 0; i < used; ++i)
    if (!(size[i] > 0.0) || !std::isfinite(size[i])) throw ValidationError("object sizes must be positive");
  const int min_level = kind == PrimitiveKind::Sphere ? 0 : 1;
  if (level < min_level || level > 64) throw ValidationError("tessellation level out of range");
  const double e = max_extent();
  if (e < 0.03 - 1e-12 || e > 0.4 + 1e-12) throw ValidationError("object max extent must lie in [3 cm, 40 cm]");
}

double ProceduralObject::signed_distance(const Vec3& p) const {
  switch (kind) {
    case PrimitiveKind::Sphere: return p.norm() - size.x();
    case PrimitiveKind::Box: {
      const Vec3 q = p.cwiseAbs() - 0.5 * size;
      return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
    }
    case PrimitiveKind::Cylinder: {
      const Eigen::Vector2d d(std::hypot(p.x(), p.y()) - size.x(), std::abs(p.z()) - 0.5 * size.y());
      return d.cwiseMax(0.0).norm() + std::min(d.maxCoeff(), 0.0);
    }
    case PrimitiveKind::Capsule: {
      const double h = 0.5 * size.y();
      return (p - Vec3(0.0, 0.0, std::clamp(p.z(), -h, h))).norm() - size.x();
    }
  }
  return 0.0;
}

nlohmann::json to_json(const ProceduralObject& o) {
  return {{"kind", to_string(o.kind)}, {"size", {o.size.x(), o.size.y(), o.size.z()}}, {"level", o.level}, {"seed", o.seed}};
}

ProceduralObject object_from_json(const nlohmann::json& j) {
  ProceduralObject o;
  o.kind = primitive_from_string(j.at("kind").get<std::string>());
  const auto s = j.at("size").get<std::vector<double>>();
  if (s.size() != 3) throw ValidationError("object size needs three entries");
  o.size = Vec3(s[0], s[1], s[2]);
  o.level = j.at("level").get<int>();
  o.seed = j.value("seed", std::uint64_t{0});
  o.validate();
  return o;
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"frames", c.frames},
       {"fps", c.fps},
       {"approach_speed", c.approach_speed},
       {"sigma_pose", c.sigma_pose},
       {"sigma_rot", c.sigma_rot},
       {"iv_threshold_cm3", c.iv_threshold_cm3},
       {"voxel_mm", c.voxel_mm},
       {"max_retries", c.max_retries},
       {"contact_gap", c.contact_gap},
       {"tip_tolerance", c.tip_tolerance},
       {"min_tip_contacts", c.min_tip_contacts},
       {"palm_margin", c.palm_margin},
       {"shape_range", c.shape_range},
       {"grid_spacing", c.grid_spacing}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  const SynthConfig d;
  c.frames = j.value("frames", d.frames);
  c.fps = j.value("fps", d.fps);
  c.approach_speed = j.value("approach_speed", d.approach_speed);
  c.sigma_pose = j.value("sigma_pose", d.sigma_pose);
  c.sigma_rot = j.value("sigma_rot", d.sigma_rot);
  c.iv_threshold_cm3 = j.value("iv_threshold_cm3", d.iv_threshold_cm3);
  c.voxel_mm = j.value("voxel_mm", d.voxel_mm);
  c.max_retries = j.value("max_retries", d.max_retries);
  c.contact_gap = j.value("contact_gap", d.contact_gap);
  c.tip_tolerance = j.value("tip_tolerance", d.tip_tolerance);
  c.min_tip_contacts = j.value("min_tip_contacts", d.min_tip_contacts);
  c.palm_margin = j.value("palm_margin", d.palm_margin);
  c.shape_range = j.value("shape_range", d.shape_range);
  c.grid_spacing = j.value("grid_spacing", d.grid_spacing);
  if (c.frames < 2) throw ValidationError("synthesis needs at least two frames");
  if (!(c.fps > 0.0) || c.approach_speed < 0.0 || c.sigma_pose < 0.0 || c.sigma_rot < 0.0 || !(c.voxel_mm > 0.0) ||
      c.max_retries < 1 || !(c.grid_spacing > 0.0) || c.iv_threshold_cm3 < 0.0)
    throw ValidationError("invalid synthesis configuration");
}

namespace {

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Vec3 gaussian_vec(Rng& rng, double sigma) {
  std::normal_distribution<double> n(0.0, 1.0);
  const double x = n(rng), y = n(rng), z = n(rng);
  return sigma * Vec3(x, y, z);
}

Mat3 uniform_rotation(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const double w = n(rng), x = n(rng), y = n(rng), z = n(rng);
  return Quat(w, x, y, z).normalized().toRotationMatrix();
}

int clamp_level(double v, int lo, int hi) { return std::clamp(static_cast<int>(std::ceil(v)), lo, hi); }

Quat quat_from_axis_angle(const Vec3& v) {
  const double angle = v.norm();
  if (angle == 0.0) return Quat::Identity();
  return Quat(Eigen::AngleAxisd(angle, v / angle));
}

Vec3 axis_angle_from_quat(Quat q) {
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Vec3 v = q.vec();
  const double s = v.norm();
  if (s == 0.0) return Vec3::Zero();
  return v * (2.0 * std::atan2(s, q.w()) / s);
}

constexpr double kFingerCurlLimit = 1.6;
constexpr double kThumbCurlLimit = 1.2;
constexpr int kCapsuleSamples = 6;

// Flexion axis of a finger in the hand frame: bends its root bone toward the palm side.
Vec3 curl_axis(const hand::Skeleton& skel, int finger) {
  const int r = hand::finger_root(finger);
  const Vec3 d = skel.rest_joints[r + 1] - skel.rest_joints[r];
  return Vec3(-d.y(), d.x(), 0.0).normalized();
}

// Smallest clearance between the object and the capsules of bones ending at joints first..last.
double clearance(const ProceduralObject& obj, const hand::JointSet& j, const hand::Skeleton& skel, int first,
                 int last) {
  double gap = std::numeric_limits<double>::infinity();
  for (int k = first; k <= last; ++k) {
    const double r = skel.capsule_radius[k - 1];
    const Vec3 a = j[skel.parent[k]];
    Vec3 b = j[k];
    if (hand::is_tip(k)) b -= r * (b - a).normalized();
    for (int i = 0; i <= kCapsuleSamples; ++i)
      gap = std::min(gap, obj.signed_distance(a + (b - a) * (static_cast<double>(i) / kCapsuleSamples)) - r);
  }
  return gap;
}

// Closes each finger in three stages (all joints, then the distal two, then
// the last), bisecting the extra curl until the moving part first comes
// within `contact_gap` of the object or its joints reach their limit. A
// segment that touches stays put while the ones beyond it keep wrapping.
void close_fingers(const ProceduralObject& obj, const hand::HandShape& shape, hand::HandPose& pose,
                   const SynthConfig& cfg) {
  const auto& skel = hand::Skeleton::standard();
  for (int f = 0; f < hand::kNumFingers; ++f) {
    const Vec3 axis = curl_axis(skel, f);
    const double limit = f == 0 ? kThumbCurlLimit : kFingerCurlLimit;
    const int root = hand::finger_root(f);
    std::array<Mat3, 3> base;
    for (int i = 0; i < 3; ++i) base[i] = exp_so3(pose.theta[3 * f + i]);
    std::array<double, 3> curl{};
    auto apply = [&](int stage, double extra) {
      for (int i = 0; i < 3; ++i)
        pose.theta[3 * f + i] = log_so3(base[i] * exp_so3(axis * (curl[i] + (i >= stage ? extra : 0.0))));
    };
    for (int s = 0; s < 3; ++s) {
      auto gap_at = [&](double extra) {
        apply(s, extra);
        return clearance(obj, hand::forward_kinematics(shape, pose), skel, root + s + 1, root + 3);
      };
      double room = limit;
      for (int i = s; i < 3; ++i) room = std::min(room, limit - curl[i]);
      if (room <= 0.0) continue;
      if (gap_at(0.0) <= cfg.contact_gap) continue;
      double chosen = room;
      if (gap_at(room) <= cfg.contact_gap) {
        double lo = 0.0, hi = room;
        for (int it = 0; it < 30; ++it) {
          const double mid = 0.5 * (lo + hi);
          (gap_at(mid) <= cfg.contact_gap ? hi : lo) = mid;
        }
        chosen = hi;
      }
      for (int i = s; i < 3; ++i) curl[i] += chosen;
      apply(s, 0.0);
    }
    apply(3, 0.0);
  }
}

}  // namespace

ProceduralObject random_object(std::uint64_t seed, const SynthConfig& cfg) {
  Rng rng(seed);
  ProceduralObject o;
  o.seed = seed;
  const double sp = cfg.grid_spacing;
  switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
    case 0: {
      o.kind = PrimitiveKind::Box;
      const double a = uniform(rng, 0.03, 0.10), b = uniform(rng, 0.03, 0.10), c = uniform(rng, 0.03, 0.10);
      o.size = Vec3(a, b, c);
      o.level = clamp_level(o.size.maxCoeff() / sp, 1, 16);
      break;
    }
    case 1: {
      o.kind = PrimitiveKind::Sphere;
      o.size = Vec3(uniform(rng, 0.02, 0.05), 0.0, 0.0);
      // icosphere edges are about 1.05 r / 2^level
      o.level = clamp_level(std::log2(1.05 * o.size.x() / sp), 1, 5);
      break;
    }
    case 2: {
      o.kind = PrimitiveKind::Cylinder;
      const double r = uniform(rng, 0.015, 0.045), h = uniform(rng, 0.04, 0.16);
      o.size = Vec3(r, h, 0.0);
      o.level = clamp_level(std::max(2.0 * std::numbers::pi * r / (8.0 * sp), h / sp), 1, 16);
      break;
    }
    default: {
      o.kind = PrimitiveKind::Capsule;
      const double r = uniform(rng, 0.015, 0.04), l = uniform(rng, 0.02, 0.10);
      o.size = Vec3(r, l, 0.0);
      o.level = clamp_level(2.0 * std::numbers::pi * r / (8.0 * sp), 1, 16);
      break;
    }
  }
  o.validate();
  return o;
}

TriMesh generate_object(const ProceduralObject& spec) {
  spec.validate();
  switch (spec.kind) {
    case PrimitiveKind::Box: return make_box(-0.5 * spec.size, 0.5 * spec.size, spec.level);
    case PrimitiveKind::Sphere: return make_icosphere(spec.size.x(), spec.level);
    case PrimitiveKind::Cylinder: return make_cylinder(spec.size.x(), spec.size.y(), 8 * spec.level, spec.level);
    case PrimitiveKind::Capsule: return make_capsule(spec.size.x(), spec.size.y(), 8 * spec.level, spec.level);
  }
  throw ValidationError("unknown primitive kind");
}

int count_tip_contacts(const StaticGrasp& g, double tolerance) {
  const hand::JointSet j = hand::forward_kinematics(g.shape, g.pose);
  int n = 0;
  for (int f = 0; f < hand::kNumFingers; ++f)
    if (distance_to_surface(g.mesh, g.object_pose.apply_inverse(j[hand::fingertip(f)])) <= tolerance) ++n;
  return n;
}

StaticGrasp generate_static_grasp(const ProceduralObject& object, std::uint64_t seed, const SynthConfig& cfg) {
  const TriMesh mesh = generate_object(object);
  const Vec3 palm_centre = hand::palm_center_local();
  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    hand::HandShape shape;
    for (auto& b : shape.beta) b = uniform(rng, -cfg.shape_range, cfg.shape_range);
    hand::HandPose pose;
    for (auto& t : pose.theta) t = gaussian_vec(rng, 0.05);
    // swing the thumb across the palm so it can close against the object
    pose.theta[0] = log_so3(rot_z(-uniform(rng, 0.4, 0.9)) * exp_so3(pose.theta[0]));

    // Palm faces the surface at a random point, spun randomly about the normal.
    const PointCloud site = sample_surface(mesh, 1, rng());
    const Vec3 p = site.points[0], n = site.normals[0];
    const Mat3 rot = exp_so3(n * uniform(rng, 0.0, 2.0 * std::numbers::pi)) * minimal_rotation(Vec3::UnitZ(), n);
    // Lowest point of the open hand (palm side) rests on the tangent plane,
    // which keeps it outside a convex object.
    double lowest = std::numeric_limits<double>::infinity();
    for (const auto& v : hand::hand_surface_mesh(shape, pose).vertices) lowest = std::min(lowest, v.z());
    const Vec3 anchor(uniform(rng, 0.045, 0.075), palm_centre.y(), lowest);
    pose.global_rot = rot;
    pose.wrist_pos = p + cfg.palm_margin * n - rot * anchor;
    close_fingers(object, shape, pose, cfg);

    StaticGrasp g;
    g.object = object;
    g.mesh = mesh;
    g.shape = shape;
    g.pose = pose;
    g.tip_contacts = count_tip_contacts(g, cfg.tip_tolerance);
    if (g.tip_contacts < cfg.min_tip_contacts) continue;
    g.iv_cm3 = metrics::intersection_volume_cm3(hand::hand_surface_mesh(shape, pose), mesh, cfg.voxel_mm);
    if (g.iv_cm3 > cfg.iv_threshold_cm3) continue;

    // Place the whole scene in the world.
    g.object_pose = {uniform_rotation(rng), Vec3(uniform(rng, -0.1, 0.1), uniform(rng, -0.1, 0.1), uniform(rng, -0.1, 0.1))};
    g.pose.global_rot = g.object_pose.rotation * pose.global_rot;
    g.pose.wrist_pos = g.object_pose.apply(pose.wrist_pos);
    return g;
  }
  throw GraspNotFound("no valid grasp on " + to_string(object.kind) + " after " + std::to_string(cfg.max_retries) +
                      " attempts");
}

hand::HandPose perturb_source(const StaticGrasp& target, std::uint64_t seed, const SynthConfig& cfg) {
  if (cfg.sigma_pose < 0.0 || cfg.sigma_rot < 0.0) throw ValidationError("noise scales must be non-negative");
  Rng rng(seed);
  hand::HandPose src;
  for (auto& t : src.theta) t = gaussian_vec(rng, cfg.sigma_pose);
  src.global_rot = target.pose.global_rot * exp_so3(gaussian_vec(rng, cfg.sigma_rot));
  src.wrist_pos = target.pose.wrist_pos -
                  cfg.approach_speed * static_cast<double>(cfg.frames) * hand::palm_normal(target.pose.global_rot);
  return src;
}

Quat slerp(const Quat& a, const Quat& b, double tau) {
  Quat bb = b;
  if (a.dot(b) < 0.0) bb.coeffs() = -b.coeffs();
  const double omega = 2.0 * std::atan2((a.coeffs() - bb.coeffs()).norm(), (a.coeffs() + bb.coeffs()).norm());
  if (omega == 0.0) return a;
  Quat q;
  if (omega < 1e-9) {
    q.coeffs() = (1.0 - tau) * a.coeffs() + tau * bb.coeffs();
    return q.normalized();
  }
  const double s = std::sin(omega);
  q.coeffs() = (std::sin((1.0 - tau) * omega) / s) * a.coeffs() + (std::sin(tau * omega) / s) * bb.coeffs();
  return q;
}

SyntheticSequence interpolate_sequence(const hand::HandPose& source, const StaticGrasp& target, std::size_t frames,
                                       double fps) {
  if (frames < 2) throw TooShort("interpolation needs at least two frames");
  SyntheticSequence seq;
  seq.shape = target.shape;
  seq.object = target.object;
  seq.object_mesh = target.mesh;
  seq.hand_traj.fps = seq.object_traj.fps = fps;
  const Quat r0(source.global_rot), r1(target.pose.global_rot);
  std::array<Quat, hand::kNumArticulated> p0, p1;
  for (int i = 0; i < hand::kNumArticulated; ++i) {
    p0[i] = quat_from_axis_angle(source.theta[i]);
    p1[i] = quat_from_axis_angle(target.pose.theta[i]);
  }
  for (std::size_t t = 0; t < frames; ++t) {
    hand::HandPose pose;
    if (t == 0) {
      pose = source;
    } else if (t + 1 == frames) {
      pose = target.pose;
    } else {
      const double tau = static_cast<double>(t) / static_cast<double>(frames - 1);
      pose.wrist_pos = (1.0 - tau) * source.wrist_pos + tau * target.pose.wrist_pos;
      pose.global_rot = slerp(r0, r1, tau).toRotationMatrix();
      for (int i = 0; i < hand::kNumArticulated; ++i) pose.theta[i] = axis_angle_from_quat(slerp(p0[i], p1[i], tau));
    }
    seq.poses.push_back(pose);
    seq.joints.push_back(hand::forward_kinematics(seq.shape, pose));
    seq.hand_traj.push_back(pose.global_rot, pose.wrist_pos);
    seq.object_traj.push_back(target.object_pose.rotation, target.object_pose.translation);
  }
  return seq;
}

std::vector<double> frame_intersection_volumes(const SyntheticSequence& seq, double voxel_mm) {
  std::vector<double> iv;
  iv.reserve(seq.frames());
  for (std::size_t t = 0; t < seq.frames(); ++t) {
    const RigidTransform pose = seq.object_traj.at(t);
    iv.push_back(metrics::intersection_volume_cm3(hand::hand_surface_mesh(seq.shape, seq.poses[t]),
                                                  transformed(seq.object_mesh, pose), voxel_mm, pose));
  }
  return iv;
}

bool filter_by_intersection(const SyntheticSequence& seq, double threshold_cm3, double voxel_mm) {
  if (std::isinf(threshold_cm3) && threshold_cm3 > 0.0) return true;
  for (double v : frame_intersection_volumes(seq, voxel_mm))
    if (v > threshold_cm3) return false;
  return true;
}

SequenceRecord to_record(const SyntheticSequence& seq, const std::string& mesh_path, const Provenance& provenance) {
  SequenceRecord r;
  r.fps = seq.hand_traj.fps;
  r.object_mesh_path = mesh_path;
  r.object_mesh = seq.object_mesh;
  r.object_traj = seq.object_traj;
  r.hand_traj = seq.hand_traj;
  r.gt_joints = seq.joints;
  PoseSequence ps;
  ps.shape = seq.shape;
  for (const auto& p : seq.poses) ps.theta.push_back(p.theta);
  r.gt_pose = ps;
  r.provenance = provenance;
  return r;
}

std::vector<CorpusItem> generate_corpus(std::size_t count, std::uint64_t master_seed, const SynthConfig& cfg,
                                        const std::string& prefix, CorpusStats* stats) {
  CorpusStats local;
  local.requested = count;
  const std::string config_hash = fnv1a_hex(nlohmann::json(cfg).dump());
  std::vector<CorpusItem> items;
  const std::size_t max_attempts = 20 * count;
  for (std::size_t attempt = 0; items.size() < count && attempt < max_attempts; ++attempt) {
    const std::uint64_t seed = derive_seed(master_seed, attempt);
    const ProceduralObject object = random_object(derive_seed(seed, 1), cfg);
    StaticGrasp grasp;
    try {
      grasp = generate_static_grasp(object, derive_seed(seed, 2), cfg);
    } catch (const GraspNotFound&) {
      ++local.grasp_failures;
      continue;
    }
    const hand::HandPose source = perturb_source(grasp, derive_seed(seed, 3), cfg);
    const SyntheticSequence seq = interpolate_sequence(source, grasp, cfg.frames, cfg.fps);
    if (!filter_by_intersection(seq, cfg.iv_threshold_cm3, cfg.voxel_mm)) {
      ++local.filtered;
      continue;
    }
    char name[64];
    std::snprintf(name, sizeof name, "_%04zu", items.size());
    CorpusItem item;
    item.name = prefix + name;
    item.object = object;
    item.record = to_record(seq, item.name + ".obj", {seed, config_hash, {}});
    items.push_back(std::move(item));
  }
  local.emitted = items.size();
  if (stats) *stats = local;
  if (count > 0 && items.empty()) throw GraspNotFound("no sequence could be generated");
  return items;
}

}  // namespace gears::synth
