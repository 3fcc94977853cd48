#pragma once

// Synthetic hand-object sequences: procedural objects, heuristic static
// grasps, and approach motions interpolated from a perturbed open hand to the
// grasp, filtered by hand-object intersection volume.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "gears/hand.hpp"
#include "gears/mesh.hpp"
#include "gears/record.hpp"
#include "gears/sensors.hpp"

namespace gears::synth {

enum class PrimitiveKind { Box, Sphere, Cylinder, Capsule };

std::string to_string(PrimitiveKind kind);
PrimitiveKind primitive_from_string(const std::string& name);

/// Size per kind, metres: box (a, b, c) full extents; sphere (radius);
/// cylinder (radius, height); capsule (radius, cylinder length). Unused
/// components are ignored. `level` is the icosphere subdivision for spheres,
/// box subdivisions per edge, and for cylinders and capsules 8 * level
/// segments around with `level` stacks / cap rings.
struct ProceduralObject {
  PrimitiveKind kind = PrimitiveKind::Sphere;
  Vec3 size = Vec3(0.03, 0.0, 0.0);
  int level = 3;
  std::uint64_t seed = 0;

  /// Extent of the bounding box along its longest axis.
  double max_extent() const;
  /// Throws ValidationError on non-positive sizes, a bad level, or a max
  /// extent outside [3 cm, 40 cm].
  void validate() const;
  /// Analytic signed distance (negative inside), object frame.
  double signed_distance(const Vec3& p) const;
};

nlohmann::json to_json(const ProceduralObject& o);
ProceduralObject object_from_json(const nlohmann::json& j);

struct SynthConfig {
  std::size_t frames = 60;
  double fps = 30.0;
  double approach_speed = 0.004;  // metres per frame
  double sigma_pose = 0.1;        // radians, per axis of every articulated joint
  double sigma_rot = 0.15;        // radians, per axis of the global rotation
  double iv_threshold_cm3 = 4.0;
  double voxel_mm = 2.0;
  int max_retries = 50;
  double contact_gap = 0.001;     // finger closing stops at this clearance
  double tip_tolerance = 0.005;   // fingertip counts as touching within this distance
  int min_tip_contacts = 2;
  double palm_margin = 0.002;     // clearance of the open hand above the tangent plane
  double shape_range = 1.0;       // beta ~ U(-range, range)
  double grid_spacing = 0.006;    // target object edge length for random objects
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

/// Random graspable primitive with size in the hand's range.
ProceduralObject random_object(std::uint64_t seed, const SynthConfig& cfg = {});

/// Watertight, outward-facing, centred at the origin. Deterministic.
TriMesh generate_object(const ProceduralObject& spec);

/// Target hand (frame T) around an object placed at `object_pose`.
struct StaticGrasp {
  ProceduralObject object;
  TriMesh mesh;  // object frame
  RigidTransform object_pose;
  hand::HandShape shape;
  hand::HandPose pose;  // world frame
  int tip_contacts = 0;
  double iv_cm3 = 0.0;
};

/// Palm placed over a random surface point, fingers closed one by one by
/// bisection on a curl parameter. Throws GraspNotFound after max_retries.
StaticGrasp generate_static_grasp(const ProceduralObject& object, std::uint64_t seed, const SynthConfig& cfg = {});

/// Fingertips (world) within tolerance of the object surface.
int count_tip_contacts(const StaticGrasp& g, double tolerance);

/// Frame-0 pose: noisy mean pose, noisy target orientation, and the wrist
/// backed off along the target palm normal by approach_speed * frames.
hand::HandPose perturb_source(const StaticGrasp& target, std::uint64_t seed, const SynthConfig& cfg = {});

/// Shortest-arc spherical interpolation of unit quaternions.
Quat slerp(const Quat& a, const Quat& b, double tau);

struct SyntheticSequence {
  hand::HandShape shape;
  std::vector<hand::HandPose> poses;
  std::vector<hand::JointSet> joints;
  HandTrajectory hand_traj;
  ObjectTrajectory object_traj;  // static
  TriMesh object_mesh;           // object frame
  ProceduralObject object;

  std::size_t frames() const { return poses.size(); }
};

/// Linear wrist translation and SLERP of every joint and the global rotation
/// with tau = t / (T - 1). Throws TooShort for T < 2.
SyntheticSequence interpolate_sequence(const hand::HandPose& source, const StaticGrasp& target, std::size_t frames,
                                       double fps = 30.0);

/// Intersection volume per frame, cm^3.
std::vector<double> frame_intersection_volumes(const SyntheticSequence& seq, double voxel_mm = 2.0);

/// Keep iff the largest per-frame intersection volume is <= threshold.
bool filter_by_intersection(const SyntheticSequence& seq, double threshold_cm3, double voxel_mm = 2.0);

SequenceRecord to_record(const SyntheticSequence& seq, const std::string& mesh_path, const Provenance& provenance);

struct CorpusStats {
  std::size_t requested = 0;
  std::size_t emitted = 0;
  std::size_t grasp_failures = 0;  // objects skipped after exhausting retries
  std::size_t filtered = 0;        // sequences dropped by the intersection filter
};

struct CorpusItem {
  std::string name;
  SequenceRecord record;
  ProceduralObject object;
};

/// `count` accepted sequences named `<prefix>_NNNN`, each built from
/// derive_seed(master_seed, attempt). Gives up after 20 * count attempts.
std::vector<CorpusItem> generate_corpus(std::size_t count, std::uint64_t master_seed, const SynthConfig& cfg,
                                        const std::string& prefix, CorpusStats* stats = nullptr);

}  // namespace gears::synth
