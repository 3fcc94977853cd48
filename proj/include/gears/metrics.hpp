#pragma once

// Evaluation metrics: joint error, penetration depth, intersection volume and
// contact IoU, plus the inside/outside test they rely on.

#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

#include "gears/hand.hpp"
#include "gears/mesh.hpp"

namespace gears::metrics {

/// Mean per-joint Euclidean distance over all frames and joints, millimetres.
double mpjpe_mm(std::span<const hand::JointSet> pred, std::span<const hand::JointSet> gt);

/// Generalized winding number of a closed, outward-oriented mesh at p.
double winding_number(const TriMesh& mesh, const Vec3& p);

/// Winding number > 0.5 per point. Writes a warning to std::clog for meshes
/// that are not watertight (results are then best effort).
std::vector<bool> inside_mesh(std::span<const Vec3> points, const TriMesh& mesh);

/// Largest distance to the object surface over hand vertices inside the
/// object, millimetres; 0 when nothing penetrates.
double penetration_depth_mm(const TriMesh& hand, const TriMesh& object);

/// Volume of voxels whose centres lie inside both meshes, cm^3. The grid is
/// aligned with the object frame (`object_pose` maps object to world) and
/// starts at the corner of the overlap of the two bounding boxes.
double intersection_volume_cm3(const TriMesh& hand, const TriMesh& object, double voxel_mm = 2.0,
                               const RigidTransform& object_pose = {});

/// Per object vertex: true when some hand vertex lies strictly within `threshold` metres.
std::vector<bool> contact_map(const TriMesh& hand, const TriMesh& object, double threshold = 0.002);

/// |a and b| / |a or b|, or nullopt when the union is empty.
std::optional<double> iou(const std::vector<bool>& a, const std::vector<bool>& b);

/// Mean contact IoU in percent over frames whose union is non-empty; nullopt
/// when no frame has any contact.
std::optional<double> contact_iou_pct(std::span<const TriMesh> pred_hand, std::span<const TriMesh> gt_hand,
                                      std::span<const TriMesh> object, double threshold = 0.002);

struct MetricReport {
  double mpjpe_mm = 0.0;
  double pd_mm = 0.0;  // mean over frames
  double pd_max_mm = 0.0;
  double iv_cm3 = 0.0;  // mean over frames
  double iv_max_cm3 = 0.0;
  std::optional<double> ciou_pct;
  std::vector<double> frame_mpjpe_mm;
  std::vector<double> frame_pd_mm;
  std::vector<double> frame_iv_cm3;
  std::vector<std::optional<double>> frame_ciou_pct;
};

struct SequenceMeshes {
  std::vector<TriMesh> pred_hand;
  std::vector<TriMesh> gt_hand;
  std::vector<TriMesh> object;  // posed per frame
  std::vector<RigidTransform> object_pose;
};

MetricReport evaluate(std::span<const hand::JointSet> pred, std::span<const hand::JointSet> gt,
                      const SequenceMeshes& meshes, double voxel_mm = 2.0);

nlohmann::json to_json(const MetricReport& r);

}  // namespace gears::metrics
