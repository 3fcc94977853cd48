#include "gears/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>

#include "gears/errors.hpp"
#include "gears/sensors.hpp"

namespace gears::metrics {

double mpjpe_mm(std::span<const hand::JointSet> pred, std::span<const hand::JointSet> gt) {
  if (pred.size() != gt.size()) throw ShapeMismatch("mpjpe: sequences differ in length");
  if (pred.empty()) throw ShapeMismatch("mpjpe: empty sequences");
  double s = 0.0;
  for (std::size_t t = 0; t < pred.size(); ++t)
    for (int k = 0; k < hand::kNumJoints; ++k) s += (pred[t][k] - gt[t][k]).norm();
  return 1000.0 * s / static_cast<double>(pred.size() * hand::kNumJoints);
}

double winding_number(const TriMesh& mesh, const Vec3& p) {
  double total = 0.0;
  for (const auto& f : mesh.faces) {
    const Vec3 a = mesh.vertices[f[0]] - p, b = mesh.vertices[f[1]] - p, c = mesh.vertices[f[2]] - p;
    const double la = a.norm(), lb = b.norm(), lc = c.norm();
    const double num = a.dot(b.cross(c));
    const double den = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
    total += 2.0 * std::atan2(num, den);
  }
  return total / (4.0 * std::numbers::pi);
}

std::vector<bool> inside_mesh(std::span<const Vec3> points, const TriMesh& mesh) {
  if (!is_watertight(mesh)) std::clog << "warning: inside test on a mesh that is not watertight\n";
  std::vector<bool> out(points.size());
  const Aabb box = bounds(mesh);
  for (std::size_t i = 0; i < points.size(); ++i) out[i] = box.contains(points[i]) && winding_number(mesh, points[i]) > 0.5;
  return out;
}

double penetration_depth_mm(const TriMesh& hand, const TriMesh& object) {
  if (object.faces.empty()) return 0.0;
  const Aabb box = bounds(object);
  std::vector<Vec3> candidates;
  for (const auto& v : hand.vertices)
    if (box.contains(v)) candidates.push_back(v);
  const std::vector<bool> inside = inside_mesh(candidates, object);
  double depth = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i)
    if (inside[i]) depth = std::max(depth, distance_to_surface(object, candidates[i]));
  return 1000.0 * depth;
}

namespace {

struct Grid {
  Vec3 origin;
  double h;
  int nx, ny, nz;

  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(x) * static_cast<std::size_t>(ny) + static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(nz) + static_cast<std::size_t>(z);
  }
  double centre(int axis, int i) const { return origin[axis] + (i + 0.5) * h; }
};

// An edge owns the points on it when it runs upward, or leftward when flat.
// Of the two directions of a shared edge exactly one owns it.
bool owns(double dx, double dy) { return dy > 0.0 || (dy == 0.0 && dx < 0.0); }

// Inside flags for the grid's voxel centres: signed crossings of a vertical
// ray below each centre, which sums to the winding number for closed meshes.
std::vector<char> voxelize(const TriMesh& mesh, const Grid& grid) {
  struct Crossing {
    double z;
    int sign;
  };
  std::vector<std::vector<Crossing>> columns(static_cast<std::size_t>(grid.nx) * static_cast<std::size_t>(grid.ny));
  for (const auto& f : mesh.faces) {
    Vec3 a = mesh.vertices[f[0]], b = mesh.vertices[f[1]], c = mesh.vertices[f[2]];
    double area = (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
    if (area == 0.0) continue;  // vertical face: never crossed by a vertical ray
    // Upward-facing triangles are exits (-1 below them), downward ones entries.
    const int sign = area > 0.0 ? -1 : 1;
    if (area < 0.0) {
      std::swap(b, c);
      area = -area;
    }
    const double minx = std::min({a.x(), b.x(), c.x()}), maxx = std::max({a.x(), b.x(), c.x()});
    const double miny = std::min({a.y(), b.y(), c.y()}), maxy = std::max({a.y(), b.y(), c.y()});
    const int x0 = std::max(0, static_cast<int>(std::ceil((minx - grid.origin.x()) / grid.h - 0.5)));
    const int x1 = std::min(grid.nx - 1, static_cast<int>(std::floor((maxx - grid.origin.x()) / grid.h - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::ceil((miny - grid.origin.y()) / grid.h - 0.5)));
    const int y1 = std::min(grid.ny - 1, static_cast<int>(std::floor((maxy - grid.origin.y()) / grid.h - 0.5)));
    const std::array<const Vec3*, 3> v{&a, &b, &c};
    for (int ix = x0; ix <= x1; ++ix) {
      const double px = grid.centre(0, ix);
      for (int iy = y0; iy <= y1; ++iy) {
        const double py = grid.centre(1, iy);
        std::array<double, 3> w{};  // w[i]: edge opposite vertex i
        bool in = true;
        for (int e = 0; e < 3 && in; ++e) {
          const Vec3& u = *v[(e + 1) % 3];
          const Vec3& t = *v[(e + 2) % 3];
          const double dx = t.x() - u.x(), dy = t.y() - u.y();
          w[e] = dx * (py - u.y()) - dy * (px - u.x());
          in = w[e] > 0.0 || (w[e] == 0.0 && owns(dx, dy));
        }
        if (!in) continue;
        const double z = (w[0] * a.z() + w[1] * b.z() + w[2] * c.z()) / area;
        columns[static_cast<std::size_t>(ix) * static_cast<std::size_t>(grid.ny) + static_cast<std::size_t>(iy)].push_back(
            {z, sign});
      }
    }
  }
  std::vector<char> inside(static_cast<std::size_t>(grid.nx) * grid.ny * grid.nz, 0);
  for (int ix = 0; ix < grid.nx; ++ix) {
    for (int iy = 0; iy < grid.ny; ++iy) {
      auto& col = columns[static_cast<std::size_t>(ix) * static_cast<std::size_t>(grid.ny) + static_cast<std::size_t>(iy)];
      if (col.empty()) continue;
      std::sort(col.begin(), col.end(), [](const Crossing& l, const Crossing& r) { return l.z < r.z; });
      std::size_t next = 0;
      int winding = 0;
      for (int iz = 0; iz < grid.nz; ++iz) {
        const double z = grid.centre(2, iz);
        while (next < col.size() && col[next].z < z) winding += col[next++].sign;
        inside[grid.index(ix, iy, iz)] = winding > 0;
      }
    }
  }
  return inside;
}

}  // namespace

double intersection_volume_cm3(const TriMesh& hand, const TriMesh& object, double voxel_mm,
                               const RigidTransform& object_pose) {
  if (!(voxel_mm > 0.0)) throw ValidationError("voxel size must be positive");
  if (hand.faces.empty() || object.faces.empty()) return 0.0;
  const RigidTransform to_object = object_pose.inverse();
  const TriMesh h = transformed(hand, to_object);
  const TriMesh o = transformed(object, to_object);
  const Aabb overlap = bounds(h).intersection(bounds(o));
  if (!overlap.valid()) return 0.0;
  const double step = voxel_mm * 1e-3;
  const Vec3 extent = overlap.max - overlap.min;
  Grid grid{overlap.min, step, std::max(1, static_cast<int>(std::ceil(extent.x() / step))),
            std::max(1, static_cast<int>(std::ceil(extent.y() / step))),
            std::max(1, static_cast<int>(std::ceil(extent.z() / step)))};
  const auto in_h = voxelize(h, grid);
  const auto in_o = voxelize(o, grid);
  std::size_t both = 0;
  for (std::size_t i = 0; i < in_h.size(); ++i) both += (in_h[i] && in_o[i]) ? 1 : 0;
  return static_cast<double>(both) * step * step * step * 1e6;
}

std::vector<bool> contact_map(const TriMesh& hand, const TriMesh& object, double threshold) {
  if (!(threshold > 0.0)) throw ValidationError("contact threshold must be positive");
  std::vector<bool> out(object.vertices.size(), false);
  if (hand.vertices.empty()) return out;
  const HashGrid grid(hand.vertices, threshold);
  for (std::size_t i = 0; i < object.vertices.size(); ++i) out[i] = !grid.within(object.vertices[i], threshold).empty();
  return out;
}

std::optional<double> iou(const std::vector<bool>& a, const std::vector<bool>& b) {
  if (a.size() != b.size()) throw ShapeMismatch("contact maps differ in length");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    uni += (a[i] || b[i]) ? 1 : 0;
  }
  if (uni == 0) return std::nullopt;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::optional<double> contact_iou_pct(std::span<const TriMesh> pred_hand, std::span<const TriMesh> gt_hand,
                                      std::span<const TriMesh> object, double threshold) {
  if (pred_hand.size() != gt_hand.size() || pred_hand.size() != object.size())
    throw LengthMismatch("contact IoU inputs differ in length");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < object.size(); ++t) {
    if (const auto v = iou(contact_map(pred_hand[t], object[t], threshold), contact_map(gt_hand[t], object[t], threshold))) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return 100.0 * sum / static_cast<double>(n);
}

MetricReport evaluate(std::span<const hand::JointSet> pred, std::span<const hand::JointSet> gt,
                      const SequenceMeshes& m, double voxel_mm) {
  const std::size_t T = pred.size();
  if (gt.size() != T || m.pred_hand.size() != T || m.gt_hand.size() != T || m.object.size() != T ||
      (!m.object_pose.empty() && m.object_pose.size() != T))
    throw LengthMismatch("evaluation inputs differ in length");
  if (T == 0) throw LengthMismatch("nothing to evaluate");
  MetricReport r;
  r.mpjpe_mm = mpjpe_mm(pred, gt);
  double ciou_sum = 0.0;
  std::size_t ciou_n = 0;
  for (std::size_t t = 0; t < T; ++t) {
    r.frame_mpjpe_mm.push_back(mpjpe_mm(pred.subspan(t, 1), gt.subspan(t, 1)));
    const double pd = penetration_depth_mm(m.pred_hand[t], m.object[t]);
    const double iv = intersection_volume_cm3(m.pred_hand[t], m.object[t], voxel_mm,
                                              m.object_pose.empty() ? RigidTransform{} : m.object_pose[t]);
    r.frame_pd_mm.push_back(pd);
    r.frame_iv_cm3.push_back(iv);
    r.pd_max_mm = std::max(r.pd_max_mm, pd);
    r.iv_max_cm3 = std::max(r.iv_max_cm3, iv);
    r.pd_mm += pd / static_cast<double>(T);
    r.iv_cm3 += iv / static_cast<double>(T);
    auto c = iou(contact_map(m.pred_hand[t], m.object[t]), contact_map(m.gt_hand[t], m.object[t]));
    if (c) {
      *c *= 100.0;
      ciou_sum += *c;
      ++ciou_n;
    }
    r.frame_ciou_pct.push_back(c);
  }
  if (ciou_n > 0) r.ciou_pct = ciou_sum / static_cast<double>(ciou_n);
  return r;
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json ciou_frames = nlohmann::json::array();
  for (const auto& c : r.frame_ciou_pct) ciou_frames.push_back(c ? nlohmann::json(*c) : nlohmann::json(nullptr));
  return {{"mpjpe_mm", r.mpjpe_mm},
          {"pd_mm", r.pd_mm},
          {"iv_cm3", r.iv_cm3},
          {"ciou_pct", r.ciou_pct ? nlohmann::json(*r.ciou_pct) : nlohmann::json(nullptr)},
          {"per_frame",
           {{"mpjpe_mm", r.frame_mpjpe_mm},
            {"pd_mm", r.frame_pd_mm},
            {"iv_cm3", r.frame_iv_cm3},
            {"ciou_pct", ciou_frames},
            {"pd_max_mm", r.pd_max_mm},
            {"iv_max_cm3", r.iv_max_cm3}}}};
}

}  // namespace gears::metrics
