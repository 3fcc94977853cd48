#include "gears/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gears/errors.hpp"

namespace gears::fit {

void to_json(nlohmann::json& j, const FitConfig& c) {
  j = {{"w1", c.w1}, {"w2", c.w2}, {"w3", c.w3}, {"w4", c.w4},
       {"data_weight", c.data_weight}, {"iters", c.iters}, {"lr", c.lr}};
}

void from_json(const nlohmann::json& j, FitConfig& c) {
  c.w1 = j.value("w1", c.w1);
  c.w2 = j.value("w2", c.w2);
  c.w3 = j.value("w3", c.w3);
  c.w4 = j.value("w4", c.w4);
  c.data_weight = j.value("data_weight", c.data_weight);
  c.iters = j.value("iters", c.iters);
  c.lr = j.value("lr", c.lr);
}

namespace {

constexpr int kThetaDims = 3 * hand::kNumArticulated;
constexpr double kMm2 = 1e6;  // m^2 -> mm^2
constexpr double kMaxAngle = std::numbers::pi - 1e-6;

// is_ancestor[a][k]: a lies strictly above k in the kinematic tree.
struct Topology {
  std::array<std::array<bool, hand::kNumJoints>, hand::kNumJoints> above{};

  explicit Topology(const hand::Skeleton& skel) {
    for (int k = 0; k < hand::kNumJoints; ++k)
      for (int a = skel.parent[k]; a >= 0; a = skel.parent[a]) above[a][k] = true;
  }
};

}  // namespace

FitProblem::FitProblem(std::span<const hand::JointSet> targets, const HandTrajectory& traj, const FitConfig& cfg,
                       const hand::Skeleton& skel)
    : targets_(targets.begin(), targets.end()), traj_(traj), cfg_(cfg), skel_(&skel) {
  if (targets_.empty()) throw TooShort("fitting needs at least one frame");
  if (traj.frames() != targets_.size()) throw LengthMismatch("hand trajectory and target joints differ in length");
  traj.validate();
}

hand::HandShape FitProblem::shape(std::span<const double> x) const {
  hand::HandShape s;
  std::copy_n(x.begin(), hand::kNumShape, s.beta.begin());
  return s;
}

hand::HandPose FitProblem::pose(std::span<const double> x, std::size_t t) const {
  hand::HandPose p;
  p.global_rot = traj_.rotation[t];
  p.wrist_pos = traj_.translation[t];
  const double* th = x.data() + hand::kNumShape + t * kThetaDims;
  for (int a = 0; a < hand::kNumArticulated; ++a) p.theta[a] = Vec3(th[3 * a], th[3 * a + 1], th[3 * a + 2]);
  return p;
}

std::vector<double> FitProblem::pack(const hand::HandShape& shape, std::span<const ThetaFrame> theta) const {
  if (theta.size() != frames()) throw LengthMismatch("warm start has the wrong number of frames");
  std::vector<double> x(shape.beta.begin(), shape.beta.end());
  for (const auto& frame : theta)
    for (const auto& a : frame) x.insert(x.end(), {a[0], a[1], a[2]});
  return x;
}

double FitProblem::data_term(std::span<const double> x) const {
  const hand::HandShape s = shape(x);
  double e = 0.0;
  for (std::size_t t = 0; t < frames(); ++t) {
    const auto j = hand::forward_kinematics(s, pose(x, t), *skel_);
    for (int k = 0; k < hand::kNumJoints; ++k) e += kMm2 * (j[k] - targets_[t][k]).squaredNorm();
  }
  return e / static_cast<double>(frames());
}

double FitProblem::evaluate(std::span<const double> x, std::span<double> grad) const {
  if (x.size() != dims()) throw ShapeMismatch("fit vector has the wrong size");
  const bool want_grad = !grad.empty();
  if (want_grad && grad.size() != dims()) throw ShapeMismatch("fit gradient has the wrong size");
  const std::size_t T = frames();
  const hand::HandShape s = shape(x);

  std::vector<hand::TemplateFrames> f(T);
  for (std::size_t t = 0; t < T; ++t) f[t] = hand::posed_frames(s, pose(x, t), *skel_);

  // dE/dj per frame and joint.
  std::vector<hand::JointSet> gj(T);
  for (auto& frame : gj) frame.fill(Vec3::Zero());

  double e = 0.0;
  const double dw = cfg_.data_weight * kMm2 / static_cast<double>(T);
  for (std::size_t t = 0; t < T; ++t) {
    for (int k = 0; k < hand::kNumJoints; ++k) {
      const Vec3 r = f[t].origin[k] - targets_[t][k];
      e += dw * r.squaredNorm();
      gj[t][k] += 2.0 * dw * r;
    }
  }

  if (cfg_.w4 != 0.0 && T >= 3) {
    const double fps2 = traj_.fps * traj_.fps;
    for (std::size_t t = 1; t + 1 < T; ++t) {
      for (int k = 0; k < hand::kNumJoints; ++k) {
        const Vec3 acc = (f[t + 1].origin[k] - 2.0 * f[t].origin[k] + f[t - 1].origin[k]) * fps2;
        const double n = acc.norm();
        e += cfg_.w4 * n;
        if (n > 0.0) {
          const Vec3 u = cfg_.w4 * fps2 * acc / n;
          gj[t + 1][k] += u;
          gj[t][k] -= 2.0 * u;
          gj[t - 1][k] += u;
        }
      }
    }
  }

  for (int i = 0; i < hand::kNumShape; ++i) e += cfg_.w1 * x[i] * x[i];
  const double* th = x.data() + hand::kNumShape;
  for (std::size_t i = 0; i < T * kThetaDims; ++i) e += cfg_.w2 * th[i] * th[i];
  if (T >= 2) {
    for (std::size_t t = 0; t + 1 < T; ++t) {
      for (int i = 0; i < kThetaDims; ++i) {
        const double d = th[(t + 1) * kThetaDims + i] - th[t * kThetaDims + i];
        e += cfg_.w3 * d * d;
      }
    }
  }
  if (!want_grad) return e;

  std::fill(grad.begin(), grad.end(), 0.0);
  for (int i = 0; i < hand::kNumShape; ++i) grad[i] = 2.0 * cfg_.w1 * x[i];
  double* gth = grad.data() + hand::kNumShape;
  for (std::size_t i = 0; i < T * kThetaDims; ++i) gth[i] = 2.0 * cfg_.w2 * th[i];
  if (T >= 2) {
    for (std::size_t t = 0; t + 1 < T; ++t) {
      for (int i = 0; i < kThetaDims; ++i) {
        const double d = 2.0 * cfg_.w3 * (th[(t + 1) * kThetaDims + i] - th[t * kThetaDims + i]);
        gth[(t + 1) * kThetaDims + i] += d;
        gth[t * kThetaDims + i] -= d;
      }
    }
  }

  static const Topology topo(hand::Skeleton::standard());
  const Topology local_topo = skel_ == &hand::Skeleton::standard() ? topo : Topology(*skel_);
  for (std::size_t t = 0; t < T; ++t) {
    const auto& fr = f[t];
    // Subtree sums of g and of (j_k - j_a) x g_k, gathered per joint a.
    for (int a = 1; a < hand::kNumJoints; ++a) {
      Vec3 gsum = gj[t][a];
      Vec3 torque = Vec3::Zero();
      for (int k = a + 1; k < hand::kNumJoints; ++k) {
        if (!local_topo.above[a][k]) continue;
        gsum += gj[t][k];
        torque += (fr.origin[k] - fr.origin[a]).cross(gj[t][k]);
      }
      // Rotation of joint a moves every strict descendant.
      const int slot = hand::articulated_slot(a);
      if (slot >= 0) {
        const Vec3 th_a(th[t * kThetaDims + 3 * slot], th[t * kThetaDims + 3 * slot + 1],
                        th[t * kThetaDims + 3 * slot + 2]);
        const Vec3 gr = right_jacobian_so3(th_a).transpose() * (fr.rotation[a].transpose() * torque);
        for (int c = 0; c < 3; ++c) gth[t * kThetaDims + 3 * slot + c] += gr[c];
      }
      // Scaling bone a (ending at joint a) moves joint a and its descendants.
      const int group = skel_->shape_group[a - 1];
      const double raw = 1.0 + 0.1 * x[group];
      if (raw > 0.5 && raw < 1.5) {
        const Vec3 dir = fr.rotation[skel_->parent[a]] * skel_->rest_bone(a);
        grad[group] += 0.1 * dir.dot(gsum);
      }
    }
  }
  return e;
}

namespace {

void clamp_angles(std::vector<double>& x) {
  for (std::size_t i = hand::kNumShape; i + 2 < x.size(); i += 3) {
    const Vec3 v(x[i], x[i + 1], x[i + 2]);
    const double n = v.norm();
    if (n > kMaxAngle) {
      const Vec3 c = v * (kMaxAngle / n);
      x[i] = c[0];
      x[i + 1] = c[1];
      x[i + 2] = c[2];
    }
  }
}

}  // namespace

FitResult fit_sequence(std::span<const hand::JointSet> targets, const HandTrajectory& traj, const FitConfig& cfg,
                       const FitResult* warm_start) {
  if (cfg.iters < 0 || !(cfg.lr > 0.0)) throw ValidationError("fitting needs iters >= 0 and lr > 0");
  const FitProblem problem(targets, traj, cfg);
  std::vector<double> x(problem.dims(), 0.0);
  if (warm_start && warm_start->poses.size() == problem.frames()) {
    std::vector<ThetaFrame> theta;
    for (const auto& p : warm_start->poses) theta.push_back(p.theta);
    x = problem.pack(warm_start->shape, theta);
    clamp_angles(x);
  }

  const std::size_t n = x.size();
  std::vector<double> g(n), m(n, 0.0), v(n, 0.0), cand(n);
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double lr = cfg.lr;
  double f = problem.evaluate(x, g);
  if (!std::isfinite(f)) throw NonFiniteLoss("fitting objective is not finite at the start point");

  FitResult out;
  out.trace.reserve(static_cast<std::size_t>(cfg.iters));
  for (int it = 1; it <= cfg.iters; ++it) {
    const double c1 = 1.0 - std::pow(b1, it), c2 = 1.0 - std::pow(b2, it);
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
    }
    bool accepted = false;
    for (int halvings = 0; halvings < 30 && !accepted; ++halvings) {
      for (std::size_t i = 0; i < n; ++i) cand[i] = x[i] - lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      clamp_angles(cand);
      const double fc = problem.evaluate(cand);
      if (!std::isfinite(fc)) throw NonFiniteLoss("fitting objective diverged");
      if (fc <= f) {
        x.swap(cand);
        f = fc;
        accepted = true;
        lr = std::min(cfg.lr, lr * 1.2);
      } else {
        lr *= 0.5;
      }
    }
    out.trace.push_back(f);
    if (!accepted) break;  // no descent along the moment direction at any rate
    f = problem.evaluate(x, g);
  }

  out.shape = problem.shape(x);
  for (std::size_t t = 0; t < problem.frames(); ++t) {
    out.poses.push_back(problem.pose(x, t));
    out.joints.push_back(hand::forward_kinematics(out.shape, out.poses.back()));
  }
  out.loss = f;
  return out;
}

}  // namespace gears::fit
