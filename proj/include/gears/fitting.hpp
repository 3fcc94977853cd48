#pragma once

// Fits one shared HandShape and per-frame joint rotations to a joint sequence.
// Global rotation and wrist position come from the hand trajectory and stay
// fixed. Objective, per sequence of T frames:
//
//   E = data_weight * (1/T) sum_t sum_k |j_k^t - target_k^t|^2   (millimetres^2)
//     + w1 |beta|^2 + w2 sum_t |theta^t|^2 + w3 sum_t |theta^{t+1} - theta^t|^2
//     + w4 sum_t sum_k |(j_k^{t+1} - 2 j_k^t + j_k^{t-1}) fps^2|   (metres / s^2)

#include <span>
#include <vector>

#include "json.hpp"

#include "gears/hand.hpp"
#include "gears/sensors.hpp"

namespace gears::fit {

struct FitConfig {
  double w1 = 1e-3;
  double w2 = 1e-4;
  double w3 = 1e-2;
  double w4 = 1e-3;
  double data_weight = 1.0;
  int iters = 400;
  double lr = 0.05;
};

void to_json(nlohmann::json& j, const FitConfig& c);
void from_json(const nlohmann::json& j, FitConfig& c);

using ThetaFrame = std::array<Vec3, hand::kNumArticulated>;

/// The objective over the packed vector [beta (10), theta^0 (45), theta^1, ...].
class FitProblem {
 public:
  FitProblem(std::span<const hand::JointSet> targets, const HandTrajectory& traj, const FitConfig& cfg,
             const hand::Skeleton& skel = hand::Skeleton::standard());

  std::size_t frames() const { return targets_.size(); }
  std::size_t dims() const { return hand::kNumShape + frames() * 3 * hand::kNumArticulated; }

  /// Objective value; fills `grad` (size dims()) when it is non-empty.
  double evaluate(std::span<const double> x, std::span<double> grad = {}) const;
  /// Data term alone (millimetres^2 per frame, summed over joints).
  double data_term(std::span<const double> x) const;

  hand::HandShape shape(std::span<const double> x) const;
  hand::HandPose pose(std::span<const double> x, std::size_t t) const;
  std::vector<double> pack(const hand::HandShape& shape, std::span<const ThetaFrame> theta) const;

 private:
  std::vector<hand::JointSet> targets_;
  HandTrajectory traj_;
  FitConfig cfg_;
  const hand::Skeleton* skel_;
};

struct FitResult {
  hand::HandShape shape;
  std::vector<hand::HandPose> poses;
  std::vector<hand::JointSet> joints;
  double loss = 0.0;
  /// Best objective value after each iteration (non-increasing).
  std::vector<double> trace;
};

/// Adam on the packed vector with step halving: a step that raises the
/// objective is retried at half the rate; accepted steps grow the rate back
/// by 1.2x up to cfg.lr. Rotation magnitudes are kept below pi.
FitResult fit_sequence(std::span<const hand::JointSet> targets, const HandTrajectory& traj, const FitConfig& cfg,
                       const FitResult* warm_start = nullptr);

}  // namespace gears::fit
