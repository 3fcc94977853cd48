#pragma once

// The two learned stages. InitNet maps a wrist-canonical object crop and a
// trajectory window to wrist-relative joints. DispNet refines those joints
// from joint-local object samples with interleaved spatial and temporal
// attention, predicting displacements in each joint's template frame.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "json.hpp"

#include "gears/hand.hpp"
#include "gears/nn/graph.hpp"
#include "gears/nn/params.hpp"
#include "gears/record.hpp"
#include "gears/sensors.hpp"

namespace gears::net {

struct SensorConfig {
  double cube_side = 0.18;
  std::size_t crop_samples = 2000;
  int window_k = 10;
  double window_s = 1.0;
  double radius = 0.025;
  std::size_t max_points = 300;
  /// Points sampled once per sequence on the object template for the joint sensors.
  std::size_t surface_samples = 20000;
};

struct InitNetConfig {
  std::vector<std::size_t> pointnet{64, 128, 256};
  std::vector<std::size_t> mlp{256, 128};
  int window_k = 10;
  /// Input positions are multiplied by this, outputs divided by it.
  double coord_scale = 10.0;
};

struct DispNetConfig {
  std::vector<std::size_t> pointnet{32, 64, 64};
  std::vector<std::size_t> embed{64, 64};
  /// Number of (spatial, temporal) attention pairs.
  int blocks = 2;
  std::size_t ffn = 128;
  std::size_t max_frames = 256;
  bool attention = true;
  double point_scale = 40.0;
  double coord_scale = 10.0;
  /// Head outputs are multiplied by this to give metres.
  double disp_scale = 0.01;

  std::size_t d_model() const { return pointnet.back() + embed.back(); }
};

void to_json(nlohmann::json& j, const SensorConfig& c);
void from_json(const nlohmann::json& j, SensorConfig& c);
void to_json(nlohmann::json& j, const InitNetConfig& c);
void from_json(const nlohmann::json& j, InitNetConfig& c);
void to_json(nlohmann::json& j, const DispNetConfig& c);
void from_json(const nlohmann::json& j, DispNetConfig& c);

// ---- inputs ------------------------------------------------------------------

/// One frame's input to InitNet, already canonical to the wrist.
struct InitInput {
  std::vector<double> window;  // (2k + 1) * 12
  std::vector<Vec3> points;
};

/// One sequence's input to DispNet.
struct DispInput {
  std::vector<JointSensorSample> samples;
  std::vector<hand::JointSet> init_joints;  // global frame
  std::vector<hand::TemplateFrames> frames;
  std::vector<Mat3> hand_rot;
  std::vector<Vec3> wrist;

  std::size_t frames_count() const { return init_joints.size(); }
};

/// Per-sequence sensor state: the object surface sampled once on the template
/// mesh, then posed per frame.
class SequenceFeatures {
 public:
  SequenceFeatures(const SequenceRecord& record, const SensorConfig& cfg, std::uint64_t seed);

  std::size_t frames() const { return record_->frames(); }
  const SequenceRecord& record() const { return *record_; }

  /// Cube crop of the posed object, resampled with a per-frame seed, in wrist coordinates.
  InitInput init_input(std::size_t t) const;
  PointCloud posed_surface(std::size_t t) const;

  /// Template frames from IK on `joints`, then the sphere sensor per frame.
  DispInput disp_input(const std::vector<hand::JointSet>& joints, std::uint64_t seed) const;

 private:
  const SequenceRecord* record_;
  SensorConfig cfg_;
  std::uint64_t seed_;
  PointCloud surface_;  // object template frame
};

// ---- networks ----------------------------------------------------------------

class InitNet {
 public:
  InitNet(const InitNetConfig& cfg, std::uint64_t seed);
  InitNet(const InitNetConfig& cfg, nn::ParamStore params);

  const InitNetConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  /// B x 63 wrist-relative joints (metres, hand frame). Empty point sets are
  /// replaced by a single zero point.
  nn::Var forward(nn::Graph& g, std::span<const InitInput> batch);

  hand::JointSet predict(const InitInput& input);

 private:
  InitNetConfig cfg_;
  nn::ParamStore params_;
};

class DispNet {
 public:
  DispNet(const DispNetConfig& cfg, std::uint64_t seed);
  DispNet(const DispNetConfig& cfg, nn::ParamStore params);

  const DispNetConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  /// Shared local PointNet over every (frame, joint) sample: (T * 21) x width.
  /// Row t * 21 + k; empty samples give zero rows.
  nn::Var local_features(nn::Graph& g, std::span<const JointSensorSample> samples);

  /// Global-frame displacements, (T * 21) x 3 with row t * 21 + k.
  nn::Var forward(nn::Graph& g, const DispInput& input);

  std::vector<hand::JointSet> predict(const DispInput& input);

 private:
  nn::Var attention_block(nn::Graph& g, nn::Var x, const std::string& prefix,
                          const std::shared_ptr<const std::vector<std::vector<int>>>& groups);

  DispNetConfig cfg_;
  nn::ParamStore params_;
};

/// Sum of squared joint errors over the 21 joints, divided by 21.
double loss_init(const hand::JointSet& pred, const hand::JointSet& gt);
/// Sum over frames and joints of |init + d - gt|^2, divided by T * 21.
double loss_disp(std::span<const hand::JointSet> init, std::span<const hand::JointSet> d,
                 std::span<const hand::JointSet> gt);

/// Rows of 63 (or 3) values per joint set (or joint).
nn::Tensor joints_to_rows(std::span<const hand::JointSet> joints);
nn::Tensor joints_to_points(std::span<const hand::JointSet> joints);
std::vector<hand::JointSet> rows_to_joints(const nn::Tensor& t);

// ---- training ----------------------------------------------------------------

struct TrainConfig {
  SensorConfig sensor;
  InitNetConfig init;
  DispNetConfig disp;
  std::size_t stage1_epochs = 500;
  std::size_t stage2_epochs = 500;
  std::size_t batch_size = 16;
  double lr_init = 1e-3;
  double lr_disp = 1e-3;
  /// Std-dev (metres) of noise added to frozen initial joints in stage 2.
  double disp_init_noise = 0.005;
  bool train_displacement = true;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LogEntry {
  int stage = 1;
  std::size_t epoch = 0;
  double loss = 0.0;
};

/// Two-stage trainer. Every epoch draws its randomness from (seed, stage,
/// epoch), so a run restored from a checkpoint continues exactly.
class Trainer {
 public:
  Trainer(std::vector<SequenceRecord> records, const TrainConfig& cfg, std::uint64_t seed);
  // Features point into records_, which a move keeps in place but a copy would not.
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;
  Trainer(Trainer&&) = default;

  /// Runs the remaining epochs of both stages. `on_epoch` sees every entry as it is logged.
  void run(const std::function<void(const LogEntry&)>& on_epoch = {});
  /// Runs at most `n` more epochs.
  void run_epochs(std::size_t n, const std::function<void(const LogEntry&)>& on_epoch = {});
  bool done() const;

  nn::Checkpoint checkpoint() const;
  void restore(const nn::Checkpoint& ck);

  InitNet& init_net() { return init_; }
  DispNet& disp_net() { return disp_; }
  const std::vector<LogEntry>& log() const { return log_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  double stage1_epoch();
  double stage2_epoch();
  void prepare_stage2();

  std::vector<SequenceRecord> records_;
  TrainConfig cfg_;
  std::uint64_t seed_;
  InitNet init_;
  DispNet disp_;
  std::vector<SequenceFeatures> features_;
  std::vector<InitInput> stage1_inputs_;
  std::vector<hand::JointSet> stage1_targets_;
  std::vector<std::vector<hand::JointSet>> stage2_init_;
  std::size_t epoch1_ = 0;
  std::size_t epoch2_ = 0;
  std::vector<LogEntry> log_;
};

struct TrainResult {
  InitNet init;
  DispNet disp;
  std::vector<LogEntry> log;
};

TrainResult train(const std::vector<SequenceRecord>& records, const TrainConfig& cfg, std::uint64_t seed);

/// Wraps both networks' parameters and configs.
nn::Checkpoint make_checkpoint(const InitNet& init, const DispNet& disp);
std::pair<InitNet, DispNet> load_networks(const nn::Checkpoint& ck);

// ---- inference ---------------------------------------------------------------

struct JointPrediction {
  std::vector<hand::JointSet> init;     // global
  std::vector<hand::JointSet> refined;  // global; equals init without displacement
};

JointPrediction predict_joints(const SequenceRecord& record, InitNet& init, DispNet* disp,
                               const SensorConfig& cfg, std::uint64_t seed);

}  // namespace gears::net
