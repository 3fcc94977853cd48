#include "gears/networks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gears/errors.hpp"
#include "gears/random.hpp"

namespace gears::net {

using nlohmann::json;
using nn::Graph;
using nn::ParamStore;
using nn::Tensor;
using nn::Var;

// ---- config serialization ------------------------------------------------------

#define GEARS_GET(field) c.field = j.value(#field, c.field)

void to_json(json& j, const SensorConfig& c) {
  j = {{"cube_side", c.cube_side},     {"crop_samples", c.crop_samples}, {"window_k", c.window_k},
       {"window_s", c.window_s},       {"radius", c.radius},             {"max_points", c.max_points},
       {"surface_samples", c.surface_samples}};
}
void from_json(const json& j, SensorConfig& c) {
  GEARS_GET(cube_side);
  GEARS_GET(crop_samples);
  GEARS_GET(window_k);
  GEARS_GET(window_s);
  GEARS_GET(radius);
  GEARS_GET(max_points);
  GEARS_GET(surface_samples);
}

void to_json(json& j, const InitNetConfig& c) {
  j = {{"pointnet", c.pointnet}, {"mlp", c.mlp}, {"window_k", c.window_k}, {"coord_scale", c.coord_scale}};
}
void from_json(const json& j, InitNetConfig& c) {
  GEARS_GET(pointnet);
  GEARS_GET(mlp);
  GEARS_GET(window_k);
  GEARS_GET(coord_scale);
}

void to_json(json& j, const DispNetConfig& c) {
  j = {{"pointnet", c.pointnet},       {"embed", c.embed},         {"blocks", c.blocks},
       {"ffn", c.ffn},                 {"max_frames", c.max_frames}, {"attention", c.attention},
       {"point_scale", c.point_scale}, {"coord_scale", c.coord_scale}, {"disp_scale", c.disp_scale}};
}
void from_json(const json& j, DispNetConfig& c) {
  GEARS_GET(pointnet);
  GEARS_GET(embed);
  GEARS_GET(blocks);
  GEARS_GET(ffn);
  GEARS_GET(max_frames);
  GEARS_GET(attention);
  GEARS_GET(point_scale);
  GEARS_GET(coord_scale);
  GEARS_GET(disp_scale);
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"sensor", c.sensor},
       {"init", c.init},
       {"disp", c.disp},
       {"stage1_epochs", c.stage1_epochs},
       {"stage2_epochs", c.stage2_epochs},
       {"batch_size", c.batch_size},
       {"lr_init", c.lr_init},
       {"lr_disp", c.lr_disp},
       {"disp_init_noise", c.disp_init_noise},
       {"train_displacement", c.train_displacement}};
}
void from_json(const json& j, TrainConfig& c) {
  GEARS_GET(sensor);
  GEARS_GET(init);
  GEARS_GET(disp);
  GEARS_GET(stage1_epochs);
  GEARS_GET(stage2_epochs);
  GEARS_GET(batch_size);
  GEARS_GET(lr_init);
  GEARS_GET(lr_disp);
  GEARS_GET(disp_init_noise);
  GEARS_GET(train_displacement);
}

#undef GEARS_GET

// ---- sequence features -----------------------------------------------------------

SequenceFeatures::SequenceFeatures(const SequenceRecord& record, const SensorConfig& cfg, std::uint64_t seed)
    : record_(&record), cfg_(cfg), seed_(seed) {
  if (record.object_mesh.faces.empty()) throw EmptyMesh();
  surface_ = sample_surface(record.object_mesh, cfg.surface_samples, derive_seed(seed, 0x5f));
}

InitInput SequenceFeatures::init_input(std::size_t t) const {
  const auto& hand = record_->hand_traj;
  if (t >= hand.frames()) throw FrameOutOfRange(t, hand.frames());
  InitInput in;
  in.window = sample_trajectory_window(hand, t, cfg_.window_k, cfg_.window_s).flatten();
  const TriMesh posed = posed_mesh(record_->object_mesh, record_->object_traj, t);
  const TriMesh crop = crop_with_cube(posed, CubeSensor{cfg_.cube_side}, hand.translation[t], hand.rotation[t]);
  if (!crop.faces.empty()) {
    try {
      const PointCloud cloud = sample_surface(crop, cfg_.crop_samples, derive_seed(seed_, 0x1000 + t));
      in.points = canonicalize_to_wrist(cloud, hand.translation[t], hand.rotation[t]).points;
    } catch (const EmptyMesh&) {
      // zero-area crop: treated like an empty one
    }
  }
  return in;
}

PointCloud SequenceFeatures::posed_surface(std::size_t t) const {
  const RigidTransform tf = record_->object_traj.at(t);
  PointCloud out;
  out.points.reserve(surface_.size());
  out.normals.reserve(surface_.size());
  for (std::size_t i = 0; i < surface_.size(); ++i) {
    out.points.push_back(tf.apply(surface_.points[i]));
    out.normals.push_back(tf.rotation * surface_.normals[i]);
  }
  return out;
}

DispInput SequenceFeatures::disp_input(const std::vector<hand::JointSet>& joints, std::uint64_t seed) const {
  const std::size_t frames = record_->frames();
  if (joints.size() != frames) throw LengthMismatch("initial joints do not match the sequence length");
  // The surface is static in the object frame, so the sensor is built there once
  // and joints are brought into the object frame for the query. Composing the
  // template rotation with R_O^T yields points in each joint's template frame.
  const JointSensor sensor(surface_, cfg_.radius);
  DispInput in;
  in.init_joints = joints;
  for (std::size_t t = 0; t < frames; ++t) {
    const Mat3& rh = record_->hand_traj.rotation[t];
    hand::TemplateFrames frames_t = hand::inverse_kinematics(joints[t], rh, hand::DegenerateBonePolicy::UseParentRotation);
    const RigidTransform obj = record_->object_traj.at(t);
    hand::JointSet local;
    hand::TemplateFrames query_frames = frames_t;
    for (int k = 0; k < hand::kNumJoints; ++k) {
      local[k] = obj.apply_inverse(joints[t][k]);
      query_frames.rotation[k] = obj.rotation.transpose() * frames_t.rotation[k];
    }
    in.samples.push_back(sensor.query(local, query_frames, cfg_.max_points, derive_seed(seed, t)));
    in.frames.push_back(std::move(frames_t));
    in.hand_rot.push_back(rh);
    in.wrist.push_back(record_->hand_traj.translation[t]);
  }
  return in;
}

// ---- helpers -----------------------------------------------------------------------

namespace {

std::string pname(const std::string& prefix, const char* kind, std::size_t i) {
  return prefix + "." + kind + std::to_string(i);
}

void add_layers(ParamStore& ps, Rng& rng, const std::string& prefix, std::size_t in, const std::vector<std::size_t>& widths) {
  for (std::size_t i = 0; i < widths.size(); ++i) {
    ps.add_uniform(pname(prefix, "w", i), in, widths[i], in, rng);
    ps.add_uniform(pname(prefix, "b", i), 1, widths[i], in, rng);
    in = widths[i];
  }
}

Var run_layers(Graph& g, ParamStore& ps, const std::string& prefix, Var x, std::size_t layers, bool relu_last) {
  for (std::size_t i = 0; i < layers; ++i) {
    x = nn::linear(x, g.param(ps.at(pname(prefix, "w", i))), g.param(ps.at(pname(prefix, "b", i))));
    if (i + 1 < layers || relu_last) x = nn::relu(x);
  }
  return x;
}

void check_widths(const std::vector<std::size_t>& w, const char* what) {
  if (w.empty() || std::find(w.begin(), w.end(), std::size_t{0}) != w.end())
    throw ValidationError(std::string(what) + " widths must be non-empty and positive");
}

}  // namespace

Tensor joints_to_rows(std::span<const hand::JointSet> joints) {
  Tensor t(joints.size(), 3 * hand::kNumJoints);
  for (std::size_t i = 0; i < joints.size(); ++i)
    for (int k = 0; k < hand::kNumJoints; ++k)
      for (int c = 0; c < 3; ++c) t(i, 3 * k + c) = joints[i][k][c];
  return t;
}

Tensor joints_to_points(std::span<const hand::JointSet> joints) {
  Tensor t(joints.size() * hand::kNumJoints, 3);
  for (std::size_t i = 0; i < joints.size(); ++i)
    for (int k = 0; k < hand::kNumJoints; ++k)
      for (int c = 0; c < 3; ++c) t(i * hand::kNumJoints + k, c) = joints[i][k][c];
  return t;
}

std::vector<hand::JointSet> rows_to_joints(const Tensor& t) {
  std::vector<hand::JointSet> out;
  if (t.cols() == 3 * hand::kNumJoints) {
    out.resize(t.rows());
    for (std::size_t i = 0; i < t.rows(); ++i)
      for (int k = 0; k < hand::kNumJoints; ++k) out[i][k] = Vec3(t(i, 3 * k), t(i, 3 * k + 1), t(i, 3 * k + 2));
  } else if (t.cols() == 3 && t.rows() % hand::kNumJoints == 0) {
    out.resize(t.rows() / hand::kNumJoints);
    for (std::size_t r = 0; r < t.rows(); ++r) out[r / hand::kNumJoints][r % hand::kNumJoints] = Vec3(t(r, 0), t(r, 1), t(r, 2));
  } else {
    throw ShapeMismatch("tensor does not hold joint sets");
  }
  return out;
}

double loss_init(const hand::JointSet& pred, const hand::JointSet& gt) {
  double s = 0.0;
  for (int k = 0; k < hand::kNumJoints; ++k) s += (pred[k] - gt[k]).squaredNorm();
  return s / hand::kNumJoints;
}

double loss_disp(std::span<const hand::JointSet> init, std::span<const hand::JointSet> d,
                 std::span<const hand::JointSet> gt) {
  if (init.size() != d.size() || init.size() != gt.size()) throw ShapeMismatch("loss_disp: sequence lengths differ");
  if (init.empty()) throw ShapeMismatch("loss_disp: empty sequence");
  double s = 0.0;
  for (std::size_t t = 0; t < init.size(); ++t)
    for (int k = 0; k < hand::kNumJoints; ++k) s += (init[t][k] + d[t][k] - gt[t][k]).squaredNorm();
  return s / static_cast<double>(init.size() * hand::kNumJoints);
}

// ---- InitNet -------------------------------------------------------------------------

namespace {
std::size_t window_width(int k) { return static_cast<std::size_t>(2 * k + 1) * 12; }
}  // namespace

InitNet::InitNet(const InitNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  check_widths(cfg.pointnet, "init pointnet");
  check_widths(cfg.mlp, "init mlp");
  if (cfg.window_k < 1) throw ValidationError("window k must be at least 1");
  Rng rng(seed);
  add_layers(params_, rng, "pn", 3, cfg.pointnet);
  auto widths = cfg.mlp;
  widths.push_back(3 * hand::kNumJoints);
  add_layers(params_, rng, "mlp", cfg.pointnet.back() + window_width(cfg.window_k), widths);
}

InitNet::InitNet(const InitNetConfig& cfg, ParamStore params) : cfg_(cfg), params_(std::move(params)) {}

Var InitNet::forward(Graph& g, std::span<const InitInput> batch) {
  if (batch.empty()) throw ShapeMismatch("InitNet: empty batch");
  const std::size_t ww = window_width(cfg_.window_k);
  std::size_t total = 0;
  for (const auto& in : batch) {
    if (in.window.size() != ww) throw ShapeMismatch("InitNet: trajectory window has the wrong width");
    total += std::max<std::size_t>(1, in.points.size());
  }
  Tensor pts(total, 3);
  Tensor win(batch.size(), ww);
  std::vector<std::size_t> offsets{0};
  std::size_t row = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (const auto& p : batch[b].points) {
      for (int c = 0; c < 3; ++c) pts(row, c) = cfg_.coord_scale * p[c];
      ++row;
    }
    if (batch[b].points.empty()) ++row;  // single zero point
    offsets.push_back(row);
    for (std::size_t i = 0; i < ww; ++i) {
      const bool translation = i % 12 < 3;
      win(b, i) = translation ? cfg_.coord_scale * batch[b].window[i] : batch[b].window[i];
    }
  }
  Var h = run_layers(g, params_, "pn", g.constant(std::move(pts)), cfg_.pointnet.size(), true);
  Var feat = nn::segment_max(h, std::move(offsets));
  Var z = nn::concat_cols(feat, g.constant(std::move(win)));
  z = run_layers(g, params_, "mlp", z, cfg_.mlp.size() + 1, false);
  // Outputs are offsets from the rest skeleton, which is already wrist-relative.
  Tensor rest(1, 3 * hand::kNumJoints);
  const auto& sk = hand::Skeleton::standard();
  for (int k = 0; k < hand::kNumJoints; ++k)
    for (int c = 0; c < 3; ++c) rest(0, 3 * k + c) = sk.rest_joints[k][c];
  return nn::add_bias(nn::scale(z, 1.0 / cfg_.coord_scale), g.constant(std::move(rest)));
}

hand::JointSet InitNet::predict(const InitInput& input) {
  Graph g;
  return rows_to_joints(forward(g, std::span<const InitInput>(&input, 1)).value()).front();
}

// ---- DispNet -------------------------------------------------------------------------

DispNet::DispNet(const DispNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  check_widths(cfg.pointnet, "disp pointnet");
  check_widths(cfg.embed, "disp embedding");
  if (cfg.blocks < 0 || cfg.ffn == 0 || cfg.max_frames == 0) throw ValidationError("invalid displacement network sizes");
  Rng rng(seed);
  const std::size_t d = cfg.d_model();
  add_layers(params_, rng, "feat", 6, cfg.pointnet);
  add_layers(params_, rng, "emb", 6, cfg.embed);
  params_.add_uniform("pos", cfg.max_frames, d, d, rng);
  for (int b = 0; b < cfg.blocks; ++b) {
    for (const char* kind : {"s", "t"}) {
      const std::string p = kind + std::to_string(b);
      if (cfg.attention) {
        params_.add_uniform(p + ".wq", d, d, d, rng);
        params_.add_uniform(p + ".wk", d, d, d, rng);
      }
      params_.add_uniform(p + ".wv", d, d, d, rng);
      add_layers(params_, rng, p + ".ffn", d, {cfg.ffn, d});
    }
  }
  add_layers(params_, rng, "head", d, {3});
}

DispNet::DispNet(const DispNetConfig& cfg, ParamStore params) : cfg_(cfg), params_(std::move(params)) {}

Var DispNet::local_features(Graph& g, std::span<const JointSensorSample> samples) {
  std::size_t total = 0;
  for (const auto& s : samples) total += s.total();
  std::vector<std::size_t> offsets{0};
  Tensor pts(total, 6);
  std::size_t row = 0;
  for (const auto& s : samples) {
    for (int k = 0; k < hand::kNumJoints; ++k) {
      for (std::size_t i = 0; i < s.count(k); ++i, ++row) {
        for (int c = 0; c < 3; ++c) {
          pts(row, c) = cfg_.point_scale * s.points[k][i][c];
          pts(row, 3 + c) = s.normals[k][i][c];
        }
      }
      offsets.push_back(row);
    }
  }
  if (total == 0) {
    // No sensed points anywhere: every feature is the empty-set zero vector.
    return g.constant(Tensor(samples.size() * hand::kNumJoints, cfg_.pointnet.back()));
  }
  Var h = run_layers(g, params_, "feat", g.constant(std::move(pts)), cfg_.pointnet.size(), true);
  return nn::segment_max(h, std::move(offsets));
}

Var DispNet::attention_block(Graph& g, Var x, const std::string& p,
                             const std::shared_ptr<const std::vector<std::vector<int>>>& groups) {
  Var v = nn::matmul(x, g.param(params_.at(p + ".wv")));
  Var a = v;
  if (cfg_.attention) {
    Var q = nn::matmul(x, g.param(params_.at(p + ".wq")));
    Var k = nn::matmul(x, g.param(params_.at(p + ".wk")));
    a = nn::grouped_attention(q, k, v, groups);
  }
  return a;
}

Var DispNet::forward(Graph& g, const DispInput& in) {
  const std::size_t frames = in.frames_count();
  if (frames == 0 || in.samples.size() != frames || in.frames.size() != frames || in.hand_rot.size() != frames ||
      in.wrist.size() != frames)
    throw ShapeMismatch("DispNet: inconsistent input lengths");
  const std::size_t rows = frames * hand::kNumJoints;
  const auto& sk = hand::Skeleton::standard();

  Var f = local_features(g, in.samples);

  // Joint embedding input: rest-pose joint identity and the joint in wrist coordinates.
  Tensor emb_in(rows, 6);
  for (std::size_t t = 0; t < frames; ++t) {
    const Mat3 rt = in.hand_rot[t].transpose();
    for (int k = 0; k < hand::kNumJoints; ++k) {
      const Vec3 local = rt * (in.init_joints[t][k] - in.wrist[t]);
      const std::size_t r = t * hand::kNumJoints + k;
      for (int c = 0; c < 3; ++c) {
        emb_in(r, c) = cfg_.coord_scale * sk.rest_joints[k][c];
        emb_in(r, 3 + c) = cfg_.coord_scale * local[c];
      }
    }
  }
  Var e = run_layers(g, params_, "emb", g.constant(std::move(emb_in)), cfg_.embed.size(), true);
  Var x = nn::concat_cols(f, e);

  auto spatial = std::make_shared<std::vector<std::vector<int>>>(frames);
  auto temporal = std::make_shared<std::vector<std::vector<int>>>(hand::kNumJoints);
  std::vector<int> pos_rows(rows);
  for (std::size_t t = 0; t < frames; ++t) {
    for (int k = 0; k < hand::kNumJoints; ++k) {
      const int r = static_cast<int>(t * hand::kNumJoints + k);
      (*spatial)[t].push_back(r);
      (*temporal)[k].push_back(r);
      pos_rows[r] = static_cast<int>(std::min(t, cfg_.max_frames - 1));
    }
  }
  const Var pos = nn::gather_rows(g.param(params_.at("pos")), std::move(pos_rows));

  for (int b = 0; b < cfg_.blocks; ++b) {
    for (const char* kind : {"s", "t"}) {
      const std::string p = kind + std::to_string(b);
      const bool temporal_block = kind[0] == 't';
      Var in_x = temporal_block ? nn::add(x, pos) : x;
      x = nn::add(x, attention_block(g, in_x, p, temporal_block ? temporal : spatial));
      Var h = run_layers(g, params_, p + ".ffn", x, 2, false);
      x = nn::add(x, h);
    }
  }
  Var local_disp = nn::scale(run_layers(g, params_, "head", x, 1, false), cfg_.disp_scale);

  std::vector<Mat3> rot(rows);
  for (std::size_t t = 0; t < frames; ++t)
    for (int k = 0; k < hand::kNumJoints; ++k) rot[t * hand::kNumJoints + k] = in.frames[t].rotation[k];
  return nn::rotate_rows(local_disp, std::move(rot));
}

std::vector<hand::JointSet> DispNet::predict(const DispInput& input) {
  Graph g;
  const auto d = rows_to_joints(forward(g, input).value());
  std::vector<hand::JointSet> out = input.init_joints;
  for (std::size_t t = 0; t < out.size(); ++t)
    for (int k = 0; k < hand::kNumJoints; ++k) out[t][k] += d[t][k];
  return out;
}

// ---- checkpoints -----------------------------------------------------------------------

nn::Checkpoint make_checkpoint(const InitNet& init, const DispNet& disp) {
  nn::Checkpoint ck;
  ck.stores["init"] = init.params();
  ck.stores["disp"] = disp.params();
  ck.meta["init_config"] = init.config();
  ck.meta["disp_config"] = disp.config();
  return ck;
}

namespace {

void check_store(const ParamStore& loaded, const ParamStore& expected, const char* what) {
  if (loaded.all().size() != expected.all().size())
    throw ValidationError(std::string(what) + " checkpoint does not match its config");
  for (const auto& [name, p] : expected.all()) {
    if (!loaded.contains(name) || !loaded.at(name).value.same_shape(p.value))
      throw ValidationError(std::string(what) + " checkpoint parameter '" + name + "' does not match its config");
  }
}

}  // namespace

std::pair<InitNet, DispNet> load_networks(const nn::Checkpoint& ck) {
  if (!ck.stores.count("init") || !ck.stores.count("disp") || !ck.meta.contains("init_config") ||
      !ck.meta.contains("disp_config"))
    throw ValidationError("checkpoint lacks network parameters");
  const auto icfg = ck.meta["init_config"].get<InitNetConfig>();
  const auto dcfg = ck.meta["disp_config"].get<DispNetConfig>();
  check_store(ck.stores.at("init"), InitNet(icfg, 0).params(), "init");
  check_store(ck.stores.at("disp"), DispNet(dcfg, 0).params(), "disp");
  return {InitNet(icfg, ck.stores.at("init")), DispNet(dcfg, ck.stores.at("disp"))};
}

// ---- training ----------------------------------------------------------------------------

namespace {
constexpr std::uint64_t kStage1Stream = 1ull << 40;
constexpr std::uint64_t kStage2Stream = 2ull << 40;
}  // namespace

Trainer::Trainer(std::vector<SequenceRecord> records, const TrainConfig& cfg, std::uint64_t seed)
    : records_(std::move(records)),
      cfg_(cfg),
      seed_(seed),
      init_(cfg.init, derive_seed(seed, 1)),
      disp_(cfg.disp, derive_seed(seed, 2)) {
  if (records_.empty()) throw EmptyDataset();
  if (cfg.batch_size == 0) throw ValidationError("batch size must be positive");
  if (cfg.init.window_k != cfg.sensor.window_k) throw ValidationError("init network and sensor window sizes differ");
  features_.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (!r.gt_joints) throw ValidationError("training record lacks ground-truth joints");
    features_.emplace_back(r, cfg.sensor, derive_seed(seed, 0x10000 + i));
    for (std::size_t t = 0; t < r.frames(); ++t) {
      stage1_inputs_.push_back(features_.back().init_input(t));
      const Mat3 rt = r.hand_traj.rotation[t].transpose();
      hand::JointSet target;
      for (int k = 0; k < hand::kNumJoints; ++k) target[k] = rt * ((*r.gt_joints)[t][k] - r.hand_traj.translation[t]);
      stage1_targets_.push_back(target);
    }
  }
}

bool Trainer::done() const {
  return epoch1_ >= cfg_.stage1_epochs && (!cfg_.train_displacement || epoch2_ >= cfg_.stage2_epochs);
}

double Trainer::stage1_epoch() {
  Rng rng(derive_seed(seed_, kStage1Stream + epoch1_));
  std::vector<std::size_t> order(stage1_inputs_.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const nn::AdamConfig adam{cfg_.lr_init};
  double total = 0.0;
  for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
    std::vector<InitInput> batch;
    std::vector<hand::JointSet> target;
    for (std::size_t i = start; i < end; ++i) {
      batch.push_back(stage1_inputs_[order[i]]);
      target.push_back(stage1_targets_[order[i]]);
    }
    Graph g;
    Var pred = init_.forward(g, batch);
    const double n = static_cast<double>(batch.size() * hand::kNumJoints);
    Var loss = nn::sum_squared_error(pred, g.constant(joints_to_rows(target)), n);
    if (!std::isfinite(loss.value()[0])) throw NonFiniteLoss("stage-1 loss diverged");
    total += loss.value()[0] * static_cast<double>(batch.size());
    init_.params().zero_grad();
    g.backward(loss);
    nn::adam_step(init_.params(), adam);
  }
  return total / static_cast<double>(order.size());
}

void Trainer::prepare_stage2() {
  stage2_init_.clear();
  std::size_t offset = 0;
  for (const auto& r : records_) {
    Graph g;
    const std::span<const InitInput> inputs(stage1_inputs_.data() + offset, r.frames());
    auto rel = rows_to_joints(init_.forward(g, inputs).value());
    for (std::size_t t = 0; t < r.frames(); ++t)
      rel[t] = hand::transform_joints(rel[t], r.hand_traj.at(t));
    stage2_init_.push_back(std::move(rel));
    offset += r.frames();
  }
}

double Trainer::stage2_epoch() {
  if (stage2_init_.empty()) prepare_stage2();
  Rng rng(derive_seed(seed_, kStage2Stream + epoch2_));
  std::vector<std::size_t> order(records_.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::normal_distribution<double> noise(0.0, 1.0);
  const nn::AdamConfig adam{cfg_.lr_disp};
  double total = 0.0;
  for (std::size_t i : order) {
    auto joints = stage2_init_[i];
    if (cfg_.disp_init_noise > 0.0) {
      for (auto& frame : joints)
        for (auto& j : frame)
          for (int c = 0; c < 3; ++c) j[c] += cfg_.disp_init_noise * noise(rng);
    }
    const DispInput in = features_[i].disp_input(joints, rng());
    Graph g;
    Var d = disp_.forward(g, in);
    Var refined = nn::add(d, g.constant(joints_to_points(in.init_joints)));
    const auto& gt = *records_[i].gt_joints;
    Var loss = nn::sum_squared_error(refined, g.constant(joints_to_points(gt)),
                                     static_cast<double>(gt.size() * hand::kNumJoints));
    if (!std::isfinite(loss.value()[0])) throw NonFiniteLoss("stage-2 loss diverged");
    total += loss.value()[0];
    disp_.params().zero_grad();
    g.backward(loss);
    nn::adam_step(disp_.params(), adam);
  }
  return total / static_cast<double>(order.size());
}

void Trainer::run_epochs(std::size_t n, const std::function<void(const LogEntry&)>& on_epoch) {
  for (std::size_t i = 0; i < n && !done(); ++i) {
    LogEntry e;
    if (epoch1_ < cfg_.stage1_epochs) {
      e.loss = stage1_epoch();
      e.stage = 1;
      e.epoch = ++epoch1_;
    } else {
      e.loss = stage2_epoch();
      e.stage = 2;
      e.epoch = ++epoch2_;
    }
    log_.push_back(e);
    if (on_epoch) on_epoch(e);
  }
}

void Trainer::run(const std::function<void(const LogEntry&)>& on_epoch) {
  run_epochs(cfg_.stage1_epochs + cfg_.stage2_epochs, on_epoch);
}

nn::Checkpoint Trainer::checkpoint() const {
  nn::Checkpoint ck = make_checkpoint(init_, disp_);
  ck.meta["train_config"] = cfg_;
  ck.meta["seed"] = seed_;
  ck.meta["epoch1"] = epoch1_;
  ck.meta["epoch2"] = epoch2_;
  json log = json::array();
  for (const auto& e : log_) log.push_back({{"stage", e.stage}, {"epoch", e.epoch}, {"loss", e.loss}});
  ck.meta["log"] = std::move(log);
  return ck;
}

void Trainer::restore(const nn::Checkpoint& ck) {
  if (!ck.meta.contains("epoch1") || !ck.meta.contains("epoch2")) throw ValidationError("checkpoint holds no training state");
  if (ck.meta.value("seed", seed_) != seed_) throw ValidationError("checkpoint was trained with a different seed");
  auto [init, disp] = load_networks(ck);
  check_store(init.params(), init_.params(), "init");
  check_store(disp.params(), disp_.params(), "disp");
  init_ = std::move(init);
  disp_ = std::move(disp);
  epoch1_ = ck.meta["epoch1"].get<std::size_t>();
  epoch2_ = ck.meta["epoch2"].get<std::size_t>();
  log_.clear();
  for (const auto& e : ck.meta.value("log", json::array()))
    log_.push_back({e.at("stage").get<int>(), e.at("epoch").get<std::size_t>(), e.at("loss").get<double>()});
  stage2_init_.clear();
}

TrainResult train(const std::vector<SequenceRecord>& records, const TrainConfig& cfg, std::uint64_t seed) {
  Trainer trainer(records, cfg, seed);
  trainer.run();
  return {trainer.init_net(), trainer.disp_net(), trainer.log()};
}

// ---- inference ------------------------------------------------------------------------------

JointPrediction predict_joints(const SequenceRecord& record, InitNet& init, DispNet* disp, const SensorConfig& cfg,
                               std::uint64_t seed) {
  if (cfg.window_k != init.config().window_k) throw ValidationError("init network and sensor window sizes differ");
  const SequenceFeatures features(record, cfg, seed);
  std::vector<InitInput> inputs;
  for (std::size_t t = 0; t < record.frames(); ++t) inputs.push_back(features.init_input(t));
  JointPrediction out;
  {
    Graph g;
    out.init = rows_to_joints(init.forward(g, inputs).value());
  }
  for (std::size_t t = 0; t < record.frames(); ++t) out.init[t] = hand::transform_joints(out.init[t], record.hand_traj.at(t));
  out.refined = disp ? disp->predict(features.disp_input(out.init, derive_seed(seed, 0xd15))) : out.init;
  return out;
}

}  // namespace gears::net
