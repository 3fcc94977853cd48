#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "gears/errors.hpp"
#include "gears/pipeline.hpp"
#include "support.hpp"

using namespace gears;
using namespace gears::pipeline;
namespace fs = std::filesystem;
namespace gt = gears::testing;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("gears_pipeline_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

PipelineConfig tiny_config() {
  PipelineConfig c;
  auto& s = c.train.sensor;
  s.crop_samples = 48;
  s.window_k = 1;
  s.window_s = 0.1;
  s.max_points = 12;
  s.surface_samples = 1500;
  c.train.init.window_k = 1;
  c.train.init.pointnet = {4, 5};
  c.train.init.mlp = {6};
  c.train.disp.pointnet = {4, 4};
  c.train.disp.embed = {3, 4};
  c.train.disp.blocks = 1;
  c.train.disp.ffn = 5;
  c.train.disp.max_frames = 8;
  c.train.stage1_epochs = 3;
  c.train.stage2_epochs = 3;
  c.train.batch_size = 4;
  c.fit.iters = 20;
  c.synth.frames = 6;
  c.checkpoint_every = 2;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

bool same_poses(const std::optional<PoseSequence>& a, const std::optional<PoseSequence>& b) {
  if (a.has_value() != b.has_value()) return false;
  return !a || (a->shape.beta == b->shape.beta && a->theta == b->theta);
}

bool same_traj(const RigidTrajectory& a, const RigidTrajectory& b) {
  return a.rotation == b.rotation && a.translation == b.translation && a.fps == b.fps;
}

}  // namespace

TEST_CASE("pipeline config round-trips through JSON and hashes canonically") {
  PipelineConfig c = tiny_config();
  c.voxel_mm = 1.5;
  c.use_displacement = false;
  const json j = c;
  const PipelineConfig back = j.get<PipelineConfig>();
  CHECK(json(back) == j);
  CHECK(back.hash() == c.hash());
  CHECK(back.hash().size() == 16);
  c.train.sensor.radius = 0.02;
  CHECK(c.hash() != back.hash());

  // missing keys keep defaults
  const PipelineConfig partial = json{{"voxel_mm", 3.0}}.get<PipelineConfig>();
  CHECK(partial.voxel_mm == 3.0);
  CHECK(json(partial.train) == json(PipelineConfig{}.train));
}

TEST_CASE("pipeline config validation") {
  PipelineConfig c = tiny_config();
  CHECK_NOTHROW(c.validate());
  c.train.sensor.radius = 0.0;  // the radius ablation
  CHECK_NOTHROW(c.validate());
  c.train.sensor.radius = c.train.sensor.cube_side;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = tiny_config();
  c.train.sensor.radius = -0.01;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = tiny_config();
  c.voxel_mm = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = tiny_config();
  c.train.init.window_k = 3;
  CHECK_THROWS_AS(c.validate(), ValidationError);

  TempDir dir("config");
  std::ofstream(dir.path / "bad.json") << "{ not json";
  CHECK_THROWS_AS(load_config(dir.path / "bad.json"), ValidationError);
  CHECK_THROWS_AS(load_config(dir.path / "missing.json"), ValidationError);
  std::ofstream(dir.path / "ok.json") << json{{"train", {{"sensor", {{"radius", 0.01}}}}}}.dump();
  CHECK(load_config(dir.path / "ok.json").train.sensor.radius == 0.01);
}

TEST_CASE("synthesized corpus matches its manifest and regenerates byte-identically") {
  TempDir a("synth_a"), b("synth_b");
  const PipelineConfig cfg = tiny_config();
  std::ostringstream log;
  const SynthSummary s = cmd_synth(cfg, 3, 2, a.path, 11, log);
  CHECK(s.train.emitted == 3);
  CHECK(s.test.emitted == 2);
  const auto train = split_paths(a.path, "train");
  const auto test = split_paths(a.path, "test");
  REQUIRE(train.size() == 3);
  REQUIRE(test.size() == 2);
  std::size_t json_files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.path))
    if (e.path().extension() == ".json" && e.path().filename() != "manifest.json") ++json_files;
  CHECK(json_files == 5);
  for (const auto& p : train) CHECK(fs::exists(p));
  // train and test draw different objects
  CHECK(slurp(train[0]) != slurp(test[0]));

  cmd_synth(cfg, 3, 2, b.path, 11, log);
  CHECK(tree(a.path) == tree(b.path));
}

TEST_CASE("records survive a write and read unchanged") {
  TempDir dir("record");
  synth::SynthConfig scfg;
  scfg.frames = 5;
  auto items = synth::generate_corpus(1, 21, scfg, "r");
  SequenceRecord r = items[0].record;
  r.pred_joints = *r.gt_joints;
  r.fit_pose = *r.gt_pose;
  r.provenance.source = "7:abc";
  write_record(dir.path / "r.json", r);
  const SequenceRecord back = read_record(dir.path / "r.json");
  CHECK(back.fps == r.fps);
  CHECK(back.object_mesh_path == r.object_mesh_path);
  CHECK(back.object_mesh.vertices == r.object_mesh.vertices);
  CHECK(back.object_mesh.faces == r.object_mesh.faces);
  CHECK(same_traj(back.object_traj, r.object_traj));
  CHECK(same_traj(back.hand_traj, r.hand_traj));
  CHECK(back.gt_joints == r.gt_joints);
  CHECK(back.pred_joints == r.pred_joints);
  CHECK(same_poses(back.gt_pose, r.gt_pose));
  CHECK(same_poses(back.fit_pose, r.fit_pose));
  CHECK(back.provenance.seed == r.provenance.seed);
  CHECK(back.provenance.config_hash == r.provenance.config_hash);
  CHECK(back.provenance.source == r.provenance.source);
}

TEST_CASE("training logs both stages and resumes exactly") {
  TempDir corpus("train_corpus"), full("train_full"), part("train_part"), resumed("train_resumed");
  const PipelineConfig cfg = tiny_config();
  std::ostringstream log;
  cmd_synth(cfg, 2, 0, corpus.path, 4, log);

  const fs::path ck = cmd_train(cfg, corpus.path, full.path, 9, std::nullopt, log);
  CHECK(fs::exists(ck));
  std::ifstream jsonl(full.path / "train_log.jsonl");
  std::vector<json> lines;
  for (std::string line; std::getline(jsonl, line);) lines.push_back(json::parse(line));
  REQUIRE(lines.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(lines[i]["stage"] == (i < 3 ? 1 : 2));
    CHECK(lines[i]["epoch"] == i % 3 + 1);
    CHECK(lines[i]["loss"].get<double>() > 0.0);
  }

  PipelineConfig first = cfg;
  first.train.stage2_epochs = 0;
  const fs::path mid = cmd_train(first, corpus.path, part.path, 9, std::nullopt, log);
  std::ostringstream resume_log;
  cmd_train(cfg, corpus.path, resumed.path, 9, mid, resume_log);
  CHECK(resume_log.str().find("different configuration") != std::string::npos);
  CHECK(slurp(resumed.path / "train_log.jsonl") == slurp(full.path / "train_log.jsonl"));
  CHECK(slurp(resumed.path / "checkpoint.bin") == slurp(full.path / "checkpoint.bin"));

  CHECK_THROWS_AS(cmd_train(cfg, corpus.path, resumed.path, 10, mid, log), ValidationError);
}

TEST_CASE("training on an empty split is rejected") {
  TempDir corpus("empty_corpus"), out("empty_out");
  std::ostringstream log;
  cmd_synth(tiny_config(), 0, 1, corpus.path, 4, log);
  CHECK_THROWS_AS(cmd_train(tiny_config(), corpus.path, out.path, 1, std::nullopt, log), EmptyDataset);
}

TEST_CASE("inference output shape, provenance and equivariance") {
  const PipelineConfig cfg = tiny_config();
  synth::SynthConfig scfg = cfg.synth;
  const SequenceRecord input = synth::generate_corpus(1, 31, scfg, "q")[0].record;
  net::InitNet init(cfg.train.init, 3);
  net::DispNet disp(cfg.train.disp, 4);
  const SequenceRecord out = infer_record(cfg, init, &disp, input, 5);
  REQUIRE(out.pred_joints);
  REQUIRE(out.fit_pose);
  CHECK(out.pred_joints->size() == input.frames());
  CHECK(out.fit_pose->theta.size() == input.frames());
  CHECK_FALSE(out.gt_joints);
  CHECK_FALSE(out.gt_pose);
  CHECK(out.provenance.source == input.provenance.identity());
  CHECK(out.provenance.config_hash == cfg.hash());
  CHECK_NOTHROW(out.validate());

  Rng rng(8);
  const RigidTransform tf{gt::random_rotation(rng), gt::random_vec(rng, -1.0, 1.0)};
  const SequenceRecord moved = infer_record(cfg, init, &disp, gt::moved_record(input, tf), 5);
  double worst_pred = 0.0, worst_fit = 0.0;
  for (std::size_t t = 0; t < input.frames(); ++t) {
    worst_pred = std::max(worst_pred, gt::max_joint_error((*moved.pred_joints)[t],
                                                          hand::transform_joints((*out.pred_joints)[t], tf)));
    const auto a = hand::forward_kinematics(
        out.fit_pose->shape, out.fit_pose->pose(t, out.hand_traj.rotation[t], out.hand_traj.translation[t]));
    const auto b = hand::forward_kinematics(
        moved.fit_pose->shape, moved.fit_pose->pose(t, moved.hand_traj.rotation[t], moved.hand_traj.translation[t]));
    worst_fit = std::max(worst_fit, gt::max_joint_error(b, hand::transform_joints(a, tf)));
  }
  CHECK(worst_pred < 1e-9);
  CHECK(worst_fit < 1e-6);
}

TEST_CASE("infer, eval and export through files") {
  TempDir corpus("files_corpus"), run("files_run"), pred("files_pred"), report("files_report"), ex("files_export");
  const PipelineConfig cfg = tiny_config();
  std::ostringstream log;
  cmd_synth(cfg, 1, 1, corpus.path, 2, log);
  const fs::path ck = cmd_train(cfg, corpus.path, run.path, 1, std::nullopt, log);
  const fs::path gt_path = split_paths(corpus.path, "test")[0];
  const fs::path out = cmd_infer(cfg, ck, gt_path, pred.path, 1, log);
  CHECK(out == pred.path / (gt_path.stem().string() + ".json"));
  const SequenceRecord p = read_record(out);
  CHECK(p.pred_joints->size() == cfg.synth.frames);
  std::size_t hands = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(pred.path / (gt_path.stem().string() + "_hands"))) ++hands;
  CHECK(hands == cfg.synth.frames);

  const json rep = cmd_eval(cfg, out, gt_path, report.path, log);
  CHECK(fs::exists(report.path / "report.json"));
  CHECK(rep["mpjpe_mm"].get<double>() > 0.0);
  CHECK(log.str().find("different record") == std::string::npos);

  // ground truth against itself
  const json self = cmd_eval(cfg, gt_path, gt_path, report.path, log);
  std::vector<std::string> keys;
  for (const auto& [k, v] : self.items()) keys.push_back(k);
  CHECK(keys == std::vector<std::string>{"ciou_pct", "iv_cm3", "mpjpe_mm", "pd_mm", "per_frame"});
  keys.clear();
  for (const auto& [k, v] : self["per_frame"].items()) keys.push_back(k);
  CHECK(keys == std::vector<std::string>{"ciou_pct", "iv_cm3", "iv_max_cm3", "mpjpe_mm", "pd_max_mm", "pd_mm"});
  CHECK(self["mpjpe_mm"].get<double>() == 0.0);
  if (!self["ciou_pct"].is_null()) CHECK(self["ciou_pct"].get<double>() == 100.0);

  // a prediction evaluated against some other sequence
  const fs::path other = split_paths(corpus.path, "train")[0];
  std::ostringstream warn;
  cmd_eval(cfg, out, other, report.path, warn);
  CHECK(warn.str().find("different record") != std::string::npos);

  CHECK(cmd_export(out, ex.path, log) == 2 * cfg.synth.frames);
  const SequenceRecord bare = read_record(gt_path);
  CHECK_THROWS_AS(evaluate_records(bare, p, 2.0), ValidationError);  // p has no ground truth
}

TEST_CASE("evaluation rejects sequences of different length") {
  synth::SynthConfig scfg;
  scfg.frames = 5;
  const SequenceRecord a = synth::generate_corpus(1, 3, scfg, "a")[0].record;
  scfg.frames = 6;
  const SequenceRecord b = synth::generate_corpus(1, 3, scfg, "b")[0].record;
  CHECK_THROWS_AS(evaluate_records(a, b, 2.0), LengthMismatch);
}
