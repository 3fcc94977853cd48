#include "gears/pipeline.hpp"

#include <fstream>
#include <iomanip>

#include "gears/errors.hpp"
#include "gears/random.hpp"

namespace gears::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

void PipelineConfig::validate() const {
  const auto& s = train.sensor;
  if (!(s.cube_side > 0.0) || s.crop_samples == 0 || s.window_k < 1 || !(s.window_s > 0.0) || s.max_points == 0 ||
      s.surface_samples == 0)
    throw ValidationError("sensor sizes must be positive");
  if (!(s.radius >= 0.0) || !(s.radius < s.cube_side)) throw ValidationError("sensor radius must lie in [0, cube side)");
  if (train.init.window_k != s.window_k) throw ValidationError("init network window differs from the sensor window");
  if (train.batch_size == 0 || !(train.lr_init > 0.0) || !(train.lr_disp > 0.0) || train.disp_init_noise < 0.0)
    throw ValidationError("invalid training settings");
  if (fit.iters < 0 || !(fit.lr > 0.0) || fit.w1 < 0.0 || fit.w2 < 0.0 || fit.w3 < 0.0 || fit.w4 < 0.0 ||
      fit.data_weight < 0.0)
    throw ValidationError("invalid fitting settings");
  if (!(voxel_mm > 0.0)) throw ValidationError("voxel size must be positive");
  // the network constructors check their widths
  net::InitNet(train.init, 0);
  net::DispNet(train.disp, 0);
  json round = synth;
  round.get<synth::SynthConfig>();
}

std::string PipelineConfig::hash() const { return fnv1a_hex(json(*this).dump()); }

void to_json(json& j, const PipelineConfig& c) {
  j = {{"train", c.train},
       {"fit", c.fit},
       {"synth", c.synth},
       {"voxel_mm", c.voxel_mm},
       {"checkpoint_every", c.checkpoint_every},
       {"use_displacement", c.use_displacement}};
}

void from_json(const json& j, PipelineConfig& c) {
  if (!j.is_object()) throw ValidationError("configuration must be a JSON object");
  if (j.contains("train")) j.at("train").get_to(c.train);
  if (j.contains("fit")) j.at("fit").get_to(c.fit);
  if (j.contains("synth")) j.at("synth").get_to(c.synth);
  c.voxel_mm = j.value("voxel_mm", c.voxel_mm);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.use_displacement = j.value("use_displacement", c.use_displacement);
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  PipelineConfig c;
  try {
    json::parse(in).get_to(c);
  } catch (const json::exception& e) {
    throw ValidationError("bad config " + path.string() + ": " + e.what());
  }
  c.validate();
  return c;
}

namespace {

json stats_json(const synth::CorpusStats& s) {
  return {{"requested", s.requested}, {"emitted", s.emitted}, {"grasp_failures", s.grasp_failures}, {"filtered", s.filtered}};
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ValidationError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("bad JSON in " + p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

std::string frame_name(const std::string& prefix, std::size_t t) {
  std::ostringstream s;
  s << prefix << std::setw(4) << std::setfill('0') << t << ".obj";
  return s.str();
}

}  // namespace

SynthSummary cmd_synth(const PipelineConfig& cfg, std::size_t n_train, std::size_t n_test, const fs::path& out_dir,
                       std::uint64_t seed, std::ostream& log) {
  cfg.validate();
  SynthSummary summary;
  json manifest = {{"format", "gears-corpus"}, {"seed", seed}, {"config_hash", cfg.hash()}};
  const std::pair<const char*, std::size_t> splits[] = {{"train", n_train}, {"test", n_test}};
  for (const auto& [split, count] : splits) {
    const fs::path dir = out_dir / split;
    fs::create_directories(dir);
    synth::CorpusStats stats;
    json names = json::array();
    if (count > 0) {
      const std::uint64_t split_seed = derive_seed(seed, split[1] == 'r' ? 0x7a11 : 0x7e57);
      for (const auto& item : synth::generate_corpus(count, split_seed, cfg.synth, split, &stats)) {
        write_record(dir / (item.name + ".json"), item.record);
        names.push_back(std::string(split) + "/" + item.name + ".json");
      }
    }
    log << split << ": " << stats.emitted << " of " << count << " sequences, " << stats.grasp_failures
        << " objects without a grasp, " << stats.filtered << " sequences over the intersection threshold\n";
    manifest[split] = names;
    manifest["stats"][split] = stats_json(stats);
    (split[1] == 'r' ? summary.train : summary.test) = stats;
  }
  summary.manifest = out_dir / "manifest.json";
  write_json(summary.manifest, manifest);
  return summary;
}

std::vector<fs::path> split_paths(const fs::path& corpus_dir, const std::string& split) {
  const json manifest = read_json(corpus_dir / "manifest.json");
  if (manifest.value("format", "") != "gears-corpus") throw ValidationError(corpus_dir.string() + " is not a corpus");
  std::vector<fs::path> out;
  for (const auto& name : manifest.value(split, json::array())) out.push_back(corpus_dir / name.get<std::string>());
  return out;
}

std::vector<SequenceRecord> load_split(const fs::path& corpus_dir, const std::string& split) {
  std::vector<SequenceRecord> out;
  for (const auto& p : split_paths(corpus_dir, split)) out.push_back(read_record(p));
  return out;
}

fs::path cmd_train(const PipelineConfig& cfg, const fs::path& corpus_dir, const fs::path& out_dir, std::uint64_t seed,
                   const std::optional<fs::path>& resume, std::ostream& log) {
  cfg.validate();
  auto records = load_split(corpus_dir, "train");
  if (records.empty()) throw EmptyDataset();
  net::Trainer trainer(std::move(records), cfg.train, seed);
  const std::string hash = cfg.hash();
  if (resume) {
    const nn::Checkpoint ck = nn::Checkpoint::load(*resume);
    if (ck.meta.value("config_hash", std::string()) != hash)
      log << "warning: resuming from a checkpoint written with a different configuration\n";
    trainer.restore(ck);
  }
  fs::create_directories(out_dir);
  const fs::path ck_path = out_dir / "checkpoint.json";
  std::ofstream jsonl(out_dir / "train_log.jsonl");
  if (!jsonl) throw Error("cannot write the training log");
  auto line = [&](const net::LogEntry& e) {
    jsonl << json{{"stage", e.stage}, {"epoch", e.epoch}, {"loss", e.loss}}.dump() << '\n';
  };
  for (const auto& e : trainer.log()) line(e);
  auto save = [&] {
    nn::Checkpoint ck = trainer.checkpoint();
    ck.meta["config_hash"] = hash;
    ck.save(ck_path);
  };
  std::size_t since_save = 0;
  trainer.run([&](const net::LogEntry& e) {
    line(e);
    jsonl.flush();
    if (e.epoch == 1 || e.epoch % 50 == 0) log << "stage " << e.stage << " epoch " << e.epoch << " loss " << e.loss << '\n';
    if (cfg.checkpoint_every > 0 && ++since_save >= cfg.checkpoint_every) {
      save();
      since_save = 0;
    }
  });
  save();
  return ck_path;
}

SequenceRecord infer_record(const PipelineConfig& cfg, net::InitNet& init, net::DispNet* disp,
                            const SequenceRecord& input, std::uint64_t seed) {
  input.validate();
  const net::JointPrediction pred = net::predict_joints(input, init, disp, cfg.train.sensor, seed);
  const fit::FitResult fitted = fit::fit_sequence(pred.refined, input.hand_traj, cfg.fit);
  SequenceRecord out;
  out.fps = input.fps;
  out.object_mesh_path = input.object_mesh_path;
  out.object_mesh = input.object_mesh;
  out.object_traj = input.object_traj;
  out.hand_traj = input.hand_traj;
  out.pred_joints = pred.refined;
  PoseSequence ps;
  ps.shape = fitted.shape;
  for (const auto& p : fitted.poses) ps.theta.push_back(p.theta);
  out.fit_pose = ps;
  out.provenance = {seed, cfg.hash(), input.provenance.identity()};
  return out;
}

fs::path cmd_infer(const PipelineConfig& cfg_in, const fs::path& checkpoint, const fs::path& record,
                   const fs::path& out_dir, std::uint64_t seed, std::ostream& log) {
  PipelineConfig cfg = cfg_in;
  cfg.validate();
  const nn::Checkpoint ck = nn::Checkpoint::load(checkpoint);
  auto [init, disp] = net::load_networks(ck);
  if (ck.meta.value("config_hash", std::string()) != cfg.hash())
    log << "warning: checkpoint was trained with a different configuration hash\n";
  if (ck.meta.contains("train_config")) {
    // The networks only make sense with the sensors they were trained with.
    const auto trained = ck.meta.at("train_config").get<net::TrainConfig>();
    if (json(trained.sensor) != json(cfg.train.sensor)) log << "note: using the checkpoint's sensor settings\n";
    cfg.train.sensor = trained.sensor;
    if (!trained.train_displacement && cfg.use_displacement) {
      log << "note: checkpoint has no trained displacement network; skipping refinement\n";
      cfg.use_displacement = false;
    }
  }
  const SequenceRecord input = read_record(record);
  SequenceRecord out = infer_record(cfg, init, cfg.use_displacement ? &disp : nullptr, input, seed);
  const std::string stem = record.stem().string();
  fs::create_directories(out_dir / (stem + "_hands"));
  out.object_mesh_path = stem + ".obj";
  const fs::path out_path = out_dir / (stem + ".json");
  write_record(out_path, out);
  const auto meshes = hand_meshes(out, *out.fit_pose);
  for (std::size_t t = 0; t < meshes.size(); ++t) write_obj(out_dir / (stem + "_hands") / frame_name("hand_", t), meshes[t]);
  log << "wrote " << out_path.string() << " and " << meshes.size() << " hand meshes\n";
  return out_path;
}

std::vector<TriMesh> hand_meshes(const SequenceRecord& record, const PoseSequence& poses) {
  if (poses.theta.size() != record.frames()) throw LengthMismatch("pose sequence and trajectory lengths differ");
  std::vector<TriMesh> out;
  out.reserve(record.frames());
  for (std::size_t t = 0; t < record.frames(); ++t)
    out.push_back(hand::hand_surface_mesh(poses.shape,
                                          poses.pose(t, record.hand_traj.rotation[t], record.hand_traj.translation[t])));
  return out;
}

metrics::MetricReport evaluate_records(const SequenceRecord& pred, const SequenceRecord& gt, double voxel_mm) {
  if (!gt.gt_joints || !gt.gt_pose) throw ValidationError("ground-truth record lacks gt_joints or gt_pose");
  const auto& pred_joints = pred.pred_joints ? *pred.pred_joints : pred.gt_joints ? *pred.gt_joints
                                                                                  : throw ValidationError("prediction has no joints");
  const PoseSequence& pred_pose = pred.fit_pose ? *pred.fit_pose : pred.gt_pose ? *pred.gt_pose
                                                                                : throw ValidationError("prediction has no hand pose");
  if (pred.frames() != gt.frames() || pred_joints.size() != gt.gt_joints->size())
    throw LengthMismatch("prediction and ground truth differ in length");
  metrics::SequenceMeshes m;
  m.pred_hand = hand_meshes(pred, pred_pose);
  m.gt_hand = hand_meshes(gt, *gt.gt_pose);
  for (std::size_t t = 0; t < gt.frames(); ++t) {
    const RigidTransform pose = gt.object_traj.at(t);
    m.object.push_back(transformed(gt.object_mesh, pose));
    m.object_pose.push_back(pose);
  }
  return metrics::evaluate(pred_joints, *gt.gt_joints, m, voxel_mm);
}

json cmd_eval(const PipelineConfig& cfg, const fs::path& pred_path, const fs::path& gt_path, const fs::path& out_dir,
              std::ostream& log) {
  const SequenceRecord pred = read_record(pred_path);
  const SequenceRecord gt = read_record(gt_path);
  if (!pred.provenance.source.empty() && pred.provenance.source != gt.provenance.identity())
    log << "warning: the prediction was computed from a different record than the ground truth\n";
  const json report = metrics::to_json(evaluate_records(pred, gt, cfg.voxel_mm));
  fs::create_directories(out_dir);
  write_json(out_dir / "report.json", report);
  return report;
}

std::size_t cmd_export(const fs::path& record_path, const fs::path& out_dir, std::ostream& log) {
  const SequenceRecord r = read_record(record_path);
  const PoseSequence* poses = r.fit_pose ? &*r.fit_pose : r.gt_pose ? &*r.gt_pose : nullptr;
  fs::create_directories(out_dir);
  std::size_t files = 0;
  for (std::size_t t = 0; t < r.frames(); ++t) {
    write_obj(out_dir / frame_name("object_", t), transformed(r.object_mesh, r.object_traj.at(t)));
    ++files;
  }
  if (poses) {
    const auto meshes = hand_meshes(r, *poses);
    for (std::size_t t = 0; t < meshes.size(); ++t) write_obj(out_dir / frame_name("hand_", t), meshes[t]);
    files += meshes.size();
  } else {
    log << "note: record has no hand pose; exported the object only\n";
  }
  log << "wrote " << files << " meshes to " << out_dir.string() << '\n';
  return files;
}

}  // namespace gears::pipeline
