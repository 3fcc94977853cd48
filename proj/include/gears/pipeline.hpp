#pragma once

// End-to-end workflows behind the `gears` command: synthesize a corpus, train
// both networks, infer joints and a fitted hand for a record, evaluate a
// prediction against ground truth, and export per-frame meshes.
//
// Corpus layout: <dir>/manifest.json listing records under train/ and test/.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gears/fitting.hpp"
#include "gears/metrics.hpp"
#include "gears/networks.hpp"
#include "gears/record.hpp"
#include "gears/synthesis.hpp"

namespace gears::pipeline {

struct PipelineConfig {
  net::TrainConfig train;  // sensor, network widths and optimisation
  fit::FitConfig fit;
  synth::SynthConfig synth;
  double voxel_mm = 2.0;  // intersection-volume grid for evaluation
  /// Training writes a checkpoint every this many epochs (0: only at the end).
  std::size_t checkpoint_every = 50;
  /// Inference runs the displacement network when set.
  bool use_displacement = true;

  /// Throws ValidationError on non-positive sizes or a sensor radius not
  /// smaller than the cube side.
  void validate() const;
  /// FNV-1a of the canonical JSON form.
  std::string hash() const;
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);

/// Missing keys keep their defaults. Validates the result.
PipelineConfig load_config(const std::filesystem::path& path);

struct SynthSummary {
  synth::CorpusStats train;
  synth::CorpusStats test;
  std::filesystem::path manifest;
};

SynthSummary cmd_synth(const PipelineConfig& cfg, std::size_t n_train, std::size_t n_test,
                       const std::filesystem::path& out_dir, std::uint64_t seed, std::ostream& log);

/// Record paths of a corpus split, as listed in its manifest.
std::vector<std::filesystem::path> split_paths(const std::filesystem::path& corpus_dir, const std::string& split);
std::vector<SequenceRecord> load_split(const std::filesystem::path& corpus_dir, const std::string& split);

/// Trains on the corpus' train split. Writes <out>/checkpoint.json (+ .bin)
/// and <out>/train_log.jsonl; returns the checkpoint path. `resume` restores
/// a checkpoint written by an earlier run with the same config and seed.
std::filesystem::path cmd_train(const PipelineConfig& cfg, const std::filesystem::path& corpus_dir,
                                const std::filesystem::path& out_dir, std::uint64_t seed,
                                const std::optional<std::filesystem::path>& resume, std::ostream& log);

/// Joint prediction followed by the hand fit. The result keeps the input's
/// trajectories and mesh, carries pred_joints and fit_pose, and drops ground truth.
SequenceRecord infer_record(const PipelineConfig& cfg, net::InitNet& init, net::DispNet* disp,
                            const SequenceRecord& input, std::uint64_t seed);

/// Writes <out>/<stem>.json and one hand OBJ per frame under <out>/<stem>_hands/.
std::filesystem::path cmd_infer(const PipelineConfig& cfg, const std::filesystem::path& checkpoint,
                                const std::filesystem::path& record, const std::filesystem::path& out_dir,
                                std::uint64_t seed, std::ostream& log);

/// Predicted joints are pred_joints (else gt_joints) of `pred`; the predicted
/// hand is fit_pose (else gt_pose). Ground truth needs gt_joints and gt_pose.
metrics::MetricReport evaluate_records(const SequenceRecord& pred, const SequenceRecord& gt, double voxel_mm);

/// Writes <out>/report.json and returns the report.
nlohmann::json cmd_eval(const PipelineConfig& cfg, const std::filesystem::path& pred,
                        const std::filesystem::path& gt, const std::filesystem::path& out_dir, std::ostream& log);

/// Per frame: the posed object and the hand (fit_pose, else gt_pose) as OBJ.
/// Returns the number of files written.
std::size_t cmd_export(const std::filesystem::path& record, const std::filesystem::path& out_dir, std::ostream& log);

/// Hand meshes for every frame of a pose sequence along the record's hand trajectory.
std::vector<TriMesh> hand_meshes(const SequenceRecord& record, const PoseSequence& poses);

}  // namespace gears::pipeline
