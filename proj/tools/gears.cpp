// gears: synth | train | infer | eval | export
//
// Exit status: 0 on success, 2 for invalid arguments, configs or inputs,
// 1 for any other failure.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "gears/errors.hpp"
#include "gears/pipeline.hpp"

namespace fs = std::filesystem;
using namespace gears;

int main(int argc, char** argv) {
  CLI::App app{"Hand-object interaction synthesis, training, inference and evaluation"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out = ".";
  bool no_displacement = false;
  bool no_attention = false;
  std::optional<double> sensor_radius;
  app.add_option("--config", config_path, "JSON config; missing keys keep their defaults");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--out", out, "output directory");
  app.add_flag("--no-displacement", no_displacement, "skip the displacement network");
  app.add_flag("--no-attention", no_attention, "replace attention with its value projection");
  app.add_option("--sensor-radius", sensor_radius, "joint sensor radius in metres");

  std::size_t n_train = 0, n_test = 0;
  auto* synth = app.add_subcommand("synth", "generate a train/test corpus");
  synth->add_option("--n-train", n_train, "training sequences")->required();
  synth->add_option("--n-test", n_test, "test sequences")->required();

  std::string corpus, resume;
  auto* train = app.add_subcommand("train", "train both networks on a corpus");
  train->add_option("--corpus", corpus, "corpus directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);

  std::string checkpoint, record;
  auto* infer = app.add_subcommand("infer", "predict joints and fit a hand for one record");
  infer->add_option("--checkpoint", checkpoint, "checkpoint manifest")->required()->check(CLI::ExistingFile);
  infer->add_option("--record", record, "input record")->required()->check(CLI::ExistingFile);

  std::string pred, gt;
  auto* eval = app.add_subcommand("eval", "compare a prediction with ground truth");
  eval->add_option("--pred", pred, "predicted record")->required()->check(CLI::ExistingFile);
  eval->add_option("--gt", gt, "ground-truth record")->required()->check(CLI::ExistingFile);

  auto* exp = app.add_subcommand("export", "write per-frame hand and object meshes");
  exp->add_option("--record", record, "record")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    pipeline::PipelineConfig cfg;
    if (!config_path.empty()) cfg = pipeline::load_config(config_path);
    if (no_displacement) {
      cfg.use_displacement = false;
      cfg.train.train_displacement = false;
    }
    if (no_attention) cfg.train.disp.attention = false;
    if (sensor_radius) cfg.train.sensor.radius = *sensor_radius;
    cfg.validate();

    if (*synth) {
      const auto s = pipeline::cmd_synth(cfg, n_train, n_test, out, seed, std::cout);
      std::cout << "manifest: " << s.manifest.string() << '\n';
    } else if (*train) {
      std::optional<fs::path> from;
      if (!resume.empty()) from = resume;
      const fs::path ck = pipeline::cmd_train(cfg, corpus, out, seed, from, std::cout);
      std::cout << "checkpoint: " << ck.string() << '\n';
    } else if (*infer) {
      pipeline::cmd_infer(cfg, checkpoint, record, out, seed, std::cout);
    } else if (*eval) {
      const auto report = pipeline::cmd_eval(cfg, pred, gt, out, std::cout);
      std::cout << report.dump(2) << '\n';
    } else if (*exp) {
      pipeline::cmd_export(record, out, std::cout);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
