#include "doctest.h"

#include <algorithm>
#include <filesystem>

#include "gears/errors.hpp"
#include "gears/networks.hpp"
#include "gears/synthesis.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace gears;
using namespace gears::net;
namespace gt = gears::testing;
namespace fs = std::filesystem;

namespace {

InitNetConfig tiny_init() {
  InitNetConfig c;
  c.pointnet = {4, 5};
  c.mlp = {6};
  c.window_k = 1;
  return c;
}

DispNetConfig tiny_disp() {
  DispNetConfig c;
  c.pointnet = {4, 4};
  c.embed = {3, 4};
  c.blocks = 1;
  c.ffn = 5;
  c.max_frames = 4;
  return c;
}

SensorConfig small_sensor() {
  SensorConfig s;
  s.crop_samples = 48;
  s.window_k = 1;
  s.window_s = 0.1;
  s.max_points = 12;
  s.surface_samples = 1500;
  return s;
}

InitInput random_init_input(Rng& rng, int k, std::size_t points) {
  InitInput in;
  for (int i = 0; i < (2 * k + 1) * 12; ++i) in.window.push_back(gt::uniform(rng, -0.5, 0.5));
  for (std::size_t i = 0; i < points; ++i) in.points.push_back(gt::random_vec(rng, -0.09, 0.09));
  return in;
}

DispInput random_disp_input(Rng& rng, std::size_t frames, int max_points = 5) {
  DispInput in;
  const hand::HandShape shape = gt::random_shape(rng, 1.0);
  for (std::size_t t = 0; t < frames; ++t) {
    const hand::HandPose pose = gt::random_pose(rng, 0.6);
    in.frames.push_back(hand::posed_frames(shape, pose));
    in.init_joints.push_back(in.frames.back().origin);
    in.hand_rot.push_back(pose.global_rot);
    in.wrist.push_back(pose.wrist_pos);
    JointSensorSample s;
    for (int k = 0; k < hand::kNumJoints; ++k) {
      const int n = static_cast<int>(gt::uniform(rng, 0.0, max_points + 0.999));
      for (int i = 0; i < n; ++i) {
        s.points[k].push_back(gt::random_vec(rng, -0.02, 0.02));
        s.normals[k].push_back(gt::random_unit(rng));
      }
    }
    in.samples.push_back(std::move(s));
  }
  return in;
}

std::vector<SequenceRecord> small_corpus(std::size_t n, std::uint64_t seed, std::size_t frames = 6) {
  synth::SynthConfig cfg;
  cfg.frames = frames;
  std::vector<SequenceRecord> out;
  for (auto& item : synth::generate_corpus(n, seed, cfg, "seq")) out.push_back(std::move(item.record));
  return out;
}

TrainConfig tiny_train(std::size_t e1, std::size_t e2) {
  TrainConfig c;
  c.sensor = small_sensor();
  c.init = tiny_init();
  c.disp = tiny_disp();
  c.disp.max_frames = 8;
  c.stage1_epochs = e1;
  c.stage2_epochs = e2;
  c.batch_size = 4;
  return c;
}

bool same_params(const nn::ParamStore& a, const nn::ParamStore& b) {
  if (a.all().size() != b.all().size()) return false;
  for (const auto& [name, p] : a.all())
    if (!b.contains(name) || !(b.at(name).value == p.value)) return false;
  return true;
}

void shuffle_sample(JointSensorSample& s, Rng& rng) {
  for (int k = 0; k < hand::kNumJoints; ++k) {
    std::vector<std::size_t> idx(s.count(k));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<Vec3> p, n;
    for (std::size_t i : idx) {
      p.push_back(s.points[k][i]);
      n.push_back(s.normals[k][i]);
    }
    s.points[k] = p;
    s.normals[k] = n;
  }
}

}  // namespace

TEST_CASE("InitNet gradients match finite differences") {
  Rng rng(31);
  InitNet net(tiny_init(), 5);
  std::vector<InitInput> batch{random_init_input(rng, 1, 7), random_init_input(rng, 1, 3), random_init_input(rng, 1, 0)};
  nn::Tensor target(3, 63);
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = gt::uniform(rng, -0.1, 0.1);
  const double err = gt::gradient_check_store(net.params(), [&](nn::Graph& g) {
    return nn::sum_squared_error(net.forward(g, batch), g.constant(target), 1.0);
  });
  CHECK(err < 1e-3);
}

TEST_CASE("DispNet gradients match finite differences") {
  for (bool attention : {true, false}) {
    Rng rng(32);
    DispNetConfig cfg = tiny_disp();
    cfg.attention = attention;
    cfg.disp_scale = 1.0;  // keeps gradients well above the finite-difference noise
    DispNet net(cfg, 6);
    const DispInput in = random_disp_input(rng, 3);
    nn::Tensor target(3 * 21, 3);
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = gt::uniform(rng, -0.1, 0.1);
    const double err = gt::gradient_check_store(net.params(), [&](nn::Graph& g) {
      return nn::sum_squared_error(net.forward(g, in), g.constant(target), 1.0);
    });
    CHECK(err < 1e-3);
  }
}

TEST_CASE("disabling attention removes the query and key projections") {
  DispNetConfig cfg = tiny_disp();
  cfg.attention = false;
  const DispNet plain(cfg, 1);
  CHECK_FALSE(plain.params().contains("s0.wq"));
  CHECK_FALSE(plain.params().contains("t0.wk"));
  CHECK(plain.params().contains("t0.wv"));
  const DispNet full(tiny_disp(), 1);
  const std::size_t d = tiny_disp().d_model();
  CHECK(full.params().scalar_count() - plain.params().scalar_count() == 4 * d * d);
}

TEST_CASE("point order does not change either network's output") {
  Rng rng(33);
  InitNetConfig icfg;  // full-size widths exercise the blocked matrix kernels
  icfg.window_k = 2;
  InitNet init(icfg, 7);
  for (std::size_t n : {1, 13, 37, 300}) {
    InitInput in = random_init_input(rng, 2, n);
    const hand::JointSet a = init.predict(in);
    std::shuffle(in.points.begin(), in.points.end(), rng);
    const hand::JointSet b = init.predict(in);
    CHECK(a == b);
  }
  DispNet disp(DispNetConfig{}, 8);
  DispInput in = random_disp_input(rng, 4, 40);
  const auto a = disp.predict(in);
  for (auto& s : in.samples) shuffle_sample(s, rng);
  CHECK(disp.predict(in) == a);
}

TEST_CASE("local point features are shared across joints") {
  Rng rng(34);
  DispNet net(tiny_disp(), 9);
  DispInput in = random_disp_input(rng, 1, 6);
  nn::Graph g1;
  const nn::Tensor f1 = net.local_features(g1, in.samples).value();
  std::swap(in.samples[0].points[2], in.samples[0].points[17]);
  std::swap(in.samples[0].normals[2], in.samples[0].normals[17]);
  nn::Graph g2;
  const nn::Tensor f2 = net.local_features(g2, in.samples).value();
  for (std::size_t c = 0; c < f1.cols(); ++c) {
    CHECK(f1(2, c) == f2(17, c));
    CHECK(f1(17, c) == f2(2, c));
    CHECK(f1(5, c) == f2(5, c));
  }
  // a joint with no samples gets the zero feature
  in.samples[0].points[4].clear();
  in.samples[0].normals[4].clear();
  nn::Graph g3;
  const nn::Tensor f3 = net.local_features(g3, in.samples).value();
  for (std::size_t c = 0; c < f3.cols(); ++c) CHECK(f3(4, c) == 0.0);
}

TEST_CASE("a zero head predicts zero displacement") {
  Rng rng(35);
  DispNet net(tiny_disp(), 10);
  net.params().at("head.w0").value.fill(0.0);
  net.params().at("head.b0").value.fill(0.0);
  const DispInput in = random_disp_input(rng, 3);
  nn::Graph g;
  const nn::Tensor d = net.forward(g, in).value();
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(d[i] == 0.0);
  CHECK(net.predict(in) == in.init_joints);
}

TEST_CASE("displacements are rotated by each joint's template frame") {
  Rng rng(36);
  DispNet net(tiny_disp(), 11);
  DispInput in = random_disp_input(rng, 2);
  DispInput ident = in;
  for (auto& f : ident.frames) f.rotation.fill(Mat3::Identity());
  nn::Graph g1, g2;
  const nn::Tensor global = net.forward(g1, in).value();
  const nn::Tensor local = net.forward(g2, ident).value();
  for (std::size_t t = 0; t < 2; ++t)
    for (int k = 0; k < hand::kNumJoints; ++k) {
      const std::size_t r = t * 21 + k;
      const Vec3 expect = in.frames[t].rotation[k] * Vec3(local(r, 0), local(r, 1), local(r, 2));
      CHECK((expect - Vec3(global(r, 0), global(r, 1), global(r, 2))).norm() < 1e-15);
    }
}

TEST_CASE("loss examples") {
  Rng rng(37);
  hand::JointSet a;
  for (auto& j : a) j = gt::random_vec(rng);
  CHECK(loss_init(a, a) == 0.0);
  hand::JointSet b = a;
  for (auto& j : b) j += Vec3(0.01, 0, 0);
  CHECK(loss_init(b, a) == doctest::Approx(1e-4));
  hand::JointSet zero;
  zero.fill(Vec3::Zero());
  hand::JointSet shift;
  shift.fill(Vec3(0.01, 0, 0));
  const std::vector<hand::JointSet> init{a, a}, d{zero, shift}, gtj{a, b};
  CHECK(loss_disp(init, d, gtj) == 0.0);
  const std::vector<hand::JointSet> none{zero, zero};
  CHECK(loss_disp(init, none, gtj) == doctest::Approx(0.5e-4));
  CHECK_THROWS_AS(loss_disp(init, std::vector<hand::JointSet>{zero}, gtj), ShapeMismatch);
}

TEST_CASE("InitNet overfits a single frame") {
  Rng rng(38);
  InitNetConfig cfg = tiny_init();
  cfg.pointnet = {16, 32};
  cfg.mlp = {32};
  InitNet net(cfg, 12);
  const std::vector<InitInput> batch{random_init_input(rng, 1, 20)};
  hand::JointSet target = hand::Skeleton::standard().rest_joints;
  for (auto& j : target) j += gt::random_vec(rng, -0.02, 0.02);
  const nn::Tensor rows = joints_to_rows(std::span<const hand::JointSet>(&target, 1));
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 600; ++step) {
    nn::Graph g;
    nn::Var loss = nn::sum_squared_error(net.forward(g, batch), g.constant(rows), 21.0);
    if (step == 0) first = loss.value()[0];
    last = loss.value()[0];
    net.params().zero_grad();
    g.backward(loss);
    nn::adam_step(net.params(), {3e-3});
  }
  CHECK(last < 1e-3 * first);
  CHECK(loss_init(net.predict(batch[0]), target) < 1e-6);
}

TEST_CASE("empty crops are accepted") {
  InitNet net(tiny_init(), 13);
  Rng rng(39);
  const InitInput empty = random_init_input(rng, 1, 0);
  InitInput zero = empty;
  zero.points.push_back(Vec3::Zero());
  CHECK(net.predict(empty) == net.predict(zero));
}

TEST_CASE("training is deterministic and resumes exactly from a checkpoint") {
  const auto records = small_corpus(2, 5);
  const TrainConfig cfg = tiny_train(4, 3);
  Trainer straight(records, cfg, 99);
  straight.run();
  REQUIRE(straight.done());
  REQUIRE(straight.log().size() == 7);
  CHECK(straight.log().front().stage == 1);
  CHECK(straight.log().back().stage == 2);

  Trainer again(records, cfg, 99);
  again.run();
  CHECK(same_params(again.init_net().params(), straight.init_net().params()));
  CHECK(same_params(again.disp_net().params(), straight.disp_net().params()));

  for (std::size_t split : {2, 5}) {
    Trainer first(records, cfg, 99);
    first.run_epochs(split);
    const fs::path dir = fs::temp_directory_path() / "gears_resume";
    fs::remove_all(dir);
    fs::create_directories(dir);
    first.checkpoint().save(dir / "ck.json");
    Trainer resumed(records, cfg, 99);
    resumed.restore(nn::Checkpoint::load(dir / "ck.json"));
    resumed.run();
    fs::remove_all(dir);
    CHECK(same_params(resumed.init_net().params(), straight.init_net().params()));
    CHECK(same_params(resumed.disp_net().params(), straight.disp_net().params()));
    REQUIRE(resumed.log().size() == straight.log().size());
    for (std::size_t i = 0; i < resumed.log().size(); ++i) CHECK(resumed.log()[i].loss == straight.log()[i].loss);
  }

  Trainer other(records, cfg, 100);
  CHECK_THROWS_AS(other.restore(straight.checkpoint()), ValidationError);
  CHECK_THROWS_AS(Trainer({}, cfg, 1), EmptyDataset);
}

TEST_CASE("the first stage ignores the displacement settings") {
  const auto records = small_corpus(2, 12);
  TrainConfig cfg = tiny_train(3, 2);
  Trainer base(records, cfg, 5);
  base.run_epochs(3);
  TrainConfig plain = cfg;
  plain.train_displacement = false;
  TrainConfig blind = cfg;
  blind.sensor.radius = 0.0;
  for (const TrainConfig& c : {plain, blind}) {
    Trainer t(records, c, 5);
    t.run_epochs(3);
    CHECK(same_params(t.init_net().params(), base.init_net().params()));
    CHECK(t.log().back().loss == base.log().back().loss);
  }
}

TEST_CASE("checkpoints round-trip both networks") {
  InitNet init(tiny_init(), 14);
  DispNet disp(tiny_disp(), 15);
  auto [i2, d2] = load_networks(make_checkpoint(init, disp));
  CHECK(same_params(i2.params(), init.params()));
  CHECK(same_params(d2.params(), disp.params()));
  CHECK(d2.config().blocks == 1);
  nn::Checkpoint bad = make_checkpoint(init, disp);
  bad.meta["disp_config"]["blocks"] = 2;
  CHECK_THROWS_AS(load_networks(bad), ValidationError);
}

TEST_CASE("joint prediction is equivariant to a rigid scene transform") {
  const auto records = small_corpus(1, 6, 8);
  InitNet init(tiny_init(), 16);
  DispNetConfig dcfg = tiny_disp();
  dcfg.max_frames = 8;
  DispNet disp(dcfg, 17);
  const SensorConfig sensor = small_sensor();
  const JointPrediction base = predict_joints(records[0], init, &disp, sensor, 3);
  Rng rng(40);
  for (int trial = 0; trial < 3; ++trial) {
    const RigidTransform tf{gt::random_rotation(rng), gt::random_vec(rng, -1.0, 1.0)};
    SequenceRecord moved = records[0];
    for (std::size_t t = 0; t < moved.frames(); ++t) {
      moved.object_traj.rotation[t] = tf.rotation * moved.object_traj.rotation[t];
      moved.object_traj.translation[t] = tf.apply(moved.object_traj.translation[t]);
      moved.hand_traj.rotation[t] = tf.rotation * moved.hand_traj.rotation[t];
      moved.hand_traj.translation[t] = tf.apply(moved.hand_traj.translation[t]);
    }
    const JointPrediction p = predict_joints(moved, init, &disp, sensor, 3);
    double worst = 0.0;
    for (std::size_t t = 0; t < p.refined.size(); ++t) {
      worst = std::max(worst, gt::max_joint_error(p.refined[t], hand::transform_joints(base.refined[t], tf)));
      worst = std::max(worst, gt::max_joint_error(p.init[t], hand::transform_joints(base.init[t], tf)));
    }
    CHECK(worst < 1e-9);
  }
}
