#include "gears/record.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "gears/errors.hpp"

namespace gears {

hand::HandPose PoseSequence::pose(std::size_t t, const Mat3& global_rot, const Vec3& wrist) const {
  hand::HandPose p;
  p.theta = theta.at(t);
  p.global_rot = global_rot;
  p.wrist_pos = wrist;
  return p;
}

void SequenceRecord::validate() const {
  if (schema_version != kRecordSchemaVersion)
    throw ValidationError("unsupported record schema version " + std::to_string(schema_version));
  if (!(fps > 0.0)) throw ValidationError("fps must be positive");
  hand_traj.validate();
  object_traj.validate();
  const std::size_t t = frames();
  if (object_traj.frames() != t) throw ValidationError("hand and object trajectories differ in length");
  for (const auto* js : {gt_joints ? &*gt_joints : nullptr, pred_joints ? &*pred_joints : nullptr}) {
    if (js && js->size() != t) throw ValidationError("joint array length differs from trajectory length");
  }
  for (const auto* ps : {gt_pose ? &*gt_pose : nullptr, fit_pose ? &*fit_pose : nullptr}) {
    if (ps && ps->theta.size() != t) throw ValidationError("pose array length differs from trajectory length");
  }
}

namespace {

class BlobWriter {
 public:
  nlohmann::json add(const std::vector<double>& values, std::vector<std::size_t> shape) {
    nlohmann::json j{{"offset", data_.size()}, {"shape", shape}};
    data_.insert(data_.end(), values.begin(), values.end());
    return j;
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    for (double x : data_) {
      std::uint64_t bits;
      std::memcpy(&bits, &x, sizeof bits);
      char bytes[8];
      for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
      out.write(bytes, 8);
    }
  }

 private:
  std::vector<double> data_;
};

class BlobReader {
 public:
  explicit BlobReader(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % 8 != 0) throw ValidationError(path.string() + ": truncated float64 blob");
    data_.resize(bytes.size() / 8);
    for (std::size_t i = 0; i < data_.size(); ++i) {
      std::uint64_t bits = 0;
      for (int b = 7; b >= 0; --b) bits = (bits << 8) | bytes[8 * i + b];
      std::memcpy(&data_[i], &bits, sizeof bits);
    }
  }

  std::vector<double> get(const nlohmann::json& j, std::size_t expected) const {
    const auto offset = j.at("offset").get<std::size_t>();
    std::size_t n = 1;
    for (const auto& d : j.at("shape")) n *= d.get<std::size_t>();
    if (n != expected) throw ValidationError("array shape does not match the trajectory length");
    if (offset + n > data_.size()) throw ValidationError("array exceeds the sidecar blob");
    return {data_.begin() + static_cast<std::ptrdiff_t>(offset), data_.begin() + static_cast<std::ptrdiff_t>(offset + n)};
  }

 private:
  std::vector<double> data_;
};

std::vector<double> flatten_traj(const RigidTrajectory& tr) {
  std::vector<double> v;
  v.reserve(tr.frames() * 12);
  for (std::size_t t = 0; t < tr.frames(); ++t) {
    for (int i = 0; i < 3; ++i) v.push_back(tr.translation[t][i]);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) v.push_back(tr.rotation[t](r, c));
  }
  return v;
}

Mat3 checked_rotation(const Mat3& m, const char* what, std::size_t t) {
  const double err = orthonormality_error(m);
  if (err < 1e-12 && m.determinant() > 0.0) return m;
  if (err < 1e-4 && m.determinant() > 0.0) return nearest_rotation(m);
  throw ValidationError(std::string(what) + " rotation at frame " + std::to_string(t) + " is not orthonormal");
}

template <class Traj>
Traj unflatten_traj(const std::vector<double>& v, std::size_t frames, double fps, const char* what) {
  Traj tr;
  tr.fps = fps;
  for (std::size_t t = 0; t < frames; ++t) {
    const double* p = v.data() + 12 * t;
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < 3; ++c) r(i, c) = p[3 + 3 * i + c];
    tr.push_back(checked_rotation(r, what, t), Vec3(p[0], p[1], p[2]));
  }
  return tr;
}

std::vector<double> flatten_joints(const std::vector<hand::JointSet>& js) {
  std::vector<double> v;
  v.reserve(js.size() * 63);
  for (const auto& frame : js)
    for (const auto& j : frame)
      for (int i = 0; i < 3; ++i) v.push_back(j[i]);
  return v;
}

std::vector<hand::JointSet> unflatten_joints(const std::vector<double>& v, std::size_t frames) {
  std::vector<hand::JointSet> js(frames);
  for (std::size_t t = 0; t < frames; ++t)
    for (int k = 0; k < hand::kNumJoints; ++k) js[t][k] = Vec3(v[63 * t + 3 * k], v[63 * t + 3 * k + 1], v[63 * t + 3 * k + 2]);
  return js;
}

nlohmann::json add_pose(BlobWriter& blob, const PoseSequence& ps) {
  std::vector<double> beta(ps.shape.beta.begin(), ps.shape.beta.end());
  std::vector<double> theta;
  theta.reserve(ps.theta.size() * 45);
  for (const auto& frame : ps.theta)
    for (const auto& a : frame)
      for (int i = 0; i < 3; ++i) theta.push_back(a[i]);
  return {{"beta", blob.add(beta, {hand::kNumShape})},
          {"theta", blob.add(theta, {ps.theta.size(), hand::kNumArticulated, 3})}};
}

PoseSequence get_pose(const BlobReader& blob, const nlohmann::json& j, std::size_t frames) {
  PoseSequence ps;
  const auto beta = blob.get(j.at("beta"), hand::kNumShape);
  std::copy(beta.begin(), beta.end(), ps.shape.beta.begin());
  const auto theta = blob.get(j.at("theta"), frames * 45);
  ps.theta.resize(frames);
  for (std::size_t t = 0; t < frames; ++t)
    for (int a = 0; a < hand::kNumArticulated; ++a)
      ps.theta[t][a] = Vec3(theta[45 * t + 3 * a], theta[45 * t + 3 * a + 1], theta[45 * t + 3 * a + 2]);
  return ps;
}

std::filesystem::path sidecar(const std::filesystem::path& path) {
  auto p = path;
  p.replace_extension(".bin");
  return p;
}

}  // namespace

void write_record(const std::filesystem::path& path, const SequenceRecord& rec, bool write_mesh) {
  rec.validate();
  const std::size_t t = rec.frames();
  BlobWriter blob;
  nlohmann::json j;
  j["schema_version"] = rec.schema_version;
  j["fps"] = rec.fps;
  j["frames"] = t;
  j["object_mesh_path"] = rec.object_mesh_path;
  j["blob"] = sidecar(path).filename().string();
  j["object_trajectory"] = blob.add(flatten_traj(rec.object_traj), {t, 12});
  j["hand_trajectory"] = blob.add(flatten_traj(rec.hand_traj), {t, 12});
  if (rec.gt_joints) j["gt_joints"] = blob.add(flatten_joints(*rec.gt_joints), {t, hand::kNumJoints, 3});
  if (rec.gt_pose) j["gt_pose"] = add_pose(blob, *rec.gt_pose);
  if (rec.pred_joints) j["pred_joints"] = blob.add(flatten_joints(*rec.pred_joints), {t, hand::kNumJoints, 3});
  if (rec.fit_pose) j["fit_pose"] = add_pose(blob, *rec.fit_pose);
  j["provenance"] = {{"seed", rec.provenance.seed}, {"config_hash", rec.provenance.config_hash}};
  if (!rec.provenance.source.empty()) j["provenance"]["source"] = rec.provenance.source;

  blob.write(sidecar(path));
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (write_mesh && !rec.object_mesh_path.empty()) write_obj(path.parent_path() / rec.object_mesh_path, rec.object_mesh);
}

SequenceRecord read_record(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  SequenceRecord rec;
  try {
    rec.schema_version = j.at("schema_version").get<int>();
    if (rec.schema_version != kRecordSchemaVersion)
      throw ValidationError("unsupported record schema version " + std::to_string(rec.schema_version));
    rec.fps = j.at("fps").get<double>();
    const auto t = j.at("frames").get<std::size_t>();
    if (t == 0) throw ValidationError("record has no frames");
    rec.object_mesh_path = j.at("object_mesh_path").get<std::string>();
    const BlobReader blob(path.parent_path() / j.at("blob").get<std::string>());
    rec.object_traj = unflatten_traj<ObjectTrajectory>(blob.get(j.at("object_trajectory"), 12 * t), t, rec.fps, "object");
    rec.hand_traj = unflatten_traj<HandTrajectory>(blob.get(j.at("hand_trajectory"), 12 * t), t, rec.fps, "hand");
    if (j.contains("gt_joints")) rec.gt_joints = unflatten_joints(blob.get(j["gt_joints"], 63 * t), t);
    if (j.contains("gt_pose")) rec.gt_pose = get_pose(blob, j["gt_pose"], t);
    if (j.contains("pred_joints")) rec.pred_joints = unflatten_joints(blob.get(j["pred_joints"], 63 * t), t);
    if (j.contains("fit_pose")) rec.fit_pose = get_pose(blob, j["fit_pose"], t);
    if (j.contains("provenance")) {
      rec.provenance.seed = j["provenance"].value("seed", std::uint64_t{0});
      rec.provenance.config_hash = j["provenance"].value("config_hash", std::string());
      rec.provenance.source = j["provenance"].value("source", std::string());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  if (!rec.object_mesh_path.empty()) rec.object_mesh = read_obj(path.parent_path() / rec.object_mesh_path);
  rec.validate();
  return rec;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace gears
