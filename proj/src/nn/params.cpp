#include "gears/nn/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "gears/errors.hpp"

namespace gears::nn {

Parameter& ParamStore::add(const std::string& name, std::size_t rows, std::size_t cols) {
  auto [it, inserted] = params_.try_emplace(name, Tensor(rows, cols));
  if (!inserted) throw ValidationError("duplicate parameter name '" + name + "'");
  return it->second;
}

Parameter& ParamStore::add_uniform(const std::string& name, std::size_t rows, std::size_t cols, std::size_t fan_in,
                                   Rng& rng) {
  Parameter& p = add(name, rows, cols);
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : p.value.data()) v = dist(rng);
  return p;
}

Parameter& ParamStore::at(const std::string& name) {
  const auto it = params_.find(name);
  if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
  return it->second;
}

const Parameter& ParamStore::at(const std::string& name) const {
  const auto it = params_.find(name);
  if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [name, p] : params_) p.grad.fill(0.0);
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.size();
  return n;
}

void adam_step(ParamStore& store, const AdamConfig& cfg) {
  ++store.step;
  const double t = static_cast<double>(store.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : store.all()) {
    auto w = p.value.data();
    auto g = p.grad.data();
    auto m = p.m.data();
    auto v = p.v.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      w[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

namespace {

void put_f64(std::ostream& out, double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, sizeof bits);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(bytes, 8);
}

double get_f64(const unsigned char* bytes) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | bytes[i];
  double x;
  std::memcpy(&x, &bits, sizeof x);
  return x;
}

std::filesystem::path blob_path(const std::filesystem::path& manifest) {
  auto p = manifest;
  p.replace_extension(".bin");
  return p;
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& manifest) const {
  const auto blob = blob_path(manifest);
  std::ofstream bin(blob, std::ios::binary);
  if (!bin) throw Error("cannot write " + blob.string());
  nlohmann::json j;
  j["format"] = "gears-params";
  j["version"] = 1;
  j["blob"] = blob.filename().string();
  j["meta"] = meta;
  j["stores"] = nlohmann::json::object();
  std::size_t offset = 0;
  for (const auto& [store_name, store] : stores) {
    nlohmann::json sj;
    sj["step"] = store.step;
    sj["tensors"] = nlohmann::json::array();
    for (const auto& [name, p] : store.all()) {
      sj["tensors"].push_back({{"name", name}, {"shape", {p.value.rows(), p.value.cols()}}, {"offset", offset}});
      for (const Tensor* t : {&p.value, &p.m, &p.v}) {
        for (double x : t->data()) put_f64(bin, x);
      }
      offset += 3 * p.value.size();
    }
    j["stores"][store_name] = std::move(sj);
  }
  j["elements"] = offset;
  std::ofstream out(manifest);
  if (!out) throw Error("cannot write " + manifest.string());
  out << j.dump(2) << '\n';
}

Checkpoint Checkpoint::load(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw Error("cannot open " + manifest.string());
  const auto j = nlohmann::json::parse(in);
  if (j.value("format", "") != "gears-params") throw ValidationError(manifest.string() + " is not a parameter checkpoint");
  const auto blob = manifest.parent_path() / j.at("blob").get<std::string>();
  std::ifstream bin(blob, std::ios::binary);
  if (!bin) throw Error("cannot open " + blob.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  const auto elements = j.at("elements").get<std::size_t>();
  if (bytes.size() != elements * 8) throw ValidationError("checkpoint blob size does not match its manifest");

  Checkpoint ck;
  ck.meta = j.value("meta", nlohmann::json::object());
  for (const auto& [store_name, sj] : j.at("stores").items()) {
    ParamStore store;
    store.step = sj.at("step").get<std::uint64_t>();
    for (const auto& tj : sj.at("tensors")) {
      const auto rows = tj.at("shape").at(0).get<std::size_t>();
      const auto cols = tj.at("shape").at(1).get<std::size_t>();
      auto offset = tj.at("offset").get<std::size_t>();
      if (offset + 3 * rows * cols > elements) throw ValidationError("checkpoint tensor exceeds blob");
      Parameter& p = store.add(tj.at("name").get<std::string>(), rows, cols);
      for (Tensor* t : {&p.value, &p.m, &p.v}) {
        for (auto& x : t->data()) x = get_f64(bytes.data() + 8 * offset++);
      }
    }
    ck.stores.emplace(store_name, std::move(store));
  }
  return ck;
}

}  // namespace gears::nn
