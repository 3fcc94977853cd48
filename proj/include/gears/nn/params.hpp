#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"

#include "gears/nn/graph.hpp"
#include "gears/random.hpp"

namespace gears::nn {

/// Named parameters plus optimizer state. Iteration order is by name.
class ParamStore {
 public:
  /// Adds a zero-initialised parameter. Throws if the name exists.
  Parameter& add(const std::string& name, std::size_t rows, std::size_t cols);
  /// Adds a parameter drawn from U(-sqrt(1/fan_in), sqrt(1/fan_in)).
  Parameter& add_uniform(const std::string& name, std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng);

  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::map<std::string, Parameter>& all() { return params_; }
  const std::map<std::string, Parameter>& all() const { return params_; }

  void zero_grad();
  std::size_t scalar_count() const;

  std::uint64_t step = 0;

 private:
  std::map<std::string, Parameter> params_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected adaptive-moment update using the accumulated gradients.
/// Gradients are left untouched; call zero_grad before the next pass.
void adam_step(ParamStore& store, const AdamConfig& cfg);

/// Named parameter stores saved together: a JSON manifest next to a
/// little-endian float64 blob (`<manifest>.bin`).
struct Checkpoint {
  std::map<std::string, ParamStore> stores;
  nlohmann::json meta = nlohmann::json::object();

  void save(const std::filesystem::path& manifest) const;
  static Checkpoint load(const std::filesystem::path& manifest);
};

}  // namespace gears::nn
