#pragma once

// Checkpoints: every parameter tensor, both optimizer states, the training
// RNG, progress counters and the config hash. Doubles are written as hex
// floats so a reload is bit-exact.

#include "spottrip/config.hpp"
#include "spottrip/data.hpp"
#include "spottrip/nn.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace spottrip {

struct OptimizerState {
  long steps = 0;
  std::map<std::string, AdamW::Moments> moments;
};

struct Checkpoint {
  std::string config_hash;
  nlohmann::json config;
  int epoch = 0;  // epochs completed
  double best_metric = -1.0;
  int best_epoch = 0;
  int stale_epochs = 0;
  std::map<std::string, Matrix> params;
  OptimizerState main_optimizer;
  OptimizerState transe_optimizer;
  std::string rng_state;
};

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json data = nlohmann::json::array();
  for (Index i = 0; i < m.size(); ++i) data.push_back(detail::hex_double(m.data()[i]));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  Matrix m(j.at("rows").get<Index>(), j.at("cols").get<Index>());
  const auto& data = j.at("data");
  if (static_cast<Index>(data.size()) != m.size()) throw DataError("checkpoint: tensor size mismatch");
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = detail::parse_hex_double(data[static_cast<std::size_t>(i)].get<std::string>());
  return m;
}

inline std::map<std::string, Matrix> snapshot(const ParameterStore& store) {
  std::map<std::string, Matrix> out;
  for (const auto* p : store.all()) out.emplace(p->name, p->value);
  return out;
}

/// Copies tensors back into `store`; names and shapes must match exactly.
inline void restore(ParameterStore& store, const std::map<std::string, Matrix>& params) {
  if (params.size() != store.all().size()) throw DataError("checkpoint: parameter count does not match the model");
  for (auto* p : store.all()) {
    auto it = params.find(p->name);
    if (it == params.end()) throw DataError("checkpoint: missing parameter " + p->name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      throw DataError("checkpoint: shape mismatch for " + p->name);
    }
    p->value = it->second;
  }
}

inline OptimizerState capture(const AdamW& opt) { return OptimizerState{opt.steps(), opt.moments()}; }

inline nlohmann::json optimizer_to_json(const OptimizerState& s) {
  nlohmann::json moments = nlohmann::json::object();
  for (const auto& [name, m] : s.moments) moments[name] = {{"m", matrix_to_json(m.m)}, {"v", matrix_to_json(m.v)}};
  return {{"steps", s.steps}, {"moments", std::move(moments)}};
}

inline OptimizerState optimizer_from_json(const nlohmann::json& j) {
  OptimizerState s;
  s.steps = j.at("steps").get<long>();
  for (const auto& [name, m] : j.at("moments").items()) {
    s.moments.emplace(name, AdamW::Moments{matrix_from_json(m.at("m")), matrix_from_json(m.at("v"))});
  }
  return s;
}

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, m] : c.params) params[name] = matrix_to_json(m);
  return {{"format", "spottrip-checkpoint-1"},
          {"config_hash", c.config_hash},
          {"config", c.config},
          {"epoch", c.epoch},
          {"best_metric", detail::hex_double(c.best_metric)},
          {"best_epoch", c.best_epoch},
          {"stale_epochs", c.stale_epochs},
          {"params", std::move(params)},
          {"main_optimizer", optimizer_to_json(c.main_optimizer)},
          {"transe_optimizer", optimizer_to_json(c.transe_optimizer)},
          {"rng_state", c.rng_state}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "spottrip-checkpoint-1") throw DataError("not a checkpoint file");
  Checkpoint c;
  c.config_hash = j.at("config_hash").get<std::string>();
  c.config = j.at("config");
  c.epoch = j.at("epoch").get<int>();
  c.best_metric = detail::parse_hex_double(j.at("best_metric").get<std::string>());
  c.best_epoch = j.at("best_epoch").get<int>();
  c.stale_epochs = j.at("stale_epochs").get<int>();
  for (const auto& [name, m] : j.at("params").items()) c.params.emplace(name, matrix_from_json(m));
  c.main_optimizer = optimizer_from_json(j.at("main_optimizer"));
  c.transe_optimizer = optimizer_from_json(j.at("transe_optimizer"));
  c.rng_state = j.at("rng_state").get<std::string>();
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(c).dump();
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("checkpoint " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

inline std::string rng_to_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline Rng rng_from_string(const std::string& s) {
  Rng rng;
  std::istringstream is(s);
  is >> rng;
  if (!is) throw DataError("checkpoint: corrupt RNG state");
  return rng;
}

}  // namespace spottrip
