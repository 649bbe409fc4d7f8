#pragma once

// Run configuration: defaults, JSON round trip, validation and a stable
// content hash used to tie checkpoints and reports to their settings.

#include "spottrip/fusion.hpp"
#include "spottrip/ode_solver.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace spottrip {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Variant { kFull, kWoKS, kWoOD, kWoSI };

inline Variant parse_variant(const std::string& tag) {
  if (tag == "full") return Variant::kFull;
  if (tag == "wo_KS") return Variant::kWoKS;
  if (tag == "wo_OD") return Variant::kWoOD;
  if (tag == "wo_SI") return Variant::kWoSI;
  throw ConfigError("unknown ablation variant '" + tag + "' (expected full, wo_KS, wo_OD or wo_SI)");
}

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kWoKS: return "wo_KS";
    case Variant::kWoOD: return "wo_OD";
    case Variant::kWoSI: return "wo_SI";
  }
  return "full";
}

/// Time points at which fusion reads the dynamic state during training.
enum class FusionGrid { kSurrogate, kActual };

struct RunConfig {
  Index d = 32;
  double lr = 1e-3;
  double weight_decay = 1e-5;
  std::size_t batch_size = 32;
  std::size_t transe_batch_size = 256;
  int max_epochs = 1000;
  int patience = 8;  // 0 disables early stopping
  double sigma = 0.6;
  fusion::Betas betas;
  double top_p = 0.9;
  ode::SolverConfig solver;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> eval_seeds{0, 1, 2};
  Variant variant = Variant::kFull;

  Index dyn_layers = 4;
  Index dyn_heads = 4;
  Index ff_width = 128;
  Index ode_hidden = 128;
  bool dyn_positional = false;
  Index query_layers = 1;
  Index query_heads = 4;
  Index max_trip_length = 0;  // 0: take the longest trip in the dataset
  int mc_samples = 1;
  bool stop_grad_targets = false;
  FusionGrid fusion_grid = FusionGrid::kSurrogate;
  bool dedup_intermediates = false;

  std::string data_dir;
};

inline void validate(const RunConfig& c) {
  auto fail = [](const std::string& why) { throw ConfigError("invalid config: " + why); };
  if (c.d < 1) fail("d must be positive");
  if (!(c.sigma > 0.0)) fail("sigma must be > 0");
  if (!(c.lr >= 0.0) || !(c.weight_decay >= 0.0)) fail("lr and weight_decay must be >= 0");
  if (c.batch_size < 1 || c.transe_batch_size < 1) fail("batch sizes must be positive");
  if (c.max_epochs < 0 || c.patience < 0) fail("max_epochs and patience must be >= 0");
  if (!(c.betas.static_term >= 0 && c.betas.dynamic_term >= 0 && c.betas.rec_term >= 0)) fail("betas must be >= 0");
  if (!(c.top_p > 0.0 && c.top_p <= 1.0)) fail("top_p must lie in (0, 1]");
  if (!(c.solver.rtol > 0 && c.solver.atol > 0) || c.solver.max_steps < 1 || !(c.solver.rk4_step > 0)) fail("bad solver settings");
  if (c.dyn_layers < 1 || c.dyn_heads < 1 || c.d % c.dyn_heads != 0) fail("d must be divisible by dyn_heads");
  if (c.query_layers < 1 || c.query_heads < 1 || (2 * c.d) % c.query_heads != 0) fail("2d must be divisible by query_heads");
  if (c.ff_width < 1 || c.ode_hidden < 1) fail("network widths must be positive");
  if (c.max_trip_length < 0 || (c.max_trip_length > 0 && c.max_trip_length < 2)) fail("max_trip_length must be 0 or >= 2");
  if (c.mc_samples < 1) fail("mc_samples must be >= 1");
  if (c.eval_seeds.empty()) fail("eval_seeds must not be empty");
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["d"] = c.d;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["batch_size"] = c.batch_size;
  j["transe_batch_size"] = c.transe_batch_size;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["sigma"] = c.sigma;
  j["betas"] = {c.betas.static_term, c.betas.dynamic_term, c.betas.rec_term};
  j["top_p"] = c.top_p;
  j["solver"] = {{"method", c.solver.method == ode::Method::kRk4 ? "rk4" : "dopri5"},
                 {"rtol", c.solver.rtol},
                 {"atol", c.solver.atol},
                 {"max_steps", c.solver.max_steps},
                 {"rk4_step", c.solver.rk4_step},
                 {"overflow_guard", c.solver.overflow_guard}};
  j["seed"] = c.seed;
  j["eval_seeds"] = c.eval_seeds;
  j["variant"] = variant_name(c.variant);
  j["dyn_layers"] = c.dyn_layers;
  j["dyn_heads"] = c.dyn_heads;
  j["ff_width"] = c.ff_width;
  j["ode_hidden"] = c.ode_hidden;
  j["dyn_positional"] = c.dyn_positional;
  j["query_layers"] = c.query_layers;
  j["query_heads"] = c.query_heads;
  j["max_trip_length"] = c.max_trip_length;
  j["mc_samples"] = c.mc_samples;
  j["stop_grad_targets"] = c.stop_grad_targets;
  j["fusion_time_grid"] = c.fusion_grid == FusionGrid::kActual ? "actual" : "surrogate";
  j["dedup_intermediates"] = c.dedup_intermediates;
  j["data_dir"] = c.data_dir;
  return j;
}

/// Fields absent from `j` keep their current values; unknown keys are errors.
inline void apply_json(RunConfig& c, const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "d", "lr", "weight_decay", "batch_size", "transe_batch_size", "max_epochs", "patience", "sigma", "betas",
      "top_p", "solver", "seed", "eval_seeds", "variant", "dyn_layers", "dyn_heads", "ff_width", "ode_hidden",
      "dyn_positional", "query_layers", "query_heads", "max_trip_length", "mc_samples", "stop_grad_targets",
      "fusion_time_grid", "dedup_intermediates", "data_dir"};
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown config key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("d", c.d);
    get("lr", c.lr);
    get("weight_decay", c.weight_decay);
    get("batch_size", c.batch_size);
    get("transe_batch_size", c.transe_batch_size);
    get("max_epochs", c.max_epochs);
    get("patience", c.patience);
    get("sigma", c.sigma);
    if (j.contains("betas")) {
      const auto b = j.at("betas").get<std::vector<double>>();
      if (b.size() != 3) throw ConfigError("betas must have three entries");
      c.betas = fusion::Betas{b[0], b[1], b[2]};
    }
    get("top_p", c.top_p);
    if (j.contains("solver")) {
      const auto& s = j.at("solver");
      if (s.contains("method")) {
        const auto m = s.at("method").get<std::string>();
        if (m != "dopri5" && m != "rk4") throw ConfigError("solver.method must be dopri5 or rk4");
        c.solver.method = m == "rk4" ? ode::Method::kRk4 : ode::Method::kDopri5;
      }
      if (s.contains("rtol")) c.solver.rtol = s.at("rtol").get<double>();
      if (s.contains("atol")) c.solver.atol = s.at("atol").get<double>();
      if (s.contains("max_steps")) c.solver.max_steps = s.at("max_steps").get<int>();
      if (s.contains("rk4_step")) c.solver.rk4_step = s.at("rk4_step").get<double>();
      if (s.contains("overflow_guard")) c.solver.overflow_guard = s.at("overflow_guard").get<double>();
    }
    get("seed", c.seed);
    get("eval_seeds", c.eval_seeds);
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    get("dyn_layers", c.dyn_layers);
    get("dyn_heads", c.dyn_heads);
    get("ff_width", c.ff_width);
    get("ode_hidden", c.ode_hidden);
    get("dyn_positional", c.dyn_positional);
    get("query_layers", c.query_layers);
    get("query_heads", c.query_heads);
    get("max_trip_length", c.max_trip_length);
    get("mc_samples", c.mc_samples);
    get("stop_grad_targets", c.stop_grad_targets);
    if (j.contains("fusion_time_grid")) {
      const auto g = j.at("fusion_time_grid").get<std::string>();
      if (g != "surrogate" && g != "actual") throw ConfigError("fusion_time_grid must be surrogate or actual");
      c.fusion_grid = g == "actual" ? FusionGrid::kActual : FusionGrid::kSurrogate;
    }
    get("dedup_intermediates", c.dedup_intermediates);
    get("data_dir", c.data_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config type error: ") + e.what());
  }
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  apply_json(c, j);
  validate(c);
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

/// FNV-1a over the canonical JSON of every setting except data paths.
inline std::string config_hash(const RunConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("data_dir");
  const std::string text = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace spottrip
