// SPDX-License-Identifier: Apache-2.0
//
// JSON <-> config structs for the CLI. Readers are strict (unknown keys
// throw ConfigError with the offending path); writers emit every field so a
// manifest records the fully resolved configuration.
#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "drm/config.hpp"
#include "drm/experiments.hpp"
#include "drm/synth.hpp"
#include "drm/trainer.hpp"

namespace drm::settings {

using json = nlohmann::json;
using config::FieldReader;

inline synth::WorldSpec read_world(const json& j, const std::string& path) {
  FieldReader r(j, path);
  synth::WorldSpec w;
  w.n_classes = r.get("n_classes", w.n_classes);
  w.dim_core = r.get("dim_core", w.dim_core);
  w.dim_noncore = r.get("dim_noncore", w.dim_noncore);
  w.dim_obs = r.get("dim_obs", w.dim_obs);
  w.world_seed = r.get<std::uint64_t>("world_seed", w.world_seed);
  w.core_jitter = r.get("core_jitter", w.core_jitter);
  w.noncore_jitter = r.get("noncore_jitter", w.noncore_jitter);
  w.alpha_core = r.get("alpha_core", w.alpha_core);
  w.alpha_nc = r.get("alpha_nc", w.alpha_nc);
  w.artifact_strength = r.get("artifact_strength", w.artifact_strength);
  w.artifact_spread = r.get("artifact_spread", w.artifact_spread);
  r.finish();
  try {
    w.check();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return w;
}

inline json to_json(const synth::WorldSpec& w) {
  return {{"n_classes", w.n_classes},
          {"dim_core", w.dim_core},
          {"dim_noncore", w.dim_noncore},
          {"dim_obs", w.dim_obs},
          {"world_seed", w.world_seed},
          {"core_jitter", w.core_jitter},
          {"noncore_jitter", w.noncore_jitter},
          {"alpha_core", w.alpha_core},
          {"alpha_nc", w.alpha_nc},
          {"artifact_strength", w.artifact_strength},
          {"artifact_spread", w.artifact_spread}};
}

inline std::vector<experiments::OodComponent> read_ood(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError(path + ": expected a non-empty array");
  std::vector<experiments::OodComponent> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "]";
    FieldReader r(j[i], p);
    experiments::OodComponent c;
    c.rho = r.require<double>("rho");
    c.weight = r.get("weight", 1.0);
    r.finish();
    if (!(c.rho >= -1.0 && c.rho <= 1.0)) throw ConfigError(p + ".rho: must be in [-1,1]");
    if (!(c.weight > 0.0)) throw ConfigError(p + ".weight: must be > 0");
    out.push_back(c);
  }
  return out;
}

inline json to_json(const std::vector<experiments::OodComponent>& v) {
  json a = json::array();
  for (const auto& c : v) a.push_back({{"rho", c.rho}, {"weight", c.weight}});
  return a;
}

inline experiments::ScenarioSpec read_scenario(const json& j, const std::string& path) {
  FieldReader r(j, path);
  experiments::ScenarioSpec s;
  if (const json* w = r.raw("world")) s.world = read_world(*w, r.child("world"));
  s.clarity = r.get("clarity", s.clarity);
  s.train_rho = r.get("train_rho", s.train_rho);
  if (const json* o = r.raw("ood")) s.ood = read_ood(*o, r.child("ood"));
  s.noise_scale = r.get("noise_scale", s.noise_scale);
  s.n_train = r.get("n_train", s.n_train);
  s.n_val = r.get("n_val", s.n_val);
  s.n_test = r.get("n_test", s.n_test);
  r.finish();
  if (!(s.clarity >= 0.0 && s.clarity <= 1.0)) throw ConfigError(r.child("clarity") + ": must be in [0,1]");
  if (!(s.train_rho >= -1.0 && s.train_rho <= 1.0)) throw ConfigError(r.child("train_rho") + ": must be in [-1,1]");
  if (!(s.noise_scale >= 0.0)) throw ConfigError(r.child("noise_scale") + ": must be >= 0");
  if (s.n_train < 2 || s.n_val < 1 || s.n_test < 1) throw ConfigError(path + ": split sizes too small");
  return s;
}

inline json to_json(const experiments::ScenarioSpec& s) {
  return {{"world", to_json(s.world)},     {"clarity", s.clarity}, {"train_rho", s.train_rho},
          {"ood", to_json(s.ood)},         {"noise_scale", s.noise_scale}, {"n_train", s.n_train},
          {"n_val", s.n_val},              {"n_test", s.n_test}};
}

/// Wraps a parse_* call so the error message carries the field path.
template <typename F>
auto at_path(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline TrainConfig read_train(const json& j, const std::string& path) {
  FieldReader r(j, path);
  TrainConfig t;
  t.epochs = r.get("epochs", t.epochs);
  t.lr = r.get("lr", t.lr);
  t.weight_decay = r.get("weight_decay", t.weight_decay);
  t.batch_size = r.get("batch_size", t.batch_size);
  t.lambda = r.get("lambda", t.lambda);
  if (auto s = r.optional<std::string>("erm_kind")) {
    t.erm_kind = at_path(r.child("erm_kind"), [&] { return parse_erm_kind(*s); });
  }
  if (auto s = r.optional<std::string>("variant")) {
    t.variant = at_path(r.child("variant"), [&] { return experiments::find_variant(*s); });
  }
  t.seed = r.get<std::uint64_t>("seed", t.seed);
  if (auto s = r.optional<std::string>("early_stop_metric")) {
    t.early_stop_metric = at_path(r.child("early_stop_metric"), [&] { return parse_early_stop_metric(*s); });
  }
  t.early_stopping = r.get("early_stopping", t.early_stopping);
  t.tau = r.get("tau", t.tau);
  t.beta = r.optional<double>("beta");
  t.use_adapter = r.get("use_adapter", t.use_adapter);
  r.finish();
  at_path(path, [&] {
    t.check();
    return 0;
  });
  return t;
}

inline json to_json(const TrainConfig& t) {
  json j = {{"epochs", t.epochs},
            {"lr", t.lr},
            {"weight_decay", t.weight_decay},
            {"batch_size", t.batch_size},
            {"lambda", t.lambda},
            {"erm_kind", std::string(to_string(t.erm_kind))},
            {"variant", t.variant.id},
            {"seed", t.seed},
            {"early_stop_metric", std::string(to_string(t.early_stop_metric))},
            {"early_stopping", t.early_stopping},
            {"tau", t.tau},
            {"use_adapter", t.use_adapter}};
  j["beta"] = t.beta ? json(*t.beta) : json(nullptr);
  return j;
}

/// Benchmark defaults: short schedules and small batches suit the desk-scale
/// synthetic splits.
inline TrainConfig benchmark_train_defaults() {
  TrainConfig t;
  t.epochs = 20;
  t.batch_size = 64;
  return t;
}

/// Reads an optional "train" block on top of the benchmark defaults.
inline TrainConfig read_train_over(const json* t, const std::string& path, TrainConfig base) {
  if (!t) return base;
  if (!t->is_object()) throw ConfigError(path + ": expected an object");
  const json known = to_json(TrainConfig{});
  json merged = to_json(base);
  for (auto it = t->begin(); it != t->end(); ++it) {
    if (!known.contains(it.key())) throw ConfigError(path + "." + it.key() + ": unknown field");
    merged[it.key()] = it.value();
  }
  return read_train(merged, path);
}

inline experiments::QuadrantConfig read_quadrant(const json& j) {
  FieldReader r(j, "$");
  config::check_schema_version(r);
  experiments::QuadrantConfig q;
  q.train = benchmark_train_defaults();
  if (const json* s = r.raw("scenario")) q.scenario = read_scenario(*s, "$.scenario");
  if (const json* c = r.raw("cells")) {
    if (!c->is_array() || c->empty()) throw ConfigError("$.cells: expected a non-empty array");
    q.cells.clear();
    for (std::size_t i = 0; i < c->size(); ++i) {
      const std::string p = "$.cells[" + std::to_string(i) + "]";
      FieldReader cr((*c)[i], p);
      experiments::QuadrantCell cell;
      cell.name = cr.require<std::string>("name");
      cell.clarity = cr.require<double>("clarity");
      const json* o = cr.raw("ood");
      if (!o) throw ConfigError(cr.child("ood") + ": required field missing");
      cell.ood = read_ood(*o, cr.child("ood"));
      cr.finish();
      q.cells.push_back(cell);
    }
  }
  q.train = read_train_over(r.raw("train"), "$.train", q.train);
  q.n_seeds = r.get("n_seeds", q.n_seeds);
  q.base_seed = r.get<std::uint64_t>("base_seed", q.base_seed);
  r.finish();
  if (q.n_seeds < 1) throw ConfigError("$.n_seeds: must be >= 1");
  return q;
}

inline experiments::AblationConfig read_ablation(const json& j) {
  FieldReader r(j, "$");
  config::check_schema_version(r);
  experiments::AblationConfig a;
  if (const json* s = r.raw("scenario")) a.scenario = read_scenario(*s, "$.scenario");
  a.train = read_train_over(r.raw("train"), "$.train", benchmark_train_defaults());
  a.seed = r.get<std::uint64_t>("seed", a.seed);
  r.finish();
  return a;
}

inline experiments::NormalizationConfig read_normalization(const json& j) {
  FieldReader r(j, "$");
  config::check_schema_version(r);
  experiments::NormalizationConfig n;
  if (const json* s = r.raw("scenario")) n.scenario = read_scenario(*s, "$.scenario");
  n.train = read_train_over(r.raw("train"), "$.train", benchmark_train_defaults());
  n.n_seeds = r.get("n_seeds", n.n_seeds);
  n.base_seed = r.get<std::uint64_t>("base_seed", n.base_seed);
  r.finish();
  return n;
}

}  // namespace drm::settings
