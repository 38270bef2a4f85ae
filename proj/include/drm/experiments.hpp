// SPDX-License-Identifier: Apache-2.0
//
// Experiment drivers built on the synthetic generator: the quadrant
// benchmark (ERM vs WRM vs DRM across clarity/shift regimes), the
// normalization study, and the ablation matrix. Independent runs fan out
// over threads and are written into preallocated slots, so results do not
// depend on the job count.
#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdio>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "drm/inference.hpp"
#include "drm/softlabel.hpp"
#include "drm/synth.hpp"
#include "drm/trainer.hpp"

namespace drm::experiments {

/// splitmix64 step; derives independent stream seeds from one base seed.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception
/// (lowest index) is rethrown after all workers finish.
inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct OodComponent {
  double rho = 0.0;
  double weight = 1.0;
};

/// One data regime: world, clarity, training correlation and the OOD mix.
struct ScenarioSpec {
  synth::WorldSpec world;
  double clarity = 1.0;
  double train_rho = 0.8;
  std::vector<OodComponent> ood{{-0.8, 1.0}};
  double noise_scale = 0.05;
  std::size_t n_train = 1000;
  std::size_t n_val = 500;
  std::size_t n_test = 2000;
};

struct ScenarioData {
  synth::World world;
  ClassifierHead df;
  ClassifierHead cd;
  LabeledDataset train;
  LabeledDataset id_val;
  LabeledDataset ood;

  TrainableParams init(bool with_adapter = false) const { return TrainableParams::from_heads(df, cd, with_adapter); }
};

/// Fresh world and datasets for one seed. Train and id_val share the
/// training correlation; the OOD split is a tagged mixture.
inline ScenarioData build_scenario(const ScenarioSpec& spec, std::uint64_t seed, double tau) {
  synth::WorldSpec ws = spec.world;
  ws.world_seed = mix_seed(spec.world.world_seed, seed);
  synth::World world = synth::make_world(ws);
  auto heads = synth::make_prompt_embeddings(world, tau);

  auto domain = [&](const std::string& name, double rho, std::uint64_t stream) {
    synth::DomainSpec d;
    d.name = name;
    d.clarity = spec.clarity;
    d.noncore_correlation = rho;
    d.noise_scale = spec.noise_scale;
    d.seed = mix_seed(ws.world_seed, stream);
    return d;
  };
  LabeledDataset train = synth::generate_domain(world, domain("train", spec.train_rho, 1), spec.n_train, Split::kTrain);
  LabeledDataset val = synth::generate_domain(world, domain("train", spec.train_rho, 2), spec.n_val, Split::kIdVal);

  synth::DomainFamily fam;
  for (std::size_t k = 0; k < spec.ood.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "ood_rho%+.2f", spec.ood[k].rho);
    fam.specs.push_back(domain(name, spec.ood[k].rho, 10 + k));
    fam.weights.push_back(spec.ood[k].weight);
  }
  const double wsum = std::accumulate(fam.weights.begin(), fam.weights.end(), 0.0);
  for (double& w : fam.weights) w /= wsum;
  LabeledDataset ood = synth::generate_family_mixture(world, fam, spec.n_test, Split::kOodTest);
  return {std::move(world), std::move(heads.df), std::move(heads.cd), std::move(train), std::move(val), std::move(ood)};
}

// ---- methods ------------------------------------------------------------

enum class Method { kErm, kWrm, kDrm };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::kErm: return "erm";
    case Method::kWrm: return "wrm";
    case Method::kDrm: return "drm";
  }
  return "?";
}

/// The full ablation table, keyed by row id.
inline std::vector<AblationVariant> ablation_variants() {
  using enum PromptKind;
  auto v = [](std::string id, std::optional<PromptKind> t1, std::optional<PromptKind> t2, ProxyType proxy,
              InferMode infer) { return AblationVariant{std::move(id), LossVariant{t1, t2}, proxy, infer}; };
  return {
      v("S", kDf, kCd, ProxyType::kPr, InferMode::kDual),
      v("a1", kDf, kCd, ProxyType::kPr, InferMode::kDf),
      v("a2", kDf, kCd, ProxyType::kPr, InferMode::kCd),
      v("b1", kDf, kDf, ProxyType::kPr, InferMode::kDf),
      v("b2", kCd, kCd, ProxyType::kPr, InferMode::kCd),
      v("c1", kDf, kCd, ProxyType::kCdDirect, InferMode::kDual),
      v("c2", kDf, kCd, ProxyType::kPrDf, InferMode::kDual),
      v("c3", kDf, kCd, ProxyType::kOneHot, InferMode::kDual),
      v("d1", kDf, std::nullopt, ProxyType::kPr, InferMode::kDf),
      v("d2", kCd, std::nullopt, ProxyType::kPr, InferMode::kCd),
      v("d3", std::nullopt, kCd, ProxyType::kPr, InferMode::kCd),
      // e1/e2 combine independently trained d1 and d3; heads are unused.
      v("e1", kDf, kCd, ProxyType::kPr, InferMode::kDual),
      v("e2", kDf, kCd, ProxyType::kPr, InferMode::kDual),
  };
}

inline AblationVariant find_variant(const std::string& id) {
  for (auto& v : ablation_variants()) {
    if (v.id == id) return v;
  }
  throw ConfigError("unknown ablation variant '" + id + "'");
}

/// Trains one variant on the scenario. Soft labels are built from the
/// zero-shot heads on the training split.
inline TrainedModel fit_variant(const TrainConfig& base, const ScenarioData& data, const AblationVariant& variant) {
  TrainConfig cfg = base;
  cfg.variant = variant;
  const TrainableParams init = data.init(cfg.use_adapter);
  if (!variant.heads.t2) return train(cfg, init, data.train, &data.id_val, nullptr);
  const SoftLabelTable soft = build_proxy_targets(data.train, data.df, data.cd, variant.proxy);
  return train(cfg, init, data.train, &data.id_val, &soft);
}

inline TrainedModel fit_method(Method m, const TrainConfig& base, const ScenarioData& data) {
  switch (m) {
    case Method::kErm: {
      TrainConfig cfg = base;
      cfg.variant = find_variant("d1");
      return train_erm(cfg, data.init(cfg.use_adapter), data.train, &data.id_val);
    }
    case Method::kWrm: return fit_variant(base, data, find_variant("d3"));
    case Method::kDrm: return fit_variant(base, data, find_variant("S"));
  }
  throw ConfigError("unknown method");
}

// ---- quadrant -----------------------------------------------------------

struct QuadrantCell {
  std::string name;
  double clarity = 1.0;
  std::vector<OodComponent> ood;
};

inline std::vector<QuadrantCell> default_quadrant_cells() {
  return {
      {"clear_flipped", 1.0, {{-0.8, 1.0}}},
      {"unclear_aligned", 0.3, {{0.8, 1.0}}},
      {"mixed", 0.65, {{0.8, 0.5}, {-0.8, 0.5}}},
  };
}

struct QuadrantConfig {
  ScenarioSpec scenario;
  std::vector<QuadrantCell> cells = default_quadrant_cells();
  TrainConfig train;
  int n_seeds = 20;
  std::uint64_t base_seed = 0;
  int jobs = 1;
};

struct CellResult {
  std::string name;
  // [method][seed] OOD accuracy, methods in erm, wrm, drm order.
  std::array<std::vector<double>, 3> ood_accuracy;

  double mean(Method m) const {
    const auto& v = ood_accuracy[static_cast<std::size_t>(m)];
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  }
};

inline std::vector<CellResult> run_quadrant(const QuadrantConfig& cfg) {
  if (cfg.n_seeds < 1) throw ConfigError("quadrant: n_seeds must be >= 1");
  std::vector<CellResult> out(cfg.cells.size());
  const std::size_t per_cell = static_cast<std::size_t>(cfg.n_seeds);
  for (std::size_t c = 0; c < cfg.cells.size(); ++c) {
    out[c].name = cfg.cells[c].name;
    for (auto& v : out[c].ood_accuracy) v.assign(per_cell, 0.0);
  }
  parallel_for(cfg.cells.size() * per_cell, cfg.jobs, [&](std::size_t job) {
    const std::size_t c = job / per_cell;
    const std::size_t s = job % per_cell;
    ScenarioSpec spec = cfg.scenario;
    spec.clarity = cfg.cells[c].clarity;
    spec.ood = cfg.cells[c].ood;
    const std::uint64_t seed = cfg.base_seed + s;
    const ScenarioData data = build_scenario(spec, seed, cfg.train.tau);
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    for (Method m : {Method::kErm, Method::kWrm, Method::kDrm}) {
      const TrainedModel model = fit_method(m, tc, data);
      out[c].ood_accuracy[static_cast<std::size_t>(m)][s] = evaluate(model.predictor(), data.ood).accuracy;
    }
  });
  return out;
}

inline nlohmann::json to_json(const std::vector<CellResult>& cells) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& c : cells) {
    nlohmann::json row;
    row["cell"] = c.name;
    for (Method m : {Method::kErm, Method::kWrm, Method::kDrm}) {
      row[std::string(to_string(m))] = {{"mean_ood_accuracy", c.mean(m)},
                                        {"per_seed", c.ood_accuracy[static_cast<std::size_t>(m)]}};
    }
    j.push_back(row);
  }
  return j;
}

// ---- normalization study --------------------------------------------------

struct NormalizationConfig {
  ScenarioSpec scenario;
  TrainConfig train;
  int n_seeds = 20;
  std::uint64_t base_seed = 0;
  int jobs = 1;
};

struct NormalizationResult {
  std::vector<double> normalized;  // DRM with the min-max proxy
  std::vector<double> direct;      // DRM with the raw zero-shot cd softmax

  static double mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  }
};

inline NormalizationResult run_normalization_study(const NormalizationConfig& cfg) {
  const auto n = static_cast<std::size_t>(cfg.n_seeds);
  NormalizationResult r;
  r.normalized.assign(n, 0.0);
  r.direct.assign(n, 0.0);
  parallel_for(n, cfg.jobs, [&](std::size_t s) {
    const std::uint64_t seed = cfg.base_seed + s;
    const ScenarioData data = build_scenario(cfg.scenario, seed, cfg.train.tau);
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    r.normalized[s] = evaluate(fit_variant(tc, data, find_variant("S")).predictor(), data.ood).accuracy;
    r.direct[s] = evaluate(fit_variant(tc, data, find_variant("c1")).predictor(), data.ood).accuracy;
  });
  return r;
}

// ---- ablation matrix ------------------------------------------------------

struct AblationRow {
  AblationVariant variant;
  EvalReport id_val;
  EvalReport ood;
};

struct AblationConfig {
  ScenarioSpec scenario;
  TrainConfig train;
  std::uint64_t seed = 0;
  int jobs = 1;
};

inline std::vector<AblationRow> run_ablation(const AblationConfig& cfg) {
  const ScenarioData data = build_scenario(cfg.scenario, cfg.seed, cfg.train.tau);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  const auto variants = ablation_variants();
  std::vector<std::optional<TrainedModel>> models(variants.size());
  std::vector<std::size_t> trained;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    if (variants[i].id != "e1" && variants[i].id != "e2") trained.push_back(i);
  }
  parallel_for(trained.size(), cfg.jobs, [&](std::size_t k) {
    const std::size_t i = trained[k];
    models[i] = fit_variant(tc, data, variants[i]);
  });
  auto index_of = [&](const std::string& id) {
    for (std::size_t i = 0; i < variants.size(); ++i) {
      if (variants[i].id == id) return i;
    }
    throw ConfigError("ablation: missing variant " + id);
  };
  const TrainedModel& d1 = *models[index_of("d1")];
  const TrainedModel& d3 = *models[index_of("d3")];
  const double beta = tc.effective_beta();

  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    Predictor p;
    if (variants[i].id == "e1") {
      p = combine_independent(d1, d3, CombineMode::kEnsemble, beta);
    } else if (variants[i].id == "e2") {
      p = combine_independent(d1, d3, CombineMode::kWeightAverage, beta);
    } else {
      p = models[i]->predictor();
    }
    rows.push_back({variants[i], evaluate(p, data.id_val), evaluate(p, data.ood)});
  }
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << "id,t1,t2,proxy,infer,id_val_accuracy,ood_accuracy,ood_worst_domain_accuracy\n";
  for (const auto& r : rows) {
    const auto& v = r.variant;
    os << v.id << ',' << (v.heads.t1 ? std::string(to_string(*v.heads.t1)) : "-") << ','
       << (v.heads.t2 ? std::string(to_string(*v.heads.t2)) : "-") << ','
       << (v.heads.t2 ? std::string(to_string(v.proxy)) : "-") << ',' << to_string(v.infer) << ','
       << r.id_val.accuracy << ',' << r.ood.accuracy << ',' << drm::detail::fmt_double(r.ood.worst_domain_accuracy)
       << '\n';
  }
  return os.str();
}

}  // namespace drm::experiments
