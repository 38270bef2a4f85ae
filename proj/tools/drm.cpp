// SPDX-License-Identifier: Apache-2.0
//
// drm: command-line front end. Each subcommand reads one strict JSON config,
// writes its artifacts into --out and finishes with manifest.json.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "drm/config.hpp"
#include "drm/duality.hpp"
#include "drm/emb_format.hpp"
#include "drm/experiments.hpp"
#include "drm/inference.hpp"
#include "drm/manifest.hpp"
#include "drm/provider.hpp"
#include "drm/settings.hpp"
#include "drm/softlabel.hpp"
#include "drm/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using drm::config::FieldReader;

namespace {

struct Options {
  std::string config;
  std::string problem;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda;
  std::optional<double> beta;
  std::optional<double> rho;
  int jobs = 1;
};

/// Loaded config plus the directory its relative paths resolve against.
struct Loaded {
  json doc;
  fs::path base;

  std::string path(const std::string& p) const {
    const fs::path q(p);
    return (q.is_absolute() ? q : base / q).string();
  }
};

Loaded load(const std::string& path) {
  if (path.empty()) throw drm::ConfigError("--config is required");
  return {drm::config::load_file(path), fs::path(path).parent_path()};
}

fs::path prepare_out(const Options& o) {
  fs::path out(o.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw drm::DataError("cannot create output directory " + out.string() + ": " + ec.message());
  return out;
}

void write_json(const fs::path& dir, const std::string& name, const json& j, drm::Manifest& m) {
  drm::write_text(dir / name, j.dump(2) + "\n");
  m.add_artifact(dir, name);
}

void write_file(const fs::path& dir, const std::string& name, const std::string& text, drm::Manifest& m) {
  drm::write_text(dir / name, text);
  m.add_artifact(dir, name);
}

std::string require_string(FieldReader& r, const std::string& key) { return r.require<std::string>(key); }

/// {"name": path, ...} of labeled splits to evaluate.
std::vector<std::pair<std::string, drm::LabeledDataset>> read_splits(const json* j, const std::string& where,
                                                                      const Loaded& cfg) {
  std::vector<std::pair<std::string, drm::LabeledDataset>> out;
  if (!j) return out;
  if (!j->is_object()) throw drm::ConfigError(where + ": expected an object of name -> path");
  for (auto it = j->begin(); it != j->end(); ++it) {
    const auto p = FieldReader::convert<std::string>(it.value(), where + "." + it.key());
    out.emplace_back(it.key(), drm::load_labeled_dataset(cfg.path(p)));
  }
  return out;
}

struct DataPaths {
  drm::LabeledDataset train;
  drm::LabeledDataset id_val;
  drm::ClassifierHead df;
  drm::ClassifierHead cd;
};

DataPaths read_data(FieldReader& top, const Loaded& cfg, double tau) {
  const json* d = top.raw("data");
  if (!d) throw drm::ConfigError("$.data: required field missing");
  FieldReader r(*d, "$.data");
  DataPaths out{drm::load_labeled_dataset(cfg.path(require_string(r, "train"))),
                drm::load_labeled_dataset(cfg.path(require_string(r, "id_val"))),
                drm::load_head(cfg.path(require_string(r, "df_head")), tau),
                drm::load_head(cfg.path(require_string(r, "cd_head")), tau)};
  r.finish();
  if (out.df.kind() != drm::PromptKind::kDf) throw drm::DataError("$.data.df_head: head is not a df head");
  if (out.cd.kind() != drm::PromptKind::kCd) throw drm::DataError("$.data.cd_head: head is not a cd head");
  return out;
}

drm::SoftLabelTable soft_labels_for(const std::optional<std::string>& path, const Loaded& cfg, const DataPaths& d,
                                    const drm::AblationVariant& v) {
  if (path) {
    std::ifstream in(cfg.path(*path));
    if (!in) throw drm::DataError("cannot read soft labels " + cfg.path(*path));
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw drm::FormatError(std::string("soft labels: ") + e.what());
    }
    return drm::soft_labels_from_json(j);
  }
  return drm::build_proxy_targets(d.train, d.df, d.cd, v.proxy);
}

void apply_overrides(drm::TrainConfig& t, const Options& o) {
  if (o.seed) t.seed = *o.seed;
  if (o.lambda) t.lambda = *o.lambda;
  if (o.beta) t.beta = *o.beta;
  t.check();
}

json eval_json(const std::vector<std::pair<std::string, drm::EvalReport>>& reports) {
  json j = json::object();
  for (const auto& [name, r] : reports) j[name] = drm::to_json(r);
  return j;
}

// ---- subcommands ----------------------------------------------------------

int cmd_synth(const Options& o) {
  const Loaded cfg = load(o.config);
  FieldReader r(cfg.doc, "$");
  drm::config::check_schema_version(r);
  drm::experiments::ScenarioSpec spec;
  if (const json* s = r.raw("scenario")) spec = drm::settings::read_scenario(*s, "$.scenario");
  std::uint64_t seed = r.get<std::uint64_t>("seed", 0);
  const double tau = r.get("tau", drm::kDefaultTemperature);
  r.finish();
  if (o.seed) seed = *o.seed;

  const auto data = drm::experiments::build_scenario(spec, seed, tau);
  const fs::path out = prepare_out(o);
  const json resolved = {{"scenario", drm::settings::to_json(spec)}, {"seed", seed}, {"tau", tau}};
  drm::Manifest m("synth", resolved, seed);
  drm::save_labeled_dataset((out / "train.emb1").string(), data.train);
  drm::save_labeled_dataset((out / "id_val.emb1").string(), data.id_val);
  drm::save_labeled_dataset((out / "ood_test.emb1").string(), data.ood);
  drm::save_head((out / "df_head.emb1").string(), data.df);
  drm::save_head((out / "cd_head.emb1").string(), data.cd);
  for (const char* f : {"train.emb1", "id_val.emb1", "ood_test.emb1", "df_head.emb1", "cd_head.emb1"}) {
    m.add_artifact(out, f);
  }
  m.write(out);
  std::cout << "synth: " << data.train.size() << " train / " << data.id_val.size() << " id_val / " << data.ood.size()
            << " ood examples -> " << out.string() << "\n";
  return 0;
}

int cmd_softlabels(const Options& o) {
  const Loaded cfg = load(o.config);
  FieldReader r(cfg.doc, "$");
  drm::config::check_schema_version(r);
  const double tau = r.get("tau", drm::kDefaultTemperature);
  const auto train_ds = drm::load_labeled_dataset(cfg.path(require_string(r, "train")));
  const auto df = drm::load_head(cfg.path(require_string(r, "df_head")), tau);
  const auto cd = drm::load_head(cfg.path(require_string(r, "cd_head")), tau);
  const auto proxy = drm::settings::at_path("$.proxy", [&] {
    return drm::parse_proxy_type(r.get<std::string>("proxy", "pr"));
  });
  r.finish();

  const auto table = drm::build_proxy_targets(train_ds, df, cd, proxy);
  const fs::path out = prepare_out(o);
  drm::Manifest m("softlabels", cfg.doc, 0);
  write_json(out, "soft_labels.json", drm::soft_labels_to_json(table, train_ds.labels), m);
  drm::write_emb1((out / "soft_labels.emb1").string(), drm::soft_labels_container(table, train_ds.labels));
  m.add_artifact(out, "soft_labels.emb1");
  m.write(out);
  std::cout << "softlabels: " << table.size() << " rows, mean entropy " << drm::mean_entropy(table) << "\n";
  return 0;
}

int cmd_train(const Options& o) {
  const Loaded cfg = load(o.config);
  FieldReader r(cfg.doc, "$");
  drm::config::check_schema_version(r);
  drm::TrainConfig tc = drm::settings::read_train_over(r.raw("train"), "$.train", drm::TrainConfig{});
  apply_overrides(tc, o);
  const DataPaths d = read_data(r, cfg, tc.tau);
  const auto soft_path = r.optional<std::string>("soft_labels");
  r.finish();

  const auto init = drm::TrainableParams::from_heads(d.df, d.cd, tc.use_adapter);
  drm::TrainedModel model;
  if (tc.variant.heads.t2) {
    const auto soft = soft_labels_for(soft_path, cfg, d, tc.variant);
    model = drm::train(tc, init, d.train, &d.id_val, &soft);
  } else {
    model = drm::train(tc, init, d.train, &d.id_val, nullptr);
  }

  const fs::path out = prepare_out(o);
  json resolved = cfg.doc;
  resolved["train"] = drm::settings::to_json(tc);
  drm::Manifest m("train", resolved, tc.seed);
  drm::save_checkpoint((out / "checkpoint.emb1").string(), model);
  m.add_artifact(out, "checkpoint.emb1");
  std::ostringstream hist;
  hist.precision(17);
  hist << "epoch,erm,wrm,total,id_val_metric\n";
  for (const auto& e : model.history) {
    hist << e.epoch << ',' << e.erm << ',' << e.wrm << ',' << e.total << ',' << e.id_val_metric << '\n';
  }
  write_file(out, "history.csv", hist.str(), m);
  const auto id_val = drm::evaluate(model.predictor(), d.id_val);
  write_json(out, "train_report.json",
             {{"best_epoch", model.best_epoch},
              {"lambda", model.lambda},
              {"beta", model.beta},
              {"variant", model.variant.id},
              {"id_val", drm::to_json(id_val)}},
             m);
  m.write(out);
  std::cout << "train: best epoch " << model.best_epoch << ", id_val accuracy " << id_val.accuracy << "\n";
  return 0;
}

int cmd_eval(const Options& o) {
  const Loaded cfg = load(o.config);
  FieldReader r(cfg.doc, "$");
  drm::config::check_schema_version(r);
  const auto model = drm::load_checkpoint(cfg.path(require_string(r, "checkpoint")));
  const auto splits = read_splits(r.raw("splits"), "$.splits", cfg);
  auto infer = model.variant.infer;
  if (auto s = r.optional<std::string>("infer")) infer = drm::settings::at_path("$.infer", [&] {
    return drm::parse_infer_mode(*s);
  });
  double beta = r.get("beta", model.beta);
  double rho = r.get("rho", 0.0);
  r.finish();
  if (o.beta) beta = *o.beta;
  if (o.rho) rho = *o.rho;
  if (splits.empty()) throw drm::ConfigError("$.splits: at least one split is required");

  const auto params = drm::wise_ft_interpolate(model.pretrained, model.params, rho);
  const auto predictor = drm::make_predictor(params, model.tau, infer, beta);
  std::vector<std::pair<std::string, drm::EvalReport>> reports;
  for (const auto& [name, ds] : splits) reports.emplace_back(name, drm::evaluate(predictor, ds));

  const fs::path out = prepare_out(o);
  json resolved = cfg.doc;
  resolved["beta"] = beta;
  resolved["rho"] = rho;
  resolved["infer"] = std::string(drm::to_string(infer));
  drm::Manifest m("eval", resolved, model.seed);
  write_json(out, "eval.json", eval_json(reports), m);
  write_file(out, "eval.csv", drm::eval_reports_csv(reports), m);
  m.write(out);
  for (const auto& [name, rep] : reports) std::cout << name << ": accuracy " << rep.accuracy << "\n";
  return 0;
}

int cmd_sweep(const Options& o) {
  const Loaded cfg = load(o.config);
  FieldReader r(cfg.doc, "$");
  drm::config::check_schema_version(r);
  drm::TrainConfig tc = drm::settings::read_train_over(r.raw("train"), "$.train", drm::TrainConfig{});
  const DataPaths d = read_data(r, cfg, tc.tau);
  const auto soft_path = r.optional<std::string>("soft_labels");
  std::vector<double> lambdas{1, 2, 3, 4, 5};
  if (const json* l = r.raw("lambdas")) lambdas = drm::config::read_list<double>(*l, "$.lambdas");
  std::vector<std::uint64_t> seeds{0};
  if (const json* s = r.raw("seeds")) seeds = drm::config::read_list<std::uint64_t>(*s, "$.seeds");
  const auto eval_splits = read_splits(r.raw("eval_splits"), "$.eval_splits", cfg);
  r.finish();
  if (o.lambda) lambdas = {*o.lambda};
  if (o.seed) seeds = {*o.seed};
  if (lambdas.empty() || seeds.empty()) throw drm::ConfigError("sweep: lambdas and seeds must be non-empty");
  for (double l : lambdas) {
    if (!(l >= 0.0)) throw drm::ConfigError("$.lambdas: values must be >= 0");
  }

  const auto init = drm::TrainableParams::from_heads(d.df, d.cd, tc.use_adapter);
  std::optional<drm::SoftLabelTable> soft;
  if (tc.variant.heads.t2) soft = soft_labels_for(soft_path, cfg, d, tc.variant);

  struct Run {
    std::uint64_t seed;
    double lambda;
    double id_val = 0.0;
    int best_epoch = 0;
    std::vector<double> extra;
  };
  std::vector<Run> runs;
  for (auto s : seeds) {
    for (double l : lambdas) runs.push_back(Run{s, l, 0.0, 0, {}});
  }
  drm::experiments::parallel_for(runs.size(), o.jobs, [&](std::size_t i) {
    drm::TrainConfig c = tc;
    c.seed = runs[i].seed;
    c.lambda = runs[i].lambda;
    if (o.beta) c.beta = *o.beta;
    const auto model = drm::train(c, init, d.train, &d.id_val, soft ? &*soft : nullptr);
    runs[i].id_val = drm::best_metric(model);
    runs[i].best_epoch = model.best_epoch;
    for (const auto& [name, ds] : eval_splits) runs[i].extra.push_back(drm::evaluate(model.predictor(), ds).accuracy);
  });

  // Per seed: best id_val metric, ties toward the smaller λ.
  std::map<std::uint64_t, const Run*> chosen;
  for (const auto& run : runs) {
    auto it = chosen.find(run.seed);
    if (it == chosen.end() || run.id_val > it->second->id_val ||
        (run.id_val == it->second->id_val && run.lambda < it->second->lambda)) {
      chosen[run.seed] = &run;
    }
  }

  const fs::path out = prepare_out(o);
  json resolved = cfg.doc;
  resolved["train"] = drm::settings::to_json(tc);
  resolved["lambdas"] = lambdas;
  resolved["seeds"] = seeds;
  drm::Manifest m("sweep", resolved, seeds.front());
  std::ostringstream csv;
  csv.precision(17);
  csv << "run_id,seed,lambda,id_val_metric,best_epoch";
  for (const auto& [name, ds] : eval_splits) csv << ',' << name << "_accuracy";
  csv << '\n';
  json sel = json::array();
  for (const auto& run : runs) {
    char id[64];
    std::snprintf(id, sizeof id, "s%llu_l%g", static_cast<unsigned long long>(run.seed), run.lambda);
    csv << id << ',' << run.seed << ',' << run.lambda << ',' << run.id_val << ',' << run.best_epoch;
    for (double v : run.extra) csv << ',' << v;
    csv << '\n';
  }
  for (const auto& [seed, run] : chosen) sel.push_back({{"seed", seed}, {"lambda", run->lambda}, {"id_val_metric", run->id_val}});
  write_file(out, "sweep.csv", csv.str(), m);
  write_json(out, "selection.json", sel, m);
  m.write(out);
  for (const auto& [seed, run] : chosen) std::cout << "seed " << seed << ": lambda " << run->lambda << "\n";
  return 0;
}

int cmd_wise_ft(const Options& o) {
  const Loaded cfg = load(o.config);
  FieldReader r(cfg.doc, "$");
  drm::config::check_schema_version(r);
  const auto model = drm::load_checkpoint(cfg.path(require_string(r, "checkpoint")));
  const auto id_val = drm::load_labeled_dataset(cfg.path(require_string(r, "id_val")));
  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);
  if (const json* g = r.raw("rho_grid")) grid = drm::config::read_list<double>(*g, "$.rho_grid");
  const auto splits = read_splits(r.raw("splits"), "$.splits", cfg);
  r.finish();

  drm::RhoSelection sel;
  if (o.rho) {
    sel.rho = *o.rho;
  } else {
    sel = drm::select_rho(model, grid, id_val);
  }
  drm::TrainedModel mixed = model;
  mixed.params = drm::wise_ft_interpolate(model.pretrained, model.params, sel.rho);
  mixed.variant.infer = drm::InferMode::kDual;
  std::vector<std::pair<std::string, drm::EvalReport>> reports;
  reports.emplace_back("id_val", drm::evaluate(mixed.predictor(), id_val));
  for (const auto& [name, ds] : splits) reports.emplace_back(name, drm::evaluate(mixed.predictor(), ds));

  const fs::path out = prepare_out(o);
  json resolved = cfg.doc;
  resolved["rho_grid"] = grid;
  if (o.rho) resolved["rho"] = *o.rho;
  drm::Manifest m("wise-ft", resolved, model.seed);
  json scores = json::array();
  for (const auto& [rho, acc] : sel.scores) scores.push_back({{"rho", rho}, {"id_val_accuracy", acc}});
  write_json(out, "wise_ft.json", {{"rho", sel.rho}, {"scores", scores}, {"eval", eval_json(reports)}}, m);
  drm::save_checkpoint((out / "wise_ft_checkpoint.emb1").string(), mixed);
  m.add_artifact(out, "wise_ft_checkpoint.emb1");
  m.write(out);
  std::cout << "wise-ft: rho " << sel.rho << ", id_val accuracy " << reports.front().second.accuracy << "\n";
  return 0;
}

int cmd_duality(const Options& o) {
  const std::string path = o.problem.empty() ? o.config : o.problem;
  if (path.empty()) throw drm::ConfigError("--problem is required");
  const auto file = drm::duality::problem_from_json(drm::config::load_file(path));
  const auto grid = drm::duality::default_lambda_grid(file.lambda_max, file.lambda_step);
  const auto report = drm::duality::duality_gap(file.problem, file.grid_resolution, grid);

  const fs::path out = prepare_out(o);
  drm::Manifest m("duality", drm::config::load_file(path), 0);
  write_json(out, "gap_report.json", drm::duality::to_json(report), m);
  if (report.slater.holds) write_file(out, "dual_curve.csv", drm::duality::dual_curve_csv(report), m);
  m.write(out);
  if (!report.slater.holds) {
    std::cout << "duality: Slater condition fails (margin " << report.slater.margin << "); nothing to verify\n";
    return 0;
  }
  std::cout.precision(10);
  std::cout << "duality: primal " << report.primal.value << ", dual " << report.dual.value << ", gap " << report.gap
            << "\n";
  if (!report.strong_duality_ok) {
    std::cerr << "duality: gap exceeds tolerance\n";
    return static_cast<int>(drm::ExitCode::kNumeric);
  }
  return 0;
}

int cmd_quadrant(const Options& o) {
  const Loaded cfg = load(o.config);
  auto q = drm::settings::read_quadrant(cfg.doc);
  if (o.seed) q.base_seed = *o.seed;
  q.jobs = o.jobs;
  const auto cells = drm::experiments::run_quadrant(q);

  const fs::path out = prepare_out(o);
  json resolved = cfg.doc;
  resolved["base_seed"] = q.base_seed;
  drm::Manifest m("quadrant", resolved, q.base_seed);
  write_json(out, "quadrant.json", drm::experiments::to_json(cells), m);
  std::ostringstream csv;
  csv.precision(10);
  csv << "cell,erm,wrm,drm\n";
  using drm::experiments::Method;
  for (const auto& c : cells) {
    csv << c.name << ',' << c.mean(Method::kErm) << ',' << c.mean(Method::kWrm) << ',' << c.mean(Method::kDrm) << '\n';
  }
  write_file(out, "quadrant.csv", csv.str(), m);
  m.write(out);
  std::cout << csv.str();
  return 0;
}

int cmd_ablate(const Options& o) {
  const Loaded cfg = load(o.config);
  auto a = drm::settings::read_ablation(cfg.doc);
  if (o.seed) a.seed = *o.seed;
  if (o.lambda) a.train.lambda = *o.lambda;
  if (o.beta) a.train.beta = *o.beta;
  a.jobs = o.jobs;
  const auto rows = drm::experiments::run_ablation(a);

  const fs::path out = prepare_out(o);
  json resolved = cfg.doc;
  resolved["seed"] = a.seed;
  drm::Manifest m("ablate", resolved, a.seed);
  const std::string csv = drm::experiments::ablation_csv(rows);
  write_file(out, "ablation.csv", csv, m);
  json j = json::array();
  for (const auto& row : rows) {
    j.push_back({{"variant", drm::to_json(row.variant)},
                 {"id_val", drm::to_json(row.id_val)},
                 {"ood", drm::to_json(row.ood)}});
  }
  write_json(out, "ablation.json", j, m);
  m.write(out);
  std::cout << csv;
  return 0;
}

int cmd_normalization(const Options& o) {
  const Loaded cfg = load(o.config);
  auto n = drm::settings::read_normalization(cfg.doc);
  if (o.seed) n.base_seed = *o.seed;
  n.jobs = o.jobs;
  const auto res = drm::experiments::run_normalization_study(n);
  const fs::path out = prepare_out(o);
  drm::Manifest m("normalization", cfg.doc, n.base_seed);
  using R = drm::experiments::NormalizationResult;
  write_json(out, "normalization.json",
             {{"normalized", {{"mean_ood_accuracy", R::mean(res.normalized)}, {"per_seed", res.normalized}}},
              {"direct", {{"mean_ood_accuracy", R::mean(res.direct)}, {"per_seed", res.direct}}}},
             m);
  m.write(out);
  std::cout << "normalization: normalized " << R::mean(res.normalized) << ", direct " << R::mean(res.direct) << "\n";
  return 0;
}

int cmd_combine(const Options& o) {
  const Loaded cfg = load(o.config);
  FieldReader r(cfg.doc, "$");
  drm::config::check_schema_version(r);
  const auto a = drm::load_checkpoint(cfg.path(require_string(r, "a")));
  const auto b = drm::load_checkpoint(cfg.path(require_string(r, "b")));
  const auto mode = drm::settings::at_path("$.mode", [&] {
    return drm::parse_combine_mode(r.get<std::string>("mode", "ensemble"));
  });
  double beta = r.get("beta", 0.5);
  const auto splits = read_splits(r.raw("splits"), "$.splits", cfg);
  r.finish();
  if (o.beta) beta = *o.beta;
  if (splits.empty()) throw drm::ConfigError("$.splits: at least one split is required");

  const auto predictor = drm::combine_independent(a, b, mode, beta);
  std::vector<std::pair<std::string, drm::EvalReport>> reports;
  for (const auto& [name, ds] : splits) reports.emplace_back(name, drm::evaluate(predictor, ds));
  const fs::path out = prepare_out(o);
  json resolved = cfg.doc;
  resolved["beta"] = beta;
  drm::Manifest m("combine", resolved, a.seed);
  write_json(out, "combine.json", eval_json(reports), m);
  write_file(out, "combine.csv", drm::eval_reports_csv(reports), m);
  m.write(out);
  for (const auto& [name, rep] : reports) std::cout << name << ": accuracy " << rep.accuracy << "\n";
  return 0;
}

int cmd_embed(const Options& o) {
  const Loaded cfg = load(o.config);
  FieldReader r(cfg.doc, "$");
  drm::config::check_schema_version(r);
  const auto texts = drm::config::read_list<std::string>(*[&] {
    const json* t = r.raw("texts");
    if (!t) throw drm::ConfigError("$.texts: required field missing");
    return t;
  }(), "$.texts");
  const auto dim = r.require<std::size_t>("dim");
  const auto kind = drm::settings::at_path("$.kind", [&] { return drm::parse_prompt_kind(r.get<std::string>("kind", "cd")); });
  const double tau = r.get("tau", drm::kDefaultTemperature);
  r.finish();

  const char* env = std::getenv("DRM_PROVIDER");
  const std::string spec = env ? env : "mock";
  auto provider = drm::provider::make_provider(spec);
  const drm::ClassifierHead head(provider->embed(texts, dim), tau, kind);
  const fs::path out = prepare_out(o);
  json resolved = cfg.doc;
  resolved["provider"] = spec;
  drm::Manifest m("embed", resolved, 0);
  drm::save_head((out / "head.emb1").string(), head);
  m.add_artifact(out, "head.emb1");
  m.write(out);
  std::cout << "embed: " << texts.size() << " prompts via " << spec << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"drm: dual risk minimization for linear heads over frozen embeddings"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub, bool with_jobs = false) {
    sub->add_option("--config", o.config, "JSON config file");
    sub->add_option("--out", o.out, "output directory")->capture_default_str();
    sub->add_option("--seed", o.seed, "override the seed");
    sub->add_option("--lambda", o.lambda, "override lambda");
    sub->add_option("--beta", o.beta, "override the dual-inference weight");
    sub->add_option("--rho", o.rho, "WiSE-FT interpolation weight");
    if (with_jobs) sub->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
  };

  std::map<std::string, int (*)(const Options&)> handlers{
      {"synth", cmd_synth},       {"softlabels", cmd_softlabels}, {"train", cmd_train},
      {"eval", cmd_eval},         {"sweep", cmd_sweep},           {"wise-ft", cmd_wise_ft},
      {"duality", cmd_duality},   {"quadrant", cmd_quadrant},     {"ablate", cmd_ablate},
      {"combine", cmd_combine},   {"normalization", cmd_normalization}, {"embed", cmd_embed},
  };
  const std::map<std::string, std::string> help{
      {"synth", "generate synthetic splits and prompt heads"},
      {"softlabels", "build the WRM proxy targets"},
      {"train", "fine-tune the heads"},
      {"eval", "evaluate a checkpoint"},
      {"sweep", "lambda x seed grid with per-seed selection"},
      {"wise-ft", "interpolate toward the zero-shot weights"},
      {"duality", "numerically check strong duality on a small problem"},
      {"quadrant", "ERM / WRM / DRM across clarity and shift regimes"},
      {"ablate", "run every ablation variant once"},
      {"combine", "ensemble or weight-average two checkpoints"},
      {"normalization", "normalized vs direct proxy under artifact offsets"},
      {"embed", "embed prompt texts into a head via DRM_PROVIDER"},
  };
  std::map<CLI::App*, std::string> names;
  for (const auto& [name, text] : help) {
    CLI::App* sub = app.add_subcommand(name, text);
    const bool jobs = name == "sweep" || name == "quadrant" || name == "ablate" || name == "normalization";
    common(sub, jobs);
    if (name == "duality") sub->add_option("--problem", o.problem, "duality problem JSON");
    names[sub] = name;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(drm::ExitCode::kUsage);
  }

  const std::string chosen = names.at(app.get_subcommands().front());
  try {
    return handlers.at(chosen)(o);
  } catch (const drm::Error& e) {
    std::cerr << "drm " << chosen << ": " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "drm " << chosen << ": internal error: " << e.what() << "\n";
    return 1;
  }
}
