// Acceptance run: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (capped at 100), so ctest fails on any miss.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "cli_support.hpp"
#include "drm/duality.hpp"
#include "drm/emb_format.hpp"
#include "drm/experiments.hpp"
#include "drm/inference.hpp"
#include "drm/loss.hpp"
#include "drm/settings.hpp"
#include "drm/softlabel.hpp"
#include "drm/synth.hpp"
#include "drm/trainer.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

#ifndef DRM_CONFIG_DIR
#error "DRM_CONFIG_DIR must point at the configs directory"
#endif

using namespace drm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = false;
  std::string detail;
};

int jobs() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

fs::path config_path(const std::string& name) { return fs::path(DRM_CONFIG_DIR) / name; }

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

// ---- 1 ----
Outcome anchor_property() {
  synth::WorldSpec ws;
  ws.n_classes = 5;
  ws.world_seed = 11;
  ws.artifact_strength = 2.0;
  ws.artifact_spread = 1.0;
  const auto world = synth::make_world(ws);
  synth::DomainSpec d;
  d.clarity = 0.65;
  d.noncore_correlation = 0.8;
  d.noise_scale = 0.05;
  d.seed = 12;
  const auto sample = synth::generate_domain_detailed(world, d, 2000);
  const auto heads = synth::make_prompt_embeddings(world, kDefaultTemperature);

  double worst_sum = 0.0;
  bool anchors = true;
  for (ProxyType type : {ProxyType::kPr, ProxyType::kPrDf}) {
    const SoftLabelTable t = build_proxy_targets(sample.data, heads.df, heads.cd, type);
    std::vector<double> best(ws.n_classes, 0.0);
    for (std::size_t i = 0; i < t.size(); ++i) {
      double s = 0.0;
      for (double v : t.row(i)) s += v;
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      const auto y = static_cast<std::size_t>(sample.data.labels[i]);
      best[y] = std::max(best[y], t.probs(i, y));
    }
    for (double b : best) anchors = anchors && b == 1.0;
  }
  return {anchors && worst_sum <= 1e-9,
          "2000 rows, 5 classes, max_y anchor == 1: " + std::string(anchors ? "yes" : "no") +
              ", worst |row sum - 1| " + fmt(worst_sum)};
}

// ---- 2 ----
Outcome softlabel_fixture() {
  Matrix xi(4, 2);
  const double v[4][2] = {{2, 2}, {4, 1}, {3, 1}, {2, 3}};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t y = 0; y < 2; ++y) xi(i, y) = v[i][y];
  const std::vector<int> labels{0, 0, 1, 1};
  const double want_g[4][2] = {{0, 0.5}, {1, 0}, {0.5, 0}, {0, 1}};
  const double want_p[4][2] = {{0, 1}, {1, 0}, {1, 0}, {0, 1}};
  const Matrix g = minmax_normalize(xi, labels);
  bool ok = true;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto p = proxy_distribution(g.row(i), labels[i]);
    for (std::size_t y = 0; y < 2; ++y) ok = ok && g(i, y) == want_g[i][y] && p[y] == want_p[i][y];
  }
  return {ok, ok ? "gamma and proxy rows exact" : "mismatch"};
}

// ---- 3 ----
Outcome gradient_fidelity() {
  constexpr double kTau = 0.1;
  const char* names[4] = {"erm_ce", "erm_contrastive", "wrm_ce", "drm"};
  double worst[4] = {0, 0, 0, 0};
  for (std::uint64_t s = 0; s < 10; ++s) {
    std::mt19937_64 rng(5000 + s);
    const Matrix images = testing::random_unit_rows(12, 16, rng);
    const std::vector<int> labels = testing::random_labels(12, 5, rng);
    const std::vector<std::size_t> idx{7, 2, 9, 0, 4, 11, 5, 3};
    const TrainableParams params = testing::random_params(5, 16, s % 2 == 1, rng);
    const SoftLabelTable soft = testing::random_soft_table(12, 5, rng);
    const BatchView b{images, labels, idx};
    const LossVariant both;
    const ErmKind kind = s % 2 == 0 ? ErmKind::kCe : ErmKind::kContrastive;

    const testing::GradCheck g[4] = {
        testing::check_gradient(params, erm_ce_loss(params, b, kTau).grad,
                                [&](const TrainableParams& p) { return erm_ce_loss(p, b, kTau).loss; }),
        testing::check_gradient(params, erm_contrastive_loss(params, b, kTau).grad,
                                [&](const TrainableParams& p) { return erm_contrastive_loss(p, b, kTau).loss; }),
        testing::check_gradient(params, wrm_ce_loss(params, b, soft, kTau).grad,
                                [&](const TrainableParams& p) { return wrm_ce_loss(p, b, soft, kTau).loss; }),
        testing::check_gradient(params, drm_loss(params, b, &soft, 0.7, kind, both, kTau).grad,
                                [&](const TrainableParams& p) {
                                  return drm_loss(p, b, &soft, 0.7, kind, both, kTau, false).breakdown.total;
                                }),
    };
    for (int k = 0; k < 4; ++k) worst[k] = std::max(worst[k], g[k].max_rel_error);
  }
  std::string detail = "max rel error:";
  bool ok = true;
  for (int k = 0; k < 4; ++k) {
    detail += std::string(" ") + names[k] + "=" + fmt(worst[k], 3);
    ok = ok && worst[k] <= 1e-5;
  }
  return {ok, detail};
}

// ---- 4 ----
Outcome erm_reduction() {
  experiments::ScenarioSpec spec;
  spec.n_train = 400;
  spec.n_val = 200;
  spec.n_test = 200;
  const auto d = experiments::build_scenario(spec, 4, kDefaultTemperature);
  const SoftLabelTable soft = build_soft_labels(d.train, d.cd);
  int runs = 0, identical = 0;
  for (ErmKind kind : {ErmKind::kCe, ErmKind::kContrastive}) {
    for (bool adapter : {false, true}) {
      TrainConfig cfg;
      cfg.epochs = 5;
      cfg.batch_size = 32;
      cfg.seed = 9;
      cfg.lambda = 0.0;
      cfg.erm_kind = kind;
      cfg.use_adapter = adapter;
      std::vector<TrainableParams> a, b;
      const auto m1 = train(cfg, d.init(adapter), d.train, &d.id_val, &soft,
                            [&](int, const TrainableParams& p) { a.push_back(p); });
      const auto m2 = train_erm(cfg, d.init(adapter), d.train, &d.id_val,
                                [&](int, const TrainableParams& p) { b.push_back(p); });
      bool same = a.size() == b.size() && !a.empty() && testing::bitwise_equal(m1.params, m2.params);
      for (std::size_t e = 0; same && e < a.size(); ++e) same = testing::bitwise_equal(a[e], b[e]);
      ++runs;
      identical += same;
    }
  }
  return {identical == runs, std::to_string(identical) + "/" + std::to_string(runs) +
                                 " trajectories bit-identical (ce/contrastive x adapter off/on)"};
}

// ---- 5 ----
Outcome strong_duality() {
  using namespace drm::duality;
  std::vector<std::pair<std::string, GapReport>> reports;
  const auto file = problem_from_json(config::load_file(config_path("bernoulli.json").string()));
  reports.emplace_back("bernoulli",
                       duality_gap(file.problem, file.grid_resolution,
                                   default_lambda_grid(file.lambda_max, file.lambda_step)));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    reports.emplace_back("random" + std::to_string(seed), duality_gap(random_problem(3, 3, seed), 2e-3));
  }
  bool ok = true;
  double worst_gap = 0.0;
  for (const auto& [name, g] : reports) {
    const bool this_ok = g.slater.holds && std::abs(g.gap) <= 1e-3 && g.dual.value <= g.primal.value + 1e-9;
    ok = ok && this_ok;
    if (g.slater.holds) worst_gap = std::max(worst_gap, std::abs(g.gap));
  }
  return {ok, "6 instances, worst |primal - dual| " + fmt(worst_gap, 3)};
}

// ---- 6 ----
Outcome quadrant() {
  auto q = settings::read_quadrant(config::load_file(config_path("quadrant.json").string()));
  q.jobs = jobs();
  if (q.n_seeds != 20) return {false, "config must use 20 seeds"};
  const auto cells = experiments::run_quadrant(q);
  using experiments::Method;
  auto find = [&](const std::string& n) -> const experiments::CellResult* {
    for (const auto& c : cells)
      if (c.name == n) return &c;
    return nullptr;
  };
  const auto* a = find("clear_flipped");
  const auto* b = find("unclear_aligned");
  const auto* c = find("mixed");
  if (!a || !b || !c) return {false, "missing cell"};
  const double pts = 100.0;
  const double a_margin = pts * (a->mean(Method::kWrm) - a->mean(Method::kErm));
  const double b_margin = pts * (b->mean(Method::kErm) - b->mean(Method::kWrm));
  const double ce = pts * c->mean(Method::kErm), cw = pts * c->mean(Method::kWrm), cd = pts * c->mean(Method::kDrm);
  const double c_top = cd - (std::max(ce, cw) - 0.5);
  const double c_low = cd - std::min(ce, cw);
  const bool ok = a_margin >= 2.0 && b_margin >= 2.0 && c_top >= 0.0 && c_low >= 2.0;
  return {ok, "(a) WRM-ERM " + fmt(a_margin) + " pts; (b) ERM-WRM " + fmt(b_margin) + " pts; (c) ERM " + fmt(ce) +
                  " WRM " + fmt(cw) + " DRM " + fmt(cd)};
}

// ---- 7 ----
Outcome inference_endpoints() {
  std::mt19937_64 rng(77);
  int checked = 0, same = 0;
  for (bool adapter : {false, true}) {
    const TrainableParams p = testing::random_params(5, 16, adapter, rng);
    const TrainableParams zs = testing::random_params(5, 16, adapter, rng);
    const Matrix xs = testing::random_unit_rows(50, 16, rng);
    for (std::size_t i = 0; i < xs.rows(); ++i) {
      same += same_bits(dual_predict(xs.row(i), p, 0.01, 1.0), head_probabilities(xs.row(i), p, PromptKind::kDf, 0.01));
      same += same_bits(dual_predict(xs.row(i), p, 0.01, 0.0), head_probabilities(xs.row(i), p, PromptKind::kCd, 0.01));
      checked += 2;
    }
    same += testing::bitwise_equal(wise_ft_interpolate(zs, p, 0.0), p);
    same += testing::bitwise_equal(wise_ft_interpolate(zs, p, 1.0), zs);
    checked += 2;
  }
  return {same == checked, std::to_string(same) + "/" + std::to_string(checked) + " endpoint comparisons bitwise"};
}

// ---- 8 ----
Outcome normalization() {
  auto n = settings::read_normalization(config::load_file(config_path("normalization.json").string()));
  n.jobs = jobs();
  if (n.n_seeds != 20) return {false, "config must use 20 seeds"};
  const auto r = experiments::run_normalization_study(n);
  using R = experiments::NormalizationResult;
  const double norm = R::mean(r.normalized), direct = R::mean(r.direct);
  return {norm > direct, "mean OOD accuracy normalized " + fmt(norm) + " vs direct " + fmt(direct)};
}

// ---- 9 ----
Outcome ablation() {
  const auto dir = testing::scratch_dir("accept_ablate");
  const auto r = testing::run_cli("ablate --config " + testing::quoted(config_path("ablate.json")) + " --jobs " +
                                  std::to_string(jobs()) + " --out " + testing::quoted(dir));
  if (r.code != 0) return {false, "drm ablate exited " + std::to_string(r.code)};
  const auto j = nlohmann::json::parse(read_bytes(dir / "ablation.json"));
  std::set<std::string> ids;
  for (const auto& row : j) ids.insert(row.at("variant").at("id").get<std::string>());
  const std::set<std::string> want{"S", "a1", "a2", "b1", "b2", "c1", "c2", "c3", "d1", "d2", "d3", "e1", "e2"};
  return {ids == want && j.size() == want.size(), std::to_string(j.size()) + " report rows"};
}

// ---- 10 ----
Outcome roundtrips() {
  const auto dir = testing::scratch_dir("accept_roundtrip");
  std::mt19937_64 rng(10);
  // EMB1 stores float32, so the source rows are float32 values to begin with.
  Matrix rows = testing::random_unit_rows(300, 32, rng);
  for (double& v : rows.data()) v = static_cast<float>(v);
  const LabeledDataset ds = testing::make_dataset(std::move(rows), testing::random_labels(300, 5, rng), 5);
  save_embedding_bank((dir / "bank.emb1").string(), ds.bank);
  const EmbeddingBank bank = load_embedding_bank((dir / "bank.emb1").string());
  save_embedding_bank((dir / "bank2.emb1").string(), bank);
  const bool bank_ok = testing::bitwise_equal(bank.vectors(), ds.bank.vectors()) && bank.ids() == ds.bank.ids() &&
                       read_bytes(dir / "bank.emb1") == read_bytes(dir / "bank2.emb1");

  experiments::ScenarioSpec spec;
  spec.n_train = 200;
  spec.n_val = 100;
  spec.n_test = 100;
  const auto d = experiments::build_scenario(spec, 3, kDefaultTemperature);
  const SoftLabelTable soft = build_soft_labels(d.train, d.cd);
  bool ckpt_ok = true;
  for (bool adapter : {false, true}) {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.use_adapter = adapter;
    const TrainedModel m = train(cfg, d.init(adapter), d.train, &d.id_val, &soft);
    save_checkpoint((dir / "m.emb1").string(), m);
    const TrainedModel back = load_checkpoint((dir / "m.emb1").string());
    save_checkpoint((dir / "m2.emb1").string(), back);
    ckpt_ok = ckpt_ok && testing::bitwise_equal(back.params, m.params) &&
              testing::bitwise_equal(back.pretrained, m.pretrained) &&
              read_bytes(dir / "m.emb1") == read_bytes(dir / "m2.emb1");
  }

  write_text(dir / "typo.json", R"({"schema_version": 1, "train": {"epochz": 3}})");
  const auto r = testing::run_cli("ablate --config " + testing::quoted(dir / "typo.json") + " --out " +
                                  testing::quoted(dir / "o"));
  const bool strict_ok = r.code == 3 && r.output.find("$.train.epochz") != std::string::npos;
  return {bank_ok && ckpt_ok && strict_ok, std::string("bank ") + (bank_ok ? "exact" : "differs") + ", checkpoint " +
                                               (ckpt_ok ? "exact" : "differs") + ", unknown field exit " +
                                               std::to_string(r.code)};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double limit_s;  // <= 0: no runtime bound
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "soft-label anchor", 1.0, anchor_property},
      {2, "soft-label fixture", 0.0, softlabel_fixture},
      {3, "gradient fidelity", 5.0, gradient_fidelity},
      {4, "erm reduction", 0.0, erm_reduction},
      {5, "strong duality", 30.0, strong_duality},
      {6, "quadrant ordering", 180.0, quadrant},
      {7, "inference endpoints", 0.0, inference_endpoints},
      {8, "normalization necessity", 0.0, normalization},
      {9, "ablation matrix", 300.0, ablation},
      {10, "format roundtrips", 0.0, roundtrips},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool ok = o.ok;
    std::string detail = o.detail;
    if (c.limit_s > 0.0 && secs >= c.limit_s) {
      ok = false;
      detail += "; over the " + fmt(c.limit_s) + " s limit";
    }
    failed += !ok;
    std::cout << (ok ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << " (" << fmt(secs, 3) << " s): " << detail
              << std::endl;
  }
  std::cout << (10 - failed) << "/10 criteria passed" << std::endl;
  return std::min(failed, 100);
}
