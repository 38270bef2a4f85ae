// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "drm/core.hpp"
#include "drm/emb_format.hpp"
#include "drm/errors.hpp"
#include "drm/inference.hpp"
#include "drm/loss.hpp"
#include "drm/softlabel.hpp"

namespace drm {

enum class EarlyStopMetric { kAccuracy, kMacroF1 };

inline std::string_view to_string(EarlyStopMetric m) {
  return m == EarlyStopMetric::kAccuracy ? "id_val_accuracy" : "id_val_macro_f1";
}
inline EarlyStopMetric parse_early_stop_metric(std::string_view s) {
  if (s == "id_val_accuracy") return EarlyStopMetric::kAccuracy;
  if (s == "id_val_macro_f1") return EarlyStopMetric::kMacroF1;
  throw ConfigError("unknown early-stop metric '" + std::string(s) + "'");
}

/// One row of the ablation table: head assignment for the two risks, the
/// proxy used as WRM target, and how predictions are formed.
struct AblationVariant {
  std::string id = "S";
  LossVariant heads;
  ProxyType proxy = ProxyType::kPr;
  InferMode infer = InferMode::kDual;
};

struct TrainConfig {
  int epochs = 50;
  double lr = 1e-3;
  double weight_decay = 0.1;
  int batch_size = 256;
  double lambda = 1.0;
  ErmKind erm_kind = ErmKind::kContrastive;
  AblationVariant variant;
  std::uint64_t seed = 0;
  EarlyStopMetric early_stop_metric = EarlyStopMetric::kAccuracy;
  bool early_stopping = true;
  double tau = kDefaultTemperature;
  /// Mixture weight for dual inference; defaults to 1/(1+λ).
  std::optional<double> beta;
  bool use_adapter = false;

  void check() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (!(lr >= 0.0)) throw ConfigError("train: lr must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(lambda >= 0.0)) throw ConfigError("train: lambda must be >= 0");
    if (!(tau > 0.0)) throw ConfigError("train: tau must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
    if (beta && !(*beta >= 0.0 && *beta <= 1.0)) throw ConfigError("train: beta must be in [0,1]");
  }

  double effective_beta() const { return beta.value_or(1.0 / (1.0 + lambda)); }
};

struct EpochRecord {
  int epoch = 0;
  double erm = 0.0;
  double wrm = 0.0;
  double total = 0.0;
  double id_val_metric = std::numeric_limits<double>::quiet_NaN();

  friend bool operator==(const EpochRecord& a, const EpochRecord& b) {
    auto same = [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); };
    return a.epoch == b.epoch && same(a.erm, b.erm) && same(a.wrm, b.wrm) && same(a.total, b.total) &&
           same(a.id_val_metric, b.id_val_metric);
  }
};

struct TrainedModel {
  TrainableParams params;      // fine-tuned
  TrainableParams pretrained;  // zero-shot snapshot
  double lambda = 0.0;
  double beta = 1.0;
  double tau = kDefaultTemperature;
  AblationVariant variant;
  ErmKind erm_kind = ErmKind::kContrastive;
  std::uint64_t seed = 0;
  int best_epoch = 0;
  std::vector<EpochRecord> history;

  Predictor predictor() const { return make_predictor(params, tau, variant.infer, beta); }
  Predictor predictor(InferMode mode, double b) const { return make_predictor(params, tau, mode, b); }
};

inline std::vector<double> dual_predict(std::span<const double> x, const TrainedModel& m, double beta) {
  return dual_predict(x, m.params, m.tau, beta);
}

/// Rounds every parameter to float32 precision so checkpoints are lossless.
inline void round_to_float(TrainableParams& p) {
  for (std::size_t k = 0; k < p.num_scalars(); ++k) p.scalar(k) = static_cast<double>(static_cast<float>(p.scalar(k)));
}

/// Adam with decoupled weight decay (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
class AdamW {
 public:
  AdamW(const TrainableParams& like, double lr, double weight_decay)
      : lr_(lr), wd_(weight_decay), m_(like.zeros_like()), v_(like.zeros_like()) {}

  void step(TrainableParams& p, const TrainableParams& g) {
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, t_);
    const double bc2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t k = 0; k < p.num_scalars(); ++k) {
      const double gk = g.scalar(k);
      double& mk = m_.scalar(k);
      double& vk = v_.scalar(k);
      mk = kBeta1 * mk + (1.0 - kBeta1) * gk;
      vk = kBeta2 * vk + (1.0 - kBeta2) * gk * gk;
      double& pk = p.scalar(k);
      pk *= 1.0 - lr_ * wd_;
      pk -= lr_ * (mk / bc1) / (std::sqrt(vk / bc2) + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double lr_;
  double wd_;
  int t_ = 0;
  TrainableParams m_;
  TrainableParams v_;
};

using BatchLossFn = std::function<std::pair<LossBreakdown, TrainableParams>(const TrainableParams&, const BatchView&)>;
using EpochObserver = std::function<void(int epoch, const TrainableParams&)>;

inline double metric_of(const EvalReport& r, EarlyStopMetric m) {
  return m == EarlyStopMetric::kAccuracy ? r.accuracy : r.macro_f1;
}

namespace detail {

/// Shared optimization loop: seeded shuffling, AdamW, float32 parameter
/// storage, per-epoch validation and best-checkpoint retention.
inline TrainedModel optimize(const TrainConfig& cfg, const TrainableParams& init, const LabeledDataset& train,
                             const LabeledDataset* id_val, const BatchLossFn& loss_fn, const EpochObserver& observer) {
  cfg.check();
  if (train.size() == 0) throw ConfigError("train: empty training split");
  if (cfg.early_stopping && (id_val == nullptr || id_val->size() == 0)) {
    throw ConfigError("train: early stopping needs a non-empty id_val split");
  }
  TrainedModel model;
  model.pretrained = init;
  round_to_float(model.pretrained);
  model.params = model.pretrained;
  model.lambda = cfg.lambda;
  model.beta = cfg.effective_beta();
  model.tau = cfg.tau;
  model.variant = cfg.variant;
  model.erm_kind = cfg.erm_kind;
  model.seed = cfg.seed;

  const std::size_t min_batch = cfg.erm_kind == ErmKind::kContrastive && cfg.variant.heads.t1 ? 2 : 1;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  AdamW opt(model.params, cfg.lr, cfg.weight_decay);

  TrainableParams best = model.params;
  double best_metric = -std::numeric_limits<double>::infinity();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t len = std::min(bs, order.size() - start);
      if (len < min_batch) break;
      BatchView batch{train.bank.vectors(), train.labels, std::span<const std::size_t>(order).subspan(start, len)};
      auto [br, grad] = loss_fn(model.params, batch);
      opt.step(model.params, grad);
      round_to_float(model.params);
      rec.erm += br.erm;
      rec.wrm += br.wrm;
      rec.total += br.total;
      ++n_batches;
    }
    if (n_batches) {
      rec.erm /= static_cast<double>(n_batches);
      rec.wrm /= static_cast<double>(n_batches);
      rec.total /= static_cast<double>(n_batches);
    }
    if (observer) observer(epoch, model.params);
    if (id_val && id_val->size() > 0) {
      const EvalReport r = evaluate(make_predictor(model.params, model.tau, model.variant.infer, model.beta), *id_val);
      rec.id_val_metric = metric_of(r, cfg.early_stop_metric);
      if (cfg.early_stopping && rec.id_val_metric > best_metric) {
        best_metric = rec.id_val_metric;
        best = model.params;
        model.best_epoch = epoch;
      }
    }
    model.history.push_back(rec);
  }
  if (cfg.early_stopping) {
    model.params = std::move(best);
  } else {
    model.best_epoch = cfg.epochs;
  }
  return model;
}

}  // namespace detail

/// Minimizes erm + λ·wrm per the config's variant. `soft` must be aligned
/// with `train` rows whenever the variant has a WRM term.
inline TrainedModel train(const TrainConfig& cfg, const TrainableParams& init, const LabeledDataset& train,
                          const LabeledDataset* id_val, const SoftLabelTable* soft,
                          const EpochObserver& observer = nullptr) {
  if (cfg.variant.heads.t2) {
    if (!soft) throw PreconditionError("train: variant needs a soft-label table");
    if (soft->size() != train.size()) throw IndexError("train: soft-label rows do not match training rows");
  }
  const BatchLossFn fn = [&](const TrainableParams& p, const BatchView& b) {
    DrmLossResult r = drm_loss(p, b, soft, cfg.lambda, cfg.erm_kind, cfg.variant.heads, cfg.tau);
    return std::make_pair(r.breakdown, std::move(r.grad));
  };
  return detail::optimize(cfg, init, train, id_val, fn, observer);
}

/// Plain ERM fine-tuning on the df head (FLYP-style when erm_kind is contrastive),
/// written against the ERM losses directly.
inline TrainedModel train_erm(TrainConfig cfg, const TrainableParams& init, const LabeledDataset& train,
                              const LabeledDataset* id_val, const EpochObserver& observer = nullptr) {
  cfg.lambda = 0.0;
  cfg.variant.heads = LossVariant{PromptKind::kDf, std::nullopt};
  const BatchLossFn fn = [&](const TrainableParams& p, const BatchView& b) {
    LossAndGrad r = cfg.erm_kind == ErmKind::kContrastive ? erm_contrastive_loss(p, b, cfg.tau, PromptKind::kDf)
                                                          : erm_ce_loss(p, b, cfg.tau, PromptKind::kDf);
    LossBreakdown br{r.loss, 0.0, r.loss, 0.0};
    return std::make_pair(br, std::move(r.grad));
  };
  return detail::optimize(cfg, init, train, id_val, fn, observer);
}

inline double best_metric(const TrainedModel& m) {
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& r : m.history) {
    if (!std::isnan(r.id_val_metric)) best = std::max(best, r.id_val_metric);
  }
  return best;
}

struct LambdaSelection {
  double lambda = 0.0;
  TrainedModel model;
  std::vector<std::pair<double, double>> scores;  // (λ, id_val metric)
};

/// Trains one model per candidate and keeps the best id_val metric; ties go to the smaller λ.
inline LambdaSelection select_lambda(const std::vector<double>& candidates, const TrainConfig& tmpl,
                                     const TrainableParams& init, const LabeledDataset& train_ds,
                                     const LabeledDataset& id_val, const SoftLabelTable* soft) {
  if (candidates.empty()) throw ConfigError("select_lambda: no candidates");
  std::optional<LambdaSelection> best;
  std::vector<std::pair<double, double>> scores;
  for (double lam : candidates) {
    TrainConfig cfg = tmpl;
    cfg.lambda = lam;
    TrainedModel m = train(cfg, init, train_ds, &id_val, soft);
    const double score = best_metric(m);
    scores.emplace_back(lam, score);
    const bool better = !best || score > best_metric(best->model) ||
                        (score == best_metric(best->model) && lam < best->lambda);
    if (better) best = LambdaSelection{lam, std::move(m), {}};
  }
  best->scores = std::move(scores);
  return std::move(*best);
}

/// ρ·zs + (1−ρ)·ft for every trainable tensor.
inline TrainableParams wise_ft_interpolate(const TrainableParams& zs, const TrainableParams& ft, double rho) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw DomainError("wise_ft_interpolate: rho must be in [0,1]");
  require_same_shape(zs.df, ft.df, "wise_ft_interpolate (df)");
  require_same_shape(zs.cd, ft.cd, "wise_ft_interpolate (cd)");
  if (zs.adapter.has_value() != ft.adapter.has_value()) throw ShapeError("wise_ft_interpolate: adapter presence differs");
  if (zs.adapter) require_same_shape(*zs.adapter, *ft.adapter, "wise_ft_interpolate (adapter)");
  if (rho == 0.0) return ft;
  if (rho == 1.0) return zs;
  TrainableParams out = ft;
  for (std::size_t k = 0; k < out.num_scalars(); ++k) out.scalar(k) = rho * zs.scalar(k) + (1.0 - rho) * ft.scalar(k);
  return out;
}

struct RhoSelection {
  double rho = 0.0;
  std::vector<std::pair<double, double>> scores;  // (ρ, id_val accuracy)
};

/// Picks ρ by id_val accuracy of dual prediction on interpolated weights; ties go to the smaller ρ.
inline RhoSelection select_rho(const TrainedModel& model, const std::vector<double>& grid, const LabeledDataset& id_val) {
  if (grid.empty()) throw ConfigError("select_rho: empty grid");
  RhoSelection sel;
  double best = -std::numeric_limits<double>::infinity();
  for (double rho : grid) {
    if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("select_rho: grid values must lie in [0,1]");
    const TrainableParams p = wise_ft_interpolate(model.pretrained, model.params, rho);
    const double acc = evaluate(make_predictor(p, model.tau, InferMode::kDual, model.beta), id_val).accuracy;
    sel.scores.emplace_back(rho, acc);
    if (acc > best || (acc == best && rho < sel.rho)) {
      best = acc;
      sel.rho = rho;
    }
  }
  return sel;
}

enum class CombineMode { kEnsemble, kWeightAverage };

inline CombineMode parse_combine_mode(std::string_view s) {
  if (s == "ensemble") return CombineMode::kEnsemble;
  if (s == "weight_average") return CombineMode::kWeightAverage;
  throw ConfigError("unknown combine mode '" + std::string(s) + "'");
}

/// Combines two separately trained models. Ensemble mixes each model's own
/// classifier (β on the first); weight averaging interpolates at ρ = 0.5 and
/// predicts with the dual mixture.
inline Predictor combine_independent(const TrainedModel& a, const TrainedModel& b, CombineMode mode, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw DomainError("combine_independent: beta must be in [0,1]");
  require_same_shape(a.params.df, b.params.df, "combine_independent");
  if (mode == CombineMode::kWeightAverage) {
    return make_predictor(wise_ft_interpolate(a.params, b.params, 0.5), a.tau, InferMode::kDual, beta);
  }
  Predictor pa = a.predictor();
  Predictor pb = b.predictor();
  return [pa = std::move(pa), pb = std::move(pb), beta](std::span<const double> x) {
    std::vector<double> out = pa(x);
    const std::vector<double> q = pb(x);
    for (std::size_t y = 0; y < out.size(); ++y) out[y] = beta * out[y] + (1.0 - beta) * q[y];
    return out;
  };
}

// ---- checkpoints --------------------------------------------------------

inline nlohmann::json to_json(const AblationVariant& v) {
  nlohmann::json j;
  j["id"] = v.id;
  j["t1"] = v.heads.t1 ? nlohmann::json(std::string(to_string(*v.heads.t1))) : nlohmann::json(nullptr);
  j["t2"] = v.heads.t2 ? nlohmann::json(std::string(to_string(*v.heads.t2))) : nlohmann::json(nullptr);
  j["type"] = std::string(to_string(v.proxy));
  j["infer"] = std::string(to_string(v.infer));
  return j;
}

inline AblationVariant variant_from_json(const nlohmann::json& j) {
  AblationVariant v;
  v.id = j.at("id").get<std::string>();
  v.heads.t1 = j.at("t1").is_null() ? std::nullopt : std::optional(parse_prompt_kind(j["t1"].get<std::string>()));
  v.heads.t2 = j.at("t2").is_null() ? std::nullopt : std::optional(parse_prompt_kind(j["t2"].get<std::string>()));
  v.proxy = parse_proxy_type(j.at("type").get<std::string>());
  v.infer = parse_infer_mode(j.at("infer").get<std::string>());
  return v;
}

namespace detail {
inline void append_rows(Emb1Container& c, std::vector<std::string>& ids, const Matrix& m, const std::string& prefix) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (double v : m.row(r)) c.values.push_back(static_cast<float>(v));
    ids.push_back(prefix + std::to_string(r));
  }
}
inline Matrix take_rows(const Emb1Container& c, std::size_t& cursor, std::size_t n) {
  if ((cursor + n) * c.dim > c.values.size()) throw CorruptionError("checkpoint: fewer rows than the trailer declares");
  Matrix m(n, c.dim);
  for (std::size_t i = 0; i < n * c.dim; ++i) m.data()[i] = static_cast<double>(c.values[cursor * c.dim + i]);
  cursor += n;
  return m;
}
}  // namespace detail

/// Checkpoint rows: df, cd, [adapter], then the zero-shot snapshot in the same order.
inline Emb1Container checkpoint_container(const TrainedModel& m) {
  Emb1Container c;
  c.dim = static_cast<std::uint32_t>(m.params.dim());
  std::vector<std::string> ids;
  detail::append_rows(c, ids, m.params.df, "df/");
  detail::append_rows(c, ids, m.params.cd, "cd/");
  if (m.params.adapter) detail::append_rows(c, ids, *m.params.adapter, "adapter/");
  detail::append_rows(c, ids, m.pretrained.df, "zs/df/");
  detail::append_rows(c, ids, m.pretrained.cd, "zs/cd/");
  if (m.pretrained.adapter) detail::append_rows(c, ids, *m.pretrained.adapter, "zs/adapter/");
  c.count = static_cast<std::uint32_t>(ids.size());
  auto& t = c.trailer;
  t["ids"] = ids;
  t["kind"] = "checkpoint";
  t["n_classes"] = m.params.n_classes();
  t["has_adapter"] = m.params.adapter.has_value();
  t["lambda"] = m.lambda;
  t["beta"] = m.beta;
  t["tau"] = m.tau;
  t["variant"] = to_json(m.variant);
  t["erm_kind"] = std::string(to_string(m.erm_kind));
  t["seed"] = m.seed;
  t["epoch"] = m.best_epoch;
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : m.history) {
    hist.push_back({{"epoch", r.epoch},
                    {"erm", r.erm},
                    {"wrm", r.wrm},
                    {"total", r.total},
                    {"id_val_metric", std::isnan(r.id_val_metric) ? nlohmann::json(nullptr) : nlohmann::json(r.id_val_metric)}});
  }
  t["history"] = hist;
  return c;
}

inline void save_checkpoint(const std::string& path, const TrainedModel& m) { write_emb1(path, checkpoint_container(m)); }

inline TrainedModel checkpoint_from_container(const Emb1Container& c) {
  const auto& t = c.trailer;
  if (t.value("kind", "") != "checkpoint") throw FormatError("EMB1: not a checkpoint");
  TrainedModel m;
  const std::size_t n_cls = t.at("n_classes").get<std::size_t>();
  const bool adapter = t.at("has_adapter").get<bool>();
  const std::size_t expect = 4 * n_cls + (adapter ? 2 * c.dim : 0);
  if (c.count != expect) throw CorruptionError("checkpoint: row count " + std::to_string(c.count) + " != expected " + std::to_string(expect));
  std::size_t cur = 0;
  m.params.df = detail::take_rows(c, cur, n_cls);
  m.params.cd = detail::take_rows(c, cur, n_cls);
  if (adapter) m.params.adapter = detail::take_rows(c, cur, c.dim);
  m.pretrained.df = detail::take_rows(c, cur, n_cls);
  m.pretrained.cd = detail::take_rows(c, cur, n_cls);
  if (adapter) m.pretrained.adapter = detail::take_rows(c, cur, c.dim);
  m.lambda = t.at("lambda").get<double>();
  m.beta = t.at("beta").get<double>();
  m.tau = t.at("tau").get<double>();
  m.variant = variant_from_json(t.at("variant"));
  m.erm_kind = parse_erm_kind(t.at("erm_kind").get<std::string>());
  m.seed = t.at("seed").get<std::uint64_t>();
  m.best_epoch = t.at("epoch").get<int>();
  for (const auto& r : t.at("history")) {
    EpochRecord e;
    e.epoch = r.at("epoch").get<int>();
    e.erm = r.at("erm").get<double>();
    e.wrm = r.at("wrm").get<double>();
    e.total = r.at("total").get<double>();
    e.id_val_metric = r.at("id_val_metric").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                      : r["id_val_metric"].get<double>();
    m.history.push_back(e);
  }
  return m;
}

inline TrainedModel load_checkpoint(const std::string& path) { return checkpoint_from_container(read_emb1(path)); }

}  // namespace drm
