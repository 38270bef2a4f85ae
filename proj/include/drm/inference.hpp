// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "drm/affinity.hpp"
#include "drm/core.hpp"
#include "drm/errors.hpp"
#include "drm/loss.hpp"

namespace drm {

/// Which classifier(s) produce the final prediction.
enum class InferMode { kDf, kCd, kDual };

inline std::string_view to_string(InferMode m) {
  switch (m) {
    case InferMode::kDf: return "df";
    case InferMode::kCd: return "cd";
    case InferMode::kDual: return "dual";
  }
  return "?";
}

inline InferMode parse_infer_mode(std::string_view s) {
  if (s == "df") return InferMode::kDf;
  if (s == "cd") return InferMode::kCd;
  if (s == "dual") return InferMode::kDual;
  throw ConfigError("unknown inference mode '" + std::string(s) + "'");
}

/// Maps a unit image embedding to a distribution over classes.
using Predictor = std::function<std::vector<double>(std::span<const double>)>;

/// softmax over one head after applying the (optional) adapter.
inline std::vector<double> head_probabilities(std::span<const double> x, const TrainableParams& p, PromptKind head,
                                              double tau) {
  if (x.size() != p.dim()) throw ShapeError("predict: embedding dim does not match model dim");
  if (!p.adapter) return class_probabilities(x, p.head(head), tau);
  std::vector<double> z(p.dim());
  detail::embed(p, x, z);
  return class_probabilities(z, p.head(head), tau);
}

/// β·p̂_df + (1−β)·p̂_cd from the same parameters.
inline std::vector<double> dual_predict(std::span<const double> x, const TrainableParams& p, double tau,
                                        double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw DomainError("dual_predict: beta must be in [0,1]");
  if (beta == 1.0) return head_probabilities(x, p, PromptKind::kDf, tau);
  if (beta == 0.0) return head_probabilities(x, p, PromptKind::kCd, tau);
  std::vector<double> out = head_probabilities(x, p, PromptKind::kDf, tau);
  const std::vector<double> cd = head_probabilities(x, p, PromptKind::kCd, tau);
  for (std::size_t y = 0; y < out.size(); ++y) out[y] = beta * out[y] + (1.0 - beta) * cd[y];
  return out;
}

/// Predictor over a copy of `p`.
inline Predictor make_predictor(TrainableParams p, double tau, InferMode mode, double beta) {
  switch (mode) {
    case InferMode::kDf:
      return [p = std::move(p), tau](std::span<const double> x) { return head_probabilities(x, p, PromptKind::kDf, tau); };
    case InferMode::kCd:
      return [p = std::move(p), tau](std::span<const double> x) { return head_probabilities(x, p, PromptKind::kCd, tau); };
    case InferMode::kDual:
      if (!(beta >= 0.0 && beta <= 1.0)) throw DomainError("dual_predict: beta must be in [0,1]");
      return [p = std::move(p), tau, beta](std::span<const double> x) { return dual_predict(x, p, tau, beta); };
  }
  throw ConfigError("unknown inference mode");
}

/// Index of the largest entry; ties go to the smaller index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

struct EvalReport {
  std::size_t n = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::map<std::string, double> per_domain;
  /// NaN when the split carries no domain tags.
  double worst_domain_accuracy = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<std::size_t>> confusion;  // [truth][prediction]
};

inline EvalReport evaluate_predictions(std::span<const int> truth, std::span<const std::size_t> pred, int n_classes,
                                       std::span<const std::string> domain_tags = {}) {
  if (truth.empty()) throw PreconditionError("evaluate: empty dataset");
  if (pred.size() != truth.size()) throw ShapeError("evaluate: prediction count != label count");
  const auto c = static_cast<std::size_t>(n_classes);
  EvalReport r;
  r.n = truth.size();
  r.confusion.assign(c, std::vector<std::size_t>(c, 0));
  std::map<std::string, std::pair<std::size_t, std::size_t>> dom;  // correct, total
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = static_cast<std::size_t>(truth[i]);
    ++r.confusion[t][pred[i]];
    const bool ok = t == pred[i];
    correct += ok;
    if (!domain_tags.empty()) {
      auto& d = dom[domain_tags[i]];
      d.first += ok;
      ++d.second;
    }
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n);

  double f1_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t y = 0; y < c; ++y) {
    std::size_t support = 0;
    std::size_t predicted = 0;
    for (std::size_t k = 0; k < c; ++k) {
      support += r.confusion[y][k];
      predicted += r.confusion[k][y];
    }
    if (support == 0) continue;  // absent from ground truth
    ++present;
    const double tp = static_cast<double>(r.confusion[y][y]);
    const double denom = static_cast<double>(support + predicted);
    f1_sum += tp > 0.0 ? 2.0 * tp / denom : 0.0;
  }
  r.macro_f1 = f1_sum / static_cast<double>(present);

  if (!dom.empty()) {
    double worst = 1.0;
    for (const auto& [tag, ct] : dom) {
      const double acc = static_cast<double>(ct.first) / static_cast<double>(ct.second);
      r.per_domain[tag] = acc;
      worst = std::min(worst, acc);
    }
    r.worst_domain_accuracy = worst;
  }
  return r;
}

inline std::vector<std::size_t> predict_labels(const Predictor& predictor, const LabeledDataset& ds) {
  std::vector<std::size_t> pred(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) pred[i] = argmax(predictor(ds.bank.row(i)));
  return pred;
}

inline EvalReport evaluate(const Predictor& predictor, const LabeledDataset& ds) {
  if (ds.size() == 0) throw PreconditionError("evaluate: empty dataset");
  const auto pred = predict_labels(predictor, ds);
  return evaluate_predictions(ds.labels, pred, ds.n_classes, ds.domain_tags);
}

// ---- serialization ------------------------------------------------------

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["n"] = r.n;
  j["accuracy"] = r.accuracy;
  j["macro_f1"] = r.macro_f1;
  j["per_domain"] = r.per_domain;
  if (std::isnan(r.worst_domain_accuracy)) {
    j["worst_domain_accuracy"] = nullptr;
  } else {
    j["worst_domain_accuracy"] = r.worst_domain_accuracy;
  }
  j["confusion"] = r.confusion;
  return j;
}

namespace detail {
inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}
}  // namespace detail

/// CSV with columns split, accuracy, macro_f1, worst_domain_accuracy, then
/// one column per domain tag (sorted) across all reports.
inline std::string eval_reports_csv(const std::vector<std::pair<std::string, EvalReport>>& reports) {
  std::set<std::string> tags;
  for (const auto& [name, r] : reports) {
    for (const auto& [tag, acc] : r.per_domain) tags.insert(tag);
  }
  std::ostringstream os;
  os << "split,accuracy,macro_f1,worst_domain_accuracy";
  for (const auto& t : tags) os << ',' << t;
  os << '\n';
  for (const auto& [name, r] : reports) {
    os << name << ',' << detail::fmt_double(r.accuracy) << ',' << detail::fmt_double(r.macro_f1) << ','
       << detail::fmt_double(r.worst_domain_accuracy);
    for (const auto& t : tags) {
      auto it = r.per_domain.find(t);
      os << ',' << (it == r.per_domain.end() ? std::string() : detail::fmt_double(it->second));
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace drm
