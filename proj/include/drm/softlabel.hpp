// SPDX-License-Identifier: Apache-2.0
//
// Core-feature proxy targets. Affinities to concept-description prompts at the
// pre-trained parameters are exponentiated, min-max normalized per class over
// the examples labelled with that class, and folded into a per-example
// distribution that keeps γ(x, y_x) on the true class and spreads the rest in
// proportion to the other classes' γ.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drm/affinity.hpp"
#include "drm/core.hpp"
#include "drm/emb_format.hpp"
#include "drm/errors.hpp"

namespace drm {

/// How the WRM target distribution is produced.
enum class ProxyType {
  kPr,        // normalized proxy from concept-description affinities
  kPrDf,      // same construction using default-prompt affinities
  kCdDirect,  // plain softmax of concept-description affinities (no normalization)
  kOneHot,    // ground-truth labels
};

inline std::string_view to_string(ProxyType t) {
  switch (t) {
    case ProxyType::kPr: return "pr";
    case ProxyType::kPrDf: return "pr-df";
    case ProxyType::kCdDirect: return "cd";
    case ProxyType::kOneHot: return "one-hot";
  }
  return "?";
}

inline ProxyType parse_proxy_type(std::string_view s) {
  if (s == "pr") return ProxyType::kPr;
  if (s == "pr-df") return ProxyType::kPrDf;
  if (s == "cd" || s == "cd-direct") return ProxyType::kCdDirect;
  if (s == "one-hot") return ProxyType::kOneHot;
  throw ConfigError("unknown proxy type '" + std::string(s) + "'");
}

struct SoftLabelTable {
  Matrix probs;  // N×C, row i is the target distribution for example i
  PromptKind source_head_kind = PromptKind::kCd;
  ProxyType type = ProxyType::kPr;
  Matrix gamma;  // N×C normalized affinities; empty for kCdDirect / kOneHot

  std::size_t size() const noexcept { return probs.rows(); }
  std::size_t n_classes() const noexcept { return probs.cols(); }
  std::span<const double> row(std::size_t i) const { return probs.row(i); }
};

/// log ξ(x, y) = A(x, t_y) / τ. Kept in log space; exp(A/τ) overflows for small τ.
inline Matrix raw_scores(const AffinityMatrix& aff, double temperature) {
  if (!(temperature > 0.0)) throw DomainError("raw_scores: temperature must be > 0");
  Matrix out(aff.n_examples(), aff.n_classes());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = aff.values.data()[i] / temperature;
  return out;
}

/// Per-class min-max normalization of ξ with min/max taken over the rows
/// labelled with that class. Rows outside the class are mapped with the same
/// affine transform and clamped to [0, 1]. A degenerate range maps members to
/// 1 and non-members to 0.
inline Matrix minmax_normalize(const Matrix& xi, std::span<const int> labels) {
  if (labels.size() != xi.rows()) throw ShapeError("minmax_normalize: label count != row count");
  const std::size_t n = xi.rows();
  const std::size_t c = xi.cols();
  std::vector<double> lo(c, std::numeric_limits<double>::infinity());
  std::vector<double> hi(c, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> count(c, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw IndexError("minmax_normalize: label out of range at row " + std::to_string(i));
    }
    const auto y = static_cast<std::size_t>(labels[i]);
    lo[y] = std::min(lo[y], xi(i, y));
    hi[y] = std::max(hi[y], xi(i, y));
    ++count[y];
  }
  for (std::size_t y = 0; y < c; ++y) {
    if (count[y] == 0) throw PreconditionError("minmax_normalize: class " + std::to_string(y) + " has no examples");
  }
  Matrix gamma(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t y = 0; y < c; ++y) {
      double g;
      if (hi[y] == lo[y]) {
        g = static_cast<std::size_t>(labels[i]) == y ? 1.0 : 0.0;
      } else {
        g = (xi(i, y) - lo[y]) / (hi[y] - lo[y]);
      }
      gamma(i, y) = std::clamp(g, 0.0, 1.0);
    }
  }
  return gamma;
}

/// Min-max normalization starting from log ξ. Each column is shifted by its
/// maximum before exponentiation; the resulting positive per-column scaling
/// leaves the normalized values unchanged.
inline Matrix minmax_normalize_log(const Matrix& log_xi, std::span<const int> labels) {
  Matrix xi(log_xi.rows(), log_xi.cols());
  for (std::size_t y = 0; y < log_xi.cols(); ++y) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < log_xi.rows(); ++i) mx = std::max(mx, log_xi(i, y));
    for (std::size_t i = 0; i < log_xi.rows(); ++i) xi(i, y) = std::exp(log_xi(i, y) - mx);
  }
  return minmax_normalize(xi, labels);
}

inline std::vector<double> proxy_distribution(std::span<const double> gamma_row, int y_x) {
  const std::size_t c = gamma_row.size();
  if (y_x < 0 || static_cast<std::size_t>(y_x) >= c) throw IndexError("proxy_distribution: label out of range");
  for (double g : gamma_row) {
    if (!(g >= 0.0 && g <= 1.0)) throw DomainError("proxy_distribution: gamma outside [0,1]");
  }
  const auto own = static_cast<std::size_t>(y_x);
  std::vector<double> p(c, 0.0);
  p[own] = gamma_row[own];
  const double residual = 1.0 - gamma_row[own];
  double others = 0.0;
  for (std::size_t y = 0; y < c; ++y) {
    if (y != own) others += gamma_row[y];
  }
  if (residual > 0.0) {
    for (std::size_t y = 0; y < c; ++y) {
      if (y == own) continue;
      p[y] = others > 0.0 ? residual * gamma_row[y] / others : residual / static_cast<double>(c - 1);
    }
  }
  return p;
}

/// Normalized proxy targets from the pre-trained head `head`. `type` must be
/// kPr (concept-description head) or kPrDf (default-prompt head).
inline SoftLabelTable build_soft_labels(const LabeledDataset& ds, const ClassifierHead& head,
                                        ProxyType type = ProxyType::kPr) {
  if (type != ProxyType::kPr && type != ProxyType::kPrDf) {
    throw PreconditionError("build_soft_labels: type must be pr or pr-df");
  }
  const PromptKind want = type == ProxyType::kPr ? PromptKind::kCd : PromptKind::kDf;
  if (head.kind() != want) {
    throw PreconditionError("build_soft_labels: proxy '" + std::string(to_string(type)) + "' needs a " +
                            std::string(to_string(want)) + " head");
  }
  if (head.n_classes() != static_cast<std::size_t>(ds.n_classes)) {
    throw ShapeError("build_soft_labels: head has " + std::to_string(head.n_classes()) + " classes, dataset " +
                     std::to_string(ds.n_classes));
  }
  const AffinityMatrix aff = affinity_matrix(ds.bank, head);
  SoftLabelTable t;
  t.source_head_kind = head.kind();
  t.type = type;
  t.gamma = minmax_normalize_log(raw_scores(aff, head.temperature()), ds.labels);
  t.probs = Matrix(ds.size(), head.n_classes());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto p = proxy_distribution(t.gamma.row(i), ds.labels[i]);
    std::copy(p.begin(), p.end(), t.probs.row(i).begin());
  }
  return t;
}

/// Unnormalized softmax estimate from the pre-trained concept-description head.
inline SoftLabelTable direct_soft_labels(const LabeledDataset& ds, const ClassifierHead& cd_head) {
  SoftLabelTable t;
  t.source_head_kind = cd_head.kind();
  t.type = ProxyType::kCdDirect;
  t.probs = Matrix(ds.size(), cd_head.n_classes());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto p = class_probabilities(ds.bank.row(i), cd_head);
    std::copy(p.begin(), p.end(), t.probs.row(i).begin());
  }
  return t;
}

inline SoftLabelTable one_hot_labels(const LabeledDataset& ds) {
  SoftLabelTable t;
  t.type = ProxyType::kOneHot;
  t.probs = Matrix(ds.size(), static_cast<std::size_t>(ds.n_classes));
  for (std::size_t i = 0; i < ds.size(); ++i) t.probs(i, static_cast<std::size_t>(ds.labels[i])) = 1.0;
  return t;
}

inline SoftLabelTable build_proxy_targets(const LabeledDataset& ds, const ClassifierHead& df_head,
                                          const ClassifierHead& cd_head, ProxyType type) {
  switch (type) {
    case ProxyType::kPr: return build_soft_labels(ds, cd_head, ProxyType::kPr);
    case ProxyType::kPrDf: return build_soft_labels(ds, df_head, ProxyType::kPrDf);
    case ProxyType::kCdDirect: return direct_soft_labels(ds, cd_head);
    case ProxyType::kOneHot: return one_hot_labels(ds);
  }
  throw ConfigError("unknown proxy type");
}

inline double row_entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

inline double mean_entropy(const SoftLabelTable& t) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += row_entropy(t.row(i));
  return t.size() ? s / static_cast<double>(t.size()) : 0.0;
}

// ---- export -------------------------------------------------------------

inline json soft_labels_to_json(const SoftLabelTable& t, std::span<const int> labels) {
  json j;
  j["type"] = std::string(to_string(t.type));
  j["source_head_kind"] = std::string(to_string(t.source_head_kind));
  j["labels"] = std::vector<int>(labels.begin(), labels.end());
  json rows = json::array();
  for (std::size_t i = 0; i < t.size(); ++i) rows.push_back(std::vector<double>(t.row(i).begin(), t.row(i).end()));
  j["probs"] = rows;
  if (!t.gamma.empty()) {
    json g = json::array();
    for (std::size_t i = 0; i < t.gamma.rows(); ++i) {
      g.push_back(std::vector<double>(t.gamma.row(i).begin(), t.gamma.row(i).end()));
    }
    j["gamma"] = g;
  }
  return j;
}

inline Matrix matrix_from_json_rows(const json& rows) {
  if (!rows.is_array() || rows.empty()) throw FormatError("expected a non-empty array of rows");
  const std::size_t c = rows.at(0).size();
  Matrix m(rows.size(), c);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != c) throw CorruptionError("ragged row " + std::to_string(i));
    for (std::size_t y = 0; y < c; ++y) m(i, y) = rows[i][y].get<double>();
  }
  return m;
}

inline SoftLabelTable soft_labels_from_json(const json& j) {
  SoftLabelTable t;
  t.type = parse_proxy_type(j.at("type").get<std::string>());
  t.source_head_kind = parse_prompt_kind(j.at("source_head_kind").get<std::string>());
  t.probs = matrix_from_json_rows(j.at("probs"));
  if (j.contains("gamma")) t.gamma = matrix_from_json_rows(j["gamma"]);
  return t;
}

/// EMB1 form: rows are the probability vectors (float32), labels in the trailer.
inline Emb1Container soft_labels_container(const SoftLabelTable& t, std::span<const int> labels) {
  if (labels.size() != t.size()) throw ShapeError("soft label export: label count != row count");
  Emb1Container c;
  c.count = static_cast<std::uint32_t>(t.size());
  c.dim = static_cast<std::uint32_t>(t.n_classes());
  c.values = to_float_values(t.probs);
  std::vector<std::string> ids;
  ids.reserve(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) ids.push_back("x" + std::to_string(i));
  c.trailer["ids"] = ids;
  c.trailer["labels"] = std::vector<int>(labels.begin(), labels.end());
  c.trailer["kind"] = "soft_labels";
  c.trailer["type"] = std::string(to_string(t.type));
  c.trailer["source_head_kind"] = std::string(to_string(t.source_head_kind));
  return c;
}

inline SoftLabelTable soft_labels_from_container(const Emb1Container& c) {
  if (c.trailer.value("kind", "") != "soft_labels") throw FormatError("EMB1: not a soft-label table");
  SoftLabelTable t;
  t.probs = to_matrix(c);
  t.type = parse_proxy_type(c.trailer.at("type").get<std::string>());
  t.source_head_kind = parse_prompt_kind(c.trailer.at("source_head_kind").get<std::string>());
  return t;
}

}  // namespace drm
