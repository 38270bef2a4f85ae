// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "drm/errors.hpp"
#include "drm/matrix.hpp"

namespace drm {

/// Tolerance on |‖row‖ − 1| for stored embeddings and prompt heads.
inline constexpr double kUnitNormTolerance = 1e-4;
/// Rows whose norm deviates by more than this are re-normalized at ingestion.
inline constexpr double kRenormalizeThreshold = 1e-6;

enum class Split { kTrain, kIdVal, kIdTest, kOodTest };
/// Which prompt set produced a head: default prompts or concept descriptions.
enum class PromptKind { kDf, kCd };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kIdVal: return "id_val";
    case Split::kIdTest: return "id_test";
    case Split::kOodTest: return "ood_test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "id_val") return Split::kIdVal;
  if (s == "id_test") return Split::kIdTest;
  if (s == "ood_test") return Split::kOodTest;
  throw ConfigError("unknown split '" + std::string(s) + "'");
}

inline std::string_view to_string(PromptKind k) { return k == PromptKind::kDf ? "df" : "cd"; }

inline PromptKind parse_prompt_kind(std::string_view s) {
  if (s == "df") return PromptKind::kDf;
  if (s == "cd") return PromptKind::kCd;
  throw ConfigError("unknown prompt kind '" + std::string(s) + "'");
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// Returns v / ‖v‖. Throws DomainError on a zero (or non-finite) vector.
inline std::vector<double> l2_normalize(std::span<const double> v) {
  const double n = l2_norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) throw DomainError("l2_normalize: zero or non-finite vector");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

inline void l2_normalize_inplace(std::span<double> v) {
  const double n = l2_norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) throw DomainError("l2_normalize: zero or non-finite vector");
  for (double& x : v) x /= n;
}

/// Encoder outputs: N rows of dimension `dim` with unique string ids.
/// Unit norm is established at ingestion (see `EmbeddingBank::ingest`);
/// the plain constructor keeps rows as given so that reports can flag them.
class EmbeddingBank {
 public:
  EmbeddingBank() = default;
  EmbeddingBank(Matrix vectors, std::vector<std::string> ids)
      : vectors_(std::move(vectors)), ids_(std::move(ids)) {
    if (vectors_.cols() == 0) throw DataError("embedding bank: dim must be >= 1");
    if (ids_.size() != vectors_.rows()) {
      throw DataError("embedding bank: " + std::to_string(ids_.size()) + " ids for " +
                      std::to_string(vectors_.rows()) + " rows");
    }
    std::unordered_set<std::string_view> seen;
    for (const auto& id : ids_) {
      if (!seen.insert(id).second) throw DataError("embedding bank: duplicate id '" + id + "'");
    }
  }

  /// Builds a bank and re-normalizes any row whose norm is off by more than 1e-6.
  static EmbeddingBank ingest(Matrix vectors, std::vector<std::string> ids) {
    for (std::size_t r = 0; r < vectors.rows(); ++r) {
      const double n = l2_norm(vectors.row(r));
      if (!(n > 0.0) || !std::isfinite(n)) {
        throw DataError("embedding bank: zero-norm row " + std::to_string(r));
      }
      if (std::abs(n - 1.0) > kRenormalizeThreshold) {
        for (double& x : vectors.row(r)) x /= n;
      }
    }
    return EmbeddingBank(std::move(vectors), std::move(ids));
  }

  std::size_t size() const noexcept { return vectors_.rows(); }
  std::size_t dim() const noexcept { return vectors_.cols(); }
  const Matrix& vectors() const noexcept { return vectors_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  std::span<const double> row(std::size_t i) const { return vectors_.row(i); }

  friend bool operator==(const EmbeddingBank&, const EmbeddingBank&) = default;

 private:
  Matrix vectors_;
  std::vector<std::string> ids_;
};

/// Image embeddings with dense class labels 0..C-1 for one split.
struct LabeledDataset {
  EmbeddingBank bank;
  std::vector<int> labels;
  /// Optional per-example domain identifiers; empty vector means untagged.
  std::vector<std::string> domain_tags;
  Split split = Split::kTrain;
  int n_classes = 0;
  std::vector<std::string> class_names;

  std::size_t size() const noexcept { return labels.size(); }

  /// Checks structural invariants (lengths and label range).
  void check() const {
    if (n_classes < 2) throw DataError("dataset: need at least 2 classes");
    if (labels.size() != bank.size()) {
      throw DataError("dataset: " + std::to_string(labels.size()) + " labels for " +
                      std::to_string(bank.size()) + " rows");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || labels[i] >= n_classes) {
        throw DataError("dataset: label " + std::to_string(labels[i]) + " at row " +
                        std::to_string(i) + " outside [0," + std::to_string(n_classes) + ")");
      }
    }
    if (!domain_tags.empty() && domain_tags.size() != labels.size()) {
      throw DataError("dataset: domain tag count does not match row count");
    }
    if (!class_names.empty() && class_names.size() != static_cast<std::size_t>(n_classes)) {
      throw DataError("dataset: class name table does not match class count");
    }
  }

  /// Row indices of every example labelled y.
  std::vector<std::vector<std::size_t>> class_members() const {
    std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(n_classes));
    for (std::size_t i = 0; i < labels.size(); ++i) out[static_cast<std::size_t>(labels[i])].push_back(i);
    return out;
  }
};

/// Text-side prompt embeddings used as a linear classification head.
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(Matrix class_rows, double temperature, PromptKind kind)
      : rows_(std::move(class_rows)), temperature_(temperature), kind_(kind) {
    if (rows_.rows() < 2) throw DataError("classifier head: need at least 2 classes");
    if (!(temperature_ > 0.0)) throw DomainError("classifier head: temperature must be > 0");
    for (std::size_t r = 0; r < rows_.rows(); ++r) {
      if (std::abs(l2_norm(rows_.row(r)) - 1.0) > kUnitNormTolerance) {
        throw DataError("classifier head: row " + std::to_string(r) + " is not unit norm");
      }
    }
  }

  std::size_t n_classes() const noexcept { return rows_.rows(); }
  std::size_t dim() const noexcept { return rows_.cols(); }
  const Matrix& rows() const noexcept { return rows_; }
  double temperature() const noexcept { return temperature_; }
  PromptKind kind() const noexcept { return kind_; }

 private:
  Matrix rows_;
  double temperature_ = 0.01;
  PromptKind kind_ = PromptKind::kDf;
};

struct NormViolation {
  std::string id;
  double norm = 0.0;
};

struct ValidationReport {
  std::vector<std::size_t> class_counts;
  std::vector<int> empty_classes;
  std::vector<NormViolation> norm_violations;
  std::vector<std::string> label_errors;

  bool ok() const { return empty_classes.empty() && norm_violations.empty() && label_errors.empty(); }
};

/// Report-only check of a dataset; never throws on bad content.
inline ValidationReport validate_dataset(const LabeledDataset& ds) {
  ValidationReport rep;
  const int c = std::max(ds.n_classes, 0);
  rep.class_counts.assign(static_cast<std::size_t>(c), 0);
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    const int y = ds.labels[i];
    if (y < 0 || y >= c) {
      rep.label_errors.push_back("row " + std::to_string(i) + ": label " + std::to_string(y));
      continue;
    }
    ++rep.class_counts[static_cast<std::size_t>(y)];
  }
  if (ds.labels.size() != ds.bank.size()) {
    rep.label_errors.push_back("label count " + std::to_string(ds.labels.size()) + " != rows " +
                               std::to_string(ds.bank.size()));
  }
  for (int y = 0; y < c; ++y) {
    if (rep.class_counts[static_cast<std::size_t>(y)] == 0) rep.empty_classes.push_back(y);
  }
  for (std::size_t r = 0; r < ds.bank.size(); ++r) {
    const double n = l2_norm(ds.bank.row(r));
    if (!(std::abs(n - 1.0) <= kUnitNormTolerance)) rep.norm_violations.push_back({ds.bank.ids()[r], n});
  }
  return rep;
}

}  // namespace drm
