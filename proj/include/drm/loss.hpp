// SPDX-License-Identifier: Apache-2.0
//
// ERM / WRM / DRM losses over trainable head rows with closed-form gradients.
// Image embeddings are frozen; an optional square adapter A maps x to A·x
// before the heads are applied.
#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drm/affinity.hpp"
#include "drm/core.hpp"
#include "drm/errors.hpp"
#include "drm/matrix.hpp"
#include "drm/softlabel.hpp"

namespace drm {

struct TrainableParams {
  Matrix df;  // C×D default-prompt head rows
  Matrix cd;  // C×D concept-description head rows
  std::optional<Matrix> adapter;  // D×D, applied to image embeddings

  static TrainableParams from_heads(const ClassifierHead& df_head, const ClassifierHead& cd_head,
                                    bool with_adapter) {
    TrainableParams p{df_head.rows(), cd_head.rows(), std::nullopt};
    if (with_adapter) p.adapter = Matrix::identity(df_head.dim());
    p.check();
    return p;
  }

  std::size_t n_classes() const noexcept { return df.rows(); }
  std::size_t dim() const noexcept { return df.cols(); }

  Matrix& head(PromptKind k) { return k == PromptKind::kDf ? df : cd; }
  const Matrix& head(PromptKind k) const { return k == PromptKind::kDf ? df : cd; }

  void check() const {
    require_same_shape(df, cd, "trainable params (df vs cd head)");
    if (adapter && (adapter->rows() != dim() || adapter->cols() != dim())) {
      throw ShapeError("trainable params: adapter must be " + std::to_string(dim()) + "x" + std::to_string(dim()));
    }
  }

  TrainableParams zeros_like() const {
    TrainableParams z{Matrix(df.rows(), df.cols()), Matrix(cd.rows(), cd.cols()), std::nullopt};
    if (adapter) z.adapter = Matrix(adapter->rows(), adapter->cols());
    return z;
  }

  /// Visits every tensor pair (this, other) in a fixed order.
  template <class F>
  void zip(const TrainableParams& other, F&& f) {
    f(df, other.df);
    f(cd, other.cd);
    if (adapter.has_value() != other.adapter.has_value()) throw ShapeError("trainable params: adapter presence differs");
    if (adapter) f(*adapter, *other.adapter);
  }

  /// Flattened view used by finite-difference checks and optimizers.
  std::size_t num_scalars() const { return df.size() + cd.size() + (adapter ? adapter->size() : 0); }
  double& scalar(std::size_t k) {
    if (k < df.size()) return df.data()[k];
    k -= df.size();
    if (k < cd.size()) return cd.data()[k];
    k -= cd.size();
    return adapter->data()[k];
  }
  double scalar(std::size_t k) const { return const_cast<TrainableParams*>(this)->scalar(k); }

  friend bool operator==(const TrainableParams&, const TrainableParams&) = default;
};

/// Mini-batch: a subset of rows of a frozen image matrix with their labels.
struct BatchView {
  const Matrix& images;
  std::span<const int> labels;  // aligned with images rows
  std::span<const std::size_t> indices;

  std::size_t size() const noexcept { return indices.size(); }
};

struct LossBreakdown {
  double erm = 0.0;
  double wrm = 0.0;
  double total = 0.0;
  double lambda = 0.0;
};

struct LossAndGrad {
  double loss = 0.0;
  TrainableParams grad;
};

/// Which heads the two risk terms use; an empty slot disables that term.
struct LossVariant {
  std::optional<PromptKind> t1 = PromptKind::kDf;
  std::optional<PromptKind> t2 = PromptKind::kCd;
};

enum class ErmKind { kCe, kContrastive };

inline std::string_view to_string(ErmKind k) { return k == ErmKind::kCe ? "ce" : "contrastive"; }
inline ErmKind parse_erm_kind(std::string_view s) {
  if (s == "ce") return ErmKind::kCe;
  if (s == "contrastive") return ErmKind::kContrastive;
  throw ConfigError("unknown erm kind '" + std::string(s) + "'");
}

namespace detail {

/// z = A·x (or x itself without an adapter).
inline void embed(const TrainableParams& p, std::span<const double> x, std::span<double> z) {
  if (p.adapter) {
    matvec(*p.adapter, x, z);
  } else {
    std::copy(x.begin(), x.end(), z.begin());
  }
}

inline Matrix embed_batch(const TrainableParams& p, const BatchView& b) {
  if (b.images.cols() != p.dim()) throw ShapeError("loss: image dim does not match head dim");
  Matrix z(b.size(), p.dim());
  for (std::size_t k = 0; k < b.size(); ++k) {
    if (b.indices[k] >= b.images.rows()) throw IndexError("loss: batch index out of range");
    embed(p, b.images.row(b.indices[k]), z.row(k));
  }
  return z;
}

/// Back-propagates dLoss/dlogit (already divided by the batch normalizer)
/// for example k and class row y into the gradient.
struct HeadBackprop {
  const TrainableParams& params;
  const BatchView& batch;
  const Matrix& z;
  double inv_tau;

  void operator()(TrainableParams& grad, PromptKind head, std::size_t k, std::size_t y, double g) const {
    if (g == 0.0) return;
    const double s = g * inv_tau;
    auto gw = grad.head(head).row(y);
    const auto zk = z.row(k);
    for (std::size_t d = 0; d < zk.size(); ++d) gw[d] += s * zk[d];
    if (params.adapter) {
      const auto w = params.head(head).row(y);
      const auto x = batch.images.row(batch.indices[k]);
      Matrix& ga = *grad.adapter;
      for (std::size_t r = 0; r < w.size(); ++r) {
        const double sw = s * w[r];
        auto ga_row = ga.row(r);
        for (std::size_t c = 0; c < x.size(); ++c) ga_row[c] += sw * x[c];
      }
    }
  }
};

/// Mean soft-target cross-entropy of head `head`; accumulates weight·∇ into grad.
inline double soft_ce(const TrainableParams& p, PromptKind head, const BatchView& b, const Matrix& z,
                      const Matrix& targets, double tau, TrainableParams* grad, double weight) {
  const Matrix& w = p.head(head);
  const std::size_t c = w.rows();
  const double inv_b = 1.0 / static_cast<double>(b.size());
  HeadBackprop bp{p, b, z, 1.0 / tau};
  std::vector<double> logits(c);
  double total = 0.0;
  for (std::size_t k = 0; k < b.size(); ++k) {
    const auto t = targets.row(k);
    for (std::size_t y = 0; y < c; ++y) logits[y] = dot(z.row(k), w.row(y)) / tau;
    log_softmax_inplace(logits);
    double ce = 0.0;
    for (std::size_t y = 0; y < c; ++y) {
      if (t[y] != 0.0) ce -= t[y] * logits[y];
    }
    total += ce;
    if (grad) {
      for (std::size_t y = 0; y < c; ++y) bp(*grad, head, k, y, weight * inv_b * (std::exp(logits[y]) - t[y]));
    }
  }
  return total * inv_b;
}

inline Matrix one_hot_targets(const BatchView& b, std::size_t c) {
  Matrix t(b.size(), c);
  for (std::size_t k = 0; k < b.size(); ++k) {
    const int y = b.labels[b.indices[k]];
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw IndexError("loss: label out of range");
    t(k, static_cast<std::size_t>(y)) = 1.0;
  }
  return t;
}

inline Matrix gather_targets(const BatchView& b, const SoftLabelTable& table) {
  if (table.size() != b.images.rows()) {
    throw IndexError("wrm loss: soft-label table has " + std::to_string(table.size()) + " rows, dataset " +
                     std::to_string(b.images.rows()));
  }
  Matrix t(b.size(), table.n_classes());
  for (std::size_t k = 0; k < b.size(); ++k) {
    if (b.indices[k] >= table.size()) throw IndexError("wrm loss: batch index beyond soft-label table");
    const auto src = table.row(b.indices[k]);
    std::copy(src.begin(), src.end(), t.row(k).begin());
  }
  return t;
}

/// Symmetric batch contrastive loss between images and their label's head row.
inline double contrastive(const TrainableParams& p, PromptKind head, const BatchView& b, const Matrix& z, double tau,
                          TrainableParams* grad, double weight) {
  const std::size_t n = b.size();
  if (n < 2) throw PreconditionError("contrastive loss: batch size must be >= 2");
  const Matrix& w = p.head(head);
  std::vector<std::size_t> cls(n);
  for (std::size_t k = 0; k < n; ++k) {
    const int y = b.labels[b.indices[k]];
    if (y < 0 || static_cast<std::size_t>(y) >= w.rows()) throw IndexError("loss: label out of range");
    cls[k] = static_cast<std::size_t>(y);
  }
  // Multi-positive targets: T(i,j) = [y_i == y_j] / #{k : y_k == y_i}. Symmetric.
  Matrix target(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t same = 0;
    for (std::size_t j = 0; j < n; ++j) same += cls[i] == cls[j];
    for (std::size_t j = 0; j < n; ++j) target(i, j) = cls[i] == cls[j] ? 1.0 / static_cast<double>(same) : 0.0;
  }
  Matrix logits(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) logits(i, j) = dot(z.row(i), w.row(cls[j])) / tau;
  }
  Matrix row_lp = logits;
  for (std::size_t i = 0; i < n; ++i) log_softmax_inplace(row_lp.row(i));
  Matrix col_lp(n, n);
  std::vector<double> col(n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) col[i] = logits(i, j);
    log_softmax_inplace(col);
    for (std::size_t i = 0; i < n; ++i) col_lp(i, j) = col[i];
  }
  double row_ce = 0.0;
  double col_ce = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (target(i, j) != 0.0) {
        row_ce -= target(i, j) * row_lp(i, j);
        col_ce -= target(i, j) * col_lp(i, j);
      }
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  if (grad) {
    HeadBackprop bp{p, b, z, 1.0 / tau};
    const double s = weight * 0.5 * inv_n;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double g = std::exp(row_lp(i, j)) + std::exp(col_lp(i, j)) - 2.0 * target(i, j);
        bp(*grad, head, i, cls[j], s * g);
      }
    }
  }
  return 0.5 * (row_ce + col_ce) * inv_n;
}

inline double erm_term(const TrainableParams& p, PromptKind head, const BatchView& b, const Matrix& z, double tau,
                       ErmKind kind, TrainableParams* grad, double weight) {
  if (kind == ErmKind::kContrastive) return contrastive(p, head, b, z, tau, grad, weight);
  return soft_ce(p, head, b, z, one_hot_targets(b, p.n_classes()), tau, grad, weight);
}

inline void require_batch(const BatchView& b) {
  if (b.size() == 0) throw PreconditionError("loss: empty batch");
  if (b.labels.size() != b.images.rows()) throw ShapeError("loss: label count != image rows");
}

}  // namespace detail

/// Mean −log p̂(y_x | x) under head `head` (default: df).
inline LossAndGrad erm_ce_loss(const TrainableParams& p, const BatchView& b, double tau,
                               PromptKind head = PromptKind::kDf) {
  detail::require_batch(b);
  LossAndGrad out{0.0, p.zeros_like()};
  const Matrix z = detail::embed_batch(p, b);
  out.loss = detail::soft_ce(p, head, b, z, detail::one_hot_targets(b, p.n_classes()), tau, &out.grad, 1.0);
  return out;
}

inline LossAndGrad erm_contrastive_loss(const TrainableParams& p, const BatchView& b, double tau,
                                        PromptKind head = PromptKind::kDf) {
  detail::require_batch(b);
  LossAndGrad out{0.0, p.zeros_like()};
  const Matrix z = detail::embed_batch(p, b);
  out.loss = detail::contrastive(p, head, b, z, tau, &out.grad, 1.0);
  return out;
}

/// Mean cross-entropy from the soft-label rows to the prediction of `head` (default: cd).
inline LossAndGrad wrm_ce_loss(const TrainableParams& p, const BatchView& b, const SoftLabelTable& soft, double tau,
                               PromptKind head = PromptKind::kCd) {
  detail::require_batch(b);
  LossAndGrad out{0.0, p.zeros_like()};
  const Matrix z = detail::embed_batch(p, b);
  out.loss = detail::soft_ce(p, head, b, z, detail::gather_targets(b, soft), tau, &out.grad, 1.0);
  return out;
}

struct DrmLossResult {
  LossBreakdown breakdown;
  TrainableParams grad;
};

/// erm + λ·wrm with per-variant head assignment. With λ = 0 the WRM gradient
/// is never accumulated, so the result is bitwise the ERM objective.
inline DrmLossResult drm_loss(const TrainableParams& p, const BatchView& b, const SoftLabelTable* soft, double lambda,
                              ErmKind erm_kind, const LossVariant& variant, double tau, bool with_grad = true) {
  if (!(lambda >= 0.0)) throw DomainError("drm_loss: lambda must be >= 0");
  detail::require_batch(b);
  DrmLossResult out{{0.0, 0.0, 0.0, lambda}, p.zeros_like()};
  TrainableParams* g = with_grad ? &out.grad : nullptr;
  const Matrix z = detail::embed_batch(p, b);
  if (variant.t1) out.breakdown.erm = detail::erm_term(p, *variant.t1, b, z, tau, erm_kind, g, 1.0);
  if (variant.t2) {
    if (!soft) throw PreconditionError("drm_loss: WRM term requires a soft-label table");
    const Matrix targets = detail::gather_targets(b, *soft);
    out.breakdown.wrm = detail::soft_ce(p, *variant.t2, b, z, targets, tau, lambda == 0.0 ? nullptr : g, lambda);
  }
  out.breakdown.total = lambda == 0.0 ? out.breakdown.erm : out.breakdown.erm + lambda * out.breakdown.wrm;
  return out;
}

}  // namespace drm
