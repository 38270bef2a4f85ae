// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <limits>
#include <cmath>
#include <span>
#include <vector>

#include "drm/core.hpp"
#include "drm/errors.hpp"
#include "drm/matrix.hpp"

namespace drm {

/// Default softmax temperature (CLIP logit scale 100).
inline constexpr double kDefaultTemperature = 0.01;

/// N×C matrix of image/prompt inner products.
struct AffinityMatrix {
  Matrix values;

  std::size_t n_examples() const noexcept { return values.rows(); }
  std::size_t n_classes() const noexcept { return values.cols(); }
  double operator()(std::size_t i, std::size_t y) const { return values(i, y); }
};

/// Inner product between an image embedding and a prompt embedding.
inline double affinity(std::span<const double> image_emb, std::span<const double> text_emb) {
  return dot(image_emb, text_emb);
}

/// In-place softmax with max subtraction; accumulates in double.
inline void softmax_inplace(std::span<double> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite logit");
    mx = std::max(mx, v);
  }
  double sum = 0.0;
  for (double& v : logits) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : logits) v /= sum;
}

/// log-softmax with max subtraction.
inline void log_softmax_inplace(std::span<double> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) {
    if (!std::isfinite(v)) throw NumericError("log_softmax: non-finite logit");
    mx = std::max(mx, v);
  }
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  for (double& v : logits) v -= lse;
}

/// softmax_y(⟨x, w_y⟩ / τ) for arbitrary (possibly non-unit) head rows.
inline std::vector<double> class_probabilities(std::span<const double> image_emb, const Matrix& class_rows,
                                               double temperature) {
  if (!(temperature > 0.0)) throw DomainError("class_probabilities: temperature must be > 0");
  if (class_rows.cols() != image_emb.size()) throw ShapeError("class_probabilities: dimension mismatch");
  std::vector<double> p(class_rows.rows());
  for (std::size_t y = 0; y < p.size(); ++y) p[y] = affinity(image_emb, class_rows.row(y)) / temperature;
  softmax_inplace(p);
  return p;
}

inline std::vector<double> class_probabilities(std::span<const double> image_emb, const ClassifierHead& head) {
  return class_probabilities(image_emb, head.rows(), head.temperature());
}

inline AffinityMatrix affinity_matrix(const Matrix& images, const Matrix& class_rows) {
  if (images.cols() != class_rows.cols()) {
    throw ShapeError("affinity_matrix: image dim " + std::to_string(images.cols()) + " != head dim " +
                     std::to_string(class_rows.cols()));
  }
  AffinityMatrix a{Matrix(images.rows(), class_rows.rows())};
  for (std::size_t i = 0; i < images.rows(); ++i) {
    for (std::size_t y = 0; y < class_rows.rows(); ++y) a.values(i, y) = affinity(images.row(i), class_rows.row(y));
  }
  return a;
}

inline AffinityMatrix affinity_matrix(const EmbeddingBank& images, const ClassifierHead& head) {
  return affinity_matrix(images.vectors(), head.rows());
}

}  // namespace drm
