// Shared fixtures for the unit tests. Oracles that re-derive a library
// result live in the individual test files, next to their use.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "drm/core.hpp"
#include "drm/loss.hpp"
#include "drm/matrix.hpp"
#include "drm/softlabel.hpp"

namespace drm::testing {

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n01(0.0, scale);
  Matrix m(r, c);
  for (double& v : m.data()) v = n01(rng);
  return m;
}

inline Matrix random_unit_rows(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  Matrix m = random_matrix(r, c, rng);
  for (std::size_t i = 0; i < r; ++i) l2_normalize_inplace(m.row(i));
  return m;
}

inline std::vector<int> random_labels(std::size_t n, int c, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, c - 1);
  std::vector<int> y(n);
  for (int& v : y) v = pick(rng);
  return y;
}

/// Row-stochastic table with strictly positive entries.
inline SoftLabelTable random_soft_table(std::size_t n, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  SoftLabelTable t;
  t.probs = Matrix(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double& v : t.probs.row(i)) s += (v = u(rng));
    for (double& v : t.probs.row(i)) v /= s;
  }
  return t;
}

inline TrainableParams random_params(std::size_t c, std::size_t d, bool adapter, std::mt19937_64& rng) {
  TrainableParams p{random_unit_rows(c, d, rng), random_unit_rows(c, d, rng), std::nullopt};
  if (adapter) {
    Matrix a = Matrix::identity(d);
    const Matrix noise = random_matrix(d, d, rng, 0.1);
    for (std::size_t k = 0; k < a.size(); ++k) a.data()[k] += noise.data()[k];
    p.adapter = std::move(a);
  }
  return p;
}

inline LabeledDataset make_dataset(Matrix rows, std::vector<int> labels, int n_classes) {
  std::vector<std::string> ids(rows.rows());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = "x" + std::to_string(i);
  LabeledDataset ds;
  ds.bank = EmbeddingBank::ingest(std::move(rows), std::move(ids));
  ds.labels = std::move(labels);
  ds.n_classes = n_classes;
  return ds;
}

inline bool bitwise_equal(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (std::memcmp(&a.data()[k], &b.data()[k], sizeof(double)) != 0) return false;
  }
  return true;
}

inline bool bitwise_equal(const TrainableParams& a, const TrainableParams& b) {
  if (!bitwise_equal(a.df, b.df) || !bitwise_equal(a.cd, b.cd)) return false;
  if (a.adapter.has_value() != b.adapter.has_value()) return false;
  return !a.adapter || bitwise_equal(*a.adapter, *b.adapter);
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("drm_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace drm::testing
