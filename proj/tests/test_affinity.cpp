#include "doctest.h"

#include "drm/affinity.hpp"
#include "support.hpp"

using namespace drm;

TEST_CASE("scalar affinity") {
  CHECK(affinity(std::vector<double>{1, 0}, std::vector<double>{1, 0}) == 1.0);
  CHECK(affinity(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
  CHECK(affinity(std::vector<double>{0.6, 0.8}, std::vector<double>{0.8, 0.6}) == doctest::Approx(0.96).epsilon(1e-15));
  CHECK_THROWS_AS(affinity(std::vector<double>{1, 0}, std::vector<double>{1, 0, 0}), ShapeError);
}

TEST_CASE("class probabilities") {
  const std::vector<double> x{1, 0};
  Matrix rows(2, 2);
  rows(0, 0) = 1;  // affinities (1, 0)
  rows(1, 1) = 1;

  auto p = class_probabilities(x, rows, 1.0);
  const double e = std::exp(1.0);
  CHECK(p[0] == doctest::Approx(e / (e + 1)).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(1 / (e + 1)).epsilon(1e-14));

  p = class_probabilities(x, rows, 0.01);
  CHECK(p[0] == doctest::Approx(1.0));
  // exp(-100) / (1 + exp(-100)), no overflow on the way
  CHECK(p[1] == doctest::Approx(std::exp(-100.0)).epsilon(1e-12));
  CHECK(p[1] > 3.7e-44);
  CHECK(p[1] < 3.8e-44);

  Matrix same(3, 2, 0.0);
  for (std::size_t y = 0; y < 3; ++y) same(y, 0) = 0.5;
  p = class_probabilities(x, same, 0.1);
  for (double v : p) CHECK(v == doctest::Approx(1.0 / 3));
}

TEST_CASE("non-finite affinity is a numeric error") {
  const std::vector<double> x{std::numeric_limits<double>::infinity(), 0};
  CHECK_THROWS_AS(class_probabilities(x, Matrix::identity(2), 1.0), NumericError);
}

TEST_CASE("affinity matrix matches the scalar loop") {
  CHECK(affinity_matrix(Matrix::identity(2), Matrix::identity(2)).values == Matrix::identity(2));

  std::mt19937_64 rng(5);
  const Matrix imgs = testing::random_unit_rows(5, 8, rng);
  const Matrix head = testing::random_unit_rows(4, 8, rng);
  const AffinityMatrix a = affinity_matrix(imgs, head);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t y = 0; y < 4; ++y) {
      double s = 0.0;
      for (std::size_t k = 0; k < 8; ++k) s += imgs(i, k) * head(y, k);
      CHECK(a(i, y) == s);
    }
  }
  CHECK_THROWS_AS(affinity_matrix(imgs, testing::random_unit_rows(4, 7, rng)), ShapeError);
}

TEST_CASE("softmax is shift invariant and sharpens as tau shrinks") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(6);
    for (double& v : a) v = n01(rng);
    std::vector<double> b = a;
    const double shift = 10 * n01(rng);
    for (double& v : b) v += shift;
    softmax_inplace(a);
    softmax_inplace(b);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-12));
  }

  const std::vector<double> x{0.6, 0.8};
  Matrix rows(3, 2);
  rows(0, 0) = 1;
  rows(1, 1) = 1;  // unique max
  rows(2, 0) = -1;
  double prev = 0.0;
  for (double tau : {10.0, 1.0, 0.3, 0.1, 0.03, 0.01}) {
    const double top = class_probabilities(x, rows, tau)[1];
    CHECK(top > prev);
    prev = top;
  }
  CHECK(prev > 0.99999);
}
