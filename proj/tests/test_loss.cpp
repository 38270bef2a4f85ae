#include "doctest.h"

#include <numeric>

#include "drm/loss.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace drm;

namespace {

struct Instance {
  Matrix images;
  std::vector<int> labels;
  std::vector<std::size_t> idx;
  TrainableParams params;
  SoftLabelTable soft;

  BatchView batch() const { return {images, labels, idx}; }
};

Instance random_instance(std::uint64_t seed, bool adapter, std::size_t c = 5, std::size_t d = 16) {
  std::mt19937_64 rng(seed);
  Instance in;
  in.images = testing::random_unit_rows(12, d, rng);
  in.labels = testing::random_labels(12, static_cast<int>(c), rng);
  in.idx = {7, 2, 9, 0, 4, 11, 5, 3};
  in.params = testing::random_params(c, d, adapter, rng);
  in.soft = testing::random_soft_table(12, c, rng);
  return in;
}

std::vector<double> logits_of(const Matrix& w, std::span<const double> z, double tau) {
  std::vector<double> out(w.rows());
  for (std::size_t y = 0; y < w.rows(); ++y) {
    double s = 0;
    for (std::size_t k = 0; k < z.size(); ++k) s += w(y, k) * z[k];
    out[y] = s / tau;
  }
  return out;
}

double log_sum_exp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// Independent re-evaluation of the symmetric multi-positive contrastive loss.
double contrastive_oracle(const Instance& in, double tau) {
  const std::size_t n = in.idx.size();
  std::vector<std::vector<double>> L(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto w = in.params.df.row(static_cast<std::size_t>(in.labels[in.idx[j]]));
      double s = 0;
      for (std::size_t k = 0; k < w.size(); ++k) s += w[k] * in.images(in.idx[i], k);
      L[i][j] = s / tau;
    }
  }
  double row = 0, col = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> r(n), c(n);
    for (std::size_t j = 0; j < n; ++j) {
      r[j] = L[i][j];
      c[j] = L[j][i];
    }
    const double lr = log_sum_exp(r), lc = log_sum_exp(c);
    double same = 0;
    for (std::size_t j = 0; j < n; ++j) same += in.labels[in.idx[i]] == in.labels[in.idx[j]];
    for (std::size_t j = 0; j < n; ++j) {
      if (in.labels[in.idx[i]] != in.labels[in.idx[j]]) continue;
      row -= (L[i][j] - lr) / same;
      col -= (L[j][i] - lc) / same;  // target matrix is symmetric
    }
  }
  return 0.5 * (row + col) / static_cast<double>(n);
}

}  // namespace

TEST_CASE("erm_ce small cases") {
  Matrix imgs = Matrix::identity(2);
  std::vector<int> y{0, 1};
  std::vector<std::size_t> idx{0, 1};
  TrainableParams p{Matrix::identity(2), Matrix::identity(2), std::nullopt};
  BatchView b{imgs, y, idx};
  CHECK(erm_ce_loss(p, b, 0.01).loss == doctest::Approx(0.0).epsilon(1e-40));

  TrainableParams flat{Matrix(2, 2, 0.5), Matrix(2, 2, 0.5), std::nullopt};
  CHECK(erm_ce_loss(flat, b, 1.0).loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("erm_ce matches direct evaluation") {
  const Instance in = random_instance(21, false, 3, 6);
  double want = 0;
  for (std::size_t k : in.idx) {
    const auto l = logits_of(in.params.df, in.images.row(k), 0.2);
    want += log_sum_exp(l) - l[static_cast<std::size_t>(in.labels[k])];
  }
  want /= static_cast<double>(in.idx.size());
  CHECK(erm_ce_loss(in.params, in.batch(), 0.2).loss == doctest::Approx(want).epsilon(1e-13));
}

TEST_CASE("contrastive small cases") {
  Matrix imgs = Matrix::identity(2);
  std::vector<int> y{0, 1};
  std::vector<std::size_t> idx{0, 1};
  TrainableParams p{Matrix::identity(2), Matrix::identity(2), std::nullopt};
  const double got = erm_contrastive_loss(p, {imgs, y, idx}, 1.0).loss;
  const double e = std::exp(1.0);
  CHECK(got == doctest::Approx(-std::log(e / (e + 1))).epsilon(1e-14));
  CHECK(got == doctest::Approx(0.31326).epsilon(1e-5));

  // every item identical: uniform logits against uniform targets
  Matrix same(4, 2, 0.0);
  for (std::size_t i = 0; i < 4; ++i) same(i, 0) = 1.0;
  std::vector<int> y4{1, 1, 1, 1};
  std::vector<std::size_t> idx4{0, 1, 2, 3};
  CHECK(erm_contrastive_loss(p, {same, y4, idx4}, 1.0).loss == doctest::Approx(std::log(4.0)).epsilon(1e-14));

  std::vector<std::size_t> one{0};
  CHECK_THROWS_AS(erm_contrastive_loss(p, {imgs, y, one}, 1.0), PreconditionError);
}

TEST_CASE("contrastive matches the brute-force target oracle") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Instance in = random_instance(100 + s, false, 3, 8);  // 3 classes in 8 items forces duplicates
    CHECK(erm_contrastive_loss(in.params, in.batch(), 0.1).loss == doctest::Approx(contrastive_oracle(in, 0.1)).epsilon(1e-12));
  }
}

TEST_CASE("wrm_ce cases") {
  const Instance in = random_instance(31, false);
  // Targets equal to the cd prediction: loss is the mean target entropy.
  SoftLabelTable t;
  t.probs = Matrix(12, 5);
  for (std::size_t i = 0; i < 12; ++i) {
    auto l = logits_of(in.params.cd, in.images.row(i), 0.1);
    const double lse = log_sum_exp(l);
    for (std::size_t y = 0; y < 5; ++y) t.probs(i, y) = std::exp(l[y] - lse);
  }
  double h = 0;
  for (std::size_t k : in.idx) h += row_entropy(t.row(k));
  h /= static_cast<double>(in.idx.size());
  CHECK(wrm_ce_loss(in.params, in.batch(), t, 0.1).loss == doctest::Approx(h).epsilon(1e-12));

  SoftLabelTable one_hot;
  one_hot.probs = Matrix(12, 5);
  for (std::size_t i = 0; i < 12; ++i) one_hot.probs(i, static_cast<std::size_t>(in.labels[i])) = 1.0;
  CHECK(wrm_ce_loss(in.params, in.batch(), one_hot, 0.1).loss ==
        erm_ce_loss(in.params, in.batch(), 0.1, PromptKind::kCd).loss);

  SoftLabelTable short_table;
  short_table.probs = Matrix(3, 5, 0.2);
  CHECK_THROWS_AS(wrm_ce_loss(in.params, in.batch(), short_table, 0.1), IndexError);
}

TEST_CASE("drm_loss combination and zero lambda") {
  const Instance in = random_instance(41, true);
  for (ErmKind kind : {ErmKind::kCe, ErmKind::kContrastive}) {
    const auto r3 = drm_loss(in.params, in.batch(), &in.soft, 3.0, kind, {}, 0.1);
    CHECK(r3.breakdown.total == doctest::Approx(r3.breakdown.erm + 3.0 * r3.breakdown.wrm).epsilon(1e-15));

    const auto r0 = drm_loss(in.params, in.batch(), &in.soft, 0.0, kind, {}, 0.1);
    const LossAndGrad erm = kind == ErmKind::kCe ? erm_ce_loss(in.params, in.batch(), 0.1)
                                                 : erm_contrastive_loss(in.params, in.batch(), 0.1);
    CHECK(std::memcmp(&r0.breakdown.total, &erm.loss, sizeof(double)) == 0);
    CHECK(testing::bitwise_equal(r0.grad, erm.grad));
  }
  CHECK_THROWS_AS(drm_loss(in.params, in.batch(), &in.soft, -1.0, ErmKind::kCe, {}, 0.1), DomainError);
  CHECK_THROWS_AS(drm_loss(in.params, in.batch(), nullptr, 1.0, ErmKind::kCe, {}, 0.1), PreconditionError);
}

TEST_CASE("losses are non-negative and wrm is bounded below by entropy") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Instance in = random_instance(200 + s, s % 2 == 1);
    CHECK(erm_ce_loss(in.params, in.batch(), 0.1).loss >= 0.0);
    CHECK(erm_contrastive_loss(in.params, in.batch(), 0.1).loss >= 0.0);
    const double w = wrm_ce_loss(in.params, in.batch(), in.soft, 0.1).loss;
    double h = 0;
    for (std::size_t k : in.idx) h += row_entropy(in.soft.row(k));
    CHECK(w >= h / static_cast<double>(in.idx.size()));
  }
}

TEST_CASE("cross-entropy is convex in the prediction table") {
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> u(0, 1);
  auto ce = [](const SoftLabelTable& t, const Matrix& q) {
    double s = 0;
    for (std::size_t i = 0; i < q.rows(); ++i)
      for (std::size_t y = 0; y < q.cols(); ++y) s -= t.probs(i, y) * std::log(q(i, y));
    return s / static_cast<double>(q.rows());
  };
  for (int trial = 0; trial < 50; ++trial) {
    const SoftLabelTable t = testing::random_soft_table(6, 4, rng);
    const Matrix q1 = testing::random_soft_table(6, 4, rng).probs;
    const Matrix q2 = testing::random_soft_table(6, 4, rng).probs;
    const double a = u(rng);
    Matrix mix(6, 4);
    for (std::size_t k = 0; k < mix.size(); ++k) mix.data()[k] = a * q1.data()[k] + (1 - a) * q2.data()[k];
    CHECK(ce(t, mix) <= a * ce(t, q1) + (1 - a) * ce(t, q2) + 1e-12);
  }
}

TEST_CASE("analytic gradients match finite differences") {
  const double tau = 0.1;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Instance in = random_instance(1000 + s, s % 2 == 1);
    const BatchView b = in.batch();
    const LossVariant both;

    auto g1 = testing::check_gradient(in.params, erm_ce_loss(in.params, b, tau).grad,
                                      [&](const TrainableParams& p) { return erm_ce_loss(p, b, tau).loss; });
    auto g2 = testing::check_gradient(in.params, erm_contrastive_loss(in.params, b, tau).grad,
                                      [&](const TrainableParams& p) { return erm_contrastive_loss(p, b, tau).loss; });
    auto g3 = testing::check_gradient(in.params, wrm_ce_loss(in.params, b, in.soft, tau).grad,
                                      [&](const TrainableParams& p) { return wrm_ce_loss(p, b, in.soft, tau).loss; });
    auto g4 = testing::check_gradient(
        in.params, drm_loss(in.params, b, &in.soft, 0.7, ErmKind::kContrastive, both, tau).grad,
        [&](const TrainableParams& p) {
          return drm_loss(p, b, &in.soft, 0.7, ErmKind::kContrastive, both, tau, false).breakdown.total;
        });
    for (const auto& g : {g1, g2, g3, g4}) {
      CHECK(g.max_rel_error <= 1e-5);
      worst = std::max(worst, g.max_rel_error);
    }
  }
  MESSAGE("worst relative error " << worst);
}
