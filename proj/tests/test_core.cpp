#include "doctest.h"

#include <cstring>
#include <fstream>

#include "drm/core.hpp"
#include "drm/emb_format.hpp"
#include "support.hpp"

using namespace drm;

TEST_CASE("l2 normalize") {
  CHECK(l2_normalize(std::vector<double>{0, 2, 0}) == std::vector<double>{0, 1, 0});
  const auto v = l2_normalize(std::vector<double>{3, 4});
  CHECK(v[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(v[1] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK_THROWS_AS(l2_normalize(std::vector<double>{0, 0}), DomainError);
}

TEST_CASE("bank roundtrip is bit exact for normalized rows") {
  std::mt19937_64 rng(3);
  Matrix m = testing::random_unit_rows(3, 4, rng);
  for (double& v : m.data()) v = static_cast<float>(v);
  const EmbeddingBank bank(m, {"a", "b", "c"});
  const auto dir = testing::scratch_dir("core_roundtrip");
  save_embedding_bank((dir / "b.emb").string(), bank);
  const EmbeddingBank back = load_embedding_bank((dir / "b.emb").string());
  CHECK(back.ids() == bank.ids());
  CHECK(testing::bitwise_equal(back.vectors(), bank.vectors()));
}

TEST_CASE("loading re-normalizes an off-norm row") {
  Emb1Container c;
  c.count = 1;
  c.dim = 4;
  c.values = {3, 4, 0, 0};
  c.trailer["ids"] = {"r"};
  const EmbeddingBank b = bank_from_container(c);
  CHECK(b.row(0)[0] == doctest::Approx(0.6));
  CHECK(b.row(0)[1] == doctest::Approx(0.8));
  CHECK(std::abs(l2_norm(b.row(0)) - 1.0) <= 1e-12);
}

TEST_CASE("container errors") {
  Emb1Container c;
  c.count = 2;
  c.dim = 2;
  c.values = {1, 0, 0, 1};
  std::string bytes = encode_emb1(c);
  CHECK_NOTHROW(decode_emb1(bytes));

  std::string wrong_magic = bytes;
  wrong_magic[3] = '2';
  CHECK_THROWS_AS(decode_emb1(wrong_magic), FormatError);

  // header claims 3 rows, payload has 2
  std::string short_payload = bytes;
  short_payload[4] = 3;
  CHECK_THROWS_AS(decode_emb1(short_payload), CorruptionError);

  CHECK_THROWS_AS(decode_emb1(bytes.substr(0, 8)), FormatError);

  Emb1Container z;
  z.count = 1;
  z.dim = 2;
  z.values = {0, 0};
  z.trailer["ids"] = {"z"};
  CHECK_THROWS_AS(bank_from_container(z), DataError);
}

TEST_CASE("duplicate ids are rejected") {
  CHECK_THROWS_AS(EmbeddingBank(Matrix(2, 2, 0.5), {"a", "a"}), DataError);
}

TEST_CASE("validate_dataset reports without mutating") {
  Matrix m(5, 2);
  for (std::size_t i = 0; i < 5; ++i) m(i, i % 2) = 1.0;
  LabeledDataset ds;
  ds.bank = EmbeddingBank(m, {"a", "b", "c", "d", "e"});
  ds.labels = {0, 0, 0, 1, 1};
  ds.n_classes = 2;
  const LabeledDataset before = ds;

  auto r = validate_dataset(ds);
  CHECK(r.class_counts == std::vector<std::size_t>{3, 2});
  CHECK(r.ok());
  CHECK(ds.bank == before.bank);
  CHECK(ds.labels == before.labels);

  ds.labels = {0, 0, 0, 0, 0};
  r = validate_dataset(ds);
  CHECK(r.empty_classes == std::vector<int>{1});

  Matrix bad = m;
  bad(2, 0) = 0.9;
  ds.bank = EmbeddingBank(bad, {"a", "b", "c", "d", "e"});
  r = validate_dataset(ds);
  REQUIRE(r.norm_violations.size() == 1);
  CHECK(r.norm_violations[0].id == "c");
  CHECK(r.norm_violations[0].norm == doctest::Approx(0.9));
}

TEST_CASE("labeled dataset roundtrip keeps tags and split") {
  std::mt19937_64 rng(9);
  Matrix m = testing::random_unit_rows(6, 5, rng);
  for (double& v : m.data()) v = static_cast<float>(v);
  LabeledDataset ds;
  ds.bank = EmbeddingBank(m, {"0", "1", "2", "3", "4", "5"});
  ds.labels = {0, 1, 2, 0, 1, 2};
  ds.n_classes = 3;
  ds.split = Split::kOodTest;
  ds.domain_tags = {"p", "p", "q", "q", "r", "r"};
  const auto dir = testing::scratch_dir("core_ds");
  save_labeled_dataset((dir / "d.emb").string(), ds);
  const LabeledDataset back = load_labeled_dataset((dir / "d.emb").string());
  CHECK(back.labels == ds.labels);
  CHECK(back.domain_tags == ds.domain_tags);
  CHECK(back.split == Split::kOodTest);
  CHECK(testing::bitwise_equal(back.bank.vectors(), m));
}

TEST_CASE("loaded banks are unit norm") {
  std::mt19937_64 rng(11);
  Emb1Container c;
  c.count = 50;
  c.dim = 7;
  std::normal_distribution<float> n(0.0f, 3.0f);
  for (std::size_t i = 0; i < 350; ++i) c.values.push_back(n(rng));
  for (int i = 0; i < 50; ++i) c.trailer["ids"].push_back(std::to_string(i));
  const EmbeddingBank b = bank_from_container(c);
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(std::abs(l2_norm(b.row(i)) - 1.0) <= 1e-4);
}
