// SPDX-License-Identifier: Apache-2.0
//
// EMB1 container: little-endian
//   "EMB1" | u32 count | u32 dim | count*dim float32 (row-major) | u64 len | len bytes JSON
// The JSON trailer always carries "ids"; everything else is optional metadata.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "drm/core.hpp"
#include "drm/errors.hpp"

namespace drm {

using json = nlohmann::json;

struct Emb1Container {
  std::uint32_t count = 0;
  std::uint32_t dim = 0;
  std::vector<float> values;  // count * dim, row-major
  json trailer = json::object();
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline std::uint64_t get_le(const std::string& in, std::size_t pos, int nbytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < nbytes; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)])) << (8 * i);
  }
  return v;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to '" + path + "'");
}

}  // namespace detail

inline std::string encode_emb1(const Emb1Container& c) {
  if (c.values.size() != static_cast<std::size_t>(c.count) * c.dim) {
    throw ShapeError("EMB1: value count does not match count*dim");
  }
  std::string out = "EMB1";
  detail::put_u32(out, c.count);
  detail::put_u32(out, c.dim);
  out.reserve(out.size() + c.values.size() * 4 + 256);
  for (float f : c.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  const std::string trailer = c.trailer.dump();
  detail::put_u64(out, trailer.size());
  out += trailer;
  return out;
}

inline Emb1Container decode_emb1(const std::string& bytes) {
  if (bytes.size() < 12) throw FormatError("EMB1: truncated header");
  if (bytes.compare(0, 4, "EMB1") != 0) throw FormatError("EMB1: bad magic '" + bytes.substr(0, 4) + "'");
  Emb1Container c;
  c.count = static_cast<std::uint32_t>(detail::get_le(bytes, 4, 4));
  c.dim = static_cast<std::uint32_t>(detail::get_le(bytes, 8, 4));
  const std::uint64_t n_values = static_cast<std::uint64_t>(c.count) * c.dim;
  const std::uint64_t payload_end = 12 + n_values * 4;
  if (payload_end + 8 > bytes.size()) {
    throw CorruptionError("EMB1: header declares " + std::to_string(c.count) + "x" + std::to_string(c.dim) +
                          " floats but the payload is shorter");
  }
  c.values.resize(n_values);
  for (std::uint64_t i = 0; i < n_values; ++i) {
    c.values[i] = std::bit_cast<float>(static_cast<std::uint32_t>(detail::get_le(bytes, 12 + i * 4, 4)));
  }
  const std::uint64_t tlen = detail::get_le(bytes, payload_end, 8);
  if (payload_end + 8 + tlen != bytes.size()) {
    throw CorruptionError("EMB1: trailer length " + std::to_string(tlen) + " inconsistent with file size");
  }
  try {
    c.trailer = json::parse(bytes.substr(payload_end + 8));
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("EMB1: trailer is not valid JSON: ") + e.what());
  }
  if (!c.trailer.is_object()) throw FormatError("EMB1: trailer must be a JSON object");
  if (c.trailer.contains("ids")) {
    const auto& ids = c.trailer["ids"];
    if (!ids.is_array() || ids.size() != c.count) {
      throw CorruptionError("EMB1: trailer ids length does not match count");
    }
  }
  return c;
}

inline Emb1Container read_emb1(const std::string& path) { return decode_emb1(detail::read_file_bytes(path)); }
inline void write_emb1(const std::string& path, const Emb1Container& c) {
  detail::write_file_bytes(path, encode_emb1(c));
}

/// Rows of a matrix narrowed to float32 for storage.
inline std::vector<float> to_float_values(const Matrix& m) {
  std::vector<float> v(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) v[i] = static_cast<float>(m.data()[i]);
  return v;
}

inline Matrix to_matrix(const Emb1Container& c) {
  Matrix m(c.count, c.dim);
  for (std::size_t i = 0; i < c.values.size(); ++i) m.data()[i] = static_cast<double>(c.values[i]);
  return m;
}

inline std::vector<std::string> trailer_ids(const Emb1Container& c) {
  std::vector<std::string> ids;
  if (!c.trailer.contains("ids")) throw FormatError("EMB1: trailer has no ids");
  for (const auto& v : c.trailer["ids"]) {
    if (!v.is_string()) throw FormatError("EMB1: ids must be strings");
    ids.push_back(v.get<std::string>());
  }
  return ids;
}

inline Emb1Container bank_container(const EmbeddingBank& bank) {
  Emb1Container c;
  c.count = static_cast<std::uint32_t>(bank.size());
  c.dim = static_cast<std::uint32_t>(bank.dim());
  c.values = to_float_values(bank.vectors());
  c.trailer["ids"] = bank.ids();
  return c;
}

inline void save_embedding_bank(const std::string& path, const EmbeddingBank& bank) {
  write_emb1(path, bank_container(bank));
}

inline EmbeddingBank bank_from_container(const Emb1Container& c) {
  if (c.dim == 0) throw FormatError("EMB1: dim must be >= 1");
  return EmbeddingBank::ingest(to_matrix(c), trailer_ids(c));
}

/// Loads a bank, enforcing unit-norm rows (re-normalizing if off by > 1e-6).
inline EmbeddingBank load_embedding_bank(const std::string& path) { return bank_from_container(read_emb1(path)); }

inline Emb1Container dataset_container(const LabeledDataset& ds) {
  Emb1Container c = bank_container(ds.bank);
  c.trailer["labels"] = ds.labels;
  c.trailer["n_classes"] = ds.n_classes;
  c.trailer["split"] = std::string(to_string(ds.split));
  if (!ds.class_names.empty()) c.trailer["class_names"] = ds.class_names;
  if (!ds.domain_tags.empty()) c.trailer["domains"] = ds.domain_tags;
  return c;
}

inline void save_labeled_dataset(const std::string& path, const LabeledDataset& ds) {
  write_emb1(path, dataset_container(ds));
}

inline LabeledDataset dataset_from_container(const Emb1Container& c) {
  LabeledDataset ds;
  ds.bank = bank_from_container(c);
  if (!c.trailer.contains("labels")) throw DataError("EMB1: dataset file has no labels");
  ds.labels = c.trailer["labels"].get<std::vector<int>>();
  if (c.trailer.contains("class_names")) ds.class_names = c.trailer["class_names"].get<std::vector<std::string>>();
  if (c.trailer.contains("n_classes")) {
    ds.n_classes = c.trailer["n_classes"].get<int>();
  } else if (!ds.class_names.empty()) {
    ds.n_classes = static_cast<int>(ds.class_names.size());
  } else {
    int mx = -1;
    for (int y : ds.labels) mx = std::max(mx, y);
    ds.n_classes = mx + 1;
  }
  if (c.trailer.contains("domains")) ds.domain_tags = c.trailer["domains"].get<std::vector<std::string>>();
  if (c.trailer.contains("split")) ds.split = parse_split(c.trailer["split"].get<std::string>());
  ds.check();
  return ds;
}

inline LabeledDataset load_labeled_dataset(const std::string& path) {
  return dataset_from_container(read_emb1(path));
}

/// Heads are stored as banks whose trailer names the prompt kind.
inline void save_head(const std::string& path, const ClassifierHead& head) {
  Emb1Container c;
  c.count = static_cast<std::uint32_t>(head.n_classes());
  c.dim = static_cast<std::uint32_t>(head.dim());
  c.values = to_float_values(head.rows());
  std::vector<std::string> ids;
  for (std::size_t y = 0; y < head.n_classes(); ++y) ids.push_back(std::string(to_string(head.kind())) + "/" + std::to_string(y));
  c.trailer["ids"] = ids;
  c.trailer["prompt_kind"] = std::string(to_string(head.kind()));
  c.trailer["temperature"] = head.temperature();
  write_emb1(path, c);
}

inline ClassifierHead load_head(const std::string& path, std::optional<double> temperature = std::nullopt) {
  const Emb1Container c = read_emb1(path);
  EmbeddingBank bank = bank_from_container(c);
  PromptKind kind = PromptKind::kDf;
  if (c.trailer.contains("prompt_kind")) kind = parse_prompt_kind(c.trailer["prompt_kind"].get<std::string>());
  double tau = 0.01;
  if (c.trailer.contains("temperature")) tau = c.trailer["temperature"].get<double>();
  if (temperature) tau = *temperature;
  return ClassifierHead(bank.vectors(), tau, kind);
}

}  // namespace drm
