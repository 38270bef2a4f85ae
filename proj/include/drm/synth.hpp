// SPDX-License-Identifier: Apache-2.0
//
// Synthetic causal data: the label is a function of core latents, non-core
// latents are tied to the label through a per-domain confounding strength,
// and observations are a fixed linear mix of both plus Gaussian noise.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "drm/core.hpp"
#include "drm/errors.hpp"
#include "drm/matrix.hpp"

namespace drm::synth {

/// Parameters shared by every domain of a family: dimensions, prototypes,
/// the observation map and prompt construction. Everything derived from it
/// is a pure function of `world_seed`.
struct WorldSpec {
  int n_classes = 5;
  int dim_core = 8;
  int dim_noncore = 8;
  int dim_obs = 32;
  std::uint64_t world_seed = 1;
  double core_jitter = 0.5;     // norm scale of Gaussian jitter around a clear core prototype
  double noncore_jitter = 0.3;  // same for the non-core prototype
  double alpha_core = 1.0;      // core weight in default-prompt rows
  double alpha_nc = 0.5;        // non-core weight in default-prompt rows
  double artifact_strength = 0.0;  // shared image component along the artifact direction
  double artifact_spread = 0.0;    // per-class artifact offsets drawn from U[0, spread]

  void check() const {
    if (n_classes < 2) throw ConfigError("synth: n_classes must be >= 2");
    if (dim_core < 1 || dim_noncore < 1) throw ConfigError("synth: latent dims must be >= 1");
    if (dim_obs < dim_core + dim_noncore + 1) {
      throw ConfigError("synth: dim_obs must be >= dim_core + dim_noncore + 1 (artifact axis)");
    }
    if (core_jitter < 0 || noncore_jitter < 0 || artifact_spread < 0) throw ConfigError("synth: negative scale");
  }
};

struct DomainSpec {
  std::string name = "d0";
  double clarity = 1.0;              // P(core latent is informative)
  double noncore_correlation = 0.0;  // ρ_d ∈ [-1, 1]
  double noise_scale = 0.0;          // σ_ε
  std::uint64_t seed = 0;

  void check() const {
    if (!(clarity >= 0.0 && clarity <= 1.0)) throw ConfigError("synth: clarity must be in [0,1]");
    if (!(noncore_correlation >= -1.0 && noncore_correlation <= 1.0)) {
      throw ConfigError("synth: noncore_correlation must be in [-1,1]");
    }
    if (!(noise_scale >= 0.0)) throw ConfigError("synth: noise_scale must be >= 0");
  }
};

struct DomainFamily {
  std::vector<DomainSpec> specs;
  std::vector<double> weights;
  std::size_t train_index = 0;

  void check() const {
    if (specs.empty() || specs.size() != weights.size()) throw ConfigError("synth: family specs/weights mismatch");
    double s = 0.0;
    for (double w : weights) {
      if (!(w > 0.0)) throw ConfigError("synth: family weights must be strictly positive");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ConfigError("synth: family weights must sum to 1");
    if (train_index >= specs.size()) throw ConfigError("synth: train_index out of range");
    for (const auto& d : specs) d.check();
  }
};

/// Materialized world: prototypes, observation map and artifact offsets.
struct World {
  WorldSpec spec;
  Matrix core_protos;     // C × k_c, unit rows
  Matrix noncore_protos;  // C × k_n, unit rows
  Matrix mix;             // D × (k_c + k_n + 1), orthonormal columns
  std::vector<double> artifact_offsets;  // per class

  std::size_t latent_dim() const { return mix.cols(); }
  std::size_t core_offset() const { return 0; }
  std::size_t noncore_offset() const { return static_cast<std::size_t>(spec.dim_core); }
  std::size_t artifact_index() const { return static_cast<std::size_t>(spec.dim_core + spec.dim_noncore); }

  /// mix · latent
  std::vector<double> observe(std::span<const double> latent) const {
    std::vector<double> x(mix.rows());
    matvec(mix, latent, x);
    return x;
  }
};

namespace detail {

inline void random_unit_rows(Matrix& m, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (double& v : m.row(r)) v = n01(rng);
    l2_normalize_inplace(m.row(r));
  }
}

/// D×k matrix with orthonormal columns via modified Gram-Schmidt.
inline Matrix random_orthonormal_columns(std::size_t d, std::size_t k, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<std::vector<double>> cols;
  while (cols.size() < k) {
    std::vector<double> v(d);
    for (double& x : v) x = n01(rng);
    for (const auto& u : cols) {
      const double p = dot(v, u);
      for (std::size_t i = 0; i < d; ++i) v[i] -= p * u[i];
    }
    const double n = l2_norm(v);
    if (n < 1e-8) continue;
    for (double& x : v) x /= n;
    cols.push_back(std::move(v));
  }
  Matrix m(d, k);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t r = 0; r < d; ++r) m(r, c) = cols[c][r];
  }
  return m;
}

inline double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace detail

inline World make_world(const WorldSpec& spec) {
  spec.check();
  std::mt19937_64 rng(spec.world_seed);
  World w;
  w.spec = spec;
  const auto c = static_cast<std::size_t>(spec.n_classes);
  w.core_protos = Matrix(c, static_cast<std::size_t>(spec.dim_core));
  w.noncore_protos = Matrix(c, static_cast<std::size_t>(spec.dim_noncore));
  detail::random_unit_rows(w.core_protos, rng);
  detail::random_unit_rows(w.noncore_protos, rng);
  w.mix = detail::random_orthonormal_columns(static_cast<std::size_t>(spec.dim_obs),
                                             static_cast<std::size_t>(spec.dim_core + spec.dim_noncore + 1), rng);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  w.artifact_offsets.resize(c);
  for (double& b : w.artifact_offsets) b = spec.artifact_spread * u01(rng);
  return w;
}

/// Per-sample latent bookkeeping, used by oracles in tests.
struct DomainSample {
  LabeledDataset data;
  std::vector<bool> clear;          // core latent informative
  std::vector<int> noncore_class;   // class whose non-core prototype was used
  Matrix latents;                   // N × latent_dim
};

inline DomainSample generate_domain_detailed(const World& world, const DomainSpec& spec, std::size_t n,
                                             Split split = Split::kTrain) {
  spec.check();
  if (n < 1) throw ConfigError("synth: n must be >= 1");
  const WorldSpec& ws = world.spec;
  const auto c = static_cast<std::size_t>(ws.n_classes);
  const auto kc = static_cast<std::size_t>(ws.dim_core);
  const auto kn = static_cast<std::size_t>(ws.dim_noncore);
  const auto d = static_cast<std::size_t>(ws.dim_obs);

  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> pick_class(0, ws.n_classes - 1);
  std::uniform_int_distribution<int> pick_other(0, ws.n_classes - 2);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  const double p_match = (1.0 + spec.noncore_correlation) / 2.0;

  DomainSample out;
  out.latents = Matrix(n, world.latent_dim());
  Matrix x(n, d);
  out.data.labels.resize(n);
  out.clear.resize(n);
  out.noncore_class.resize(n);
  std::vector<std::string> ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = pick_class(rng);
    const bool clear = u01(rng) < spec.clarity;
    int yn = y;
    if (!(u01(rng) < p_match)) {
      yn = pick_other(rng);
      if (yn >= y) ++yn;
    }
    auto lat = out.latents.row(i);
    const double cj = ws.core_jitter / std::sqrt(static_cast<double>(kc));
    for (std::size_t k = 0; k < kc; ++k) {
      const double noise = n01(rng);
      lat[k] = clear ? world.core_protos(static_cast<std::size_t>(y), k) + cj * noise
                     : noise / std::sqrt(static_cast<double>(kc));
    }
    const double nj = ws.noncore_jitter / std::sqrt(static_cast<double>(kn));
    for (std::size_t k = 0; k < kn; ++k) {
      lat[kc + k] = world.noncore_protos(static_cast<std::size_t>(yn), k) + nj * n01(rng);
    }
    lat[world.artifact_index()] = ws.artifact_strength;
    auto obs = world.observe(lat);
    for (double& v : obs) v += spec.noise_scale * n01(rng);
    l2_normalize_inplace(obs);
    for (std::size_t k = 0; k < d; ++k) x(i, k) = detail::round_f32(obs[k]);
    out.data.labels[i] = y;
    out.clear[i] = clear;
    out.noncore_class[i] = yn;
    ids[i] = spec.name + "/" + std::to_string(i);
  }
  out.data.bank = EmbeddingBank(std::move(x), std::move(ids));
  out.data.n_classes = ws.n_classes;
  out.data.split = split;
  out.data.domain_tags.assign(n, spec.name);
  for (int y = 0; y < ws.n_classes; ++y) out.data.class_names.push_back("class" + std::to_string(y));
  (void)c;
  return out;
}

inline LabeledDataset generate_domain(const World& world, const DomainSpec& spec, std::size_t n,
                                      Split split = Split::kTrain) {
  return generate_domain_detailed(world, spec, n, split).data;
}

/// Mixture test set: each domain contributes round(weight·n) examples (the
/// last domain takes the remainder), tagged with its name.
inline LabeledDataset generate_family_mixture(const World& world, const DomainFamily& fam, std::size_t n,
                                              Split split = Split::kOodTest) {
  fam.check();
  LabeledDataset out;
  Matrix x;
  std::vector<std::string> ids;
  std::size_t used = 0;
  std::vector<std::pair<std::size_t, std::size_t>> counts;
  for (std::size_t k = 0; k < fam.specs.size(); ++k) {
    const std::size_t nk = k + 1 == fam.specs.size()
                               ? n - used
                               : static_cast<std::size_t>(std::llround(fam.weights[k] * static_cast<double>(n)));
    used += nk;
    counts.emplace_back(k, nk);
  }
  std::vector<double> flat;
  for (auto [k, nk] : counts) {
    if (nk == 0) continue;
    const LabeledDataset part = generate_domain(world, fam.specs[k], nk, split);
    flat.insert(flat.end(), part.bank.vectors().data().begin(), part.bank.vectors().data().end());
    ids.insert(ids.end(), part.bank.ids().begin(), part.bank.ids().end());
    out.labels.insert(out.labels.end(), part.labels.begin(), part.labels.end());
    out.domain_tags.insert(out.domain_tags.end(), part.domain_tags.begin(), part.domain_tags.end());
    out.class_names = part.class_names;
  }
  x = Matrix(out.labels.size(), static_cast<std::size_t>(world.spec.dim_obs));
  x.data() = std::move(flat);
  out.bank = EmbeddingBank(std::move(x), std::move(ids));
  out.n_classes = world.spec.n_classes;
  out.split = split;
  return out;
}

struct PromptHeads {
  ClassifierHead df;
  ClassifierHead cd;
};

/// Concept-description rows see only the core prototype (plus the class's
/// artifact offset); default-prompt rows mix in the non-core prototype.
inline PromptHeads make_prompt_embeddings(const World& world, double tau) {
  const WorldSpec& ws = world.spec;
  const auto c = static_cast<std::size_t>(ws.n_classes);
  const auto kc = static_cast<std::size_t>(ws.dim_core);
  const auto kn = static_cast<std::size_t>(ws.dim_noncore);
  Matrix df(c, static_cast<std::size_t>(ws.dim_obs));
  Matrix cd(c, static_cast<std::size_t>(ws.dim_obs));
  for (std::size_t y = 0; y < c; ++y) {
    std::vector<double> lat_cd(world.latent_dim(), 0.0);
    std::vector<double> lat_df(world.latent_dim(), 0.0);
    for (std::size_t k = 0; k < kc; ++k) {
      lat_cd[k] = world.core_protos(y, k);
      lat_df[k] = ws.alpha_core * world.core_protos(y, k);
    }
    for (std::size_t k = 0; k < kn; ++k) lat_df[kc + k] = ws.alpha_nc * world.noncore_protos(y, k);
    lat_cd[world.artifact_index()] = world.artifact_offsets[y];
    auto cd_row = l2_normalize(world.observe(lat_cd));
    auto df_row = l2_normalize(world.observe(lat_df));
    for (std::size_t k = 0; k < cd_row.size(); ++k) {
      cd(y, k) = detail::round_f32(cd_row[k]);
      df(y, k) = detail::round_f32(df_row[k]);
    }
  }
  return {ClassifierHead(std::move(df), tau, PromptKind::kDf), ClassifierHead(std::move(cd), tau, PromptKind::kCd)};
}

}  // namespace drm::synth
