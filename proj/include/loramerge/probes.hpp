// Copyright 2026 The loramerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>

#include "loramerge/adapter.hpp"
#include "loramerge/error.hpp"
#include "loramerge/layer_delta.hpp"
#include "loramerge/linalg.hpp"
#include "loramerge/random.hpp"
#include "loramerge/tensor_file.hpp"

namespace loramerge {

inline constexpr std::string_view kProbeSuffix = ".probes";

/// Input probes for one concept at one layer; each column is a probe x.
struct ProbeSet {
  std::string concept_id;
  std::string layer_id;
  Matrix inputs;  // d_in x n
  std::uint64_t seed = 0;

  Index count() const { return inputs.cols(); }
  Index dim() const { return inputs.rows(); }
};

/// Layer outputs for a concept's probes, one column per probe.
struct FeatureSet {
  std::string concept_id;
  std::string layer_id;
  Matrix values;  // d_out x n

  Index count() const { return values.cols(); }
};

inline ProbeSet sample_probes(const std::string& concept_id, const std::string& layer_id, Index d_in, Index n,
                              std::uint64_t seed) {
  if (d_in < 1 || n < 1) throw Error(ErrorCode::InvalidArgument, "probe dimensions must be positive");
  const rng::GaussianStream stream(rng::stream_key(seed, "probes", concept_id, layer_id));
  return ProbeSet{concept_id, layer_id, stream.matrix(d_in, n), seed};
}

namespace detail {

inline void check_probe_dim(const ProbeSet& probes, Index d_in, const std::string& what) {
  if (probes.dim() != d_in) {
    throw Error(ErrorCode::ShapeMismatch, what + ": probes have dimension " + std::to_string(probes.dim()) +
                                              ", layer expects " + std::to_string(d_in));
  }
}

}  // namespace detail

/// Y = delta_i * X, or (W + delta_i) * X when base weights are supplied.
inline FeatureSet target_features(const LoraAdapter& adapter, const std::string& layer_id, const ProbeSet& probes,
                                  const BaseWeights* base = nullptr) {
  const LoraLayer& layer = adapter.layer(layer_id);
  detail::check_probe_dim(probes, layer.d_in(), "target_features");
  Matrix weight = layer.effective_delta();
  if (base != nullptr) {
    const Matrix& w = base->layer(layer_id);
    require_same_shape(w, weight, "base vs adapter layer '" + layer_id + "'");
    weight += w;
  }
  return FeatureSet{adapter.concept_id, layer_id, weight * probes.inputs};
}

/// Y_hat = dW * X, or (W + dW) * X when base weights are supplied.
inline FeatureSet predict_features(const LayerDelta& delta, const ProbeSet& probes, const BaseWeights* base = nullptr) {
  detail::check_probe_dim(probes, delta.cols(), "predict_features");
  if (base != nullptr) {
    const Matrix& w = base->layer(probes.layer_id);
    require_same_shape(w, delta.weight, "base vs delta layer '" + probes.layer_id + "'");
    return FeatureSet{probes.concept_id, probes.layer_id, (w + delta.weight) * probes.inputs};
  }
  return FeatureSet{probes.concept_id, probes.layer_id, delta.weight * probes.inputs};
}

// ---------------------------------------------------------------------------
// Externally supplied probes
// ---------------------------------------------------------------------------

/// Probes keyed by (concept_id, layer_id). Lookups that miss fall back to
/// Gaussian sampling in the merge driver.
class ProbeBank {
 public:
  void insert(ProbeSet probes) {
    auto key = std::make_pair(probes.concept_id, probes.layer_id);
    sets_.insert_or_assign(std::move(key), std::move(probes));
  }

  const ProbeSet* find(const std::string& concept_id, const std::string& layer_id) const {
    auto it = sets_.find({concept_id, layer_id});
    return it == sets_.end() ? nullptr : &it->second;
  }

  bool empty() const { return sets_.empty(); }
  std::size_t size() const { return sets_.size(); }

 private:
  std::map<std::pair<std::string, std::string>, ProbeSet> sets_;
};

/// Reads `{layer}.probes` tensors (shape d_in x n) for one concept.
inline void add_probe_file(ProbeBank& bank, const TensorFile& file, const std::string& concept_id) {
  for (const auto& [name, rec] : file.tensors) {
    if (!detail::ends_with(name, kProbeSuffix)) continue;
    auto layer_id = detail::strip(name, kProbeSuffix);
    bank.insert(ProbeSet{concept_id, layer_id, record_matrix(rec), 0});
  }
}

inline void load_probe_file(ProbeBank& bank, const std::filesystem::path& path, const std::string& concept_id) {
  add_probe_file(bank, read_tensor_file(path), concept_id);
}

inline void save_probe_file(const std::map<std::string, ProbeSet>& per_layer, const std::filesystem::path& path) {
  TensorFile file;
  for (const auto& [layer_id, probes] : per_layer) {
    file.add(matrix_record(layer_id + std::string(kProbeSuffix), probes.inputs));
  }
  write_tensor_file(path, file);
}

}  // namespace loramerge
