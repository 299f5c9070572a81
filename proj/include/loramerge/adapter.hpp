// Copyright 2026 The loramerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fnmatch.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "loramerge/error.hpp"
#include "loramerge/layer_delta.hpp"
#include "loramerge/linalg.hpp"
#include "loramerge/tensor_file.hpp"

namespace loramerge {

inline constexpr std::string_view kUpSuffix = ".lora_up.weight";
inline constexpr std::string_view kDownSuffix = ".lora_down.weight";
inline constexpr std::string_view kAlphaSuffix = ".alpha";
inline constexpr std::string_view kDeltaSuffix = ".delta.weight";
inline constexpr std::string_view kBaseSuffix = ".weight";
inline constexpr std::string_view kConceptKey = "concept_id";

/// One low-rank factor pair. `up` plays the role of W_in (d_out x r) and
/// `down` of W_out (r x d_in); the layer contributes (alpha / r) * up * down.
struct LoraLayer {
  std::string layer_id;
  Matrix up;
  Matrix down;
  double alpha = 1.0;
  DType up_dtype = DType::F32;
  DType down_dtype = DType::F32;

  Index rank() const { return up.cols(); }
  Index d_out() const { return up.rows(); }
  Index d_in() const { return down.cols(); }
  double scale() const { return alpha / static_cast<double>(rank()); }
  Matrix effective_delta() const { return scale() * (up * down); }

  bool operator==(const LoraLayer& o) const {
    return layer_id == o.layer_id && up.rows() == o.up.rows() && up.cols() == o.up.cols() &&
           down.rows() == o.down.rows() && down.cols() == o.down.cols() && up == o.up && down == o.down &&
           alpha == o.alpha && up_dtype == o.up_dtype && down_dtype == o.down_dtype;
  }
};

struct LoraAdapter {
  std::string concept_id;
  std::map<std::string, LoraLayer> layers;
  std::map<std::string, std::string> metadata;

  bool has_layer(const std::string& id) const { return layers.count(id) != 0; }

  const LoraLayer& layer(const std::string& id) const {
    auto it = layers.find(id);
    if (it == layers.end()) throw Error(ErrorCode::UnknownLayer, "adapter '" + concept_id + "' has no layer '" + id + "'");
    return it->second;
  }

  bool operator==(const LoraAdapter&) const = default;
};

/// Frozen base weights W, one d_out x d_in matrix per layer.
struct BaseWeights {
  std::map<std::string, Matrix> layers;

  const Matrix& layer(const std::string& id) const {
    auto it = layers.find(id);
    if (it == layers.end()) throw Error(ErrorCode::BaseMissingLayer, "base weights have no layer '" + id + "'");
    return it->second;
  }
};

namespace detail {

inline bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() > suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

inline std::string strip(std::string_view s, std::string_view suffix) {
  return std::string(s.substr(0, s.size() - suffix.size()));
}

inline void validate_layer(const LoraLayer& l) {
  const Index r = l.up.cols();
  if (l.down.rows() != r) {
    throw Error(ErrorCode::ShapeMismatch, "layer '" + l.layer_id + "': up is " + shape_string(l.up) + " but down is " +
                                              shape_string(l.down));
  }
  if (r < 1 || r > std::min(l.up.rows(), l.down.cols())) {
    throw Error(ErrorCode::ShapeMismatch, "layer '" + l.layer_id + "': rank " + std::to_string(r) +
                                              " outside [1, min(d_out, d_in)]");
  }
  if (!std::isfinite(l.alpha)) throw Error(ErrorCode::NonFinite, "layer '" + l.layer_id + "': alpha is not finite");
  if (l.alpha <= 0.0) throw Error(ErrorCode::InvalidValue, "layer '" + l.layer_id + "': alpha must be positive");
  if (!all_finite(l.up) || !all_finite(l.down)) {
    throw Error(ErrorCode::NonFinite, "layer '" + l.layer_id + "' contains NaN or Inf");
  }
}

}  // namespace detail

/// Collects every `{layer}.lora_up.weight` / `{layer}.lora_down.weight`
/// pair. Unrelated tensors are ignored.
inline LoraAdapter adapter_from_file(const TensorFile& file, std::string concept_id) {
  LoraAdapter adapter;
  adapter.metadata = file.metadata;
  if (auto it = adapter.metadata.find(std::string(kConceptKey)); it != adapter.metadata.end()) {
    adapter.concept_id = it->second;
    adapter.metadata.erase(it);
  } else {
    adapter.concept_id = std::move(concept_id);
  }

  std::map<std::string, const TensorRecord*> ups, downs, alphas;
  for (const auto& [name, rec] : file.tensors) {
    if (detail::ends_with(name, kUpSuffix)) {
      ups[detail::strip(name, kUpSuffix)] = &rec;
    } else if (detail::ends_with(name, kDownSuffix)) {
      downs[detail::strip(name, kDownSuffix)] = &rec;
    } else if (detail::ends_with(name, kAlphaSuffix)) {
      alphas[detail::strip(name, kAlphaSuffix)] = &rec;
    }
  }
  for (const auto& [id, rec] : ups) {
    if (!downs.count(id)) throw Error(ErrorCode::OrphanTensor, "'" + rec->name + "' has no matching down tensor");
  }
  for (const auto& [id, rec] : downs) {
    if (!ups.count(id)) throw Error(ErrorCode::OrphanTensor, "'" + rec->name + "' has no matching up tensor");
  }
  for (const auto& [id, rec] : alphas) {
    if (!ups.count(id)) throw Error(ErrorCode::OrphanTensor, "'" + rec->name + "' has no matching up/down pair");
  }

  for (const auto& [id, up_rec] : ups) {
    const TensorRecord* down_rec = downs.at(id);
    if (up_rec->shape.size() != 2 || down_rec->shape.size() != 2) {
      throw Error(ErrorCode::ShapeMismatch, "layer '" + id + "': up and down must be 2-d");
    }
    LoraLayer layer;
    layer.layer_id = id;
    layer.up = record_matrix(*up_rec);
    layer.down = record_matrix(*down_rec);
    layer.up_dtype = up_rec->dtype;
    layer.down_dtype = down_rec->dtype;
    if (layer.up.cols() != layer.down.rows()) {
      throw Error(ErrorCode::ShapeMismatch, "layer '" + id + "': up is " + shape_string(layer.up) +
                                                " but down is " + shape_string(layer.down));
    }
    auto a = alphas.find(id);
    layer.alpha = a != alphas.end() ? record_scalar(*a->second) : static_cast<double>(layer.rank());
    detail::validate_layer(layer);
    adapter.layers.emplace(id, std::move(layer));
  }
  return adapter;
}

inline LoraAdapter load_adapter(const std::filesystem::path& path) {
  return adapter_from_file(read_tensor_file(path), path.stem().string());
}

inline TensorFile adapter_to_file(const LoraAdapter& adapter) {
  TensorFile file;
  file.metadata = adapter.metadata;
  file.metadata[std::string(kConceptKey)] = adapter.concept_id;
  for (const auto& [id, layer] : adapter.layers) {
    detail::validate_layer(layer);
    file.add(matrix_record(id + std::string(kUpSuffix), layer.up, layer.up_dtype));
    file.add(matrix_record(id + std::string(kDownSuffix), layer.down, layer.down_dtype));
    file.add(scalar_record(id + std::string(kAlphaSuffix), layer.alpha));
  }
  return file;
}

inline void save_adapter(const LoraAdapter& adapter, const std::filesystem::path& path) {
  write_tensor_file(path, adapter_to_file(adapter));
}

// ---------------------------------------------------------------------------
// Base weights
// ---------------------------------------------------------------------------

/// Base checkpoints store one `{layer}.weight` matrix per layer.
inline BaseWeights base_from_file(const TensorFile& file) {
  BaseWeights base;
  for (const auto& [name, rec] : file.tensors) {
    if (!detail::ends_with(name, kBaseSuffix) || rec.shape.size() != 2) continue;
    base.layers.emplace(detail::strip(name, kBaseSuffix), record_matrix(rec));
  }
  return base;
}

inline BaseWeights load_base(const std::filesystem::path& path) { return base_from_file(read_tensor_file(path)); }

inline void save_base(const BaseWeights& base, const std::filesystem::path& path) {
  TensorFile file;
  for (const auto& [id, w] : base.layers) file.add(matrix_record(id + std::string(kBaseSuffix), w));
  write_tensor_file(path, file);
}

// ---------------------------------------------------------------------------
// Compatibility planning
// ---------------------------------------------------------------------------

struct PlannedLayer {
  std::string layer_id;
  Index d_out = 0;
  Index d_in = 0;

  bool operator==(const PlannedLayer&) const = default;
};

struct SkippedLayer {
  std::string layer_id;
  std::string reason;

  bool operator==(const SkippedLayer&) const = default;
};

struct MergePlan {
  std::vector<PlannedLayer> layers;  // ascending layer_id
  std::vector<SkippedLayer> skipped;

  std::vector<std::string> layer_ids() const {
    std::vector<std::string> ids;
    for (const auto& l : layers) ids.push_back(l.layer_id);
    return ids;
  }
};

inline MergePlan validate_compatibility(const std::vector<LoraAdapter>& adapters, const BaseWeights* base = nullptr) {
  if (adapters.empty()) throw Error(ErrorCode::InvalidArgument, "no adapters given");

  std::map<std::string, std::size_t> presence;
  for (const auto& a : adapters) {
    for (const auto& [id, _] : a.layers) ++presence[id];
  }

  MergePlan plan;
  for (const auto& [id, count] : presence) {
    if (count != adapters.size()) {
      plan.skipped.push_back({id, "present in " + std::to_string(count) + " of " + std::to_string(adapters.size()) +
                                      " adapters"});
      continue;
    }
    const auto& first = adapters.front().layer(id);
    bool consistent = true;
    for (const auto& a : adapters) {
      const auto& l = a.layer(id);
      if (l.d_out() != first.d_out() || l.d_in() != first.d_in()) consistent = false;
    }
    if (!consistent) {
      plan.skipped.push_back({id, "incompatible shapes across adapters"});
      continue;
    }
    plan.layers.push_back({id, first.d_out(), first.d_in()});
  }
  if (plan.layers.empty()) throw Error(ErrorCode::EmptyIntersection, "adapters share no compatible layers");

  if (base != nullptr) {
    for (const auto& l : plan.layers) {
      const Matrix& w = base->layer(l.layer_id);
      if (w.rows() != l.d_out || w.cols() != l.d_in) {
        throw Error(ErrorCode::ShapeMismatch, "base layer '" + l.layer_id + "' is " + shape_string(w) +
                                                  ", adapters expect " + std::to_string(l.d_out) + "x" +
                                                  std::to_string(l.d_in));
      }
    }
  }
  return plan;
}

inline bool matches_glob(const std::string& pattern, const std::string& name) {
  return pattern.empty() || ::fnmatch(pattern.c_str(), name.c_str(), 0) == 0;
}

/// Keeps only layers whose id matches `pattern`; the rest move to `skipped`.
inline MergePlan filter_plan(MergePlan plan, const std::string& pattern) {
  if (pattern.empty()) return plan;
  MergePlan out;
  out.skipped = std::move(plan.skipped);
  for (auto& l : plan.layers) {
    if (matches_glob(pattern, l.layer_id)) {
      out.layers.push_back(std::move(l));
    } else {
      out.skipped.push_back({l.layer_id, "excluded by layer filter"});
    }
  }
  if (out.layers.empty()) throw Error(ErrorCode::EmptyIntersection, "no layer matches filter '" + pattern + "'");
  return out;
}

// ---------------------------------------------------------------------------
// Merged delta export
// ---------------------------------------------------------------------------

/// Best rank-k factorization of a dense delta: up = U_k * S_k, down = V_k^T.
struct TruncatedFactors {
  Matrix up;
  Matrix down;
  Vector singular_values;   // all of them, descending
  double relative_residual;  // ||delta - up*down||_F / ||delta||_F, from the discarded tail
};

inline TruncatedFactors truncate_delta(const Matrix& delta, Index rank) {
  const Index max_rank = std::min(delta.rows(), delta.cols());
  if (rank < 1) throw Error(ErrorCode::InvalidArgument, "export rank must be positive");
  if (rank > max_rank) {
    throw Error(ErrorCode::RankTooLarge, "rank " + std::to_string(rank) + " exceeds min(d_out, d_in) = " +
                                             std::to_string(max_rank));
  }
  Eigen::BDCSVD<Matrix> svd(delta, Eigen::ComputeThinU | Eigen::ComputeThinV);
  TruncatedFactors f;
  f.singular_values = svd.singularValues();
  f.up = svd.matrixU().leftCols(rank) * f.singular_values.head(rank).asDiagonal();
  f.down = svd.matrixV().leftCols(rank).transpose();
  const double total = f.singular_values.squaredNorm();
  const double tail = f.singular_values.tail(max_rank - rank).squaredNorm();
  f.relative_residual = total > 0.0 ? std::sqrt(tail / total) : 0.0;
  return f;
}

struct ExportResult {
  TensorFile file;
  std::map<std::string, double> relative_residuals;  // empty for dense export
};

inline ExportResult export_merged(const DeltaMap& deltas, std::optional<Index> export_rank = std::nullopt) {
  ExportResult out;
  for (const auto& [id, d] : deltas) {
    if (!all_finite(d.weight)) throw Error(ErrorCode::NonFinite, "delta for layer '" + id + "' is not finite");
    if (!export_rank) {
      out.file.add(matrix_record(id + std::string(kDeltaSuffix), d.weight));
      continue;
    }
    auto f = truncate_delta(d.weight, *export_rank);
    out.file.add(matrix_record(id + std::string(kUpSuffix), f.up));
    out.file.add(matrix_record(id + std::string(kDownSuffix), f.down));
    // alpha = k makes the stored scale exactly 1
    out.file.add(scalar_record(id + std::string(kAlphaSuffix), static_cast<double>(*export_rank)));
    out.relative_residuals[id] = f.relative_residual;
  }
  return out;
}

/// Dense export writes `{layer}.delta.weight`; a rank writes an adapter with
/// alpha = rank so that up * down is the effective delta.
inline std::filesystem::path save_merged(const DeltaMap& deltas, const std::filesystem::path& path,
                                         std::optional<Index> export_rank = std::nullopt,
                                         std::map<std::string, std::string> metadata = {}) {
  auto result = export_merged(deltas, export_rank);
  result.file.metadata = std::move(metadata);
  write_tensor_file(path, result.file);
  return path;
}

/// Reads merged output in either layout: dense `.delta.weight` tensors or
/// up/down pairs (turned into their effective deltas).
inline DeltaMap deltas_from_file(const TensorFile& file) {
  DeltaMap deltas;
  TensorFile lora_part;
  lora_part.metadata = file.metadata;
  for (const auto& [name, rec] : file.tensors) {
    if (detail::ends_with(name, kDeltaSuffix)) {
      auto id = detail::strip(name, kDeltaSuffix);
      deltas[id] = LayerDelta{id, record_matrix(rec)};
    } else {
      lora_part.tensors.emplace(name, rec);
    }
  }
  const auto lora = adapter_from_file(lora_part, "merged");
  for (const auto& [id, layer] : lora.layers) {
    if (deltas.count(id)) {
      throw Error(ErrorCode::MalformedHeader, "layer '" + id + "' stored both densely and as factors");
    }
    deltas[id] = LayerDelta{id, layer.effective_delta()};
  }
  return deltas;
}

inline DeltaMap load_deltas(const std::filesystem::path& path) { return deltas_from_file(read_tensor_file(path)); }

}  // namespace loramerge
