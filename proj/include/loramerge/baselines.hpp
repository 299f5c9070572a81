// Copyright 2026 The loramerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Reference merges over effective (alpha-scaled) deltas: a convex
// combination in the style of federated averaging, and the plain sum.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "loramerge/adapter.hpp"
#include "loramerge/error.hpp"
#include "loramerge/layer_delta.hpp"

namespace loramerge {

namespace detail {

/// Layers present in every adapter; shape disagreement on any of them is an error.
inline std::vector<std::string> shared_layers_strict(const std::vector<LoraAdapter>& adapters) {
  if (adapters.empty()) throw Error(ErrorCode::InvalidArgument, "no adapters given");
  std::vector<std::string> shared;
  for (const auto& [id, first] : adapters.front().layers) {
    bool everywhere = true;
    for (const auto& a : adapters) {
      if (!a.has_layer(id)) {
        everywhere = false;
        break;
      }
      const auto& l = a.layer(id);
      if (l.d_out() != first.d_out() || l.d_in() != first.d_in()) {
        throw Error(ErrorCode::ShapeMismatch, "layer '" + id + "' differs in shape across adapters");
      }
    }
    if (everywhere) shared.push_back(id);
  }
  if (shared.empty()) throw Error(ErrorCode::EmptyIntersection, "adapters share no layers");
  return shared;
}

}  // namespace detail

inline DeltaMap weighted_average_merge(const std::vector<LoraAdapter>& adapters,
                                       std::optional<std::vector<double>> weights = std::nullopt) {
  const auto layers = detail::shared_layers_strict(adapters);
  const std::size_t n = adapters.size();
  std::vector<double> w = weights.value_or(std::vector<double>(n, 1.0 / static_cast<double>(n)));
  if (w.size() != n) throw Error(ErrorCode::BadWeights, "need one weight per adapter");
  double sum = 0.0;
  for (double v : w) {
    if (!std::isfinite(v)) throw Error(ErrorCode::BadWeights, "weights must be finite");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error(ErrorCode::BadWeights, "weights must sum to 1");

  DeltaMap out;
  for (const auto& id : layers) {
    Matrix acc = Matrix::Zero(adapters.front().layer(id).d_out(), adapters.front().layer(id).d_in());
    for (std::size_t j = 0; j < n; ++j) acc += w[j] * adapters[j].layer(id).effective_delta();
    out[id] = LayerDelta{id, std::move(acc)};
  }
  return out;
}

inline DeltaMap sum_merge(const std::vector<LoraAdapter>& adapters) {
  DeltaMap out;
  for (const auto& id : detail::shared_layers_strict(adapters)) {
    Matrix acc = Matrix::Zero(adapters.front().layer(id).d_out(), adapters.front().layer(id).d_in());
    for (const auto& a : adapters) acc += a.layer(id).effective_delta();
    out[id] = LayerDelta{id, std::move(acc)};
  }
  return out;
}

}  // namespace loramerge
