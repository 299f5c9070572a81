// Copyright 2026 The loramerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>

#include "loramerge/linalg.hpp"

namespace loramerge {

/// The dense additive update learned for one layer.
struct LayerDelta {
  std::string layer_id;
  Matrix weight;  // d_out x d_in

  Index rows() const { return weight.rows(); }
  Index cols() const { return weight.cols(); }

  bool operator==(const LayerDelta& other) const {
    return layer_id == other.layer_id && weight.rows() == other.weight.rows() &&
           weight.cols() == other.weight.cols() && weight == other.weight;
  }
};

using DeltaMap = std::map<std::string, LayerDelta>;

}  // namespace loramerge
