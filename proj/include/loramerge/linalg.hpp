// Copyright 2026 The loramerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>

#include "loramerge/error.hpp"

namespace loramerge {

// All arithmetic runs in double. Files store f32/f16 and are widened on load.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline std::string shape_string(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const std::string& what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::ShapeMismatch, what + ": " + shape_string(a) + " vs " + shape_string(b));
  }
}

inline double relative_frobenius_error(const Matrix& approx, const Matrix& reference, double eps = 1e-300) {
  return (approx - reference).norm() / std::max(reference.norm(), eps);
}

}  // namespace loramerge
