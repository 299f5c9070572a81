// Copyright 2026 The loramerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "loramerge/loramerge.hpp"

namespace loramerge::testing {

namespace fs = std::filesystem;

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("loramerge_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

inline Matrix gaussian(std::mt19937_64& gen, Index rows, Index cols, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) m(i, j) = dist(gen);
  }
  return m;
}

inline LoraLayer random_layer(std::mt19937_64& gen, const std::string& id, Index d_out, Index d_in, Index rank,
                              double alpha, double stddev = 1.0) {
  LoraLayer l;
  l.layer_id = id;
  l.up = gaussian(gen, d_out, rank, stddev);
  l.down = gaussian(gen, rank, d_in, stddev);
  l.alpha = alpha;
  return l;
}

/// One adapter holding the same layer layout as every other one built with
/// the same `layers`.
inline LoraAdapter random_adapter(std::mt19937_64& gen, const std::string& concept_id,
                                  const std::vector<std::tuple<std::string, Index, Index>>& layers, Index rank,
                                  double stddev = 1.0) {
  LoraAdapter a;
  a.concept_id = concept_id;
  for (const auto& [id, d_out, d_in] : layers) {
    a.layers.emplace(id, random_layer(gen, id, d_out, d_in, rank, static_cast<double>(rank), stddev));
  }
  return a;
}

inline FeatureSet features(const std::string& concept_id, Matrix values) {
  return FeatureSet{concept_id, "l", std::move(values)};
}

/// Straight loop transcription of the objective, used as an oracle for the
/// vectorized implementation. `w` may be null (delta-only).
inline double brute_force_loss(const std::vector<Matrix>& deltas_i, const std::vector<Matrix>& probes,
                               const Matrix& delta, const Matrix* w, double margin, double lambda) {
  const std::size_t concepts = deltas_i.size();
  const Index n = probes.front().cols();
  const Index d_out = delta.rows();
  auto apply = [&](const Matrix& m, const Matrix& x, Index k) {
    std::vector<double> y(static_cast<std::size_t>(d_out), 0.0);
    for (Index r = 0; r < d_out; ++r) {
      double s = 0.0;
      for (Index c = 0; c < x.rows(); ++c) s += (m(r, c) + (w ? (*w)(r, c) : 0.0)) * x(c, k);
      y[static_cast<std::size_t>(r)] = s;
    }
    return y;
  };
  auto dist = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t t = 0; t < a.size(); ++t) s += (a[t] - b[t]) * (a[t] - b[t]);
    return std::sqrt(s);
  };

  double sum = 0.0;
  for (std::size_t i = 0; i < concepts; ++i) {
    for (Index k = 0; k < n; ++k) {
      const auto y = apply(deltas_i[i], probes[i], k);
      const auto yhat = apply(delta, probes[i], k);
      const double dp = dist(y, yhat);
      sum += dp * dp;
      if (concepts == 1) continue;
      double dn = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < concepts; ++j) {
        if (j == i) continue;
        dn = std::min(dn, dist(y, apply(delta, probes[j], k)));
      }
      const double gap = std::max(0.0, margin - dn);
      sum += gap * gap;
    }
  }
  double fro = 0.0;
  for (Index r = 0; r < delta.rows(); ++r) {
    for (Index c = 0; c < delta.cols(); ++c) fro += delta(r, c) * delta(r, c);
  }
  return sum / (static_cast<double>(concepts) * static_cast<double>(n)) + lambda * std::sqrt(fro);
}

/// Distance of an evaluation point to the non-smooth set of the objective:
/// the smaller of min |d_n - m| and the gap between the two nearest
/// negatives (an argmin switch). Large values mean finite differences are
/// valid there.
inline double kink_distance(const std::vector<FeatureSet>& targets, const std::vector<ProbeSet>& probes,
                            const Matrix& delta, const Matrix* w, double margin) {
  const std::size_t concepts = targets.size();
  if (concepts < 2) return std::numeric_limits<double>::infinity();
  std::vector<Matrix> predicted;
  for (const auto& p : probes) predicted.push_back((w ? Matrix(delta + *w) : delta) * p.inputs);
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < concepts; ++i) {
    for (Index k = 0; k < targets[i].count(); ++k) {
      std::vector<double> d;
      for (std::size_t j = 0; j < concepts; ++j) {
        if (j != i) d.push_back((targets[i].values.col(k) - predicted[j].col(k)).norm());
      }
      std::sort(d.begin(), d.end());
      worst = std::min(worst, std::abs(d[0] - margin));
      if (d.size() > 1 && d[0] < margin) worst = std::min(worst, d[1] - d[0]);
    }
  }
  return worst;
}

}  // namespace loramerge::testing
