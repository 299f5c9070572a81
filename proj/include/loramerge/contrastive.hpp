// Copyright 2026 The loramerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Contrastive merge objective for one layer.
//
// For concepts i = 1..N with n probes each, targets y_{i,k} and predictions
// yhat_{i,k} = (W + dW) x_{i,k} (W = 0 in delta-only mode):
//
//   d_p(i,k) = || y_{i,k} - yhat_{i,k} ||
//   d_n(i,k) = min_{j != i} || y_{i,k} - yhat_{j,k} ||      (probe index matched)
//   L_c      = 1/(N n) * sum_{i,k} [ d_p^2 + max(0, m - d_n)^2 ]
//   L_delta  = lambda * ||dW||_F
//   L_total  = L_c + L_delta
//
// With a single concept the negative term is zero.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "loramerge/error.hpp"
#include "loramerge/layer_delta.hpp"
#include "loramerge/linalg.hpp"
#include "loramerge/probes.hpp"

namespace loramerge {

enum class FeatureMode { DeltaOnly, Full };
enum class Optimizer { GradientDescent, Adam };

constexpr std::string_view to_string(FeatureMode m) noexcept { return m == FeatureMode::Full ? "full" : "delta-only"; }
constexpr std::string_view to_string(Optimizer o) noexcept { return o == Optimizer::Adam ? "adam" : "gd"; }

struct MergeConfig {
  double margin = 0.5;
  double lambda_delta = 0.001;
  double learning_rate = 1e-4;
  std::size_t max_steps = 1000;
  std::optional<std::size_t> probe_count;  // unset: 4 * d_in
  std::uint64_t seed = 0;
  FeatureMode mode = FeatureMode::DeltaOnly;
  double epsilon = 1e-12;
  double plateau_tol = 1e-9;
  std::size_t plateau_window = 50;
  Optimizer optimizer = Optimizer::GradientDescent;

  std::size_t probes_for(Index d_in) const { return probe_count.value_or(4 * static_cast<std::size_t>(d_in)); }

  void validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, what); };
    if (!(margin >= 0.0) || !std::isfinite(margin)) fail("margin must be non-negative");
    if (!(lambda_delta >= 0.0) || !std::isfinite(lambda_delta)) fail("lambda_delta must be non-negative");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
    if (max_steps == 0) fail("max_steps must be positive");
    if (probe_count && *probe_count == 0) fail("probe_count must be positive");
    if (!(epsilon > 0.0)) fail("epsilon must be positive");
    if (!(plateau_tol >= 0.0)) fail("plateau_tol must be non-negative");
    if (plateau_window == 0) fail("plateau_window must be positive");
  }

  bool operator==(const MergeConfig&) const = default;
};

struct LossBreakdown {
  double positive_term = 0.0;
  double negative_term = 0.0;
  double penalty_term = 0.0;
  double total = 0.0;
  std::map<std::string, double> per_concept_positive_mean;

  bool operator==(const LossBreakdown&) const = default;
};

// ---------------------------------------------------------------------------
// Distances
// ---------------------------------------------------------------------------

inline Vector positive_distances(const FeatureSet& target, const FeatureSet& predicted) {
  require_same_shape(target.values, predicted.values, "positive_distances");
  return (target.values - predicted.values).colwise().norm().transpose();
}

struct NegativeDistances {
  Vector distance;                 // per probe
  std::vector<std::size_t> argmin;  // index into the `others` list
};

/// Minimum over the other concepts, probes matched by column. Ties go to the
/// lowest index.
inline NegativeDistances negative_distances(const FeatureSet& target, const std::vector<FeatureSet>& others) {
  if (others.empty()) throw Error(ErrorCode::NoNegatives, "negative distances need at least two concepts");
  const Index n = target.count();
  NegativeDistances out;
  out.distance = Vector::Constant(n, std::numeric_limits<double>::infinity());
  out.argmin.assign(static_cast<std::size_t>(n), 0);
  for (std::size_t j = 0; j < others.size(); ++j) {
    require_same_shape(target.values, others[j].values, "negative_distances");
    for (Index k = 0; k < n; ++k) {
      const double d = (target.values.col(k) - others[j].values.col(k)).norm();
      if (d < out.distance(k)) {
        out.distance(k) = d;
        out.argmin[static_cast<std::size_t>(k)] = j;
      }
    }
  }
  return out;
}

struct ContrastiveTerms {
  double positive_term = 0.0;
  double negative_term = 0.0;
  std::map<std::string, double> per_concept_positive_mean;

  double value() const { return positive_term + negative_term; }
};

inline ContrastiveTerms contrastive_loss(const std::vector<FeatureSet>& targets,
                                         const std::vector<FeatureSet>& predicted, double margin) {
  if (targets.empty() || targets.size() != predicted.size()) {
    throw Error(ErrorCode::ShapeMismatch, "contrastive_loss needs one prediction per target set");
  }
  const std::size_t concepts = targets.size();
  const Index n = targets.front().count();
  for (std::size_t i = 0; i < concepts; ++i) {
    if (targets[i].count() != n || predicted[i].count() != n) {
      throw Error(ErrorCode::ShapeMismatch, "all concepts must have the same number of probes");
    }
  }

  ContrastiveTerms terms;
  const double norm = 1.0 / (static_cast<double>(concepts) * static_cast<double>(n));
  for (std::size_t i = 0; i < concepts; ++i) {
    const Vector dp = positive_distances(targets[i], predicted[i]);
    terms.positive_term += norm * dp.squaredNorm();
    terms.per_concept_positive_mean[targets[i].concept_id] = dp.mean();
    if (concepts == 1) continue;

    std::vector<FeatureSet> others;
    others.reserve(concepts - 1);
    for (std::size_t j = 0; j < concepts; ++j) {
      if (j != i) others.push_back(predicted[j]);
    }
    const auto neg = negative_distances(targets[i], others);
    for (Index k = 0; k < n; ++k) {
      const double gap = std::max(0.0, margin - neg.distance(k));
      terms.negative_term += norm * gap * gap;
    }
  }
  return terms;
}

inline double delta_penalty(const LayerDelta& delta, double lambda_delta) {
  return lambda_delta == 0.0 ? 0.0 : lambda_delta * delta.weight.norm();
}

inline LossBreakdown total_loss(const MergeConfig& config, const std::vector<FeatureSet>& targets,
                                const std::vector<FeatureSet>& predicted, const LayerDelta& delta) {
  const auto terms = contrastive_loss(targets, predicted, config.margin);
  LossBreakdown out;
  out.positive_term = terms.positive_term;
  out.negative_term = terms.negative_term;
  out.penalty_term = delta_penalty(delta, config.lambda_delta);
  out.total = out.positive_term + out.negative_term + out.penalty_term;
  out.per_concept_positive_mean = terms.per_concept_positive_mean;
  return out;
}

// ---------------------------------------------------------------------------
// Objective with gradient
// ---------------------------------------------------------------------------

/// Probes and targets for every concept of one layer, packed side by side.
/// The positive part of the gradient is (W + dW) G - C with G = X X^T and
/// C = Y X^T fixed, so one evaluation costs a single GEMM for the
/// predictions, the O(N^2 n d_out) negative search, and rank-one corrections
/// for active hinge terms only.
class ContrastiveObjective {
 public:
  ContrastiveObjective(const MergeConfig& config, const std::vector<FeatureSet>& targets,
                       const std::vector<ProbeSet>& probes, const Matrix* base_weight = nullptr)
      : margin_(config.margin), lambda_(config.lambda_delta), epsilon_(config.epsilon) {
    if (targets.empty() || targets.size() != probes.size()) {
      throw Error(ErrorCode::ShapeMismatch, "objective needs one probe set per target set");
    }
    concepts_ = static_cast<Index>(targets.size());
    probes_ = probes.front().count();
    if (probes_ < 1) throw Error(ErrorCode::ShapeMismatch, "probe sets must not be empty");
    d_in_ = probes.front().dim();
    d_out_ = targets.front().values.rows();

    inputs_.resize(d_in_, concepts_ * probes_);
    targets_.resize(d_out_, concepts_ * probes_);
    for (Index i = 0; i < concepts_; ++i) {
      const auto& t = targets[static_cast<std::size_t>(i)];
      const auto& p = probes[static_cast<std::size_t>(i)];
      if (p.count() != probes_ || t.count() != probes_) {
        throw Error(ErrorCode::ShapeMismatch, "all concepts must have the same number of probes");
      }
      if (p.dim() != d_in_ || t.values.rows() != d_out_) {
        throw Error(ErrorCode::ShapeMismatch, "concept '" + t.concept_id + "' has inconsistent feature dimensions");
      }
      if (t.concept_id != p.concept_id) {
        throw Error(ErrorCode::ShapeMismatch, "targets and probes are not in the same concept order");
      }
      inputs_.middleCols(i * probes_, probes_) = p.inputs;
      targets_.middleCols(i * probes_, probes_) = t.values;
      concept_ids_.push_back(t.concept_id);
    }
    gram_.noalias() = inputs_ * inputs_.transpose();
    cross_.noalias() = targets_ * inputs_.transpose();
    if (base_weight != nullptr) {
      if (base_weight->rows() != d_out_ || base_weight->cols() != d_in_) {
        throw Error(ErrorCode::ShapeMismatch, "base weight is " + shape_string(*base_weight));
      }
      base_outputs_ = (*base_weight) * inputs_;
      cross_.noalias() -= (*base_weight) * gram_;
    }
  }

  Index concepts() const { return concepts_; }
  Index probes_per_concept() const { return probes_; }
  Index d_out() const { return d_out_; }
  Index d_in() const { return d_in_; }

  /// Loss at `delta`; when `gradient` is non-null it receives dL/d(delta).
  LossBreakdown evaluate(const Matrix& delta, Matrix* gradient = nullptr) const {
    if (delta.rows() != d_out_ || delta.cols() != d_in_) {
      throw Error(ErrorCode::ShapeMismatch, "delta is " + shape_string(delta));
    }
    Matrix predicted = delta * inputs_;
    if (base_outputs_.size() != 0) predicted += base_outputs_;

    const double norm = 1.0 / (static_cast<double>(concepts_) * static_cast<double>(probes_));

    LossBreakdown out;
    const Vector dp = (predicted - targets_).colwise().norm().transpose();
    out.positive_term = norm * dp.squaredNorm();
    for (Index i = 0; i < concepts_; ++i) {
      out.per_concept_positive_mean[concept_ids_[static_cast<std::size_t>(i)]] =
          dp.segment(i * probes_, probes_).mean();
    }

    // Active hinge terms: (gap / d) * (y_{i,k} - yhat_{j*,k}) paired with x_{j*,k}.
    Matrix scaled;
    Matrix hinge_inputs;
    if (concepts_ > 1) {
      std::vector<Index> active_cols;
      std::vector<Index> active_targets;
      std::vector<double> active_weights;
      for (Index i = 0; i < concepts_; ++i) {
        for (Index k = 0; k < probes_; ++k) {
          const auto target = targets_.col(i * probes_ + k);
          double best = std::numeric_limits<double>::infinity();
          Index best_j = -1;
          for (Index j = 0; j < concepts_; ++j) {
            if (j == i) continue;
            const double d = (target - predicted.col(j * probes_ + k)).norm();
            if (d < best) {
              best = d;
              best_j = j;
            }
          }
          const double gap = margin_ - best;
          if (gap <= 0.0) continue;
          out.negative_term += norm * gap * gap;
          active_cols.push_back(best_j * probes_ + k);
          active_targets.push_back(i * probes_ + k);
          active_weights.push_back(gap / std::max(best, epsilon_));
        }
      }
      if (gradient != nullptr && !active_cols.empty()) {
        const auto m = static_cast<Index>(active_cols.size());
        scaled.resize(d_out_, m);
        hinge_inputs.resize(d_in_, m);
        for (Index a = 0; a < m; ++a) {
          const auto col = active_cols[static_cast<std::size_t>(a)];
          scaled.col(a) = active_weights[static_cast<std::size_t>(a)] *
                          (targets_.col(active_targets[static_cast<std::size_t>(a)]) - predicted.col(col));
          hinge_inputs.col(a) = inputs_.col(col);
        }
      }
    }

    const double delta_norm = delta.norm();
    out.penalty_term = lambda_ == 0.0 ? 0.0 : lambda_ * delta_norm;
    out.total = out.positive_term + out.negative_term + out.penalty_term;

    if (gradient != nullptr) {
      gradient->noalias() = delta * gram_;
      *gradient -= cross_;
      if (scaled.cols() > 0) gradient->noalias() += scaled * hinge_inputs.transpose();
      *gradient *= 2.0 * norm;
      if (lambda_ != 0.0) *gradient += (lambda_ / std::max(delta_norm, epsilon_)) * delta;
    }
    return out;
  }

 private:
  double margin_;
  double lambda_;
  double epsilon_;
  Index concepts_ = 0;
  Index probes_ = 0;
  Index d_in_ = 0;
  Index d_out_ = 0;
  Matrix inputs_;
  Matrix targets_;
  Matrix base_outputs_;
  Matrix gram_;   // X X^T
  Matrix cross_;  // Y X^T - W X X^T
  std::vector<std::string> concept_ids_;
};

/// Exact gradient of the total loss with respect to dW. Predictions are
/// formed from `delta` (plus base weights in full mode); `targets` must have
/// been produced in the same mode.
inline Matrix loss_gradient(const MergeConfig& config, const std::vector<FeatureSet>& targets,
                            const std::vector<ProbeSet>& probes, const LayerDelta& delta,
                            const BaseWeights* base = nullptr) {
  const Matrix* w = nullptr;
  if (config.mode == FeatureMode::Full) {
    if (base == nullptr) throw Error(ErrorCode::InvalidArgument, "full mode needs base weights");
    w = &base->layer(delta.layer_id);
  }
  ContrastiveObjective objective(config, targets, probes, w);
  Matrix grad(delta.rows(), delta.cols());
  objective.evaluate(delta.weight, &grad);
  return grad;
}

}  // namespace loramerge
