// Copyright 2026 The loramerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "loramerge/adapter.hpp"
#include "loramerge/contrastive.hpp"
#include "loramerge/error.hpp"
#include "loramerge/layer_delta.hpp"
#include "loramerge/metrics.hpp"
#include "loramerge/probes.hpp"

namespace loramerge {

struct LayerMergeResult {
  LayerDelta delta;
  std::vector<LossBreakdown> trace;  // trace[t] is the loss at the t-th iterate; back() matches `delta`
  bool converged = false;            // stopped on the plateau test rather than the step budget
};

namespace detail {

inline const BaseWeights* active_base(const MergeConfig& config, const BaseWeights* base) {
  if (config.mode == FeatureMode::Full) {
    if (base == nullptr) throw Error(ErrorCode::InvalidArgument, "full mode needs base weights");
    return base;
  }
  return nullptr;
}

inline void require_unique_concepts(const std::vector<LoraAdapter>& adapters) {
  std::set<std::string> ids;
  for (const auto& a : adapters) {
    if (!ids.insert(a.concept_id).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate concept id '" + a.concept_id + "'");
    }
  }
}

}  // namespace detail

/// Probes for every concept at one layer: taken from `bank` when present,
/// otherwise sampled from (config.seed, concept, layer).
inline std::vector<ProbeSet> layer_probes(const MergeConfig& config, const std::string& layer_id, Index d_in,
                                          const std::vector<LoraAdapter>& adapters, const ProbeBank* bank = nullptr) {
  std::vector<ProbeSet> sets;
  sets.reserve(adapters.size());
  for (const auto& a : adapters) {
    const ProbeSet* given = bank ? bank->find(a.concept_id, layer_id) : nullptr;
    if (given != nullptr) {
      detail::check_probe_dim(*given, d_in, "probes for '" + a.concept_id + "'");
      sets.push_back(*given);
    } else {
      sets.push_back(sample_probes(a.concept_id, layer_id, d_in, static_cast<Index>(config.probes_for(d_in)),
                                   config.seed));
    }
  }
  for (const auto& s : sets) {
    if (s.count() != sets.front().count()) {
      throw Error(ErrorCode::ShapeMismatch, "layer '" + layer_id + "': concepts have different probe counts");
    }
  }
  return sets;
}

/// Gradient-based minimization of the contrastive objective for one layer,
/// starting from dW = 0 with the probes held fixed.
inline LayerMergeResult merge_layer(const MergeConfig& config, const std::string& layer_id,
                                    const std::vector<LoraAdapter>& adapters, const std::vector<ProbeSet>& probes,
                                    const BaseWeights* base = nullptr) {
  config.validate();
  if (adapters.empty()) throw Error(ErrorCode::InvalidArgument, "no adapters given");
  const BaseWeights* w = detail::active_base(config, base);

  std::vector<FeatureSet> targets;
  targets.reserve(adapters.size());
  for (std::size_t i = 0; i < adapters.size(); ++i) targets.push_back(target_features(adapters[i], layer_id, probes[i], w));

  const ContrastiveObjective objective(config, targets, probes, w ? &w->layer(layer_id) : nullptr);

  LayerMergeResult result;
  result.delta.layer_id = layer_id;
  Matrix& delta = result.delta.weight;
  delta = Matrix::Zero(objective.d_out(), objective.d_in());
  Matrix grad(delta.rows(), delta.cols());
  Matrix first_moment, second_moment;
  if (config.optimizer == Optimizer::Adam) {
    first_moment = Matrix::Zero(delta.rows(), delta.cols());
    second_moment = Matrix::Zero(delta.rows(), delta.cols());
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;
  constexpr double kDivergence = 1e6;

  double initial = 0.0;
  for (std::size_t step = 0;; ++step) {
    const bool last = step == config.max_steps;
    LossBreakdown loss = objective.evaluate(delta, last ? nullptr : &grad);
    if (!std::isfinite(loss.total)) throw NonFiniteLossError(step, "layer '" + layer_id + "': loss is not finite");
    if (step == 0) {
      initial = loss.total;
    } else if (initial > 0.0 && loss.total > kDivergence * initial) {
      throw NonFiniteLossError(step, "layer '" + layer_id + "': loss diverged");
    }
    result.trace.push_back(std::move(loss));
    if (last) break;

    if (step >= config.plateau_window) {
      const double before = result.trace[step - config.plateau_window].total;
      const double now = result.trace[step].total;
      if (std::abs(before - now) <= config.plateau_tol * std::max(std::abs(before), config.epsilon)) {
        result.converged = true;
        break;
      }
    }
    if (!grad.allFinite()) throw NonFiniteLossError(step, "layer '" + layer_id + "': gradient is not finite");

    if (config.optimizer == Optimizer::Adam) {
      const double t = static_cast<double>(step + 1);
      first_moment = kBeta1 * first_moment + (1.0 - kBeta1) * grad;
      second_moment = kBeta2 * second_moment + (1.0 - kBeta2) * grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(kBeta1, t);
      const double c2 = 1.0 - std::pow(kBeta2, t);
      delta.array() -= config.learning_rate * (first_moment.array() / c1) /
                       ((second_moment.array() / c2).sqrt() + kAdamEps);
    } else {
      delta -= config.learning_rate * grad;
    }
  }
  return result;
}

/// Convenience overload that resolves probes itself.
inline LayerMergeResult merge_layer(const MergeConfig& config, const std::string& layer_id,
                                    const std::vector<LoraAdapter>& adapters, const BaseWeights* base = nullptr,
                                    const ProbeBank* bank = nullptr) {
  if (adapters.empty()) throw Error(ErrorCode::InvalidArgument, "no adapters given");
  const Index d_in = adapters.front().layer(layer_id).d_in();
  return merge_layer(config, layer_id, adapters, layer_probes(config, layer_id, d_in, adapters, bank), base);
}

struct MergeOptions {
  std::size_t threads = 1;
  std::string layer_filter;         // glob over layer ids; empty keeps all
  const ProbeBank* probes = nullptr;  // externally captured probes, if any
  bool record_wall_time = true;
};

struct MergeResult {
  DeltaMap deltas;
  MergeReport report;
  MergePlan plan;
  std::map<std::string, std::vector<LossBreakdown>> traces;
};

/// Runs merge_layer on every planned layer. Layers are independent, so the
/// result does not depend on `options.threads`. Any layer failure aborts the
/// whole merge; the lowest failing layer's error is the one rethrown.
inline MergeResult merge_adapters(const MergeConfig& config, const std::vector<LoraAdapter>& adapters,
                                  const BaseWeights* base = nullptr, const MergeOptions& options = {}) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  detail::require_unique_concepts(adapters);
  const BaseWeights* w = detail::active_base(config, base);

  MergeResult out;
  out.plan = filter_plan(validate_compatibility(adapters, w), options.layer_filter);
  const auto& planned = out.plan.layers;

  LayerProbeSets probes;
  for (const auto& l : planned) probes[l.layer_id] = layer_probes(config, l.layer_id, l.d_in, adapters, options.probes);

  std::vector<LayerMergeResult> results(planned.size());
  std::vector<std::exception_ptr> errors(planned.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < planned.size(); i = next++) {
      try {
        results[i] = merge_layer(config, planned[i].layer_id, adapters, probes.at(planned[i].layer_id), w);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, std::max<std::size_t>(planned.size(), 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  for (std::size_t i = 0; i < planned.size(); ++i) {
    const auto& id = planned[i].layer_id;
    out.deltas[id] = std::move(results[i].delta);
    out.traces[id] = std::move(results[i].trace);
  }
  out.report = fidelity_metrics(out.deltas, adapters, probes, w, config.epsilon);
  for (const auto& [id, trace] : out.traces) out.report.loss_trace_summary[id] = trace.back();
  out.report.config_echo = config;
  if (options.record_wall_time) {
    out.report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return out;
}

}  // namespace loramerge
