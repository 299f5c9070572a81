// Copyright 2026 The loramerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Proxy metrics for a merged layer set:
//   fidelity  - relative output error ||Yhat_i - Y_i||_F / ||Y_i||_F per concept,
//               averaged over layers
//   retrieval - fraction of (concept, probe, layer) triples whose merged output
//               is nearest to the concept's own target among all targets at
//               that probe index
//   min cross distance - smallest ||Y_i[:,k] - Yhat_j[:,k]|| with i != j

#include <nlohmann/json.hpp>

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "loramerge/adapter.hpp"
#include "loramerge/contrastive.hpp"
#include "loramerge/layer_delta.hpp"
#include "loramerge/probes.hpp"

namespace loramerge {

/// Probe sets for each layer, in adapter order.
using LayerProbeSets = std::map<std::string, std::vector<ProbeSet>>;

struct MergeReport {
  std::map<std::string, double> per_concept_fidelity;
  std::map<std::string, double> pre_merge_fidelity;  // each adapter's own delta on its own probes
  double retrieval_accuracy = 0.0;
  std::optional<double> min_cross_distance;  // unset for a single concept
  std::map<std::string, LossBreakdown> loss_trace_summary;
  std::optional<double> wall_time;
  MergeConfig config_echo;

  double mean_fidelity() const {
    if (per_concept_fidelity.empty()) return 0.0;
    double s = 0.0;
    for (const auto& [_, v] : per_concept_fidelity) s += v;
    return s / static_cast<double>(per_concept_fidelity.size());
  }

  double max_fidelity() const {
    double m = 0.0;
    for (const auto& [_, v] : per_concept_fidelity) m = std::max(m, v);
    return m;
  }

  bool operator==(const MergeReport&) const = default;
};

inline MergeReport fidelity_metrics(const DeltaMap& deltas, const std::vector<LoraAdapter>& adapters,
                                    const LayerProbeSets& probes, const BaseWeights* base = nullptr,
                                    double epsilon = 1e-12) {
  if (adapters.empty()) throw Error(ErrorCode::InvalidArgument, "no adapters given");
  if (deltas.empty()) throw Error(ErrorCode::InvalidArgument, "no merged layers given");
  const std::size_t concepts = adapters.size();

  MergeReport report;
  std::map<std::string, double> fidelity_sum, pre_sum;
  std::size_t hits = 0, trials = 0;
  double min_cross = std::numeric_limits<double>::infinity();

  for (const auto& [layer_id, delta] : deltas) {
    auto it = probes.find(layer_id);
    if (it == probes.end() || it->second.size() != concepts) {
      throw Error(ErrorCode::ShapeMismatch, "no probes for every concept at layer '" + layer_id + "'");
    }
    const auto& sets = it->second;
    std::vector<FeatureSet> targets, predicted;
    for (std::size_t i = 0; i < concepts; ++i) {
      targets.push_back(target_features(adapters[i], layer_id, sets[i], base));
      predicted.push_back(predict_features(delta, sets[i], base));
      if (predicted[i].values.rows() != targets[i].values.rows()) {
        throw Error(ErrorCode::ShapeMismatch, "delta for layer '" + layer_id + "' has the wrong output size");
      }
    }
    const Index n = targets.front().count();
    for (std::size_t i = 0; i < concepts; ++i) {
      if (targets[i].count() != n) throw Error(ErrorCode::ShapeMismatch, "probe counts differ across concepts");
      const double denom = std::max(targets[i].values.norm(), epsilon);
      fidelity_sum[adapters[i].concept_id] += (predicted[i].values - targets[i].values).norm() / denom;

      const LayerDelta own{layer_id, adapters[i].layer(layer_id).effective_delta()};
      pre_sum[adapters[i].concept_id] += (predict_features(own, sets[i], base).values - targets[i].values).norm() / denom;
    }

    for (std::size_t i = 0; i < concepts; ++i) {
      for (Index k = 0; k < n; ++k) {
        const auto yhat = predicted[i].values.col(k);
        std::size_t nearest = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < concepts; ++j) {
          const double d = (targets[j].values.col(k) - yhat).norm();
          if (d < best) {
            best = d;
            nearest = j;
          }
          if (j != i) min_cross = std::min(min_cross, (targets[i].values.col(k) - predicted[j].values.col(k)).norm());
        }
        hits += nearest == i ? 1 : 0;
        ++trials;
      }
    }
  }

  const double layers = static_cast<double>(deltas.size());
  for (const auto& [id, s] : fidelity_sum) report.per_concept_fidelity[id] = s / layers;
  for (const auto& [id, s] : pre_sum) report.pre_merge_fidelity[id] = s / layers;
  report.retrieval_accuracy = trials ? static_cast<double>(hits) / static_cast<double>(trials) : 0.0;
  if (concepts > 1) report.min_cross_distance = min_cross;
  return report;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const MergeConfig& c) {
  return {{"margin", c.margin},
          {"lambda_delta", c.lambda_delta},
          {"learning_rate", c.learning_rate},
          {"max_steps", c.max_steps},
          {"probe_count", c.probe_count ? nlohmann::json(*c.probe_count) : nlohmann::json(nullptr)},
          {"seed", c.seed},
          {"mode", to_string(c.mode)},
          {"epsilon", c.epsilon},
          {"plateau_tol", c.plateau_tol},
          {"plateau_window", c.plateau_window},
          {"optimizer", to_string(c.optimizer)}};
}

inline FeatureMode parse_mode(const std::string& s) {
  if (s == "delta-only" || s == "delta_only") return FeatureMode::DeltaOnly;
  if (s == "full") return FeatureMode::Full;
  throw Error(ErrorCode::InvalidArgument, "unknown mode '" + s + "'");
}

inline Optimizer parse_optimizer(const std::string& s) {
  if (s == "gd" || s == "gradient_descent") return Optimizer::GradientDescent;
  if (s == "adam") return Optimizer::Adam;
  throw Error(ErrorCode::InvalidArgument, "unknown optimizer '" + s + "'");
}

/// Applies the keys present in `j` on top of `c`; unknown keys are an error.
inline MergeConfig apply_json(MergeConfig c, const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "margin") c.margin = v.get<double>();
      else if (key == "lambda_delta") c.lambda_delta = v.get<double>();
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "max_steps") c.max_steps = v.get<std::size_t>();
      else if (key == "probe_count") c.probe_count = v.is_null() ? std::nullopt : std::optional(v.get<std::size_t>());
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "mode") c.mode = parse_mode(v.get<std::string>());
      else if (key == "epsilon") c.epsilon = v.get<double>();
      else if (key == "plateau_tol") c.plateau_tol = v.get<double>();
      else if (key == "plateau_window") c.plateau_window = v.get<std::size_t>();
      else if (key == "optimizer") c.optimizer = parse_optimizer(v.get<std::string>());
      else throw Error(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad config value: ") + e.what());
  }
  return c;
}

inline nlohmann::json to_json(const LossBreakdown& b) {
  return {{"positive_term", b.positive_term},
          {"negative_term", b.negative_term},
          {"penalty_term", b.penalty_term},
          {"total", b.total},
          {"per_concept_positive_mean", b.per_concept_positive_mean}};
}

inline nlohmann::json to_json(const MergeReport& r) {
  nlohmann::json summary = nlohmann::json::object();
  for (const auto& [id, b] : r.loss_trace_summary) summary[id] = to_json(b);
  return {{"per_concept_fidelity", r.per_concept_fidelity},
          {"pre_merge_fidelity", r.pre_merge_fidelity},
          {"retrieval_accuracy", r.retrieval_accuracy},
          {"min_cross_distance", r.min_cross_distance ? nlohmann::json(*r.min_cross_distance) : nlohmann::json(nullptr)},
          {"loss_trace_summary", summary},
          {"wall_time", r.wall_time ? nlohmann::json(*r.wall_time) : nlohmann::json(nullptr)},
          {"config_echo", to_json(r.config_echo)}};
}

namespace detail {

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

inline const char* kReportCsvHeader =
    "retrieval_accuracy,min_cross_distance,fidelity_mean,fidelity_max,positive_term,negative_term,penalty_term,total,"
    "wall_time";

/// One CSV row; loss terms are summed over layers, empty cells mean "not recorded".
inline std::string report_csv_row(const MergeReport& r) {
  using detail::format_double;
  LossBreakdown sum;
  for (const auto& [_, b] : r.loss_trace_summary) {
    sum.positive_term += b.positive_term;
    sum.negative_term += b.negative_term;
    sum.penalty_term += b.penalty_term;
    sum.total += b.total;
  }
  std::string row = format_double(r.retrieval_accuracy) + ",";
  row += (r.min_cross_distance ? format_double(*r.min_cross_distance) : "") + ",";
  row += format_double(r.mean_fidelity()) + "," + format_double(r.max_fidelity()) + ",";
  row += format_double(sum.positive_term) + "," + format_double(sum.negative_term) + "," +
         format_double(sum.penalty_term) + "," + format_double(sum.total) + ",";
  row += r.wall_time ? format_double(*r.wall_time) : "";
  return row;
}

inline void write_trace_csv(std::ostream& out, const std::vector<LossBreakdown>& trace) {
  using detail::format_double;
  out << "step,positive,negative,penalty,total\n";
  for (std::size_t s = 0; s < trace.size(); ++s) {
    const auto& b = trace[s];
    out << s << ',' << format_double(b.positive_term) << ',' << format_double(b.negative_term) << ','
        << format_double(b.penalty_term) << ',' << format_double(b.total) << '\n';
  }
}

}  // namespace loramerge
