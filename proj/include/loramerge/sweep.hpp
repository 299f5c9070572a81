// Copyright 2026 The loramerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <exception>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "loramerge/baselines.hpp"
#include "loramerge/merge.hpp"
#include "loramerge/metrics.hpp"
#include "loramerge/synthetic.hpp"

namespace loramerge {

struct SweepGrid {
  std::vector<double> margins{0.1, 0.25, 0.5, 1.0};
  std::vector<double> lambdas{0.0001, 0.001, 0.01};
  std::vector<std::size_t> concept_counts{2, 5, 8, 12};

  std::size_t cells() const { return margins.size() * lambdas.size() * concept_counts.size(); }
};

struct SweepRow {
  double margin = 0.0;
  double lambda_delta = 0.0;
  std::size_t n_concepts = 0;
  std::uint64_t seed = 0;
  MergeReport report;
  double baseline_fidelity_mean = 0.0;  // uniform weighted average on the same probes

  bool operator==(const SweepRow&) const = default;
};

struct SweepOptions {
  std::size_t threads = 1;
  bool record_wall_time = false;
};

/// Synthesizes the suite described by `spec`, merges it with `config` and
/// scores both the contrastive merge and the uniform-average baseline.
inline SweepRow evaluate_synthetic(const SyntheticSpec& spec, const MergeConfig& config, bool record_wall_time = false) {
  const SyntheticSuite suite = synth_adapters(spec, config.probe_count);
  MergeOptions options;
  options.probes = &suite.probes;
  options.record_wall_time = record_wall_time;
  const MergeResult merged = merge_adapters(config, suite.adapters, nullptr, options);

  LayerProbeSets probes;
  for (const auto& l : merged.plan.layers) {
    probes[l.layer_id] = layer_probes(config, l.layer_id, l.d_in, suite.adapters, &suite.probes);
  }
  const MergeReport baseline = fidelity_metrics(weighted_average_merge(suite.adapters), suite.adapters, probes);

  SweepRow row;
  row.margin = config.margin;
  row.lambda_delta = config.lambda_delta;
  row.n_concepts = spec.n_concepts;
  row.seed = spec.seed;
  row.report = merged.report;
  row.baseline_fidelity_mean = baseline.mean_fidelity();
  return row;
}

/// Cartesian product in (margin, lambda, concept count) order. Cell c uses
/// seed base_spec.seed + c for both synthesis and probe sampling, so a
/// one-cell grid reproduces a direct evaluate_synthetic call.
inline std::vector<SweepRow> sweep(const SweepGrid& grid, const SyntheticSpec& base_spec,
                                   const MergeConfig& config_template, const SweepOptions& options = {}) {
  if (grid.cells() == 0) throw Error(ErrorCode::InvalidArgument, "sweep grid is empty");

  struct Cell {
    SyntheticSpec spec;
    MergeConfig config;
  };
  std::vector<Cell> cells;
  for (double m : grid.margins) {
    for (double lam : grid.lambdas) {
      for (std::size_t n : grid.concept_counts) {
        Cell c{base_spec, config_template};
        c.spec.n_concepts = n;
        c.spec.seed = base_spec.seed + cells.size();
        c.config.margin = m;
        c.config.lambda_delta = lam;
        c.config.seed = c.spec.seed;
        c.config.validate();
        validate(c.spec);
        cells.push_back(std::move(c));
      }
    }
  }

  std::vector<SweepRow> rows(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        rows[i] = evaluate_synthetic(cells[i].spec, cells[i].config, options.record_wall_time);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, cells.size());
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Grid files and tables
// ---------------------------------------------------------------------------

inline SyntheticSpec spec_from_json(const nlohmann::json& j, SyntheticSpec spec = {}) {
  try {
    if (j.contains("n_concepts")) spec.n_concepts = j["n_concepts"].get<std::size_t>();
    if (j.contains("rank")) spec.rank = j["rank"].get<Index>();
    if (j.contains("overlap")) spec.overlap = j["overlap"].get<double>();
    if (j.contains("scale")) spec.scale = j["scale"].get<double>();
    if (j.contains("seed")) spec.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("layers")) {
      spec.layers.clear();
      for (const auto& l : j["layers"]) {
        spec.layers.push_back({l.at("id").get<std::string>(), l.at("d_out").get<Index>(), l.at("d_in").get<Index>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad synthetic spec: ") + e.what());
  }
  return spec;
}

inline nlohmann::json to_json(const SyntheticSpec& s) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : s.layers) layers.push_back({{"id", l.layer_id}, {"d_out", l.d_out}, {"d_in", l.d_in}});
  return {{"n_concepts", s.n_concepts}, {"layers", layers},   {"rank", s.rank},
          {"overlap", s.overlap},       {"scale", s.scale},   {"seed", s.seed}};
}

inline SyntheticSpec default_synthetic_spec() {
  SyntheticSpec spec;
  spec.layers = {{"layer0", 64, 64}};
  return spec;
}

struct SweepFile {
  SweepGrid grid;
  SyntheticSpec spec = default_synthetic_spec();
  MergeConfig config;
};

/// {"margins": [...], "lambdas": [...], "concept_counts": [...],
///  "spec": {...}, "config": {...}}; missing keys keep their defaults.
inline SweepFile sweep_file_from_json(const nlohmann::json& j, const MergeConfig& config_defaults = {}) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "grid file must hold a JSON object");
  SweepFile f;
  f.config = config_defaults;
  try {
    if (j.contains("margins")) f.grid.margins = j["margins"].get<std::vector<double>>();
    if (j.contains("lambdas")) f.grid.lambdas = j["lambdas"].get<std::vector<double>>();
    if (j.contains("concept_counts")) f.grid.concept_counts = j["concept_counts"].get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad grid: ") + e.what());
  }
  if (j.contains("spec")) f.spec = spec_from_json(j["spec"], f.spec);
  if (j.contains("config")) f.config = apply_json(f.config, j["config"]);
  if (f.grid.cells() == 0) throw Error(ErrorCode::InvalidArgument, "sweep grid is empty");
  return f;
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  using detail::format_double;
  out << "margin,lambda_delta,n_concepts,seed," << kReportCsvHeader << ",baseline_fidelity_mean\n";
  for (const auto& r : rows) {
    out << format_double(r.margin) << ',' << format_double(r.lambda_delta) << ',' << r.n_concepts << ',' << r.seed
        << ',' << report_csv_row(r.report) << ',' << format_double(r.baseline_fidelity_mean) << '\n';
  }
}

inline nlohmann::json to_json(const SweepRow& r) {
  return {{"margin", r.margin},
          {"lambda_delta", r.lambda_delta},
          {"n_concepts", r.n_concepts},
          {"seed", r.seed},
          {"report", to_json(r.report)},
          {"baseline_fidelity_mean", r.baseline_fidelity_mean}};
}

}  // namespace loramerge
