// Copyright 2026 The loramerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Command-line front end: merge, eval, sweep, inspect, export, synth.
//
// Exit codes: 0 success, 2 validation failure, 3 I/O or file-format failure,
// 4 numerical failure during optimization.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "loramerge/loramerge.hpp"

namespace loramerge::cli {

enum ExitCode : int { kOk = 0, kValidation = 2, kIo = 3, kNumerical = 4 };

/// Carries an exit code out of a command body.
struct Failure {
  int code;
  std::string message;
};

namespace detail {

namespace fs = std::filesystem;

[[noreturn]] inline void fail(int code, std::string message) { throw Failure{code, std::move(message)}; }

/// Runs `fn`, reporting any library error as an I/O failure. File loading
/// goes through here so that malformed inputs exit with code 3.
template <typename Fn>
auto loading(const std::string& path, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    fail(kIo, "cannot load '" + path + "': " + e.what());
  }
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(kIo, "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json read_json(const std::string& path) {
  const auto text = read_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(kValidation, "'" + path + "' is not valid JSON: " + e.what());
  }
}

inline void write_text(const fs::path& path, const std::string& text) {
  try {
    write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  } catch (const Error& e) {
    fail(kIo, e.what());
  }
}

inline std::string format_alpha(double alpha) {
  return alpha == std::floor(alpha) ? fmt::format("{:.1f}", alpha) : fmt::format("{:g}", alpha);
}

/// Options shared by commands that build a MergeConfig.
struct ConfigFlags {
  std::optional<double> margin, lambda, lr;
  std::optional<std::size_t> steps, probes;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode, optimizer;
  std::string config_path;
  std::string base_path;
  std::string layers;
  std::vector<std::string> probe_files;

  void attach(CLI::App& app) {
    app.add_option("--margin", margin, "Hinge margin m");
    app.add_option("--lambda", lambda, "Delta penalty weight");
    app.add_option("--lr", lr, "Learning rate");
    app.add_option("--steps", steps, "Maximum optimizer steps");
    app.add_option("--probes", probes, "Probes per concept per layer (default 4 * d_in)");
    app.add_option("--seed", seed, "Probe seed (default: $LORAMERGE_SEED, else 0)");
    app.add_option("--mode", mode, "Feature mode")->check(CLI::IsMember({"delta-only", "full"}));
    app.add_option("--optimizer", optimizer, "Optimizer")->check(CLI::IsMember({"gd", "adam"}));
    app.add_option("--config", config_path, "JSON file with merge settings");
    app.add_option("--base", base_path, "Base weights file ({layer}.weight tensors)");
    app.add_option("--layers", layers, "Glob selecting layer ids");
    app.add_option("--probes-from-file", probe_files, "Probe file per adapter ({layer}.probes tensors)");
  }

  /// Built-in defaults < $LORAMERGE_SEED < --config file < flags.
  MergeConfig resolve() const {
    MergeConfig c;
    if (const char* env = std::getenv("LORAMERGE_SEED"); env != nullptr && *env != '\0') {
      try {
        std::size_t used = 0;
        c.seed = std::stoull(env, &used);
        if (used != std::char_traits<char>::length(env)) throw std::invalid_argument(env);
      } catch (const std::exception&) {
        fail(kValidation, std::string("LORAMERGE_SEED is not an unsigned integer: ") + env);
      }
    }
    try {
      if (!config_path.empty()) c = apply_json(c, read_json(config_path));
      if (margin) c.margin = *margin;
      if (lambda) c.lambda_delta = *lambda;
      if (lr) c.learning_rate = *lr;
      if (steps) c.max_steps = *steps;
      if (probes) c.probe_count = *probes;
      if (seed) c.seed = *seed;
      if (mode) c.mode = parse_mode(*mode);
      if (optimizer) c.optimizer = parse_optimizer(*optimizer);
      if (!base_path.empty() && !mode) c.mode = FeatureMode::Full;
      c.validate();
    } catch (const Error& e) {
      fail(kValidation, e.what());
    }
    if (c.mode == FeatureMode::Full && base_path.empty()) fail(kValidation, "--mode full needs --base");
    return c;
  }
};

struct Inputs {
  std::vector<LoraAdapter> adapters;
  std::optional<BaseWeights> base;
  ProbeBank probes;
};

inline Inputs load_inputs(const std::vector<std::string>& adapter_paths, const ConfigFlags& flags) {
  Inputs in;
  for (const auto& p : adapter_paths) in.adapters.push_back(loading(p, [&] { return load_adapter(p); }));
  if (!flags.base_path.empty()) in.base = loading(flags.base_path, [&] { return load_base(flags.base_path); });
  if (!flags.probe_files.empty()) {
    if (flags.probe_files.size() != in.adapters.size()) {
      fail(kValidation, "--probes-from-file needs one file per adapter");
    }
    for (std::size_t i = 0; i < flags.probe_files.size(); ++i) {
      const auto& p = flags.probe_files[i];
      loading(p, [&] {
        load_probe_file(in.probes, p, in.adapters[i].concept_id);
        return 0;
      });
    }
  }
  return in;
}

// ---------------------------------------------------------------------------
// merge
// ---------------------------------------------------------------------------

struct MergeArgs {
  std::vector<std::string> adapters;
  std::string output;
  std::string report;
  std::string trace_dir;
  std::optional<Index> rank;
  std::size_t threads = 1;
  bool dry_run = false;
  bool timing = false;
  bool json = false;
  ConfigFlags flags;
};

inline int cmd_merge(const MergeArgs& args, std::ostream& out, std::ostream& err) {
  const MergeConfig config = args.flags.resolve();
  if (args.rank && *args.rank < 1) fail(kValidation, "--rank must be positive");
  if (args.threads < 1) fail(kValidation, "--threads must be at least 1");
  Inputs in = load_inputs(args.adapters, args.flags);
  const BaseWeights* base = in.base ? &*in.base : nullptr;

  MergePlan plan;
  try {
    loramerge::detail::require_unique_concepts(in.adapters);
    plan = filter_plan(validate_compatibility(in.adapters, config.mode == FeatureMode::Full ? base : nullptr),
                       args.flags.layers);
    if (args.rank) {
      for (const auto& l : plan.layers) {
        if (*args.rank > std::min(l.d_out, l.d_in)) {
          throw Error(ErrorCode::RankTooLarge, "rank " + std::to_string(*args.rank) + " too large for layer '" +
                                                   l.layer_id + "'");
        }
      }
    }
    for (const auto& l : plan.layers) layer_probes(config, l.layer_id, l.d_in, in.adapters, &in.probes);
  } catch (const Error& e) {
    fail(kValidation, e.what());
  }
  for (const auto& s : plan.skipped) err << fmt::format("skipping layer {}: {}\n", s.layer_id, s.reason);

  const fs::path output(args.output);
  const fs::path report_path = args.report.empty() ? fs::path(args.output + ".report.json") : fs::path(args.report);
  if (args.dry_run) {
    out << fmt::format("dry run: {} adapters, {} layers planned, nothing written\n", in.adapters.size(),
                       plan.layers.size());
    return kOk;
  }

  MergeOptions options;
  options.threads = args.threads;
  options.layer_filter = args.flags.layers;
  options.probes = &in.probes;
  options.record_wall_time = args.timing;
  MergeResult result;
  try {
    result = merge_adapters(config, in.adapters, base, options);
  } catch (const NonFiniteLossError& e) {
    fail(kNumerical, e.what());
  } catch (const Error& e) {
    fail(kValidation, e.what());
  }

  ExportResult exported;
  try {
    exported = export_merged(result.deltas, args.rank);
  } catch (const Error& e) {
    fail(kValidation, e.what());
  }
  exported.file.metadata["producer"] = "loramerge";
  const std::string report_text = to_json(result.report).dump(2) + "\n";

  try {
    write_tensor_file(output, exported.file);
  } catch (const Error& e) {
    fail(kIo, e.what());
  }
  try {
    write_text(report_path, report_text);
    if (!args.trace_dir.empty()) {
      fs::create_directories(args.trace_dir);
      for (const auto& [id, trace] : result.traces) {
        std::ostringstream csv;
        write_trace_csv(csv, trace);
        write_text(fs::path(args.trace_dir) / (id + ".csv"), csv.str());
      }
    }
  } catch (...) {
    std::error_code ec;
    fs::remove(output, ec);
    fs::remove(report_path, ec);
    throw;
  }

  if (args.json) {
    nlohmann::json doc = {{"output", output.string()}, {"report", report_path.string()}};
    for (const auto& [id, b] : result.report.loss_trace_summary) {
      doc["layers"][id] = {{"steps", result.traces.at(id).size() - 1}, {"final_loss", to_json(b)}};
      if (auto r = exported.relative_residuals.find(id); r != exported.relative_residuals.end()) {
        doc["layers"][id]["relative_residual"] = r->second;
      }
    }
    out << doc.dump(2) << "\n";
    return kOk;
  }
  for (const auto& [id, b] : result.report.loss_trace_summary) {
    out << fmt::format("layer {} steps {} total {:.6e} positive {:.6e} negative {:.6e} penalty {:.6e}\n", id,
                       result.traces.at(id).size() - 1, b.total, b.positive_term, b.negative_term, b.penalty_term);
  }
  for (const auto& [id, r] : exported.relative_residuals) {
    out << fmt::format("layer {} rank {} relative residual {:.6e}\n", id, *args.rank, r);
  }
  out << fmt::format("wrote {} and {}\n", output.string(), report_path.string());
  return kOk;
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

inline int cmd_inspect(const std::string& path, bool as_json, std::ostream& out) {
  const TensorFile file = loading(path, [&] { return read_tensor_file(path); });
  const LoraAdapter adapter = loading(path, [&] { return adapter_from_file(file, fs::path(path).stem().string()); });
  DeltaMap dense;
  for (const auto& [name, rec] : file.tensors) {
    if (loramerge::detail::ends_with(name, kDeltaSuffix)) {
      auto id = loramerge::detail::strip(name, kDeltaSuffix);
      dense[id] = LayerDelta{id, loading(path, [&] { return record_matrix(rec); })};
    }
  }

  nlohmann::json rows = nlohmann::json::array();
  for (const auto& [id, l] : adapter.layers) {
    rows.push_back({{"layer", id},
                    {"d_out", l.d_out()},
                    {"d_in", l.d_in()},
                    {"rank", l.rank()},
                    {"alpha", l.alpha},
                    {"norm", l.effective_delta().norm()}});
  }
  for (const auto& [id, d] : dense) {
    rows.push_back({{"layer", id},
                    {"d_out", d.rows()},
                    {"d_in", d.cols()},
                    {"rank", nullptr},
                    {"alpha", nullptr},
                    {"norm", d.weight.norm()}});
  }

  if (as_json) {
    nlohmann::json doc = {{"concept_id", adapter.concept_id}, {"metadata", file.metadata}, {"layers", rows}};
    out << doc.dump(2) << "\n";
    return kOk;
  }
  out << "layer d_out d_in r alpha norm\n";
  for (const auto& row : rows) {
    const std::string r = row["rank"].is_null() ? "-" : std::to_string(row["rank"].get<Index>());
    const std::string a = row["alpha"].is_null() ? "-" : format_alpha(row["alpha"].get<double>());
    out << fmt::format("{} {} {} {} {} {:.6g}\n", row["layer"].get<std::string>(), row["d_out"].get<Index>(),
                       row["d_in"].get<Index>(), r, a, row["norm"].get<double>());
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string merged;
  std::vector<std::string> against;
  std::string report;
  ConfigFlags flags;
};

inline int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  const MergeConfig config = args.flags.resolve();
  Inputs in = load_inputs(args.against, args.flags);
  const DeltaMap all = loading(args.merged, [&] { return load_deltas(args.merged); });
  const BaseWeights* base = config.mode == FeatureMode::Full && in.base ? &*in.base : nullptr;

  DeltaMap deltas;
  LayerProbeSets probes;
  MergeReport report;
  try {
    loramerge::detail::require_unique_concepts(in.adapters);
    const MergePlan plan = filter_plan(validate_compatibility(in.adapters, base), args.flags.layers);
    for (const auto& l : plan.layers) {
      auto it = all.find(l.layer_id);
      if (it == all.end()) {
        err << fmt::format("skipping layer {}: not in merged file\n", l.layer_id);
        continue;
      }
      if (it->second.rows() != l.d_out || it->second.cols() != l.d_in) {
        throw Error(ErrorCode::ShapeMismatch, "merged layer '" + l.layer_id + "' is " + shape_string(it->second.weight));
      }
      deltas[l.layer_id] = it->second;
      probes[l.layer_id] = layer_probes(config, l.layer_id, l.d_in, in.adapters, &in.probes);
    }
    if (deltas.empty()) throw Error(ErrorCode::EmptyIntersection, "merged file shares no layers with the adapters");

    report = fidelity_metrics(deltas, in.adapters, probes, base, config.epsilon);
    for (const auto& [id, d] : deltas) {
      std::vector<FeatureSet> targets;
      for (std::size_t i = 0; i < in.adapters.size(); ++i) {
        targets.push_back(target_features(in.adapters[i], id, probes[id][i], base));
      }
      const ContrastiveObjective objective(config, targets, probes[id], base ? &base->layer(id) : nullptr);
      report.loss_trace_summary[id] = objective.evaluate(d.weight);
    }
    report.config_echo = config;
  } catch (const Error& e) {
    fail(kValidation, e.what());
  }

  const std::string text = to_json(report).dump(2) + "\n";
  if (args.report.empty()) {
    out << text;
  } else {
    write_text(args.report, text);
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepArgs {
  std::string grid;
  std::string output;
  std::string json_output;
  std::size_t threads = 1;
  bool timing = false;
  bool dry_run = false;
  ConfigFlags flags;
};

inline int cmd_sweep(const SweepArgs& args, std::ostream& out, std::ostream& /*err*/) {
  const MergeConfig defaults = args.flags.resolve();
  if (args.threads < 1) fail(kValidation, "--threads must be at least 1");
  SweepFile file;
  try {
    file = sweep_file_from_json(read_json(args.grid), defaults);
    for (double m : file.grid.margins) {
      for (double l : file.grid.lambdas) {
        MergeConfig c = file.config;
        c.margin = m;
        c.lambda_delta = l;
        c.validate();
      }
    }
    for (std::size_t n : file.grid.concept_counts) {
      SyntheticSpec s = file.spec;
      s.n_concepts = n;
      validate(s);
    }
  } catch (const Error& e) {
    fail(kValidation, e.what());
  }
  if (args.dry_run) {
    out << fmt::format("dry run: {} cells, nothing written\n", file.grid.cells());
    return kOk;
  }

  std::vector<SweepRow> rows;
  try {
    rows = sweep(file.grid, file.spec, file.config, SweepOptions{args.threads, args.timing});
  } catch (const NonFiniteLossError& e) {
    fail(kNumerical, e.what());
  } catch (const Error& e) {
    fail(kValidation, e.what());
  }

  std::ostringstream csv;
  write_sweep_csv(csv, rows);
  if (!args.json_output.empty()) {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& r : rows) doc.push_back(to_json(r));
    write_text(args.json_output, doc.dump(2) + "\n");
  }
  if (args.output.empty()) {
    out << csv.str();
  } else {
    write_text(args.output, csv.str());
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// export
// ---------------------------------------------------------------------------

inline int cmd_export(const std::string& merged, Index rank, const std::string& output, bool dry_run,
                      std::ostream& out) {
  const DeltaMap deltas = loading(merged, [&] { return load_deltas(merged); });
  if (deltas.empty()) fail(kValidation, "'" + merged + "' holds no merged layers");
  ExportResult exported;
  try {
    exported = export_merged(deltas, rank);
  } catch (const Error& e) {
    fail(kValidation, e.what());
  }
  for (const auto& [id, r] : exported.relative_residuals) {
    out << fmt::format("layer {} rank {} relative residual {:.6e}\n", id, rank, r);
  }
  if (dry_run) return kOk;
  exported.file.metadata["producer"] = "loramerge";
  try {
    write_tensor_file(output, exported.file);
  } catch (const Error& e) {
    fail(kIo, e.what());
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
  std::size_t concepts = 2;
  std::vector<std::string> layers{"layer0:64:64"};
  Index rank = 4;
  double overlap = 0.0;
  double scale = 1.0;
  std::optional<std::size_t> probes;
  std::uint64_t seed = 0;
  std::string output_dir;
};

inline SyntheticLayer parse_layer_spec(const std::string& text) {
  const auto a = text.find(':');
  const auto b = a == std::string::npos ? a : text.find(':', a + 1);
  if (a == std::string::npos || b == std::string::npos || a == 0) {
    fail(kValidation, "layer spec '" + text + "' must look like id:d_out:d_in");
  }
  try {
    return {text.substr(0, a), static_cast<Index>(std::stoll(text.substr(a + 1, b - a - 1))),
            static_cast<Index>(std::stoll(text.substr(b + 1)))};
  } catch (const std::exception&) {
    fail(kValidation, "layer spec '" + text + "' has non-numeric dimensions");
  }
}

inline int cmd_synth(const SynthArgs& args, std::ostream& out) {
  SyntheticSpec spec;
  spec.n_concepts = args.concepts;
  spec.rank = args.rank;
  spec.overlap = args.overlap;
  spec.scale = args.scale;
  spec.seed = args.seed;
  for (const auto& l : args.layers) spec.layers.push_back(parse_layer_spec(l));
  SyntheticSuite suite;
  try {
    suite = synth_adapters(spec, args.probes);
  } catch (const Error& e) {
    fail(kValidation, e.what());
  }
  try {
    fs::create_directories(args.output_dir);
    for (const auto& a : suite.adapters) {
      const fs::path adapter_path = fs::path(args.output_dir) / (a.concept_id + ".safetensors");
      const fs::path probe_path = fs::path(args.output_dir) / (a.concept_id + ".probes.safetensors");
      save_adapter(a, adapter_path);
      std::map<std::string, ProbeSet> per_layer;
      for (const auto& l : spec.layers) per_layer[l.layer_id] = *suite.probes.find(a.concept_id, l.layer_id);
      save_probe_file(per_layer, probe_path);
      out << fmt::format("wrote {} and {}\n", adapter_path.string(), probe_path.string());
    }
  } catch (const Error& e) {
    fail(kIo, e.what());
  } catch (const fs::filesystem_error& e) {
    fail(kIo, e.what());
  }
  return kOk;
}

}  // namespace detail

/// Parses `argv` and runs one subcommand. Never throws; returns the exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace detail;
  CLI::App app{"Merge low-rank adapters with a contrastive objective", "loramerge"};
  app.require_subcommand(1);

  MergeArgs merge;
  auto* merge_cmd = app.add_subcommand("merge", "Merge adapters into one delta per layer");
  merge_cmd->add_option("adapters", merge.adapters, "Adapter files")->required();
  merge_cmd->add_option("-o,--output", merge.output, "Merged output file")->required();
  merge_cmd->add_option("--report", merge.report, "JSON report path (default <output>.report.json)");
  merge_cmd->add_option("--rank", merge.rank, "Export as a rank-k adapter instead of dense deltas");
  merge_cmd->add_option("--threads", merge.threads, "Layers merged in parallel");
  merge_cmd->add_option("--trace-dir", merge.trace_dir, "Write per-layer loss traces as CSV");
  merge_cmd->add_flag("--dry-run", merge.dry_run, "Validate everything, write nothing");
  merge_cmd->add_flag("--timing", merge.timing, "Record wall time in the report");
  merge_cmd->add_flag("--json", merge.json, "Print the per-layer summary as JSON");
  merge.flags.attach(*merge_cmd);

  std::string inspect_path;
  bool inspect_json = false;
  auto* inspect_cmd = app.add_subcommand("inspect", "Print the layer table of a file");
  inspect_cmd->add_option("file", inspect_path, "Adapter or merged file")->required();
  inspect_cmd->add_flag("--json", inspect_json, "Machine-readable output");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Score a merged file against its source adapters");
  eval_cmd->add_option("merged", eval.merged, "Merged file")->required();
  eval_cmd->add_option("--against", eval.against, "Source adapter files")->required();
  eval_cmd->add_option("--report", eval.report, "Write the report here instead of stdout");
  eval.flags.attach(*eval_cmd);

  SweepArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run a margin x lambda x concept-count grid on synthetic suites");
  sweep_cmd->add_option("--grid", sweep_args.grid, "Grid JSON file")->required();
  sweep_cmd->add_option("-o,--output", sweep_args.output, "CSV output (default stdout)");
  sweep_cmd->add_option("--json", sweep_args.json_output, "Also write the rows as JSON");
  sweep_cmd->add_option("--threads", sweep_args.threads, "Cells evaluated in parallel");
  sweep_cmd->add_flag("--timing", sweep_args.timing, "Record wall time per cell");
  sweep_cmd->add_flag("--dry-run", sweep_args.dry_run, "Validate the grid, run nothing");
  sweep_args.flags.attach(*sweep_cmd);

  std::string export_input, export_output;
  Index export_rank = 0;
  bool export_dry = false;
  auto* export_cmd = app.add_subcommand("export", "Re-export a merged file as a rank-k adapter");
  export_cmd->add_option("merged", export_input, "Merged file")->required();
  export_cmd->add_option("--rank", export_rank, "Target rank")->required();
  export_cmd->add_option("-o,--output", export_output, "Output adapter")->required();
  export_cmd->add_flag("--dry-run", export_dry, "Report residuals, write nothing");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic adapter family and its probes");
  synth_cmd->add_option("--concepts", synth.concepts, "Number of concepts");
  synth_cmd->add_option("--layer", synth.layers, "Layer as id:d_out:d_in (repeatable)");
  synth_cmd->add_option("--rank", synth.rank, "Adapter rank");
  synth_cmd->add_option("--overlap", synth.overlap, "Row-space overlap in [0, 1]");
  synth_cmd->add_option("--scale", synth.scale, "Up-factor scale");
  synth_cmd->add_option("--probes", synth.probes, "Probes per concept per layer");
  synth_cmd->add_option("--seed", synth.seed, "Seed");
  synth_cmd->add_option("-o,--output", synth.output_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*merge_cmd) return cmd_merge(merge, out, err);
    if (*inspect_cmd) return cmd_inspect(inspect_path, inspect_json, out);
    if (*eval_cmd) return cmd_eval(eval, out, err);
    if (*sweep_cmd) return cmd_sweep(sweep_args, out, err);
    if (*export_cmd) {
      if (export_rank < 1) fail(kValidation, "--rank must be positive");
      return cmd_export(export_input, export_rank, export_output, export_dry, out);
    }
    if (*synth_cmd) return cmd_synth(synth, out);
  } catch (const Failure& f) {
    err << "error: " << f.message << "\n";
    return f.code;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::NonFiniteLoss ? kNumerical : kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  }
  return kValidation;
}

}  // namespace loramerge::cli
