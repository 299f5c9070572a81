// Copyright 2026 The loramerge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "test_util.hpp"

namespace loramerge {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "loramerge");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    ::unsetenv("LORAMERGE_SEED");
    const auto r = run({"synth", "--concepts", "2", "--layer", "q:16:16", "--layer", "k:8:16", "--rank", "2",
                        "--probes", "24", "-o", dir / "s"});
    ASSERT_EQ(r.code, 0) << r.err;
    a = dir / "s/concept_00.safetensors";
    b = dir / "s/concept_01.safetensors";
  }
  void TearDown() override { ::unsetenv("LORAMERGE_SEED"); }

  TempDir dir;
  std::string a, b;
};

TEST_F(Cli, MergeEchoesDefaults) {
  const auto r = run({"merge", a, b, "-o", dir / "m.st", "--margin", "0.5", "--lambda", "0.001", "--lr", "1e-4",
                      "--steps", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = nlohmann::json::parse(slurp(dir / "m.st.report.json"));
  EXPECT_EQ(report["config_echo"]["margin"], 0.5);
  EXPECT_EQ(report["config_echo"]["lambda_delta"], 0.001);
  EXPECT_EQ(report["config_echo"]["learning_rate"], 1e-4);
  EXPECT_NE(r.out.find("layer k steps 3 total"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("layer q steps 3 total"), std::string::npos);

  const auto plain = run({"merge", a, b, "-o", dir / "d.st", "--steps", "3"});
  ASSERT_EQ(plain.code, 0);
  const auto defaults = nlohmann::json::parse(slurp(dir / "d.st.report.json"))["config_echo"];
  EXPECT_EQ(defaults["margin"], 0.5);
  EXPECT_EQ(defaults["lambda_delta"], 0.001);
  EXPECT_EQ(defaults["learning_rate"], 1e-4);
  EXPECT_EQ(defaults["mode"], "delta-only");
}

TEST_F(Cli, SingleAdapterRecovery) {
  const auto r = run({"merge", a, "-o", dir / "one.st", "--lambda", "0", "--lr", "0.2", "--steps", "4000"});
  ASSERT_EQ(r.code, 0) << r.err;
  const DeltaMap merged = load_deltas(dir / "one.st");
  const LoraAdapter src = load_adapter(a);
  for (const auto& [id, d] : merged) {
    EXPECT_LT(relative_frobenius_error(d.weight, src.layer(id).effective_delta()), 1e-2) << id;
  }
}

TEST_F(Cli, MissingInputIsIoErrorAndWritesNothing) {
  const auto r = run({"merge", a, dir / "nope.st", "-o", dir / "m.st"});
  EXPECT_EQ(r.code, 3);
  EXPECT_FALSE(fs::exists(dir / "m.st"));
  EXPECT_FALSE(fs::exists(dir / "m.st.report.json"));
}

TEST_F(Cli, ValidationFailuresExitTwoBeforeWriting) {
  EXPECT_EQ(run({"merge", a, "-o", dir / "m.st", "--margin", "-1"}).code, 2);
  EXPECT_EQ(run({"merge", a, "-o", dir / "m.st", "--mode", "full"}).code, 2);
  EXPECT_EQ(run({"merge", a, "-o", dir / "m.st", "--mode", "sideways"}).code, 2);
  EXPECT_EQ(run({"merge", a, "-o", dir / "m.st", "--rank", "99"}).code, 2);
  EXPECT_EQ(run({"merge", a, "-o", dir / "m.st", "--layers", "zzz*"}).code, 2);
  EXPECT_EQ(run({"merge", a, a, "-o", dir / "m.st"}).code, 2);
  EXPECT_EQ(run({"merge", "-o", dir / "m.st"}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_FALSE(fs::exists(dir / "m.st"));
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(Cli, NumericalFailureExitsFour) {
  const auto r = run({"merge", a, b, "-o", dir / "m.st", "--lr", "1000", "--steps", "200"});
  EXPECT_EQ(r.code, 4) << r.err;
  EXPECT_FALSE(fs::exists(dir / "m.st"));
  EXPECT_FALSE(fs::exists(dir / "m.st.report.json"));
}

TEST_F(Cli, DryRunWritesNothing) {
  const auto r = run({"merge", a, b, "-o", dir / "m.st", "--dry-run", "--trace-dir", dir / "traces"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_FALSE(fs::exists(dir / "m.st"));
  EXPECT_FALSE(fs::exists(dir / "m.st.report.json"));
  EXPECT_FALSE(fs::exists(dir / "traces"));
  EXPECT_EQ(run({"merge", a, b, "-o", dir / "m.st", "--dry-run", "--rank", "99"}).code, 2);
}

TEST_F(Cli, SeedReproducibilityAndThreads) {
  const std::vector<std::string> common{"merge", a, b, "--seed", "7", "--lr", "0.5", "--steps", "150"};
  auto with = [&](std::vector<std::string> extra) {
    auto args = common;
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  };
  ASSERT_EQ(with({"-o", dir / "r1.st"}).code, 0);
  ASSERT_EQ(with({"-o", dir / "r2.st", "--report", dir / "r2.json"}).code, 0);
  ASSERT_EQ(with({"-o", dir / "r8.st", "--report", dir / "r8.json", "--threads", "8"}).code, 0);
  EXPECT_EQ(slurp(dir / "r1.st"), slurp(dir / "r2.st"));
  EXPECT_EQ(slurp(dir / "r1.st"), slurp(dir / "r8.st"));
  EXPECT_EQ(slurp(dir / "r1.st.report.json"), slurp(dir / "r2.json"));
  EXPECT_EQ(slurp(dir / "r1.st.report.json"), slurp(dir / "r8.json"));

  ASSERT_EQ(run({"merge", a, b, "--seed", "8", "--lr", "0.5", "--steps", "150", "-o", dir / "s8.st"}).code, 0);
  EXPECT_NE(slurp(dir / "r1.st"), slurp(dir / "s8.st"));
}

TEST_F(Cli, SeedPrecedence) {
  auto seed_in = [&](const std::string& name) {
    return nlohmann::json::parse(slurp(dir / (name + ".report.json")))["config_echo"]["seed"].get<std::uint64_t>();
  };
  ::setenv("LORAMERGE_SEED", "11", 1);
  ASSERT_EQ(run({"merge", a, "-o", dir / "env", "--steps", "1"}).code, 0);
  EXPECT_EQ(seed_in("env"), 11u);
  ASSERT_EQ(run({"merge", a, "-o", dir / "flag", "--steps", "1", "--seed", "12"}).code, 0);
  EXPECT_EQ(seed_in("flag"), 12u);

  std::ofstream(dir / "cfg.json") << R"({"seed": 13, "margin": 0.9, "learning_rate": 0.01})";
  ASSERT_EQ(run({"merge", a, "-o", dir / "cfg", "--steps", "1", "--config", dir / "cfg.json"}).code, 0);
  EXPECT_EQ(seed_in("cfg"), 13u);
  ASSERT_EQ(run({"merge", a, "-o", dir / "both", "--steps", "1", "--config", dir / "cfg.json", "--margin", "0.2"}).code, 0);
  const auto echo = nlohmann::json::parse(slurp(dir / "both.report.json"))["config_echo"];
  EXPECT_EQ(echo["margin"], 0.2);
  EXPECT_EQ(echo["learning_rate"], 0.01);

  ::setenv("LORAMERGE_SEED", "abc", 1);
  EXPECT_EQ(run({"merge", a, "-o", dir / "bad", "--steps", "1"}).code, 2);
  std::ofstream(dir / "bad.json") << R"({"colour": 1})";
  ::unsetenv("LORAMERGE_SEED");
  EXPECT_EQ(run({"merge", a, "-o", dir / "bad", "--config", dir / "bad.json"}).code, 2);
  EXPECT_FALSE(fs::exists(dir / "bad"));
}

TEST_F(Cli, JsonSummaryTraceDirAndLayerFilter) {
  const auto r = run({"merge", a, b, "-o", dir / "m.st", "--steps", "4", "--json", "--layers", "q*", "--trace-dir",
                      dir / "traces"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_TRUE(j["layers"].contains("q"));
  EXPECT_FALSE(j["layers"].contains("k"));
  EXPECT_EQ(j["layers"]["q"]["steps"], 4);
  const std::string trace = slurp(dir / "traces/q.csv");
  EXPECT_EQ(trace.rfind("step,positive,negative,penalty,total\n", 0), 0u);
  EXPECT_EQ(std::count(trace.begin(), trace.end(), '\n'), 6);
  EXPECT_EQ(load_deltas(dir / "m.st").count("k"), 0u);
}

TEST_F(Cli, FullModeWithBase) {
  BaseWeights base;
  base.layers["q"] = Matrix::Identity(16, 16);
  base.layers["k"] = Matrix::Zero(8, 16);
  save_base(base, dir / "base.st");
  const auto r = run({"merge", a, b, "-o", dir / "m.st", "--base", dir / "base.st", "--steps", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "m.st.report.json"))["config_echo"]["mode"], "full");
  BaseWeights small;
  small.layers["q"] = Matrix::Identity(4, 4);
  save_base(small, dir / "small.st");
  EXPECT_EQ(run({"merge", a, "-o", dir / "x.st", "--base", dir / "small.st", "--mode", "full"}).code, 2);
}

TEST_F(Cli, ProbesFromFile) {
  const std::vector<std::string> args{"merge", a, b, "-o", dir / "p.st", "--steps", "2", "--probes-from-file",
                                      dir / "s/concept_00.probes.safetensors", dir / "s/concept_01.probes.safetensors"};
  ASSERT_EQ(run(args).code, 0);
  EXPECT_EQ(run({"merge", a, b, "-o", dir / "p2.st", "--probes-from-file", dir / "s/concept_00.probes.safetensors"}).code, 2);
}

TEST(CliInspect, TableRowAndJson) {
  TempDir dir;
  LoraAdapter ad;
  ad.concept_id = "x";
  LoraLayer l;
  l.layer_id = "a";
  l.up = Matrix::Ones(4, 2);
  l.down = Matrix::Ones(2, 8);
  l.alpha = 2.0;
  ad.layers.emplace("a", l);
  save_adapter(ad, dir / "x.st");
  const auto r = run({"inspect", dir / "x.st"});
  ASSERT_EQ(r.code, 0) << r.err;
  const double norm = l.effective_delta().norm();
  EXPECT_NE(r.out.find(fmt::format("a 4 8 2 2.0 {:.6g}\n", norm)), std::string::npos) << r.out;

  const auto j = run({"inspect", dir / "x.st", "--json"});
  ASSERT_EQ(j.code, 0);
  const auto doc = nlohmann::json::parse(j.out);
  EXPECT_EQ(doc["layers"][0]["rank"], 2);
  EXPECT_NEAR(doc["layers"][0]["norm"].get<double>(), norm, 1e-9);

  std::ofstream(dir / "bad.st", std::ios::binary) << std::string("\x10\0\0\0\0\0\0\0{{{{{{{{{{{{{{{{", 24);
  const auto bad = run({"inspect", dir / "bad.st"});
  EXPECT_EQ(bad.code, 3);
  EXPECT_NE(bad.err.find("MalformedHeader"), std::string::npos) << bad.err;
  EXPECT_EQ(run({"inspect", dir / "missing.st"}).code, 3);
}

TEST_F(Cli, EvalPrintsReport) {
  ASSERT_EQ(run({"merge", a, b, "-o", dir / "m.st", "--steps", "5"}).code, 0);
  const auto r = run({"eval", dir / "m.st", "--against", a, b});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto doc = nlohmann::json::parse(r.out);
  EXPECT_TRUE(doc["per_concept_fidelity"].contains("concept_00"));
  EXPECT_GE(doc["retrieval_accuracy"].get<double>(), 0.0);
  // Same probes as the merge; only the f32 rounding of the stored delta differs.
  const auto merged = nlohmann::json::parse(slurp(dir / "m.st.report.json"));
  for (const auto& [id, f] : merged["per_concept_fidelity"].items()) {
    EXPECT_NEAR(doc["per_concept_fidelity"][id].get<double>(), f.get<double>(), 1e-5) << id;
  }
  for (const auto& [id, b] : merged["loss_trace_summary"].items()) {
    EXPECT_NEAR(doc["loss_trace_summary"][id]["total"].get<double>(), b["total"].get<double>(),
                1e-5 * b["total"].get<double>());
  }
}

TEST_F(Cli, ExportReportsSvdResidual) {
  ASSERT_EQ(run({"merge", a, b, "-o", dir / "m.st", "--steps", "5"}).code, 0);
  const auto r = run({"export", dir / "m.st", "--rank", "4", "-o", dir / "lora.st"});
  ASSERT_EQ(r.code, 0) << r.err;
  const DeltaMap dense = load_deltas(dir / "m.st");
  const LoraAdapter lora = load_adapter(dir / "lora.st");
  for (const auto& [id, d] : dense) {
    const double residual = relative_frobenius_error(lora.layer(id).effective_delta(), d.weight);
    Eigen::JacobiSVD<Matrix> svd(d.weight);
    const Vector s = svd.singularValues();
    const double oracle = std::sqrt(s.tail(s.size() - 4).squaredNorm() / s.squaredNorm());
    EXPECT_NEAR(residual, oracle, 1e-5) << id;
    EXPECT_NE(r.out.find(fmt::format("layer {} rank 4 relative residual {:.6e}", id, oracle).substr(0, 36)),
              std::string::npos);
    EXPECT_EQ(lora.layer(id).rank(), 4);
  }
  EXPECT_EQ(run({"export", dir / "m.st", "--rank", "9", "-o", dir / "big.st"}).code, 2);
  EXPECT_FALSE(fs::exists(dir / "big.st"));
}

TEST(CliSweep, OneCellGridGivesOneRow) {
  TempDir dir;
  std::ofstream(dir / "grid.json") << R"({"margins":[0.5],"lambdas":[0.001],"concept_counts":[2],
    "spec":{"rank":2,"layers":[{"id":"l","d_out":8,"d_in":8}]},"config":{"max_steps":20}})";
  const auto r = run({"sweep", "--grid", dir / "grid.json"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 2);
  EXPECT_EQ(r.out.rfind("margin,lambda_delta,n_concepts,seed,", 0), 0u);

  ASSERT_EQ(run({"sweep", "--grid", dir / "grid.json", "-o", dir / "s.csv", "--json", dir / "s.json"}).code, 0);
  EXPECT_EQ(slurp(dir / "s.csv"), r.out);
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "s.json")).size(), 1u);

  std::ofstream(dir / "bad.json") << R"({"concept_counts":[40]})";
  EXPECT_EQ(run({"sweep", "--grid", dir / "bad.json"}).code, 2);
  EXPECT_EQ(run({"sweep", "--grid", dir / "missing.json"}).code, 3);
}

}  // namespace
}  // namespace loramerge
