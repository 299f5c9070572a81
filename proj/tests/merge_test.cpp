// Copyright 2026 The loramerge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace loramerge {
namespace {

MergeConfig fast_config() {
  MergeConfig c;
  c.learning_rate = 0.2;
  c.lambda_delta = 0.0;
  c.max_steps = 3000;
  return c;
}

TEST(MergeLayer, SingleConceptRecoversDelta) {
  std::mt19937_64 gen(41);
  const auto a = testing::random_adapter(gen, "a", {{"l", 8, 8}}, 2, 0.5);
  const MergeConfig c = fast_config();
  const auto result = merge_layer(c, "l", {a});
  const Matrix truth = a.layer("l").effective_delta();
  EXPECT_LT(relative_frobenius_error(result.delta.weight, truth), 1e-2);

  const auto probes = sample_probes("a", "l", 8, static_cast<Index>(c.probes_for(8)), c.seed);
  const Matrix oracle = (truth * probes.inputs) * probes.inputs.completeOrthogonalDecomposition().pseudoInverse();
  EXPECT_LT(relative_frobenius_error(oracle, truth), 1e-10);
  EXPECT_LT(relative_frobenius_error(result.delta.weight, oracle), 1e-2);
}

TEST(MergeLayer, ZeroAdapterStaysZero) {
  LoraAdapter a;
  a.concept_id = "z";
  LoraLayer l;
  l.layer_id = "l";
  l.up = Matrix::Zero(4, 1);
  l.down = Matrix::Ones(1, 4);
  l.alpha = 1.0;
  a.layers.emplace("l", l);
  MergeConfig c;
  c.max_steps = 30;
  const auto r = merge_layer(c, "l", {a});
  EXPECT_TRUE(r.delta.weight.isZero(0.0));
  for (const auto& b : r.trace) EXPECT_EQ(b.total, 0.0);
}

TEST(MergeLayer, MonotoneTailOnDefaultConfig) {
  SyntheticSpec spec;
  spec.n_concepts = 3;
  spec.layers = {{"l", 16, 16}};
  spec.rank = 2;
  const auto suite = synth_adapters(spec);
  const MergeConfig c;  // library defaults
  const auto r = merge_layer(c, "l", suite.adapters, nullptr, &suite.probes);
  ASSERT_GT(r.trace.size(), 11u);
  for (std::size_t t = 11; t < r.trace.size(); ++t) {
    EXPECT_LE(r.trace[t].total, r.trace[t - 1].total + 1e-9) << t;
  }
  EXPECT_LT(r.trace.back().total, r.trace.front().total);
}

TEST(MergeLayer, TraceEndsAtReturnedDelta) {
  std::mt19937_64 gen(42);
  const auto a = testing::random_adapter(gen, "a", {{"l", 4, 4}}, 1);
  const auto b = testing::random_adapter(gen, "b", {{"l", 4, 4}}, 1);
  MergeConfig c;
  c.max_steps = 25;
  const auto r = merge_layer(c, "l", {a, b});
  EXPECT_EQ(r.trace.size(), 26u);
  EXPECT_FALSE(r.converged);
  std::vector<ProbeSet> probes = layer_probes(c, "l", 4, {a, b});
  std::vector<FeatureSet> targets{target_features(a, "l", probes[0]), target_features(b, "l", probes[1])};
  const ContrastiveObjective obj(c, targets, probes, nullptr);
  EXPECT_EQ(obj.evaluate(r.delta.weight).total, r.trace.back().total);
}

TEST(MergeLayer, PlateauStopsEarly) {
  std::mt19937_64 gen(43);
  const auto a = testing::random_adapter(gen, "a", {{"l", 6, 6}}, 2, 0.5);
  MergeConfig c = fast_config();
  c.lambda_delta = 0.001;
  c.max_steps = 100000;
  const auto r = merge_layer(c, "l", {a});
  EXPECT_TRUE(r.converged);
  EXPECT_LT(r.trace.size(), 100001u);
}

TEST(MergeLayer, AdamReducesLoss) {
  SyntheticSpec spec;
  spec.n_concepts = 2;
  spec.layers = {{"l", 16, 16}};
  spec.rank = 2;
  const auto suite = synth_adapters(spec);
  MergeConfig c;
  c.optimizer = Optimizer::Adam;
  c.learning_rate = 0.01;
  c.max_steps = 500;
  const auto r = merge_layer(c, "l", suite.adapters, nullptr, &suite.probes);
  EXPECT_LT(r.trace.back().total, 0.05 * r.trace.front().total);
}

TEST(MergeLayer, DivergenceRaisesNonFiniteLoss) {
  std::mt19937_64 gen(44);
  const auto a = testing::random_adapter(gen, "a", {{"l", 8, 8}}, 2);
  MergeConfig c;
  c.learning_rate = 50.0;
  c.max_steps = 1000;
  try {
    merge_layer(c, "l", {a});
    FAIL();
  } catch (const NonFiniteLossError& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteLoss);
    EXPECT_GT(e.step(), 0u);
  }
}

TEST(MergeLayer, FullModeNeedsBase) {
  std::mt19937_64 gen(45);
  const auto a = testing::random_adapter(gen, "a", {{"l", 4, 4}}, 1);
  MergeConfig c;
  c.mode = FeatureMode::Full;
  EXPECT_THROW(merge_layer(c, "l", {a}), Error);
  BaseWeights base;
  base.layers["l"] = Matrix::Identity(4, 4);
  c.max_steps = 5;
  EXPECT_NO_THROW(merge_layer(c, "l", {a}, &base));
}

TEST(MergeLayer, FullModeWithBaseRecoversDelta) {
  std::mt19937_64 gen(46);
  const auto a = testing::random_adapter(gen, "a", {{"l", 6, 6}}, 2, 0.5);
  BaseWeights base;
  base.layers["l"] = testing::gaussian(gen, 6, 6);
  MergeConfig c = fast_config();
  c.mode = FeatureMode::Full;
  const auto r = merge_layer(c, "l", {a}, &base);
  EXPECT_LT(relative_frobenius_error(r.delta.weight, a.layer("l").effective_delta()), 1e-2);
}

TEST(MergeAdapters, TwoLayersSingleAdapter) {
  std::mt19937_64 gen(47);
  const auto a = testing::random_adapter(gen, "a", {{"p", 6, 6}, {"q", 4, 8}}, 2, 0.5);
  const auto out = merge_adapters(fast_config(), {a});
  ASSERT_EQ(out.deltas.size(), 2u);
  for (const auto& [id, d] : out.deltas) {
    EXPECT_LT(relative_frobenius_error(d.weight, a.layer(id).effective_delta()), 1e-2) << id;
  }
  EXPECT_FALSE(out.report.min_cross_distance.has_value());
  EXPECT_EQ(out.report.config_echo, fast_config());
}

TEST(MergeAdapters, DisjointLayersIsEmptyIntersection) {
  std::mt19937_64 gen(48);
  const auto a = testing::random_adapter(gen, "a", {{"p", 4, 4}}, 1);
  const auto b = testing::random_adapter(gen, "b", {{"q", 4, 4}}, 1);
  try {
    merge_adapters(MergeConfig{}, {a, b});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyIntersection);
  }
}

TEST(MergeAdapters, DuplicateConceptsRejected) {
  std::mt19937_64 gen(49);
  const auto a = testing::random_adapter(gen, "a", {{"p", 4, 4}}, 1);
  EXPECT_THROW(merge_adapters(MergeConfig{}, {a, a}), Error);
}

TEST(MergeAdapters, DeterministicAcrossRunsAndThreads) {
  SyntheticSpec spec;
  spec.n_concepts = 3;
  spec.layers = {{"a", 12, 12}, {"b", 8, 12}, {"c", 12, 8}, {"d", 6, 6}};
  spec.rank = 2;
  const auto suite = synth_adapters(spec);
  MergeConfig c;
  c.learning_rate = 0.5;
  c.max_steps = 200;
  MergeOptions one;
  one.record_wall_time = false;
  MergeOptions many = one;
  many.threads = 8;
  const auto r1 = merge_adapters(c, suite.adapters, nullptr, one);
  const auto r2 = merge_adapters(c, suite.adapters, nullptr, one);
  const auto r8 = merge_adapters(c, suite.adapters, nullptr, many);
  EXPECT_EQ(r1.deltas, r2.deltas);
  EXPECT_EQ(r1.deltas, r8.deltas);
  EXPECT_EQ(r1.report, r8.report);
  EXPECT_EQ(r1.traces, r8.traces);
}

TEST(MergeAdapters, LayerIndependence) {
  SyntheticSpec spec;
  spec.n_concepts = 2;
  spec.layers = {{"a", 8, 8}, {"b", 6, 10}};
  spec.rank = 2;
  const auto suite = synth_adapters(spec);
  MergeConfig c;
  c.learning_rate = 0.5;
  c.max_steps = 100;
  const auto joint = merge_adapters(c, suite.adapters);
  for (const std::string id : {"a", "b"}) {
    MergeOptions only;
    only.layer_filter = id;
    const auto alone = merge_adapters(c, suite.adapters, nullptr, only);
    ASSERT_EQ(alone.deltas.size(), 1u);
    EXPECT_EQ(alone.deltas.at(id), joint.deltas.at(id));
  }
}

TEST(MergeAdapters, FailingLayerAbortsEverything) {
  std::mt19937_64 gen(50);
  auto a = testing::random_adapter(gen, "a", {{"ok", 4, 4}}, 1, 0.1);
  a.layers.emplace("bad", testing::random_layer(gen, "bad", 8, 8, 2, 2.0, 3.0));
  MergeConfig c;
  c.learning_rate = 5.0;
  MergeOptions opts;
  opts.threads = 2;
  EXPECT_THROW(merge_adapters(c, {a}, nullptr, opts), NonFiniteLossError);
}

TEST(MergeAdapters, ProbeBankOverridesSampling) {
  SyntheticSpec spec;
  spec.n_concepts = 2;
  spec.layers = {{"l", 8, 8}};
  spec.rank = 2;
  const auto suite = synth_adapters(spec, 12);
  MergeConfig c;
  const auto sets = layer_probes(c, "l", 8, suite.adapters, &suite.probes);
  EXPECT_EQ(sets[0].inputs, suite.probes.find("concept_00", "l")->inputs);
  EXPECT_EQ(sets[0].count(), 12);
  const auto sampled = layer_probes(c, "l", 8, suite.adapters);
  EXPECT_EQ(sampled[0].count(), 32);
}

}  // namespace
}  // namespace loramerge
