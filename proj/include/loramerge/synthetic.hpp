// Copyright 2026 The loramerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Synthetic adapter families with controllable row-space overlap.
//
// Concept i at a layer gets a d_in x r orthonormal basis B_i and
//   down_i = R_i B_i^T   (R_i a random r x r rotation)
//   up_i   = scale * G_i (G_i Gaussian, d_out x r)
//   alpha  = r
// so delta_i = up_i R_i B_i^T. Its probes are X_i = B_i Z_i. With overlap 0
// the B_i are disjoint blocks of one orthonormal basis, hence delta_j X_i = 0
// for j != i and the plain sum of deltas is an exact merge. Overlap t in (0,1]
// pulls every B_i towards one shared basis S; at t = 1 all B_i span S.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "loramerge/adapter.hpp"
#include "loramerge/error.hpp"
#include "loramerge/linalg.hpp"
#include "loramerge/probes.hpp"
#include "loramerge/random.hpp"

namespace loramerge {

struct SyntheticLayer {
  std::string layer_id;
  Index d_out = 0;
  Index d_in = 0;

  bool operator==(const SyntheticLayer&) const = default;
};

struct SyntheticSpec {
  std::size_t n_concepts = 2;
  std::vector<SyntheticLayer> layers;
  Index rank = 4;
  double overlap = 0.0;
  double scale = 1.0;
  std::uint64_t seed = 0;

  bool operator==(const SyntheticSpec&) const = default;
};

struct SyntheticSuite {
  std::vector<LoraAdapter> adapters;
  std::map<std::string, std::vector<Matrix>> ground_truth;  // effective delta per concept, by layer
  std::map<std::string, std::vector<Matrix>> row_bases;     // B_i per concept, by layer
  ProbeBank probes;
};

inline std::string synthetic_concept_id(std::size_t i) {
  std::string digits = std::to_string(i);
  if (digits.size() < 2) digits.insert(0, 2 - digits.size(), '0');
  return "concept_" + digits;
}

inline void validate(const SyntheticSpec& spec) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::SpecInfeasible, what); };
  if (spec.n_concepts == 0) fail("need at least one concept");
  if (spec.layers.empty()) fail("need at least one layer");
  if (spec.rank < 1) fail("rank must be positive");
  if (!(spec.overlap >= 0.0 && spec.overlap <= 1.0)) fail("overlap must lie in [0, 1]");
  if (!(spec.scale > 0.0)) fail("scale must be positive");
  for (const auto& l : spec.layers) {
    if (spec.rank > std::min(l.d_out, l.d_in)) fail("rank exceeds min(d_out, d_in) at layer '" + l.layer_id + "'");
    if (spec.overlap == 0.0 && static_cast<Index>(spec.n_concepts) * spec.rank > l.d_in) {
      fail("n_concepts * rank exceeds d_in at layer '" + l.layer_id + "'; disjoint row spaces do not fit");
    }
  }
}

/// `probe_count` defaults to 4 * d_in per concept per layer.
inline SyntheticSuite synth_adapters(const SyntheticSpec& spec, std::optional<std::size_t> probe_count = std::nullopt) {
  validate(spec);
  const Index r = spec.rank;
  const auto concepts = static_cast<Index>(spec.n_concepts);

  SyntheticSuite suite;
  suite.adapters.resize(spec.n_concepts);
  for (std::size_t i = 0; i < spec.n_concepts; ++i) suite.adapters[i].concept_id = synthetic_concept_id(i);

  for (const auto& layer : spec.layers) {
    const std::string& id = layer.layer_id;
    const bool disjoint_fits = concepts * r <= layer.d_in;
    Matrix blocks;
    if (disjoint_fits) blocks = rng::random_orthonormal(rng::stream_key(spec.seed, "basis", id), layer.d_in, concepts * r);
    const Matrix shared = rng::random_orthonormal(rng::stream_key(spec.seed, "shared", id), layer.d_in, r);
    const Index n = static_cast<Index>(probe_count.value_or(4 * static_cast<std::size_t>(layer.d_in)));

    auto& truths = suite.ground_truth[id];
    auto& bases = suite.row_bases[id];
    for (Index i = 0; i < concepts; ++i) {
      auto& adapter = suite.adapters[static_cast<std::size_t>(i)];
      const std::string& cid = adapter.concept_id;

      Matrix own = disjoint_fits
                       ? Matrix(blocks.middleCols(i * r, r))
                       : rng::random_orthonormal(rng::stream_key(spec.seed, "private", cid, id), layer.d_in, r);
      Matrix basis;
      if (spec.overlap == 0.0) {
        basis = std::move(own);
      } else if (spec.overlap == 1.0) {
        basis = shared;
      } else {
        const Matrix blend = (1.0 - spec.overlap) * own + spec.overlap * shared;
        Eigen::HouseholderQR<Matrix> qr(blend);
        basis = qr.householderQ() * Matrix::Identity(layer.d_in, r);
      }

      const Matrix rotation = rng::random_orthonormal(rng::stream_key(spec.seed, "rotation", cid, id), r, r);
      LoraLayer l;
      l.layer_id = id;
      l.up = rng::GaussianStream(rng::stream_key(spec.seed, "up", cid, id)).matrix(layer.d_out, r, spec.scale);
      l.down = rotation * basis.transpose();
      l.alpha = static_cast<double>(r);
      truths.push_back(l.effective_delta());
      adapter.layers.emplace(id, std::move(l));

      ProbeSet coords = sample_probes(cid, id, r, n, spec.seed);
      suite.probes.insert(ProbeSet{cid, id, basis * coords.inputs, spec.seed});
      bases.push_back(std::move(basis));
    }
  }
  return suite;
}

}  // namespace loramerge
