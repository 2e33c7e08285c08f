#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "q2p/model.hpp"

namespace q2p {

// Adaptive-moment accumulators, one pair per parameter in ModelParams::all()
// order. Persisted alongside the parameters so resumed runs continue the
// exact update sequence.
struct OptimizerState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::uint64_t step = 0;

  static OptimizerState for_params(ModelParams& params) {
    OptimizerState s;
    for (auto* p : params.all()) {
      s.m.emplace_back(p->value.size(), 0.0f);
      s.v.emplace_back(p->value.size(), 0.0f);
    }
    return s;
  }
};

struct LoadedCheckpoint {
  ModelParams params;
  std::optional<OptimizerState> opt;
};

// File layout: 8-byte magic, little-endian u64 manifest length, JSON manifest
// (format version, model config, vocabulary sizes, array names/shapes,
// optimizer step), then each listed array as raw little-endian f32 in
// manifest order. Bit-exact round trip.
void save_checkpoint(const ModelParams& params, const OptimizerState* opt,
                     const std::string& path);

// `expected` guards structural fields (d, K, hidden): a stored model of a
// different shape is rejected rather than silently reinterpreted.
LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const ModelConfig* expected = nullptr);

}  // namespace q2p
