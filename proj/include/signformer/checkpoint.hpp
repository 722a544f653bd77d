#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "signformer/model.hpp"
#include "signformer/train.hpp"

namespace signformer {

struct Checkpoint {
  std::string config_text;  // resolved key=value model config
  ModelConfig config;
  Parameters params;
  OptimizerKind optimizer_kind = OptimizerKind::kAdamW;
  uint64_t optimizer_step = 0;
  std::vector<std::vector<float>> opt_m, opt_second;  // lexicographic order
  // training progress
  int epoch = 0;
  double best_dev_bleu4 = -1.0;
  int scheduler_stale = 0;
  double scheduler_best = -1e300;
  double lr = 0.0;
  std::array<uint64_t, 4> rng_state{};
};

// "SGCK" little-endian binary container: config text, parameters in
// lexicographic order (name, rank, dims, float32 data), optimizer buffers
// in the same order, then training progress. Bit-exact round trip.
void save_checkpoint(const std::string& path, const Checkpoint& ck);

// When expect is given, every stored tensor is validated against the
// expected config, naming the first mismatching tensor.
Checkpoint load_checkpoint(const std::string& path,
                           const ModelConfig* expect = nullptr);

}  // namespace signformer
