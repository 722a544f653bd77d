#pragma once

#include <map>
#include <string>
#include <vector>

#include "signformer/data.hpp"
#include "signformer/model.hpp"
#include "signformer/train.hpp"

namespace signformer {

using KvMap = std::map<std::string, std::string>;

// Flat key=value text, '#' comments, one pair per line.
KvMap parse_kv_text(const std::string& text, const std::string& source_name);
KvMap read_kv_file(const std::string& path);

struct DecodeConfig {
  int beam = 5;
  double length_penalty_alpha = 1.0;
  int max_len = 60;
};

// The full run configuration: model + training + decoding. Unknown keys are
// rejected naming the key; later overrides win.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DecodeConfig decode;

  static RunConfig from_map(const KvMap& kv);
  static RunConfig from_file(const std::string& path,
                             const std::vector<std::string>& overrides = {});
  // Sorted key=value echo that reproduces this config exactly.
  std::string resolved_text() const;
};

// Model-only config text used inside checkpoints.
std::string model_config_text(const ModelConfig& cfg);
ModelConfig model_config_from_text(const std::string& text);

SynthSpec synth_spec_from_map(const KvMap& kv, uint64_t* seed_out);
SynthSpec synth_spec_from_file(const std::string& path, uint64_t* seed_out);

}  // namespace signformer
