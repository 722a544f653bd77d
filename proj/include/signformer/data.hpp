#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "signformer/position.hpp"
#include "signformer/tensor.hpp"
#include "signformer/tokens.hpp"

namespace signformer {

struct SequenceSample {
  std::string id;
  Tensor frames;            // [T, F]
  std::vector<int> target;  // token ids, excluding BOS/EOS
};

struct FeatureDataset {
  std::vector<SequenceSample> sequences;
  int feature_dim = 0;
};

// "SGNF" little-endian binary container. Round-trips are bit-exact; a
// write goes to a temp file followed by an atomic rename.
void write_features(const std::string& path, const FeatureDataset& dataset);
FeatureDataset read_features(const std::string& path);

// One token per line; lines 0-3 must be <unk>, <pad>, <bos>, <eos>.
std::vector<std::string> read_vocab(const std::string& path);
void write_vocab(const std::string& path, const std::vector<std::string>& vocab);

struct Batch {
  Tensor frames;   // [B, Tmax, F], zero padded
  Tensor src_pad;  // [B, Tmax] {0,1}
  std::vector<int> src_lengths;
  // teacher forcing rows, each of length Lmax+1:
  // dec_inputs = BOS + target + PAD...; labels = target + EOS + PAD...
  std::vector<std::vector<int>> dec_inputs;
  std::vector<std::vector<int>> labels;
  Tensor tgt_causal;  // [Lmax+1, Lmax+1]
  std::vector<int> dataset_indices;
};

std::vector<Batch> make_batches(const FeatureDataset& dataset, int batch_size,
                                uint64_t seed, bool shuffle);

enum class SynthTask { kCopy, kOrder, kSegment };

struct SynthSpec {
  SynthTask task = SynthTask::kCopy;
  int vocab_size = 30;  // content tokens; reserved 4 come on top
  int len_min = 4;
  int len_max = 8;
  int frames_per_token_min = 4;   // segment task
  int frames_per_token_max = 12;  // segment task
  float noise_sigma = 0.1f;
  uint64_t projection_seed = 1234;
  int feature_dim = 1024;
  int n_train = 500;
  int n_dev = 100;
  int n_test = 100;

  void validate() const;
};

struct SynthDataset {
  FeatureDataset train, dev, test;
  std::vector<std::string> vocab;
};

// Deterministic synthetic stand-in tasks:
//   copy    - one frame per token: fixed random projection of the token plus noise
//   order   - pairs share a token multiset but differ in order (and so in target)
//   segment - each token emits a run of frames; adjacent repeated tokens appear
SynthDataset synth_generate(const SynthSpec& spec, uint64_t seed);

}  // namespace signformer
