#pragma once

#include <memory>
#include <vector>

#include "signformer/model.hpp"

namespace signformer {

struct Hypothesis {
  std::vector<int> tokens;  // generated ids, EOS included when reached
  double log_prob = 0.0;
  bool finished = false;  // EOS emitted or max length hit
};

// Stateful next-token scorer so that search code stays independent of the
// model internals (and can be driven by stubs in tests). States are cheap
// integer handles; advancing from the same state may be done many times.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual int vocab_size() const = 0;
  // Consumes BOS and returns the handle of the initial state plus the
  // logits of the first output position.
  virtual int start(std::vector<float>& logits) = 0;
  virtual int advance(int state, int token, std::vector<float>& logits) = 0;
};

class ModelStepScorer : public StepScorer {
 public:
  ModelStepScorer(const Model& model, Model::EncodedSource source);
  int vocab_size() const override;
  int start(std::vector<float>& logits) override;
  int advance(int state, int token, std::vector<float>& logits) override;

 private:
  const Model& model_;
  Model::EncodedSource source_;
  std::vector<Model::DecodeStream> streams_;
};

// score = log_prob / ((5+len)/6)^alpha
double length_penalty(int length, double alpha);

// Argmax decoding, ties broken by the lowest token id. Returns the
// generated ids without BOS/EOS.
std::vector<int> greedy_decode(StepScorer& scorer, int max_len);

// Breadth-limited best-first search; returns the highest-scoring finished
// hypothesis (ties broken lexicographically), without BOS/EOS.
std::vector<int> beam_search(StepScorer& scorer, int beam, double alpha,
                             int max_len);

// End-to-end convenience: encode one sequence and beam-decode it.
std::vector<int> translate(const Model& model, const Tensor& frames,
                           const Tensor& src_mask, int beam, double alpha,
                           int max_len);

}  // namespace signformer
