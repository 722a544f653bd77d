#include "signformer/decode.hpp"

#include <algorithm>
#include <cmath>

namespace signformer {

namespace {

// log-softmax at 64 bit
std::vector<double> log_probs(const std::vector<float>& logits) {
  double mx = logits[0];
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  double denom = 0.0;
  for (float v : logits) denom += std::exp(static_cast<double>(v) - mx);
  const double lse = mx + std::log(denom);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    out[i] = static_cast<double>(logits[i]) - lse;
  return out;
}

std::vector<int> strip_eos(std::vector<int> tokens) {
  if (!tokens.empty() && tokens.back() == kEosId) tokens.pop_back();
  return tokens;
}

}  // namespace

ModelStepScorer::ModelStepScorer(const Model& model, Model::EncodedSource source)
    : model_(model), source_(std::move(source)) {}

int ModelStepScorer::vocab_size() const { return model_.config().vocab_v; }

int ModelStepScorer::start(std::vector<float>& logits) {
  streams_.push_back(model_.new_stream());
  logits = model_.decode_step(source_, streams_.back(), kBosId);
  return static_cast<int>(streams_.size()) - 1;
}

int ModelStepScorer::advance(int state, int token, std::vector<float>& logits) {
  check(state >= 0 && state < static_cast<int>(streams_.size()),
        "invalid decode state handle");
  streams_.push_back(streams_[state]);  // branch the cache
  logits = model_.decode_step(source_, streams_.back(), token);
  return static_cast<int>(streams_.size()) - 1;
}

double length_penalty(int length, double alpha) {
  if (alpha == 0.0) return 1.0;
  return std::pow((5.0 + length) / 6.0, alpha);
}

std::vector<int> greedy_decode(StepScorer& scorer, int max_len) {
  check(max_len >= 1, "max_len must be >= 1");
  std::vector<float> logits;
  int state = scorer.start(logits);
  std::vector<int> out;
  for (int step = 0; step < max_len; ++step) {
    int best = 0;
    for (int v = 1; v < static_cast<int>(logits.size()); ++v)
      if (logits[v] > logits[best]) best = v;
    if (best == kEosId) break;
    out.push_back(best);
    if (step + 1 == max_len) break;
    state = scorer.advance(state, best, logits);
  }
  return out;
}

std::vector<int> beam_search(StepScorer& scorer, int beam, double alpha,
                             int max_len) {
  check(beam >= 1, "beam width must be >= 1");
  check(max_len >= 1, "max_len must be >= 1");

  struct Live {
    std::vector<int> tokens;
    double log_prob = 0.0;
    int state = -1;
    std::vector<double> next;  // log-probs of the next token
  };

  std::vector<float> logits;
  Live root;
  root.state = scorer.start(logits);
  root.next = log_probs(logits);

  std::vector<Live> live{std::move(root)};
  std::vector<Hypothesis> finished;

  for (int step = 0; step < max_len && !live.empty(); ++step) {
    struct Candidate {
      double log_prob;
      int parent;
      int token;
    };
    std::vector<Candidate> candidates;
    candidates.reserve(live.size() * static_cast<std::size_t>(scorer.vocab_size()));
    for (std::size_t p = 0; p < live.size(); ++p)
      for (int v = 0; v < scorer.vocab_size(); ++v)
        candidates.push_back({live[p].log_prob + live[p].next[v],
                              static_cast<int>(p), v});
    const std::size_t keep = std::min<std::size_t>(beam, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + keep, candidates.end(),
                      [&](const Candidate& a, const Candidate& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        if (a.token != b.token) return a.token < b.token;
                        return live[a.parent].tokens < live[b.parent].tokens;
                      });
    std::vector<Live> next_live;
    for (std::size_t c = 0; c < keep; ++c) {
      const Candidate& cand = candidates[c];
      std::vector<int> tokens = live[cand.parent].tokens;
      tokens.push_back(cand.token);
      if (cand.token == kEosId) {
        finished.push_back({std::move(tokens), cand.log_prob, true});
        continue;
      }
      if (step + 1 == max_len) {
        finished.push_back({std::move(tokens), cand.log_prob, true});
        continue;
      }
      Live child;
      child.tokens = std::move(tokens);
      child.log_prob = cand.log_prob;
      child.state = scorer.advance(live[cand.parent].state, cand.token, logits);
      child.next = log_probs(logits);
      next_live.push_back(std::move(child));
    }
    live = std::move(next_live);
  }

  check(!finished.empty(), "beam search produced no hypotheses");
  const Hypothesis* best = &finished[0];
  double best_score =
      best->log_prob / length_penalty(static_cast<int>(best->tokens.size()), alpha);
  for (const auto& hyp : finished) {
    const double score =
        hyp.log_prob / length_penalty(static_cast<int>(hyp.tokens.size()), alpha);
    if (score > best_score ||
        (score == best_score && hyp.tokens < best->tokens)) {
      best = &hyp;
      best_score = score;
    }
  }
  return strip_eos(best->tokens);
}

std::vector<int> translate(const Model& model, const Tensor& frames,
                           const Tensor& src_mask, int beam, double alpha,
                           int max_len) {
  ModelStepScorer scorer(model, model.encode_source(frames, src_mask));
  return beam == 1 && alpha == 0.0 ? greedy_decode(scorer, max_len)
                                   : beam_search(scorer, beam, alpha, max_len);
}

}  // namespace signformer
