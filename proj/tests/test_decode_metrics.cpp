#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "signformer/decode.hpp"
#include "signformer/macs.hpp"
#include "signformer/metrics.hpp"
#include "signformer/model.hpp"

using namespace signformer;

namespace {

// deterministic fake scorer: logits depend on the whole prefix via a hash
class StubScorer : public StepScorer {
 public:
  StubScorer(int vocab, uint64_t seed, float spread = 2.0f)
      : vocab_(vocab), seed_(seed), spread_(spread) {}

  int vocab_size() const override { return vocab_; }

  int start(std::vector<float>& logits) override {
    prefixes_.push_back({});
    logits = logits_for(prefixes_.back());
    return static_cast<int>(prefixes_.size()) - 1;
  }

  int advance(int state, int token, std::vector<float>& logits) override {
    auto prefix = prefixes_[state];
    prefix.push_back(token);
    prefixes_.push_back(prefix);
    logits = logits_for(prefixes_.back());
    return static_cast<int>(prefixes_.size()) - 1;
  }

  std::vector<float> logits_for(const std::vector<int>& prefix) const {
    uint64_t h = seed_;
    for (int t : prefix) h = h * 0x100000001b3ULL + static_cast<uint64_t>(t + 1);
    Rng rng(h);
    std::vector<float> logits(vocab_);
    for (auto& v : logits) v = rng.uniform(-spread_, spread_);
    return logits;
  }

 private:
  int vocab_;
  uint64_t seed_;
  float spread_;
  std::vector<std::vector<int>> prefixes_;
};

std::vector<double> log_probs64(const std::vector<float>& logits) {
  double mx = logits[0];
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  double denom = 0.0;
  for (float v : logits) denom += std::exp(static_cast<double>(v) - mx);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    out[i] = static_cast<double>(logits[i]) - (mx + std::log(denom));
  return out;
}

// brute-force oracle: scores every sequence the search could produce
struct Enumerated {
  std::vector<int> best_tokens;
  double best_score = -1e300;
};

void enumerate_rec(const StubScorer& scorer, std::vector<int>& prefix, double logp,
                   int max_len, double alpha, Enumerated& result) {
  const bool has_eos = scorer.vocab_size() > kEosId;
  if (!prefix.empty() &&
      ((has_eos && prefix.back() == kEosId) ||
       static_cast<int>(prefix.size()) == max_len)) {
    std::vector<int> tokens = prefix;
    const double score =
        logp / length_penalty(static_cast<int>(tokens.size()), alpha);
    if (!tokens.empty() && tokens.back() == kEosId && has_eos) tokens.pop_back();
    if (score > result.best_score ||
        (score == result.best_score && prefix < result.best_tokens)) {
      result.best_score = score;
      result.best_tokens = tokens;
    }
    return;
  }
  auto lp = log_probs64(scorer.logits_for(prefix));
  for (int v = 0; v < scorer.vocab_size(); ++v) {
    prefix.push_back(v);
    enumerate_rec(scorer, prefix, logp + lp[v], max_len, alpha, result);
    prefix.pop_back();
  }
}

Enumerated enumerate_best(const StubScorer& scorer, int max_len, double alpha) {
  Enumerated result;
  std::vector<int> prefix;
  enumerate_rec(scorer, prefix, 0.0, max_len, alpha, result);
  return result;
}

std::vector<std::vector<int>> corpus(std::initializer_list<std::vector<int>> rows) {
  return rows;
}

}  // namespace

TEST_CASE("greedy equals beam=1 with alpha=0 over 50 random scorers") {
  for (uint64_t seed = 1; seed <= 50; ++seed) {
    StubScorer a(8, seed);
    StubScorer b(8, seed);
    CHECK(greedy_decode(a, 6) == beam_search(b, 1, 0.0, 6));
  }
}

TEST_CASE("beam width V^L equals exhaustive enumeration, no EOS in range") {
  // vocab of 3: ids 0..2, so EOS(3) is never produced and every sequence
  // runs to length 3 - exactly the 27 brute-force candidates
  for (uint64_t seed = 100; seed < 140; ++seed) {
    StubScorer scorer(3, seed);
    StubScorer scorer2(3, seed);
    auto expect = enumerate_best(scorer, 3, 0.0);
    CHECK(beam_search(scorer2, 27, 0.0, 3) == expect.best_tokens);
  }
}

TEST_CASE("beam equals enumeration with reachable EOS and length penalty") {
  for (uint64_t seed = 200; seed < 230; ++seed) {
    for (double alpha : {0.0, 1.0}) {
      StubScorer scorer(5, seed);
      StubScorer scorer2(5, seed);
      auto expect = enumerate_best(scorer, 3, alpha);
      CHECK(beam_search(scorer2, 125, alpha, 3) == expect.best_tokens);
    }
  }
}

TEST_CASE("a model that always prefers EOS yields the empty translation") {
  class EosScorer : public StepScorer {
   public:
    int vocab_size() const override { return 6; }
    int start(std::vector<float>& logits) override {
      logits.assign(6, 0.0f);
      logits[kEosId] = 5.0f;
      return 0;
    }
    int advance(int, int, std::vector<float>& logits) override {
      return start(logits);
    }
  };
  EosScorer scorer;
  CHECK(greedy_decode(scorer, 8).empty());
  EosScorer scorer2;
  CHECK(beam_search(scorer2, 4, 1.0, 8).empty());
}

TEST_CASE("untrained model decodes deterministically") {
  ModelConfig cfg;
  cfg.hidden_d = 16;
  cfg.heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.ff_dim = 32;
  cfg.kernel_k = 5;
  cfg.gloss.samples_k = 3;
  cfg.gloss.window_radius = 2.0f;
  cfg.vocab_v = 10;
  cfg.feature_dim_f = 6;
  cfg.ape_t_max = 64;
  cfg.resolve();
  Model model = Model::init(cfg, 3);
  Rng rng(4);
  std::vector<float> frames(5 * 6);
  for (auto& v : frames) v = rng.uniform(-1.0f, 1.0f);
  Tensor f = Tensor::from_data({5, 6}, std::move(frames));
  auto a = translate(model, f, Tensor(), 5, 1.0, 12);
  auto b = translate(model, f, Tensor(), 5, 1.0, 12);
  CHECK(a == b);
  auto g1 = translate(model, f, Tensor(), 1, 0.0, 12);
  ModelStepScorer scorer(model, model.encode_source(f, Tensor()));
  CHECK(g1 == greedy_decode(scorer, 12));
}

TEST_CASE("bleu4 basics: identity, zero overlap, clipping") {
  // identical pair of length >= 4 scores 100
  CHECK(bleu4(corpus({{1, 2, 3, 4, 5}}), corpus({{1, 2, 3, 4, 5}})) ==
        doctest::Approx(100.0).epsilon(1e-9));

  // "the the the the" vs "the cat": bigram overlap is zero -> 0, after
  // 1-gram clipping would have given 1/4
  CHECK(bleu4(corpus({{7, 7, 7, 7}}), corpus({{7, 8}})) == 0.0);

  // clipped-count case computed by hand:
  // hyp "the the cat sat on the mat" vs ref "the cat sat on the mat"
  // p1=6/7 p2=5/6 p3=4/5 p4=3/4, BP=1 -> 100*(3/7)^(1/4)
  const int the = 1, cat = 2, sat = 3, on = 4, mat = 5;
  double got = bleu4(corpus({{the, the, cat, sat, on, the, mat}}),
                     corpus({{the, cat, sat, on, the, mat}}));
  CHECK(got == doctest::Approx(100.0 * std::pow(3.0 / 7.0, 0.25)).epsilon(1e-9));

  // brevity penalty: hyp is the first five words of the six-word reference
  double bp_case = bleu4(corpus({{the, cat, sat, on, the}}),
                         corpus({{the, cat, sat, on, the, mat}}));
  CHECK(bp_case == doctest::Approx(100.0 * std::exp(1.0 - 6.0 / 5.0)).epsilon(1e-9));

  CHECK_THROWS_AS(bleu4({}, {}), Error);
}

TEST_CASE("bleu4 is corpus-permutation invariant and bounded") {
  std::vector<std::vector<int>> hyps = {{1, 2, 3, 4}, {5, 6, 7, 8, 9}, {2, 4, 6, 8}};
  std::vector<std::vector<int>> refs = {{1, 2, 3, 5}, {5, 6, 7, 8}, {2, 4, 6, 8, 10}};
  double base = bleu4(hyps, refs);
  std::vector<std::vector<int>> hyps2 = {hyps[2], hyps[0], hyps[1]};
  std::vector<std::vector<int>> refs2 = {refs[2], refs[0], refs[1]};
  CHECK(bleu4(hyps2, refs2) == doctest::Approx(base).epsilon(1e-12));
  CHECK(base <= 100.0);
  CHECK(base > 0.0);
  // 100 only when every hypothesis equals its reference
  CHECK(bleu4(corpus({{1, 2, 3, 4}, {1, 2, 3, 4}}),
              corpus({{1, 2, 3, 4}, {1, 2, 3, 5}})) < 100.0);
}

TEST_CASE("rouge_l: identity, disjoint, hand case") {
  CHECK(rouge_l(corpus({{1, 2, 3}}), corpus({{1, 2, 3}})) ==
        doctest::Approx(100.0).epsilon(1e-9));
  CHECK(rouge_l(corpus({{1, 2}}), corpus({{3, 4}})) == 0.0);
  // hyp "a b c d" vs ref "a c d e": LCS 3, P=R=3/4, F1=0.75
  CHECK(rouge_l(corpus({{1, 2, 3, 4}}), corpus({{1, 3, 4, 5}})) ==
        doctest::Approx(75.0).epsilon(1e-9));
  // permutation invariance
  std::vector<std::vector<int>> hyps = {{1, 2, 3}, {4, 5}};
  std::vector<std::vector<int>> refs = {{1, 3}, {4, 5, 6}};
  CHECK(rouge_l(hyps, refs) ==
        doctest::Approx(rouge_l({hyps[1], hyps[0]}, {refs[1], refs[0]})).epsilon(1e-12));
}

TEST_CASE("information density and netscore") {
  CHECK(information_density(23.43, 3.88) == doctest::Approx(6.039).epsilon(1e-3));
  CHECK(information_density(0.0, 2.0) == 0.0);
  CHECK(information_density(10.0, 1.0) ==
        doctest::Approx(2.0 * information_density(10.0, 2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(information_density(1.0, 0.0), Error);

  CHECK(netscore(10.0, 1.0, 1.0) == doctest::Approx(40.0).epsilon(1e-9));
  // alpha = 0 removes the score dependence
  CHECK(netscore(3.0, 2.0, 4.0, 0.0, 0.5, 0.5) ==
        doctest::Approx(netscore(30.0, 2.0, 4.0, 0.0, 0.5, 0.5)).epsilon(1e-12));
  // monotonic: up in score, down in params and macs
  CHECK(netscore(11.0, 1.0, 1.0) > netscore(10.0, 1.0, 1.0));
  CHECK(netscore(10.0, 2.0, 1.0) < netscore(10.0, 1.0, 1.0));
  CHECK(netscore(10.0, 1.0, 2.0) < netscore(10.0, 1.0, 1.0));
  CHECK_THROWS_AS(netscore(0.0, 1.0, 1.0), Error);
}

TEST_CASE("encoder MACs scale exactly linearly in sequence length") {
  auto lineup = lineup_configs();
  for (const auto& entry : lineup) {
    CHECK(encoder_macs(entry.cfg, 64) == 2 * encoder_macs(entry.cfg, 32));
    CHECK(encoder_macs(entry.cfg, 96) == 3 * encoder_macs(entry.cfg, 32));
  }
  // and whole-translate counts grow with beam width
  const ModelConfig& cfg = lineup[0].cfg;
  CHECK(translate_macs(cfg, 64, 10, 5) > translate_macs(cfg, 64, 10, 1));
}
