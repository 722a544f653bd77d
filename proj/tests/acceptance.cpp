// Acceptance suite: runs every gate criterion and prints one PASS/FAIL line
// per criterion. argv[1] is the shipped configs directory.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "signformer/checkpoint.hpp"
#include "signformer/config.hpp"
#include "signformer/data.hpp"
#include "signformer/decode.hpp"
#include "signformer/gradsuite.hpp"
#include "signformer/macs.hpp"
#include "signformer/metrics.hpp"
#include "signformer/model.hpp"
#include "signformer/train.hpp"

using namespace signformer;
namespace fs = std::filesystem;

namespace {

int failures = 0;
std::string configs_dir;

void verdict(const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor random_tensor(Shape shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  std::vector<float> data(shape_numel(shape));
  for (auto& v : data) v = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(data));
}

ModelConfig tiny_config(bool cope) {
  ModelConfig cfg;
  cfg.hidden_d = 16;
  cfg.heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.ff_dim = 32;
  cfg.kernel_k = 5;
  cfg.use_cope = cope;
  cfg.cope_p_max = 16;
  cfg.gloss.samples_k = 3;
  cfg.gloss.window_radius = 2.0f;
  cfg.vocab_v = 12;
  cfg.feature_dim_f = 8;
  cfg.ape_t_max = 64;
  cfg.resolve();
  return cfg;
}

// ---------------------------------------------------------------- criterion 1

void criterion_gradients() {
  auto t0 = std::chrono::steady_clock::now();
  GradSuiteResult suite = run_gradcheck_suite();
  const double secs = seconds_since(t0);
  std::string detail = "worst rel err " + std::to_string(suite.worst) + ", " +
                       std::to_string(suite.entries.size()) + " checks in " +
                       std::to_string(secs) + "s";
  bool pass = suite.pass && secs < 120.0;
  for (const auto& e : suite.entries)
    if (!e.pass) detail += " | FAILED " + e.name;
  verdict("criterion-1 gradient-suite", pass, detail);
}

// ---------------------------------------------------------------- criterion 2

void criterion_invariants() {
  bool pass = true;
  std::string detail;

  // decoder causality, bitwise
  {
    ModelConfig cfg = tiny_config(true);
    Model model = Model::init(cfg, 91);
    Rng rng(92);
    Tensor enc = model.encode(random_tensor({6, cfg.feature_dim_f}, rng), Tensor());
    Tensor a = model.decode({kBosId, 4, 5, 6, 7}, enc, Tensor());
    Tensor b = model.decode({kBosId, 4, 5, 9, 8}, enc, Tensor());
    for (int t = 0; t < 3 && pass; ++t)
      for (int v = 0; v < cfg.vocab_v; ++v)
        if (a.at({t, v}) != b.at({t, v})) {
          pass = false;
          detail += "causality broke at step " + std::to_string(t) + "; ";
        }
  }

  // gloss-attention locality, bitwise
  {
    Rng rng(93);
    const int t = 16, d = 8, heads = 2;
    GlossAttentionConfig gcfg;
    gcfg.samples_k = 4;
    gcfg.window_radius = 3.0f;
    AttentionParams p;
    p.wq = random_tensor({d, d}, rng);
    p.bq = random_tensor({d}, rng);
    p.wk = random_tensor({d, d}, rng);
    p.bk = random_tensor({d}, rng);
    p.wv = random_tensor({d, d}, rng);
    p.bv = random_tensor({d}, rng);
    p.wo = random_tensor({d, d}, rng);
    p.bo = random_tensor({d}, rng);
    Tensor offsets = random_tensor({heads, 4}, rng, -3.0f, 3.0f);
    Tensor x = random_tensor({t, d}, rng);
    Tensor base = gloss_attention(x, heads, gcfg, p, offsets);
    const int query = 7;
    const int radius = static_cast<int>(gcfg.window_radius) + 1;
    for (int j = 0; j < t; ++j) {
      if (std::abs(j - query) <= radius) continue;
      std::vector<float> mut(x.data().begin(), x.data().end());
      for (int c = 0; c < d; ++c) mut[static_cast<std::size_t>(j) * d + c] = 9.0f + c;
      Tensor out = gloss_attention(Tensor::from_data({t, d}, std::move(mut)), heads,
                                   gcfg, p, offsets);
      for (int c = 0; c < d; ++c)
        if (base.at({query, c}) != out.at({query, c})) {
          pass = false;
          detail += "locality broke for frame " + std::to_string(j) + "; ";
          break;
        }
    }
  }

  // padding invariance <= 1e-5
  {
    ModelConfig cfg = tiny_config(true);
    Model model = Model::init(cfg, 94);
    Rng rng(95);
    const int t = 10, valid = 6;
    Tensor frames = random_tensor({t, cfg.feature_dim_f}, rng);
    std::vector<float> mask_data(t, 0.0f);
    for (int i = 0; i < valid; ++i) mask_data[i] = 1.0f;
    Tensor mask = Tensor::from_data({t}, std::move(mask_data));
    std::vector<float> junk(frames.data().begin(), frames.data().end());
    for (int i = valid; i < t; ++i)
      for (int c = 0; c < cfg.feature_dim_f; ++c)
        junk[static_cast<std::size_t>(i) * cfg.feature_dim_f + c] = 100.0f + i - c;
    Tensor frames2 = Tensor::from_data({t, cfg.feature_dim_f}, std::move(junk));
    std::vector<int> tokens = {kBosId, 4, 6, 5};
    Tensor la = model.decode(tokens, model.encode(frames, mask), mask);
    Tensor lb = model.decode(tokens, model.encode(frames2, mask), mask);
    double worst = 0.0;
    for (std::size_t i = 0; i < la.size(); ++i)
      worst = std::max(worst,
                       static_cast<double>(std::abs(la.data()[i] - lb.data()[i])));
    if (worst > 1e-5) {
      pass = false;
      detail += "padding leak " + std::to_string(worst) + "; ";
    }
  }

  // softmax normalization at magnitude 1e4
  {
    Rng rng(96);
    for (float mag : {1.0f, 100.0f, 10000.0f}) {
      Tensor x = random_tensor({6, 9}, rng, -mag, mag);
      Tensor y = softmax(x, 1);
      for (int i = 0; i < 6; ++i) {
        double s = 0.0;
        for (int j = 0; j < 9; ++j) s += y.at({i, j});
        if (std::abs(s - 1.0) > 1e-6) {
          pass = false;
          detail += "softmax row sum off by " + std::to_string(s - 1.0) + "; ";
        }
      }
    }
  }

  // cope positions: range cap and exact saturation
  {
    Rng rng(97);
    Tensor q = random_tensor({4, 3}, rng, 0.0f, 3.0f);
    Tensor k = random_tensor({30, 3}, rng, 0.0f, 3.0f);
    const float p_max = 5.0f;
    Tensor p = cope_positions(q, k, CopeMode::kPrefix, p_max);
    for (float v : p.data())
      if (v < 0.0f || v > p_max) {
        pass = false;
        detail += "cope position out of range; ";
        break;
      }
    Tensor sat_q = Tensor::full({5, 2}, 20.0f);
    Tensor sat = cope_positions(sat_q, sat_q, CopeMode::kCausal, 1000.0f);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j <= i; ++j)
        if (sat.at({i, j}) != static_cast<float>(i - j + 1)) {
          pass = false;
          detail += "saturation mismatch; ";
        }
  }

  if (pass) detail = "causality/locality bitwise, padding<=1e-5, softmax<=1e-6, cope capped+saturated";
  verdict("criterion-2 structural-invariants", pass, detail);
}

// ---------------------------------------------------------------- criterion 3

void criterion_params() {
  bool pass = true;
  std::string detail;
  Rng rng(1234);
  for (int round = 0; round < 20; ++round) {
    ModelConfig cfg;
    cfg.hidden_d = 8 * (1 + static_cast<int>(rng.next_below(8)));
    cfg.heads = 2;
    cfg.enc_layers = 1 + static_cast<int>(rng.next_below(3));
    cfg.dec_layers = 1 + static_cast<int>(rng.next_below(3));
    cfg.ff_dim = 8 * (1 + static_cast<int>(rng.next_below(8)));
    cfg.kernel_k = 2 * static_cast<int>(rng.next_below(8)) + 1;
    cfg.conv_expansion = 1 + static_cast<int>(rng.next_below(2));
    cfg.use_cope = rng.next_below(2) == 1;
    cfg.cope_p_max = 4 + static_cast<int>(rng.next_below(40));
    cfg.gloss.samples_k = 1 + static_cast<int>(rng.next_below(8));
    cfg.vocab_v = 5 + static_cast<int>(rng.next_below(500));
    cfg.feature_dim_f = 1 + static_cast<int>(rng.next_below(64));
    cfg.tie_output_embedding = rng.next_below(2) == 1;
    cfg.conv_style = rng.next_below(2) == 1 ? ConvStyle::kConformerOriginal
                                            : ConvStyle::kSignformer;
    cfg.resolve();
    const long long analytic = param_count(cfg).total();
    const long long runtime = init_parameters(cfg, 1).trainable_count();
    if (analytic != runtime) {
      pass = false;
      detail += "mismatch on random config " + std::to_string(round) + "; ";
    }
  }

  auto lineup = lineup_configs();
  long long prev = 0;
  std::string sizes;
  for (const auto& entry : lineup) {
    const long long total = param_count(entry.cfg).total();
    if (total <= prev) {
      pass = false;
      detail += "ordering broke at " + entry.name + "; ";
    }
    prev = total;
    sizes += entry.name + "=" + std::to_string(total / 1e6).substr(0, 5) + "M ";
  }
  const double feather = static_cast<double>(param_count(lineup[0].cfg).total());
  const double full = static_cast<double>(param_count(lineup[4].cfg).total());
  const double feather_dev = feather / 0.57e6 - 1.0;
  const double full_dev = full / 3.88e6 - 1.0;
  if (std::abs(feather_dev) > 0.15 || std::abs(full_dev) > 0.15) {
    pass = false;
    detail += "calibration out of band; ";
  }
  detail += sizes + "(feather " + std::to_string(feather_dev * 100).substr(0, 5) +
            "% vs 0.57M, full " + std::to_string(full_dev * 100).substr(0, 5) +
            "% vs 3.88M)";
  verdict("criterion-3 parameter-accounting", pass, detail);
}

// ---------------------------------------------------------------- criterion 4

class StubScorer : public StepScorer {
 public:
  StubScorer(int vocab, uint64_t seed) : vocab_(vocab), seed_(seed) {}
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
    for (auto& v : logits) v = rng.uniform(-2.0f, 2.0f);
    return logits;
  }

 private:
  int vocab_;
  uint64_t seed_;
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

void enumerate_rec(const StubScorer& scorer, std::vector<int>& prefix, double logp,
                   int max_len, double alpha, std::vector<int>& best_tokens,
                   double& best_score) {
  const bool has_eos = scorer.vocab_size() > kEosId;
  if (!prefix.empty() && ((has_eos && prefix.back() == kEosId) ||
                          static_cast<int>(prefix.size()) == max_len)) {
    std::vector<int> tokens = prefix;
    const double score = logp / length_penalty(static_cast<int>(tokens.size()), alpha);
    if (has_eos && !tokens.empty() && tokens.back() == kEosId) tokens.pop_back();
    if (score > best_score) {
      best_score = score;
      best_tokens = tokens;
    }
    return;
  }
  auto lp = log_probs64(scorer.logits_for(prefix));
  for (int v = 0; v < scorer.vocab_size(); ++v) {
    prefix.push_back(v);
    enumerate_rec(scorer, prefix, logp + lp[v], max_len, alpha, best_tokens, best_score);
    prefix.pop_back();
  }
}

void criterion_metrics() {
  bool pass = true;
  std::string detail;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };

  using Corpus = std::vector<std::vector<int>>;
  const int the = 1, cat = 2, sat = 3, on = 4, mat = 5;
  struct BleuCase {
    Corpus hyp, ref;
    double expect;
  };
  std::vector<BleuCase> cases = {
      {{{1, 2, 3, 4, 5}}, {{1, 2, 3, 4, 5}}, 100.0},
      {{{7, 7, 7, 7}}, {{7, 8}}, 0.0},
      {{{the, the, cat, sat, on, the, mat}},
       {{the, cat, sat, on, the, mat}},
       100.0 * std::pow(3.0 / 7.0, 0.25)},
      {{{the, cat, sat, on, the}},
       {{the, cat, sat, on, the, mat}},
       100.0 * std::exp(1.0 - 6.0 / 5.0)},
  };
  for (std::size_t i = 0; i < cases.size(); ++i)
    if (rel(bleu4(cases[i].hyp, cases[i].ref), cases[i].expect) > 1e-9) {
      pass = false;
      detail += "bleu case " + std::to_string(i) + " off; ";
    }
  if (rel(rouge_l({{1, 2, 3, 4}}, {{1, 3, 4, 5}}), 75.0) > 1e-9 ||
      rel(rouge_l({{1, 2, 3}}, {{1, 2, 3}}), 100.0) > 1e-9) {
    pass = false;
    detail += "rouge case off; ";
  }

  // beam vs exhaustive enumeration on every tiny instance
  int instances = 0;
  for (int max_len = 1; max_len <= 3; ++max_len)
    for (uint64_t seed = 1; seed <= 25; ++seed) {
      StubScorer a(3, seed * 131 + max_len);
      StubScorer b(3, seed * 131 + max_len);
      std::vector<int> prefix, best_tokens;
      double best_score = -1e300;
      enumerate_rec(a, prefix, 0.0, max_len, 0.0, best_tokens, best_score);
      if (beam_search(b, 27, 0.0, max_len) != best_tokens) {
        pass = false;
        detail += "beam mismatch seed " + std::to_string(seed) + " len " +
                  std::to_string(max_len) + "; ";
      }
      ++instances;
    }
  detail += std::to_string(instances) + " exhaustive beam instances";
  verdict("criterion-4 metric-oracles", pass, detail);
}

// ---------------------------------------------------------------- criterion 5

struct ArmResult {
  double best_bleu = 0.0;
  double seconds = 0.0;
};

ArmResult train_arm(const std::string& preset, const SynthDataset& data, int f_dim,
                    int epochs, uint64_t seed, double stop_at,
                    const std::vector<std::string>& extra = {}) {
  auto t0 = std::chrono::steady_clock::now();
  RunConfig rc = RunConfig::from_file(configs_dir + "/" + preset, extra);
  rc.model.vocab_v = static_cast<int>(data.vocab.size());
  rc.model.feature_dim_f = f_dim;
  rc.model.resolve();
  rc.train.epochs = epochs;
  rc.train.seed = seed;
  rc.train.decode_max_len = 14;
  rc.train.stop_at_dev_bleu = stop_at;
  Model model = Model::init(rc.model, seed);
  ArmResult result;
  train_loop(model, data.train, data.dev, rc.train, "",
             [&](const EpochRecord& r) {
               result.best_bleu = std::max(result.best_bleu, r.dev_bleu4);
             });
  result.seconds = seconds_since(t0);
  return result;
}

void criterion_learning() {
  // copy task: Feather preset + AdamW (auto picks AdamW at hidden 64)
  {
    uint64_t seed = 1;
    SynthSpec spec = synth_spec_from_file(configs_dir + "/synth_copy.cfg", &seed);
    SynthDataset data = synth_generate(spec, seed);
    ArmResult arm = train_arm("feather.cfg", data, spec.feature_dim, 35, 42, 90.0);
    const bool pass = arm.best_bleu >= 90.0 && arm.seconds < 600.0;
    verdict("criterion-5a copy-task", pass,
            "dev BLEU-4 " + std::to_string(arm.best_bleu) + " in " +
                std::to_string(arm.seconds) + "s (gate: >=90 within 600s)");
  }

  // order task: APE beats the no-position-encoding ablation by >= 10
  {
    uint64_t seed = 1;
    SynthSpec spec = synth_spec_from_file(configs_dir + "/synth_order.cfg", &seed);
    SynthDataset data = synth_generate(spec, seed);
    ArmResult ape = train_arm("feather.cfg", data, spec.feature_dim, 14, 42, -1.0);
    ArmResult nope = train_arm("feather.cfg", data, spec.feature_dim, 14, 42, -1.0,
                               {"use_ape=false"});
    const double gap = ape.best_bleu - nope.best_bleu;
    verdict("criterion-5b order-task", gap >= 10.0,
            "APE " + std::to_string(ape.best_bleu) + " vs no-PE " +
                std::to_string(nope.best_bleu) + ", gap " + std::to_string(gap) +
                " (gate: >=10)");
  }

  // segment task: Feather+CoPE >= Feather in median over 3 seeds
  {
    uint64_t seed = 1;
    SynthSpec spec = synth_spec_from_file(configs_dir + "/synth_segment.cfg", &seed);
    SynthDataset data = synth_generate(spec, seed);
    std::vector<double> plain, cope;
    for (uint64_t s : {1ULL, 2ULL, 3ULL}) {
      plain.push_back(
          train_arm("feather.cfg", data, spec.feature_dim, 10, s, -1.0).best_bleu);
      cope.push_back(
          train_arm("feather_cope.cfg", data, spec.feature_dim, 10, s, -1.0).best_bleu);
    }
    std::sort(plain.begin(), plain.end());
    std::sort(cope.begin(), cope.end());
    verdict("criterion-5c segment-task", cope[1] >= plain[1],
            "median dev BLEU-4: cope " + std::to_string(cope[1]) + " vs plain " +
                std::to_string(plain[1]) + " (gate: cope >= plain)");
  }
}

// ---------------------------------------------------------------- criterion 6

void criterion_bench() {
  RunConfig rc = RunConfig::from_file(configs_dir + "/feather.cfg");
  rc.model.resolve();  // vocab 2891, features 1024 as shipped
  Model model = Model::init(rc.model, 7);
  Rng rng(42);
  const int t = 64;
  std::vector<float> fr(static_cast<std::size_t>(t) * rc.model.feature_dim_f);
  for (auto& v : fr) v = rng.gaussian();
  Tensor frames = Tensor::from_data({t, rc.model.feature_dim_f}, std::move(fr));
  std::vector<int> out;
  for (int warm = 0; warm < 3; ++warm)
    out = translate(model, frames, Tensor(), 5, 1.0, 60);
  std::vector<double> times;
  for (int rep = 0; rep < 11; ++rep) {
    auto t0 = std::chrono::steady_clock::now();
    out = translate(model, frames, Tensor(), 5, 1.0, 60);
    times.push_back(seconds_since(t0) * 1000.0);
  }
  std::sort(times.begin(), times.end());
  const double median = times[times.size() / 2];
  const double p95 = times[times.size() - 1];
  const long long macs =
      translate_macs(rc.model, t, static_cast<int>(out.size()), 5);
  std::FILE* report = std::fopen("acceptance_bench.txt", "w");
  if (report) {
    std::fprintf(report,
                 "config=feather frames=%d beam=5 out_len=%zu median_ms=%.3f "
                 "p95_ms=%.3f macs=%lld macs_billions=%.6f\n",
                 t, out.size(), median, p95, macs, macs / 1e9);
    std::fclose(report);
  }
  verdict("criterion-6 edge-benchmark", median < 250.0,
          "median " + std::to_string(median) + "ms, p95 " + std::to_string(p95) +
              "ms, macs " + std::to_string(macs / 1e9) +
              "B (gate: median < 250ms; report in acceptance_bench.txt)");
}

// ---------------------------------------------------------------- criterion 7

void criterion_durability() {
  bool pass = true;
  std::string detail;
  const fs::path work = fs::temp_directory_path() / "signformer_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  // feature round trip, bit-exact
  {
    SynthSpec spec;
    spec.vocab_size = 6;
    spec.feature_dim = 4;
    spec.n_train = 6;
    spec.n_dev = 2;
    spec.n_test = 2;
    SynthDataset data = synth_generate(spec, 3);
    const std::string path = (work / "p.sgnf").string();
    write_features(path, data.train);
    FeatureDataset back = read_features(path);
    for (std::size_t i = 0; i < data.train.sequences.size() && pass; ++i) {
      if (back.sequences[i].target != data.train.sequences[i].target) pass = false;
      for (std::size_t j = 0; j < data.train.sequences[i].frames.size(); ++j)
        if (back.sequences[i].frames.data()[j] !=
            data.train.sequences[i].frames.data()[j])
          pass = false;
    }
    if (!pass) detail += "feature round trip not bit-exact; ";
  }

  // checkpoint round trip + resume equals uninterrupted training, bitwise
  {
    SynthSpec spec;
    spec.task = SynthTask::kCopy;
    spec.vocab_size = 8;
    spec.len_min = 2;
    spec.len_max = 4;
    spec.noise_sigma = 0.05f;
    spec.feature_dim = 6;
    spec.n_train = 24;
    spec.n_dev = 6;
    spec.n_test = 6;
    SynthDataset data = synth_generate(spec, 29);
    ModelConfig mcfg = tiny_config(false);
    mcfg.vocab_v = static_cast<int>(data.vocab.size());
    mcfg.feature_dim_f = spec.feature_dim;
    mcfg.validate();

    TrainConfig tcfg;
    tcfg.batch_size = 8;
    tcfg.seed = 11;
    tcfg.optimizer = "adamw";
    tcfg.opt.lr = 0.003;
    tcfg.decode_max_len = 10;

    Model model_a = Model::init(mcfg, 55);
    tcfg.epochs = 2;
    TrainResult full =
        train_loop(model_a, data.train, data.dev, tcfg, (work / "a").string());

    Model model_b = Model::init(mcfg, 55);
    tcfg.epochs = 1;
    train_loop(model_b, data.train, data.dev, tcfg, (work / "b").string());
    Checkpoint ck = load_checkpoint((work / "b" / "last.sgck").string(), &mcfg);
    // verify the checkpoint parameters reloaded bit-exactly
    for (const auto& [name, t] : model_b.parameters().entries()) {
      const Tensor& u = ck.params.at(name);
      for (std::size_t i = 0; i < t.size(); ++i)
        if (t.data()[i] != u.data()[i]) {
          pass = false;
          detail += "checkpoint round trip not bit-exact; ";
          break;
        }
    }
    Model model_c(ck.config, std::move(ck.params));
    ResumeState resume;
    resume.optimizer_step = ck.optimizer_step;
    resume.opt_m = ck.opt_m;
    resume.opt_second = ck.opt_second;
    resume.epoch = ck.epoch;
    resume.best_dev_bleu4 = ck.best_dev_bleu4;
    resume.scheduler_stale = ck.scheduler_stale;
    resume.scheduler_best = ck.scheduler_best;
    resume.lr = ck.lr;
    resume.rng_state = ck.rng_state;
    tcfg.epochs = 2;
    TrainResult resumed = train_loop(model_c, data.train, data.dev, tcfg,
                                     (work / "b").string(), {}, &resume);
    if (resumed.history.size() != 1 || full.history.size() != 2 ||
        resumed.history[0].train_loss != full.history[1].train_loss) {
      pass = false;
      detail += "resumed epoch loss differs; ";
    }
    for (const auto& [name, t] : model_a.parameters().entries()) {
      const Tensor& u = model_c.parameters().at(name);
      for (std::size_t i = 0; i < t.size(); ++i)
        if (t.data()[i] != u.data()[i]) {
          pass = false;
          detail += "resumed parameters differ in " + name + "; ";
          break;
        }
    }
  }

  if (pass) detail = "feature+checkpoint round trips bit-exact; save->load->step equals uninterrupted run bitwise";
  verdict("criterion-7 durability", pass, detail);
}

}  // namespace

int main(int argc, char** argv) {
  configs_dir = argc > 1 ? argv[1] : "configs";
  auto t0 = std::chrono::steady_clock::now();
  criterion_gradients();
  criterion_invariants();
  criterion_params();
  criterion_metrics();
  criterion_learning();
  criterion_bench();
  criterion_durability();
  std::printf("acceptance: %s (%d failures, %.1fs total)\n",
              failures == 0 ? "ALL CRITERIA PASS" : "FAILURES PRESENT", failures,
              seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
