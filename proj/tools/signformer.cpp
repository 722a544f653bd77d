#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "signformer/checkpoint.hpp"
#include "signformer/config.hpp"
#include "signformer/data.hpp"
#include "signformer/decode.hpp"
#include "signformer/gradsuite.hpp"
#include "signformer/macs.hpp"
#include "signformer/metrics.hpp"
#include "signformer/model.hpp"
#include "signformer/train.hpp"

namespace sf = signformer;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitDiverged = 2;

std::string default_vocab_path(const std::string& features_path) {
  return (std::filesystem::path(features_path).parent_path() / "vocab.txt").string();
}

std::vector<std::string> load_vocab_for(const std::string& features_path,
                                        const std::string& vocab_flag) {
  return sf::read_vocab(vocab_flag.empty() ? default_vocab_path(features_path)
                                           : vocab_flag);
}

std::string join_tokens(const std::vector<int>& ids,
                        const std::vector<std::string>& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += ids[i] >= 0 && ids[i] < static_cast<int>(vocab.size()) ? vocab[ids[i]]
                                                                  : "<unk>";
  }
  return out;
}

sf::Model model_from_checkpoint(const std::string& path, sf::Checkpoint* out_ck = nullptr) {
  sf::Checkpoint ck = sf::load_checkpoint(path);
  if (out_ck) {
    out_ck->config = ck.config;
    out_ck->optimizer_kind = ck.optimizer_kind;
    out_ck->epoch = ck.epoch;
    out_ck->best_dev_bleu4 = ck.best_dev_bleu4;
  }
  return sf::Model(ck.config, std::move(ck.params));
}

// decode a whole dataset, optionally across threads, preserving order
std::vector<std::vector<int>> decode_dataset(const sf::Model& model,
                                             const sf::FeatureDataset& data,
                                             const sf::DecodeConfig& dc, int threads) {
  std::vector<std::vector<int>> out(data.sequences.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < data.sequences.size(); i += step)
      out[i] = sf::translate(model, data.sequences[i].frames, sf::Tensor(), dc.beam,
                             dc.length_penalty_alpha, dc.max_len);
  };
  if (threads <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back(work, static_cast<std::size_t>(t), threads);
    for (auto& th : pool) th.join();
  }
  return out;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::vector<std::string>& sets,
              const std::string& resume_path) {
  sf::RunConfig rc = sf::RunConfig::from_file(config_path, sets);
  auto vocab = sf::read_vocab(data_dir + "/vocab.txt");
  sf::FeatureDataset train = sf::read_features(data_dir + "/train.sgnf");
  sf::FeatureDataset dev = sf::read_features(data_dir + "/dev.sgnf");
  rc.model.vocab_v = static_cast<int>(vocab.size());
  rc.model.feature_dim_f = train.feature_dim;
  rc.model.resolve();

  std::filesystem::create_directories(out_dir);
  std::ofstream echo(out_dir + "/config.resolved.cfg", std::ios::trunc);
  echo << rc.resolved_text();
  echo.close();

  sf::Model model = sf::Model::init(rc.model, rc.train.seed);
  sf::ResumeState resume;
  const sf::ResumeState* resume_ptr = nullptr;
  if (!resume_path.empty()) {
    sf::Checkpoint ck = sf::load_checkpoint(resume_path, &rc.model);
    model = sf::Model(ck.config, std::move(ck.params));
    resume.optimizer_step = ck.optimizer_step;
    resume.opt_m = std::move(ck.opt_m);
    resume.opt_second = std::move(ck.opt_second);
    resume.epoch = ck.epoch;
    resume.best_dev_bleu4 = ck.best_dev_bleu4;
    resume.scheduler_stale = ck.scheduler_stale;
    resume.scheduler_best = ck.scheduler_best;
    resume.lr = ck.lr;
    resume.rng_state = ck.rng_state;
    resume_ptr = &resume;
  }

  sf::TrainResult result = sf::train_loop(
      model, train, dev, rc.train, out_dir,
      [](const sf::EpochRecord& r) {
        std::printf("epoch=%d train_loss=%.6f dev_bleu4=%.4f dev_rouge_l=%.4f lr=%g\n",
                    r.epoch, r.train_loss, r.dev_bleu4, r.dev_rouge_l, r.lr);
        std::fflush(stdout);
      },
      resume_ptr);
  if (result.diverged) {
    std::fprintf(stderr, "training diverged; last good checkpoint kept in %s\n",
                 out_dir.c_str());
    return kExitDiverged;
  }
  std::printf("best_epoch=%d best_dev_bleu4=%.4f\n", result.best_epoch,
              result.best_dev_bleu4);
  return kExitOk;
}

int cmd_translate(const std::string& ck_path, const std::string& features_path,
                  const std::string& vocab_flag, int beam, double alpha, int max_len,
                  int threads) {
  sf::Model model = model_from_checkpoint(ck_path);
  sf::FeatureDataset data = sf::read_features(features_path);
  if (!data.sequences.empty())
    sf::check(data.feature_dim == model.config().feature_dim_f,
              "feature dim ", data.feature_dim, " does not match checkpoint dim ",
              model.config().feature_dim_f);
  auto vocab = load_vocab_for(features_path, vocab_flag);
  sf::check(static_cast<int>(vocab.size()) == model.config().vocab_v,
            "vocab size ", vocab.size(), " does not match checkpoint vocab ",
            model.config().vocab_v);
  sf::DecodeConfig dc{beam, alpha, max_len};
  auto hyps = decode_dataset(model, data, dc, threads);
  for (std::size_t i = 0; i < data.sequences.size(); ++i)
    std::printf("%s\t%s\n", data.sequences[i].id.c_str(),
                join_tokens(hyps[i], vocab).c_str());
  return kExitOk;
}

int cmd_evaluate(const std::string& ck_path, const std::string& features_path,
                 const std::string& refs_path, const std::string& vocab_flag, int beam,
                 double alpha, int max_len, int threads) {
  sf::Model model = model_from_checkpoint(ck_path);
  sf::FeatureDataset data = sf::read_features(features_path);
  sf::check(!data.sequences.empty(), "evaluation set is empty");
  sf::check(data.feature_dim == model.config().feature_dim_f, "feature dim ",
            data.feature_dim, " does not match checkpoint dim ",
            model.config().feature_dim_f);
  std::vector<std::vector<int>> refs;
  if (refs_path.empty()) {
    for (const auto& seq : data.sequences) refs.push_back(seq.target);
  } else {
    sf::FeatureDataset ref_data = sf::read_features(refs_path);
    sf::check(ref_data.sequences.size() == data.sequences.size(),
              "reference count ", ref_data.sequences.size(),
              " does not match hypothesis count ", data.sequences.size());
    for (const auto& seq : ref_data.sequences) refs.push_back(seq.target);
  }

  sf::DecodeConfig dc{beam, alpha, max_len};
  auto hyps = decode_dataset(model, data, dc, threads);

  const double bleu = sf::bleu4(hyps, refs);
  const double rouge = sf::rouge_l(hyps, refs);
  const long long params = sf::param_count(model.config()).total();
  const double params_m = static_cast<double>(params) / 1e6;
  double total_macs = 0.0;
  for (std::size_t i = 0; i < data.sequences.size(); ++i)
    total_macs += static_cast<double>(
        sf::translate_macs(model.config(), data.sequences[i].frames.dim(0),
                           static_cast<int>(hyps[i].size()), dc.beam));
  const double mean_macs_b = total_macs / data.sequences.size() / 1e9;
  std::printf("bleu4=%.4f\n", bleu);
  std::printf("rouge_l=%.4f\n", rouge);
  std::printf("info_density=%.4f\n", bleu > 0.0 ? sf::information_density(bleu, params_m)
                                                : 0.0);
  if (bleu > 0.0 && mean_macs_b > 0.0)
    std::printf("netscore=%.4f\n", sf::netscore(bleu, params_m, mean_macs_b));
  else
    std::printf("netscore=nan\n");
  std::printf("params=%lld\n", params);
  std::printf("macs=%.0f\n", total_macs / data.sequences.size());
  return kExitOk;
}

int cmd_params(const std::string& config_path, const std::vector<std::string>& sets,
               bool lineup) {
  if (lineup) {
    std::printf("%-14s %12s %12s %10s\n", "config", "params", "params_m", "published_m");
    for (const auto& entry : sf::lineup_configs()) {
      const long long total = sf::param_count(entry.cfg).total();
      std::printf("%-14s %12lld %12.3f %10.2f\n", entry.name.c_str(), total,
                  total / 1e6, entry.published_params_m);
    }
    return kExitOk;
  }
  sf::RunConfig rc = sf::RunConfig::from_file(config_path, sets);
  rc.model.resolve();
  sf::ParamCountBreakdown b = sf::param_count(rc.model);
  sf::Parameters params = sf::init_parameters(rc.model, 0);
  std::printf("src_embed=%lld\n", b.src_embed);
  std::printf("encoder_attn=%lld\n", b.encoder_attn);
  std::printf("encoder_conv=%lld\n", b.encoder_conv);
  std::printf("encoder_ff=%lld\n", b.encoder_ff);
  std::printf("encoder_norms=%lld\n", b.encoder_norms);
  std::printf("gloss_offsets=%lld\n", b.gloss_offsets);
  std::printf("cope_tables=%lld\n", b.cope_tables);
  std::printf("token_embed=%lld\n", b.token_embed);
  std::printf("decoder_self=%lld\n", b.decoder_self);
  std::printf("decoder_cross=%lld\n", b.decoder_cross);
  std::printf("decoder_ff=%lld\n", b.decoder_ff);
  std::printf("decoder_norms=%lld\n", b.decoder_norms);
  std::printf("output_proj=%lld\n", b.output_proj);
  std::printf("total=%lld\n", b.total());
  std::printf("runtime_total=%lld\n", params.trainable_count());
  return kExitOk;
}

int cmd_bench(const std::string& ck_path, int t_frames, int repeats, int beam,
              double alpha, int max_len) {
  sf::check(t_frames >= 1, "--frames must be >= 1");
  sf::check(repeats >= 1, "--repeats must be >= 1");
  sf::Model model = model_from_checkpoint(ck_path);
  sf::Rng rng(42);
  std::vector<float> frames(static_cast<std::size_t>(t_frames) *
                            model.config().feature_dim_f);
  for (auto& v : frames) v = rng.gaussian();
  sf::Tensor input = sf::Tensor::from_data({t_frames, model.config().feature_dim_f},
                                           std::move(frames));
  std::vector<int> output;
  for (int warm = 0; warm < 3; ++warm)
    output = sf::translate(model, input, sf::Tensor(), beam, alpha, max_len);
  std::vector<double> times_ms;
  for (int rep = 0; rep < repeats; ++rep) {
    auto begin = std::chrono::steady_clock::now();
    output = sf::translate(model, input, sf::Tensor(), beam, alpha, max_len);
    auto end = std::chrono::steady_clock::now();
    times_ms.push_back(
        std::chrono::duration<double, std::milli>(end - begin).count());
  }
  std::sort(times_ms.begin(), times_ms.end());
  const double median = times_ms[times_ms.size() / 2];
  const double p95 = times_ms[std::min(times_ms.size() - 1,
                                       static_cast<std::size_t>(
                                           std::ceil(0.95 * times_ms.size())) -
                                           (times_ms.size() > 1 ? 1 : 0))];
  const long long macs = sf::translate_macs(model.config(), t_frames,
                                            static_cast<int>(output.size()), beam);
  std::printf("frames=%d\n", t_frames);
  std::printf("repeats=%d\n", repeats);
  std::printf("beam=%d\n", beam);
  std::printf("out_len=%zu\n", output.size());
  std::printf("median_ms=%.3f\n", median);
  std::printf("p95_ms=%.3f\n", p95);
  std::printf("macs=%lld\n", macs);
  std::printf("macs_billions=%.6f\n", macs / 1e9);
  return kExitOk;
}

int cmd_gradcheck(const std::string& corrupt_op) {
  sf::test_hooks::corrupt_backward_op = corrupt_op;
  sf::GradSuiteResult result = sf::run_gradcheck_suite();
  sf::test_hooks::corrupt_backward_op.clear();
  for (const auto& entry : result.entries)
    std::printf("op=%s max_rel_err=%.3e status=%s\n", entry.name.c_str(),
                entry.max_rel_err, entry.pass ? "PASS" : "FAIL");
  std::printf("suite=%s worst=%.3e\n", result.pass ? "PASS" : "FAIL", result.worst);
  if (!result.pass) {
    for (const auto& entry : result.entries)
      if (!entry.pass)
        std::fprintf(stderr, "gradcheck failed for %s (max_rel_err=%.3e)\n",
                     entry.name.c_str(), entry.max_rel_err);
    return kExitUsage;
  }
  return kExitOk;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
  uint64_t seed = 1;
  sf::SynthSpec spec = sf::synth_spec_from_file(spec_path, &seed);
  sf::SynthDataset data = sf::synth_generate(spec, seed);
  std::filesystem::create_directories(out_dir);
  sf::write_features(out_dir + "/train.sgnf", data.train);
  sf::write_features(out_dir + "/dev.sgnf", data.dev);
  sf::write_features(out_dir + "/test.sgnf", data.test);
  sf::write_vocab(out_dir + "/vocab.txt", data.vocab);
  std::printf("train=%zu dev=%zu test=%zu vocab=%zu\n", data.train.sequences.size(),
              data.dev.sequences.size(), data.test.sequences.size(),
              data.vocab.size());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"signformer: edge-sized gloss-free sign language translation"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, resume_path;
  std::vector<std::string> sets;
  auto* train = app.add_subcommand("train", "train a model on SGNF features");
  train->add_option("--config", config_path, "run config file")->required();
  train->add_option("--data", data_dir, "directory with train.sgnf/dev.sgnf/vocab.txt")
      ->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--set", sets, "key=value override, repeatable");
  train->add_option("--resume", resume_path, "checkpoint to resume from");

  std::string ck_path, features_path, vocab_flag, refs_path;
  int beam = 5, max_len = 60, threads = 1;
  double alpha = 1.0;
  auto* translate = app.add_subcommand("translate", "decode features to text");
  translate->add_option("--checkpoint", ck_path, "model checkpoint")->required();
  translate->add_option("--features", features_path, "SGNF feature file")->required();
  translate->add_option("--vocab", vocab_flag,
                        "vocab file (default: vocab.txt beside the features)");
  translate->add_option("--beam", beam, "beam width");
  translate->add_option("--alpha", alpha, "length penalty exponent");
  translate->add_option("--max-len", max_len, "decode length cap");
  translate->add_option("--threads", threads, "sequences decoded in parallel");

  auto* evaluate = app.add_subcommand("evaluate", "score translations");
  evaluate->add_option("--checkpoint", ck_path, "model checkpoint")->required();
  evaluate->add_option("--features", features_path, "SGNF feature file")->required();
  evaluate->add_option("--refs", refs_path,
                       "reference SGNF file (default: targets in --features)");
  evaluate->add_option("--vocab", vocab_flag, "vocab file");
  evaluate->add_option("--beam", beam, "beam width");
  evaluate->add_option("--alpha", alpha, "length penalty exponent");
  evaluate->add_option("--max-len", max_len, "decode length cap");
  evaluate->add_option("--threads", threads, "sequences decoded in parallel");

  bool lineup = false;
  auto* params = app.add_subcommand("params", "parameter accounting");
  params->add_option("--config", config_path, "run config file");
  params->add_option("--set", sets, "key=value override, repeatable");
  params->add_flag("--lineup", lineup, "print the preset lineup with published sizes");

  int bench_frames = 64, repeats = 20;
  auto* bench = app.add_subcommand("bench", "single-thread latency benchmark");
  bench->add_option("--checkpoint", ck_path, "model checkpoint")->required();
  bench->add_option("--frames", bench_frames, "source frames");
  bench->add_option("--repeats", repeats, "timed repetitions");
  bench->add_option("--beam", beam, "beam width");
  bench->add_option("--alpha", alpha, "length penalty exponent");
  bench->add_option("--max-len", max_len, "decode length cap");

  std::string corrupt_op;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--corrupt-op", corrupt_op,
                        "fault-injection fixture: skew one op's backward rule");

  std::string spec_path;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--spec", spec_path, "synth spec file")->required();
  synth->add_option("--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train->parsed())
      return cmd_train(config_path, data_dir, out_dir, sets, resume_path);
    if (translate->parsed())
      return cmd_translate(ck_path, features_path, vocab_flag, beam, alpha, max_len,
                           threads);
    if (evaluate->parsed())
      return cmd_evaluate(ck_path, features_path, refs_path, vocab_flag, beam, alpha,
                          max_len, threads);
    if (params->parsed()) {
      if (!lineup)
        sf::check(!config_path.empty(), "params requires --config or --lineup");
      return cmd_params(config_path, sets, lineup);
    }
    if (bench->parsed())
      return cmd_bench(ck_path, bench_frames, repeats, beam, alpha, max_len);
    if (gradcheck->parsed()) return cmd_gradcheck(corrupt_op);
    if (synth->parsed()) return cmd_synth(spec_path, out_dir);
  } catch (const sf::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
