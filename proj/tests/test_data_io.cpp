#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "signformer/checkpoint.hpp"
#include "signformer/config.hpp"
#include "signformer/data.hpp"
#include "signformer/model.hpp"

using namespace signformer;

namespace {

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "signformer_test_data";
  std::filesystem::create_directories(dir);
  return dir;
}

FeatureDataset random_dataset(int n, int f, uint64_t seed) {
  Rng rng(seed);
  FeatureDataset ds;
  ds.feature_dim = f;
  for (int i = 0; i < n; ++i) {
    SequenceSample seq;
    seq.id = "seq" + std::to_string(i);
    const int t = 1 + static_cast<int>(rng.next_below(6));
    std::vector<float> frames(static_cast<std::size_t>(t) * f);
    for (auto& v : frames) v = rng.uniform(-2.0f, 2.0f);
    seq.frames = Tensor::from_data({t, f}, std::move(frames));
    const int l = 1 + static_cast<int>(rng.next_below(5));
    for (int j = 0; j < l; ++j)
      seq.target.push_back(kReservedTokens + static_cast<int>(rng.next_below(10)));
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("feature files round-trip bit-exactly") {
  auto path = (temp_dir() / "roundtrip.sgnf").string();
  FeatureDataset ds = random_dataset(7, 5, 11);
  write_features(path, ds);
  FeatureDataset back = read_features(path);
  REQUIRE(back.feature_dim == ds.feature_dim);
  REQUIRE(back.sequences.size() == ds.sequences.size());
  for (std::size_t i = 0; i < ds.sequences.size(); ++i) {
    CHECK(back.sequences[i].id == ds.sequences[i].id);
    CHECK(back.sequences[i].target == ds.sequences[i].target);
    REQUIRE(back.sequences[i].frames.size() == ds.sequences[i].frames.size());
    for (std::size_t j = 0; j < ds.sequences[i].frames.size(); ++j)
      CHECK(back.sequences[i].frames.data()[j] == ds.sequences[i].frames.data()[j]);
  }
}

TEST_CASE("empty feature file is valid") {
  auto path = (temp_dir() / "empty.sgnf").string();
  FeatureDataset ds;
  ds.feature_dim = 4;
  write_features(path, ds);
  FeatureDataset back = read_features(path);
  CHECK(back.sequences.empty());
  CHECK(back.feature_dim == 4);
}

TEST_CASE("truncated feature file reports a byte offset") {
  auto path = (temp_dir() / "trunc.sgnf").string();
  write_features(path, random_dataset(3, 4, 12));
  std::string bytes = file_bytes(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  out.close();
  CHECK_THROWS_WITH_AS(read_features(path), doctest::Contains("byte offset"), Error);
}

TEST_CASE("bad magic is rejected") {
  auto path = (temp_dir() / "magic.sgnf").string();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write("NOPE0000", 8);
  out.close();
  CHECK_THROWS_WITH_AS(read_features(path), doctest::Contains("bad magic"), Error);
}

TEST_CASE("vocab reading: reserved header, duplicates, sizes") {
  auto path = (temp_dir() / "vocab.txt").string();
  write_vocab(path, {"<unk>", "<pad>", "<bos>", "<eos>"});
  CHECK(read_vocab(path).size() == 4);

  write_vocab(path, {"<unk>", "<pad>", "<bos>", "<eos>", "hallo", "hallo"});
  CHECK_THROWS_WITH_AS(read_vocab(path), doctest::Contains("hallo"), Error);

  write_vocab(path, {"<pad>", "<unk>", "<bos>", "<eos>"});
  CHECK_THROWS_AS(read_vocab(path), Error);

  // Phoenix-like: 2887 content words + 4 reserved
  std::vector<std::string> big = {"<unk>", "<pad>", "<bos>", "<eos>"};
  for (int i = 0; i < 2887; ++i) big.push_back("word" + std::to_string(i));
  write_vocab(path, big);
  CHECK(read_vocab(path).size() == 2891);
}

TEST_CASE("make_batches pads and masks correctly") {
  FeatureDataset ds;
  ds.feature_dim = 2;
  for (int t : {3, 5}) {
    SequenceSample seq;
    seq.id = "s" + std::to_string(t);
    seq.frames = Tensor::full({t, 2}, static_cast<float>(t));
    seq.target = {4, 5};
    ds.sequences.push_back(std::move(seq));
  }
  auto batches = make_batches(ds, 2, 0, false);
  REQUIRE(batches.size() == 1);
  const Batch& b = batches[0];
  CHECK(b.frames.shape() == Shape{2, 5, 2});
  const float want0[5] = {1, 1, 1, 0, 0};
  for (int j = 0; j < 5; ++j) {
    CHECK(b.src_pad.at({0, j}) == want0[j]);
    CHECK(b.src_pad.at({1, j}) == 1.0f);
  }
  // zero padding of the short sequence
  CHECK(b.frames.at({0, 3, 0}) == 0.0f);
  CHECK(b.frames.at({0, 2, 0}) == 3.0f);
  // teacher forcing rows
  CHECK(b.dec_inputs[0] == std::vector<int>{kBosId, 4, 5});
  CHECK(b.labels[0] == std::vector<int>{4, 5, kEosId});
}

TEST_CASE("make_batches sizes and ordering") {
  FeatureDataset ds = random_dataset(100, 3, 13);
  auto batches = make_batches(ds, 32, 7, false);
  REQUIRE(batches.size() == 4);
  CHECK(batches[0].frames.dim(0) == 32);
  CHECK(batches[3].frames.dim(0) == 4);
  // shuffle off preserves order
  int at = 0;
  for (const auto& b : batches)
    for (int idx : b.dataset_indices) CHECK(idx == at++);
  // shuffled batches are a permutation and deterministic under the seed
  auto shuffled1 = make_batches(ds, 32, 7, true);
  auto shuffled2 = make_batches(ds, 32, 7, true);
  std::set<int> seen;
  for (std::size_t i = 0; i < shuffled1.size(); ++i) {
    CHECK(shuffled1[i].dataset_indices == shuffled2[i].dataset_indices);
    for (int idx : shuffled1[i].dataset_indices) seen.insert(idx);
  }
  CHECK(seen.size() == 100);
}

TEST_CASE("synth copy: determinism and exact frames at zero noise") {
  SynthSpec spec;
  spec.task = SynthTask::kCopy;
  spec.vocab_size = 5;
  spec.len_min = 1;
  spec.len_max = 1;
  spec.noise_sigma = 0.0f;
  spec.feature_dim = 6;
  spec.n_train = 30;
  spec.n_dev = 5;
  spec.n_test = 5;
  SynthDataset a = synth_generate(spec, 3);
  SynthDataset b = synth_generate(spec, 3);
  REQUIRE(a.train.sequences.size() == 30);
  CHECK(a.vocab.size() == 9);
  for (std::size_t i = 0; i < a.train.sequences.size(); ++i)
    for (std::size_t j = 0; j < a.train.sequences[i].frames.size(); ++j)
      CHECK(a.train.sequences[i].frames.data()[j] ==
            b.train.sequences[i].frames.data()[j]);

  // same target => identical frames with zero noise
  bool found_pair = false;
  for (std::size_t i = 0; i < a.train.sequences.size() && !found_pair; ++i)
    for (std::size_t j = i + 1; j < a.train.sequences.size(); ++j)
      if (a.train.sequences[i].target == a.train.sequences[j].target) {
        found_pair = true;
        for (std::size_t e = 0; e < a.train.sequences[i].frames.size(); ++e)
          CHECK(a.train.sequences[i].frames.data()[e] ==
                a.train.sequences[j].frames.data()[e]);
        break;
      }
  CHECK(found_pair);
}

TEST_CASE("synth order: pairs share a token multiset") {
  SynthSpec spec;
  spec.task = SynthTask::kOrder;
  spec.vocab_size = 8;
  spec.len_min = 4;
  spec.len_max = 6;
  spec.noise_sigma = 0.0f;
  spec.feature_dim = 5;
  spec.n_train = 20;
  spec.n_dev = 4;
  spec.n_test = 4;
  SynthDataset ds = synth_generate(spec, 9);
  for (std::size_t i = 0; i + 1 < ds.train.sequences.size(); i += 2) {
    auto ta = ds.train.sequences[i].target;
    auto tb = ds.train.sequences[i + 1].target;
    auto sa = ta, sb = tb;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    CHECK(sa == sb);
    // frame rows are permutations of each other at zero noise
    const int f = spec.feature_dim;
    auto rows = [&](const Tensor& t) {
      std::vector<std::vector<float>> r;
      for (int row = 0; row < t.dim(0); ++row)
        r.emplace_back(t.data().begin() + static_cast<std::size_t>(row) * f,
                       t.data().begin() + static_cast<std::size_t>(row + 1) * f);
      std::sort(r.begin(), r.end());
      return r;
    };
    CHECK(rows(ds.train.sequences[i].frames) == rows(ds.train.sequences[i + 1].frames));
  }
}

TEST_CASE("synth segment: run lengths and adjacent repeats") {
  SynthSpec spec;
  spec.task = SynthTask::kSegment;
  spec.vocab_size = 6;
  spec.len_min = 3;
  spec.len_max = 5;
  spec.frames_per_token_min = 2;
  spec.frames_per_token_max = 4;
  spec.noise_sigma = 0.0f;
  spec.feature_dim = 4;
  spec.n_train = 24;
  spec.n_dev = 4;
  spec.n_test = 4;
  SynthDataset ds = synth_generate(spec, 21);
  for (const auto& seq : ds.train.sequences) {
    const int len = static_cast<int>(seq.target.size());
    CHECK(seq.frames.dim(0) >= len * spec.frames_per_token_min);
    CHECK(seq.frames.dim(0) <= len * spec.frames_per_token_max);
    bool has_repeat = len < 2;
    for (std::size_t i = 1; i < seq.target.size(); ++i)
      has_repeat = has_repeat || seq.target[i] == seq.target[i - 1];
    CHECK(has_repeat);
  }
  CHECK_THROWS_AS(
      [] {
        SynthSpec bad;
        bad.vocab_size = 4;
        bad.validate();
      }(),
      Error);
}

TEST_CASE("synth output files are byte-identical across runs") {
  SynthSpec spec;
  spec.vocab_size = 6;
  spec.feature_dim = 4;
  spec.n_train = 10;
  spec.n_dev = 3;
  spec.n_test = 3;
  auto dir = temp_dir();
  for (int round = 0; round < 2; ++round) {
    SynthDataset ds = synth_generate(spec, 5);
    write_features((dir / ("synth" + std::to_string(round) + ".sgnf")).string(),
                   ds.train);
  }
  CHECK(file_bytes((dir / "synth0.sgnf").string()) ==
        file_bytes((dir / "synth1.sgnf").string()));
}

TEST_CASE("checkpoint round-trip restores tensors bit-exactly") {
  ModelConfig cfg;
  cfg.hidden_d = 16;
  cfg.heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.ff_dim = 32;
  cfg.kernel_k = 5;
  cfg.vocab_v = 12;
  cfg.feature_dim_f = 8;
  cfg.use_cope = true;
  cfg.cope_p_max = 8;
  cfg.resolve();

  Checkpoint ck;
  ck.config = cfg;
  ck.params = init_parameters(cfg, 77);
  ck.optimizer_kind = OptimizerKind::kSophiaG;
  ck.optimizer_step = 42;
  for (const auto& [name, t] : ck.params.entries()) {
    if (!t.requires_grad()) continue;
    ck.opt_m.emplace_back(t.size(), 0.25f);
    ck.opt_second.emplace_back(t.size(), 0.5f);
  }
  ck.epoch = 3;
  ck.best_dev_bleu4 = 12.5;
  ck.scheduler_stale = 2;
  ck.scheduler_best = 12.5;
  ck.lr = 0.002;
  ck.rng_state = {1, 2, 3, 4};

  auto path = (temp_dir() / "model.sgck").string();
  save_checkpoint(path, ck);
  Checkpoint back = load_checkpoint(path);
  CHECK(back.config.hidden_d == cfg.hidden_d);
  CHECK(back.config.use_cope == cfg.use_cope);
  CHECK(back.optimizer_kind == OptimizerKind::kSophiaG);
  CHECK(back.optimizer_step == 42);
  CHECK(back.epoch == 3);
  CHECK(back.best_dev_bleu4 == 12.5);
  CHECK(back.lr == 0.002);
  CHECK(back.rng_state == std::array<uint64_t, 4>{1, 2, 3, 4});
  for (const auto& [name, t] : ck.params.entries()) {
    const Tensor& u = back.params.at(name);
    REQUIRE(u.size() == t.size());
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(u.data()[i] == t.data()[i]);
  }
  REQUIRE(back.opt_m.size() == ck.opt_m.size());
  for (std::size_t i = 0; i < ck.opt_m.size(); ++i) {
    CHECK(back.opt_m[i] == ck.opt_m[i]);
    CHECK(back.opt_second[i] == ck.opt_second[i]);
  }

  // a model binds the restored parameters directly
  Model model(back.config, std::move(back.params));
  (void)model;

  // loading into a mismatched config names the first bad tensor
  ModelConfig other = cfg;
  other.hidden_d = 32;
  other.heads = 2;
  CHECK_THROWS_WITH_AS(load_checkpoint(path, &other), doctest::Contains("shape"),
                       Error);
}
