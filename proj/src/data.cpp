#include "signformer/data.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <cstring>
#include <fstream>

#include "signformer/rng.hpp"

namespace signformer {

namespace {

constexpr char kFeatureMagic[4] = {'S', 'G', 'N', 'F'};
constexpr uint32_t kFeatureVersion = 1;

class BinWriter {
 public:
  explicit BinWriter(const std::string& path) : path_(path), tmp_(path + ".tmp") {
    out_.open(tmp_, std::ios::binary | std::ios::trunc);
    check(out_.good(), "cannot open ", tmp_, " for writing");
  }

  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  }
  void u16(uint16_t v) { put_le(v, 2); }
  void u32(uint32_t v) { put_le(v, 4); }
  void u64(uint64_t v) { put_le(v, 8); }
  void u8(uint8_t v) { bytes(&v, 1); }
  void f32(float v) {
    uint32_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void f32_array(std::span<const float> vals) {
    for (float v : vals) f32(v);
  }
  void str(const std::string& s) {
    check(s.size() <= 0xffff, "string too long for u16 length prefix");
    u16(static_cast<uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }

  void commit() {
    out_.flush();
    check(out_.good(), "write to ", tmp_, " failed");
    out_.close();
    std::filesystem::rename(tmp_, path_);
  }

 private:
  void put_le(uint64_t v, int n) {
    char buf[8];
    for (int i = 0; i < n; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    bytes(buf, static_cast<std::size_t>(n));
  }

  std::string path_, tmp_;
  std::ofstream out_;
};

class BinReader {
 public:
  explicit BinReader(const std::string& path) : path_(path) {
    in_.open(path, std::ios::binary);
    check(in_.good(), "cannot open ", path, " for reading");
  }

  std::size_t offset() const { return offset_; }

  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      fail("truncated file ", path_, " at byte offset ", offset_);
    offset_ += n;
  }
  uint16_t u16() { return static_cast<uint16_t>(get_le(2)); }
  uint32_t u32() { return static_cast<uint32_t>(get_le(4)); }
  uint64_t u64() { return get_le(8); }
  uint8_t u8() {
    uint8_t v;
    bytes(&v, 1);
    return v;
  }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    uint16_t n = u16();
    std::string s(n, '\0');
    if (n) bytes(s.data(), n);
    return s;
  }
  void expect_magic(const char magic[4]) {
    char got[4];
    bytes(got, 4);
    if (std::memcmp(got, magic, 4) != 0)
      fail("bad magic in ", path_, " at byte offset 0: expected ",
           std::string(magic, 4));
  }
  bool at_eof() {
    return in_.peek() == std::char_traits<char>::eof();
  }

 private:
  uint64_t get_le(int n) {
    unsigned char buf[8];
    bytes(buf, static_cast<std::size_t>(n));
    uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
    return v;
  }

  std::string path_;
  std::ifstream in_;
  std::size_t offset_ = 0;
};

}  // namespace

void write_features(const std::string& path, const FeatureDataset& dataset) {
  for (const auto& seq : dataset.sequences) {
    check(seq.frames.rank() == 2, "sequence ", seq.id, " frames must be [T,F]");
    check(seq.frames.dim(1) == dataset.feature_dim, "sequence ", seq.id,
          " feature dim ", seq.frames.dim(1), " does not match dataset dim ",
          dataset.feature_dim);
  }
  BinWriter w(path);
  w.bytes(kFeatureMagic, 4);
  w.u32(kFeatureVersion);
  w.u32(static_cast<uint32_t>(dataset.feature_dim));
  w.u32(static_cast<uint32_t>(dataset.sequences.size()));
  for (const auto& seq : dataset.sequences) {
    w.str(seq.id);
    w.u32(static_cast<uint32_t>(seq.frames.dim(0)));
    w.f32_array(seq.frames.data());
    w.u32(static_cast<uint32_t>(seq.target.size()));
    for (int id : seq.target) {
      check(id >= 0, "negative token id in ", seq.id);
      w.u32(static_cast<uint32_t>(id));
    }
  }
  w.commit();
}

FeatureDataset read_features(const std::string& path) {
  BinReader r(path);
  r.expect_magic(kFeatureMagic);
  const uint32_t version = r.u32();
  check(version == kFeatureVersion, "unsupported feature file version ", version,
        " in ", path, " at byte offset 4");
  FeatureDataset ds;
  ds.feature_dim = static_cast<int>(r.u32());
  check(ds.feature_dim >= 1, "feature dim must be positive in ", path);
  const uint32_t n = r.u32();
  ds.sequences.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    SequenceSample seq;
    seq.id = r.str();
    const uint32_t t = r.u32();
    check(t >= 1, "sequence ", seq.id, " has zero frames (offset ", r.offset(), ")");
    std::vector<float> frames(static_cast<std::size_t>(t) * ds.feature_dim);
    for (auto& v : frames) v = r.f32();
    seq.frames = Tensor::from_data({static_cast<int>(t), ds.feature_dim},
                                   std::move(frames));
    check(seq.frames.all_finite(), "non-finite frame values in sequence ", seq.id);
    const uint32_t l = r.u32();
    seq.target.resize(l);
    for (auto& id : seq.target) id = static_cast<int>(r.u32());
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

std::vector<std::string> read_vocab(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open vocab file ", path);
  std::vector<std::string> vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    check(!line.empty(), "empty vocab line ", vocab.size() + 1, " in ", path);
    vocab.push_back(line);
  }
  const char* reserved[4] = {"<unk>", "<pad>", "<bos>", "<eos>"};
  check(vocab.size() >= 4, "vocab must start with the 4 reserved tokens");
  for (int i = 0; i < 4; ++i)
    check(vocab[i] == reserved[i], "vocab line ", i + 1, " must be ", reserved[i],
          ", got ", vocab[i]);
  std::vector<std::string> sorted = vocab;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 1; i < sorted.size(); ++i)
    check(sorted[i] != sorted[i - 1], "duplicate vocab token ", sorted[i]);
  return vocab;
}

void write_vocab(const std::string& path, const std::vector<std::string>& vocab) {
  std::ofstream out(path + ".tmp", std::ios::trunc);
  check(out.good(), "cannot open ", path, " for writing");
  for (const auto& tok : vocab) out << tok << "\n";
  out.flush();
  check(out.good(), "write to ", path, " failed");
  out.close();
  std::filesystem::rename(path + ".tmp", path);
}

std::vector<Batch> make_batches(const FeatureDataset& dataset, int batch_size,
                                uint64_t seed, bool shuffle) {
  check(batch_size >= 1, "batch_size must be >= 1");
  std::vector<int> order(dataset.sequences.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  if (shuffle) {
    Rng rng(seed);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.next_below(i)]);
  }
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    Batch batch;
    int t_max = 1, l_max = 0;
    for (std::size_t i = start; i < end; ++i) {
      const auto& seq = dataset.sequences[order[i]];
      t_max = std::max(t_max, seq.frames.dim(0));
      l_max = std::max(l_max, static_cast<int>(seq.target.size()));
    }
    const int b = static_cast<int>(end - start);
    const int f = dataset.feature_dim;
    std::vector<float> frames(static_cast<std::size_t>(b) * t_max * f, 0.0f);
    for (std::size_t i = start; i < end; ++i) {
      const auto& seq = dataset.sequences[order[i]];
      const int row = static_cast<int>(i - start);
      std::copy(seq.frames.data().begin(), seq.frames.data().end(),
                frames.begin() + static_cast<std::size_t>(row) * t_max * f);
      batch.src_lengths.push_back(seq.frames.dim(0));
      std::vector<int> input = {kBosId};
      input.insert(input.end(), seq.target.begin(), seq.target.end());
      std::vector<int> label = seq.target;
      label.push_back(kEosId);
      input.resize(l_max + 1, kPadId);
      label.resize(l_max + 1, kPadId);
      batch.dec_inputs.push_back(std::move(input));
      batch.labels.push_back(std::move(label));
      batch.dataset_indices.push_back(order[i]);
    }
    batch.frames = Tensor::from_data({b, t_max, f}, std::move(frames));
    MaskSet masks = build_masks(batch.src_lengths, l_max + 1, t_max);
    batch.src_pad = masks.src_pad;
    batch.tgt_causal = masks.tgt_causal;
    batches.push_back(std::move(batch));
  }
  return batches;
}

void SynthSpec::validate() const {
  check(vocab_size >= 5, "synth vocab_size must be >= 5, got ", vocab_size);
  check(len_min >= 1 && len_max >= len_min, "invalid target length range [", len_min,
        ",", len_max, "]");
  check(frames_per_token_min >= 1 && frames_per_token_max >= frames_per_token_min,
        "invalid frames_per_token range");
  check(noise_sigma >= 0.0f, "noise_sigma must be >= 0");
  check(feature_dim >= 1, "feature_dim must be >= 1");
  check(n_train >= 1 && n_dev >= 1 && n_test >= 1, "sample counts must be >= 1");
}

namespace {

std::vector<std::vector<float>> token_projections(const SynthSpec& spec) {
  Rng rng(spec.projection_seed);
  std::vector<std::vector<float>> proj(spec.vocab_size);
  for (auto& row : proj) {
    row.resize(spec.feature_dim);
    for (auto& v : row) v = rng.gaussian();
  }
  return proj;
}

Tensor emit_frames(const std::vector<int>& tokens, const std::vector<int>& run_lengths,
                   const std::vector<std::vector<float>>& proj, const SynthSpec& spec,
                   Rng& rng) {
  int total = 0;
  for (int r : run_lengths) total += r;
  std::vector<float> frames(static_cast<std::size_t>(total) * spec.feature_dim);
  std::size_t at = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& base = proj[tokens[i] - kReservedTokens];
    for (int r = 0; r < run_lengths[i]; ++r) {
      for (int c = 0; c < spec.feature_dim; ++c)
        frames[at * spec.feature_dim + c] =
            base[c] + spec.noise_sigma * rng.gaussian();
      ++at;
    }
  }
  return Tensor::from_data({total, spec.feature_dim}, std::move(frames));
}

std::vector<int> random_tokens(int len, const SynthSpec& spec, Rng& rng) {
  std::vector<int> tokens(len);
  for (auto& t : tokens)
    t = kReservedTokens + static_cast<int>(rng.next_below(spec.vocab_size));
  return tokens;
}

FeatureDataset generate_subset(const SynthSpec& spec, int count, const char* tag,
                               const std::vector<std::vector<float>>& proj,
                               uint64_t seed) {
  FeatureDataset ds;
  ds.feature_dim = spec.feature_dim;
  Rng rng(seed);
  int emitted = 0;
  int pair_idx = 0;
  while (emitted < count) {
    char id[64];
    if (spec.task == SynthTask::kOrder) {
      const int len =
          spec.len_min + static_cast<int>(rng.next_below(spec.len_max - spec.len_min + 1));
      std::vector<int> first = random_tokens(len, spec, rng);
      std::vector<int> second = first;
      if (len >= 2) {
        // reshuffle until the order differs; identical multisets by design
        for (int attempt = 0; attempt < 16 && second == first; ++attempt)
          for (std::size_t i = second.size(); i > 1; --i)
            std::swap(second[i - 1], second[rng.next_below(i)]);
      }
      std::vector<int> ones(first.size(), 1);
      std::snprintf(id, sizeof(id), "%s%05da", tag, pair_idx);
      ds.sequences.push_back({id, emit_frames(first, ones, proj, spec, rng), first});
      ++emitted;
      if (emitted < count) {
        std::snprintf(id, sizeof(id), "%s%05db", tag, pair_idx);
        ds.sequences.push_back({id, emit_frames(second, ones, proj, spec, rng), second});
        ++emitted;
      }
      ++pair_idx;
      continue;
    }
    const int len =
        spec.len_min + static_cast<int>(rng.next_below(spec.len_max - spec.len_min + 1));
    std::vector<int> tokens = random_tokens(len, spec, rng);
    std::vector<int> runs(tokens.size(), 1);
    if (spec.task == SynthTask::kSegment) {
      // adjacent repeats are the point of the task; force at least one
      for (std::size_t i = 1; i < tokens.size(); ++i)
        if (rng.next_below(100) < 35) tokens[i] = tokens[i - 1];
      if (len >= 2) {
        bool has_repeat = false;
        for (std::size_t i = 1; i < tokens.size(); ++i)
          has_repeat = has_repeat || tokens[i] == tokens[i - 1];
        if (!has_repeat) {
          const std::size_t at = 1 + rng.next_below(len - 1);
          tokens[at] = tokens[at - 1];
        }
      }
      const int span = spec.frames_per_token_max - spec.frames_per_token_min + 1;
      for (auto& r : runs)
        r = spec.frames_per_token_min + static_cast<int>(rng.next_below(span));
    }
    std::snprintf(id, sizeof(id), "%s%05d", tag, emitted);
    ds.sequences.push_back({id, emit_frames(tokens, runs, proj, spec, rng), tokens});
    ++emitted;
  }
  return ds;
}

}  // namespace

SynthDataset synth_generate(const SynthSpec& spec, uint64_t seed) {
  spec.validate();
  auto proj = token_projections(spec);
  SynthDataset out;
  out.vocab = {"<unk>", "<pad>", "<bos>", "<eos>"};
  for (int i = 0; i < spec.vocab_size; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "w%03d", i);
    out.vocab.push_back(buf);
  }
  out.train = generate_subset(spec, spec.n_train, "train", proj, seed);
  out.dev = generate_subset(spec, spec.n_dev, "dev", proj, seed + 1);
  out.test = generate_subset(spec, spec.n_test, "test", proj, seed + 2);
  return out;
}

}  // namespace signformer
