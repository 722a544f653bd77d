#include "signformer/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "signformer/config.hpp"

namespace signformer {

namespace {

constexpr char kCheckpointMagic[4] = {'S', 'G', 'C', 'K'};
constexpr uint32_t kCheckpointVersion = 1;

void put_le(std::ofstream& out, uint64_t v, int n) {
  char buf[8];
  for (int i = 0; i < n; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, n);
}

uint64_t get_le(std::ifstream& in, int n, std::size_t& offset,
                const std::string& path) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), n);
  if (in.gcount() != n) fail("truncated checkpoint ", path, " at byte offset ", offset);
  offset += static_cast<std::size_t>(n);
  uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return v;
}

void put_f32(std::ofstream& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_le(out, bits, 4);
}

float get_f32(std::ifstream& in, std::size_t& offset, const std::string& path) {
  uint32_t bits = static_cast<uint32_t>(get_le(in, 4, offset, path));
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void put_f64(std::ofstream& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_le(out, bits, 8);
}

double get_f64(std::ifstream& in, std::size_t& offset, const std::string& path) {
  uint64_t bits = get_le(in, 8, offset, path);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::string tmp = path + ".tmp";
  std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
  check(out.good(), "cannot open ", tmp, " for writing");
  out.write(kCheckpointMagic, 4);
  put_le(out, kCheckpointVersion, 4);
  const std::string cfg_text =
      ck.config_text.empty() ? model_config_text(ck.config) : ck.config_text;
  put_le(out, cfg_text.size(), 4);
  out.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));

  put_le(out, ck.params.entries().size(), 4);
  for (const auto& [name, t] : ck.params.entries()) {
    put_le(out, name.size(), 2);
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le(out, static_cast<uint64_t>(t.rank()), 1);
    for (int i = 0; i < t.rank(); ++i) put_le(out, static_cast<uint64_t>(t.dim(i)), 4);
    for (float v : t.data()) put_f32(out, v);
  }

  put_le(out, ck.optimizer_kind == OptimizerKind::kSophiaG ? 1 : 0, 1);
  put_le(out, ck.optimizer_step, 8);
  put_le(out, ck.opt_m.size(), 4);
  check(ck.opt_m.size() == ck.opt_second.size(),
        "optimizer buffer lists disagree in length");
  for (std::size_t i = 0; i < ck.opt_m.size(); ++i) {
    put_le(out, ck.opt_m[i].size(), 8);
    for (float v : ck.opt_m[i]) put_f32(out, v);
    put_le(out, ck.opt_second[i].size(), 8);
    for (float v : ck.opt_second[i]) put_f32(out, v);
  }

  put_le(out, static_cast<uint64_t>(ck.epoch), 4);
  put_f64(out, ck.best_dev_bleu4);
  put_le(out, static_cast<uint64_t>(ck.scheduler_stale), 4);
  put_f64(out, ck.scheduler_best);
  put_f64(out, ck.lr);
  for (uint64_t s : ck.rng_state) put_le(out, s, 8);

  out.flush();
  check(out.good(), "write to ", tmp, " failed");
  out.close();
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path, const ModelConfig* expect) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open checkpoint ", path);
  std::size_t offset = 0;
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    fail("bad magic in checkpoint ", path, " at byte offset 0");
  offset = 4;
  const uint32_t version = static_cast<uint32_t>(get_le(in, 4, offset, path));
  check(version == kCheckpointVersion, "unsupported checkpoint version ", version,
        " in ", path);

  Checkpoint ck;
  const uint32_t cfg_len = static_cast<uint32_t>(get_le(in, 4, offset, path));
  ck.config_text.resize(cfg_len);
  in.read(ck.config_text.data(), cfg_len);
  if (static_cast<uint32_t>(in.gcount()) != cfg_len)
    fail("truncated checkpoint ", path, " at byte offset ", offset);
  offset += cfg_len;
  ck.config = model_config_from_text(ck.config_text);

  // the tensor set implied by the stored config, for validation
  std::map<std::string, Shape> expected_shapes;
  const ModelConfig& shape_cfg = expect ? *expect : ck.config;
  for_each_parameter(shape_cfg,
                     [&](const std::string& name, const Shape& shape, ParamKind) {
                       expected_shapes[name] = shape;
                     });

  const uint32_t n_params = static_cast<uint32_t>(get_le(in, 4, offset, path));
  check(n_params == expected_shapes.size(), "checkpoint holds ", n_params,
        " tensors, config expects ", expected_shapes.size());
  for (uint32_t i = 0; i < n_params; ++i) {
    const uint16_t name_len = static_cast<uint16_t>(get_le(in, 2, offset, path));
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (static_cast<uint16_t>(in.gcount()) != name_len)
      fail("truncated checkpoint ", path, " at byte offset ", offset);
    offset += name_len;
    const uint8_t rank = static_cast<uint8_t>(get_le(in, 1, offset, path));
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(get_le(in, 4, offset, path));
    auto it = expected_shapes.find(name);
    check(it != expected_shapes.end(), "checkpoint tensor ", name,
          " not expected by the config");
    check(it->second == shape, "checkpoint tensor ", name, " has shape ",
          shape_str(shape), ", config expects ", shape_str(it->second));
    std::vector<float> data(shape_numel(shape));
    for (auto& v : data) v = get_f32(in, offset, path);
    Tensor t = ck.params.create(name, shape, true);
    std::copy(data.begin(), data.end(), t.data_mut().begin());
  }
  // restore trainability flags from the config enumeration
  for_each_parameter(ck.config,
                     [&](const std::string& name, const Shape&, ParamKind kind) {
                       if (kind == ParamKind::kRunningMean ||
                           kind == ParamKind::kRunningVar) {
                         Tensor t = ck.params.at(name);
                         t.set_requires_grad(false);
                       }
                     });

  ck.optimizer_kind = get_le(in, 1, offset, path) == 1 ? OptimizerKind::kSophiaG
                                                       : OptimizerKind::kAdamW;
  ck.optimizer_step = get_le(in, 8, offset, path);
  const uint32_t n_slots = static_cast<uint32_t>(get_le(in, 4, offset, path));
  ck.opt_m.resize(n_slots);
  ck.opt_second.resize(n_slots);
  for (uint32_t i = 0; i < n_slots; ++i) {
    ck.opt_m[i].resize(get_le(in, 8, offset, path));
    for (auto& v : ck.opt_m[i]) v = get_f32(in, offset, path);
    ck.opt_second[i].resize(get_le(in, 8, offset, path));
    for (auto& v : ck.opt_second[i]) v = get_f32(in, offset, path);
  }

  ck.epoch = static_cast<int>(get_le(in, 4, offset, path));
  ck.best_dev_bleu4 = get_f64(in, offset, path);
  ck.scheduler_stale = static_cast<int>(get_le(in, 4, offset, path));
  ck.scheduler_best = get_f64(in, offset, path);
  ck.lr = get_f64(in, offset, path);
  for (auto& s : ck.rng_state) s = get_le(in, 8, offset, path);
  return ck;
}

}  // namespace signformer
