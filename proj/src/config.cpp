#include "signformer/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace signformer {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

class KvReader {
 public:
  explicit KvReader(const KvMap& kv) : kv_(kv) {}

  bool has(const std::string& key) {
    seen_.insert(key);
    return kv_.count(key) > 0;
  }
  std::string str(const std::string& key, const std::string& dflt) {
    seen_.insert(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : it->second;
  }
  int integer(const std::string& key, int dflt) {
    seen_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    try {
      std::size_t used = 0;
      int v = std::stoi(it->second, &used);
      check(used == it->second.size(), "");
      return v;
    } catch (...) {
      fail("config key ", key, " expects an integer, got '", it->second, "'");
    }
  }
  uint64_t u64(const std::string& key, uint64_t dflt) {
    seen_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    try {
      return std::stoull(it->second);
    } catch (...) {
      fail("config key ", key, " expects an unsigned integer, got '", it->second, "'");
    }
  }
  double real(const std::string& key, double dflt) {
    seen_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    try {
      std::size_t used = 0;
      double v = std::stod(it->second, &used);
      check(used == it->second.size(), "");
      return v;
    } catch (...) {
      fail("config key ", key, " expects a number, got '", it->second, "'");
    }
  }
  bool boolean(const std::string& key, bool dflt) {
    seen_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    fail("config key ", key, " expects true/false, got '", it->second, "'");
  }
  void reject_unknown(const std::string& source) const {
    for (const auto& [key, value] : kv_)
      check(seen_.count(key) > 0, "unknown config key '", key, "' in ", source);
  }

 private:
  const KvMap& kv_;
  std::set<std::string> seen_;
};

void read_model_keys(KvReader& r, ModelConfig& m) {
  m.hidden_d = r.integer("hidden_d", m.hidden_d);
  m.heads = r.integer("heads", m.heads);
  m.enc_layers = r.integer("enc_layers", m.enc_layers);
  m.dec_layers = r.integer("dec_layers", m.dec_layers);
  m.ff_dim = r.integer("ff_dim", m.ff_dim);
  m.kernel_k = r.integer("kernel_k", m.kernel_k);
  m.conv_expansion = r.integer("conv_expansion", m.conv_expansion);
  m.use_cope = r.boolean("use_cope", m.use_cope);
  m.cope_p_max = r.integer("cope_p_max", m.cope_p_max);
  std::string mode = r.str("cope_mode", m.cope_cross_mode == CopeMode::kSuffix
                                            ? "suffix"
                                            : "prefix");
  if (mode == "prefix") {
    m.cope_cross_mode = CopeMode::kPrefix;
  } else if (mode == "suffix") {
    m.cope_cross_mode = CopeMode::kSuffix;
  } else {
    fail("config key cope_mode expects prefix or suffix, got '", mode, "'");
  }
  m.gloss.samples_k = r.integer("gloss_samples_k", m.gloss.samples_k);
  m.gloss.window_radius =
      static_cast<float>(r.real("gloss_window_r", m.gloss.window_radius));
  m.vocab_v = r.integer("vocab_v", m.vocab_v);
  m.feature_dim_f = r.integer("feature_dim_f", m.feature_dim_f);
  m.dropout = static_cast<float>(r.real("dropout", m.dropout));
  std::string style = r.str("conv_style", m.conv_style == ConvStyle::kSignformer
                                              ? "signformer"
                                              : "conformer_original");
  if (style == "signformer") {
    m.conv_style = ConvStyle::kSignformer;
  } else if (style == "conformer_original") {
    m.conv_style = ConvStyle::kConformerOriginal;
  } else {
    fail("config key conv_style expects signformer or conformer_original, got '",
         style, "'");
  }
  m.tie_output_embedding = r.boolean("tie_output_embedding", m.tie_output_embedding);
  m.use_ape = r.boolean("use_ape", m.use_ape);
  m.ape_scale_sqrt_d = r.boolean("ape_scale_sqrt_d", m.ape_scale_sqrt_d);
  m.ape_t_max = r.integer("ape_t_max", m.ape_t_max);
}

}  // namespace

KvMap parse_kv_text(const std::string& text, const std::string& source_name) {
  KvMap kv;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    check(eq != std::string::npos, source_name, ":", line_no,
          ": expected key=value, got '", line, "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    check(!key.empty(), source_name, ":", line_no, ": empty key");
    kv[key] = value;
  }
  return kv;
}

KvMap read_kv_file(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open config file ", path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_kv_text(buf.str(), path);
}

RunConfig RunConfig::from_map(const KvMap& kv) {
  RunConfig rc;
  KvReader r(kv);
  read_model_keys(r, rc.model);

  rc.train.epochs = r.integer("epochs", rc.train.epochs);
  rc.train.batch_size = r.integer("batch_size", rc.train.batch_size);
  rc.train.seed = r.u64("seed", rc.train.seed);
  rc.train.label_smoothing =
      static_cast<float>(r.real("label_smoothing", rc.train.label_smoothing));
  rc.train.grad_clip_norm = r.real("grad_clip_norm", rc.train.grad_clip_norm);
  rc.train.optimizer = r.str("optimizer", rc.train.optimizer);
  check(rc.train.optimizer == "auto" || rc.train.optimizer == "adamw" ||
            rc.train.optimizer == "sophiag",
        "config key optimizer expects auto|adamw|sophiag, got '", rc.train.optimizer,
        "'");
  rc.train.opt.lr = r.real("lr", rc.train.opt.lr);
  rc.train.opt.weight_decay = r.real("weight_decay", rc.train.opt.weight_decay);
  rc.train.opt.adam_beta1 = r.real("adam_beta1", rc.train.opt.adam_beta1);
  rc.train.opt.adam_beta2 = r.real("adam_beta2", rc.train.opt.adam_beta2);
  rc.train.opt.adam_eps = r.real("adam_eps", rc.train.opt.adam_eps);
  rc.train.opt.sophia_beta1 = r.real("sophia_beta1", rc.train.opt.sophia_beta1);
  rc.train.opt.sophia_beta2 = r.real("sophia_beta2", rc.train.opt.sophia_beta2);
  rc.train.opt.sophia_rho = r.real("sophia_rho", rc.train.opt.sophia_rho);
  rc.train.opt.sophia_eps = r.real("sophia_eps", rc.train.opt.sophia_eps);
  rc.train.opt.hessian_interval =
      r.integer("sophia_hessian_interval", rc.train.opt.hessian_interval);
  rc.train.plateau.factor = r.real("plateau_factor", rc.train.plateau.factor);
  rc.train.plateau.patience = r.integer("plateau_patience", rc.train.plateau.patience);
  rc.train.plateau.min_lr = r.real("plateau_min_lr", rc.train.plateau.min_lr);
  rc.train.decode_max_len = r.integer("max_len", rc.train.decode_max_len);

  rc.decode.beam = r.integer("beam", rc.decode.beam);
  rc.decode.length_penalty_alpha =
      r.real("length_penalty_alpha", rc.decode.length_penalty_alpha);
  rc.decode.max_len = rc.train.decode_max_len;

  r.reject_unknown("run config");
  return rc;
}

RunConfig RunConfig::from_file(const std::string& path,
                               const std::vector<std::string>& overrides) {
  KvMap kv = read_kv_file(path);
  for (const auto& item : overrides) {
    KvMap one = parse_kv_text(item, "--set " + item);
    for (const auto& [k, v] : one) kv[k] = v;
  }
  return from_map(kv);
}

namespace {

void append_kv(std::ostringstream& os, const std::string& key, const std::string& v) {
  os << key << "=" << v << "\n";
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void model_keys_to(std::ostringstream& os, const ModelConfig& m) {
  append_kv(os, "ape_scale_sqrt_d", m.ape_scale_sqrt_d ? "true" : "false");
  append_kv(os, "ape_t_max", std::to_string(m.ape_t_max));
  append_kv(os, "conv_expansion", std::to_string(m.conv_expansion));
  append_kv(os, "conv_style", m.conv_style == ConvStyle::kSignformer
                                  ? "signformer"
                                  : "conformer_original");
  append_kv(os, "cope_mode",
            m.cope_cross_mode == CopeMode::kSuffix ? "suffix" : "prefix");
  append_kv(os, "cope_p_max", std::to_string(m.cope_p_max));
  append_kv(os, "dec_layers", std::to_string(m.dec_layers));
  append_kv(os, "dropout", fmt_double(m.dropout));
  append_kv(os, "enc_layers", std::to_string(m.enc_layers));
  append_kv(os, "ff_dim", std::to_string(m.ff_dim));
  append_kv(os, "feature_dim_f", std::to_string(m.feature_dim_f));
  append_kv(os, "gloss_samples_k", std::to_string(m.gloss.samples_k));
  append_kv(os, "gloss_window_r", fmt_double(m.gloss.window_radius));
  append_kv(os, "heads", std::to_string(m.heads));
  append_kv(os, "hidden_d", std::to_string(m.hidden_d));
  append_kv(os, "kernel_k", std::to_string(m.kernel_k));
  append_kv(os, "tie_output_embedding", m.tie_output_embedding ? "true" : "false");
  append_kv(os, "use_ape", m.use_ape ? "true" : "false");
  append_kv(os, "use_cope", m.use_cope ? "true" : "false");
  append_kv(os, "vocab_v", std::to_string(m.vocab_v));
}

}  // namespace

std::string RunConfig::resolved_text() const {
  std::ostringstream os;
  model_keys_to(os, model);
  append_kv(os, "adam_beta1", fmt_double(train.opt.adam_beta1));
  append_kv(os, "adam_beta2", fmt_double(train.opt.adam_beta2));
  append_kv(os, "adam_eps", fmt_double(train.opt.adam_eps));
  append_kv(os, "batch_size", std::to_string(train.batch_size));
  append_kv(os, "beam", std::to_string(decode.beam));
  append_kv(os, "epochs", std::to_string(train.epochs));
  append_kv(os, "grad_clip_norm", fmt_double(train.grad_clip_norm));
  append_kv(os, "label_smoothing", fmt_double(train.label_smoothing));
  append_kv(os, "length_penalty_alpha", fmt_double(decode.length_penalty_alpha));
  append_kv(os, "lr", fmt_double(train.opt.lr));
  append_kv(os, "max_len", std::to_string(decode.max_len));
  append_kv(os, "optimizer", train.optimizer);
  append_kv(os, "plateau_factor", fmt_double(train.plateau.factor));
  append_kv(os, "plateau_min_lr", fmt_double(train.plateau.min_lr));
  append_kv(os, "plateau_patience", std::to_string(train.plateau.patience));
  append_kv(os, "seed", std::to_string(train.seed));
  append_kv(os, "sophia_beta1", fmt_double(train.opt.sophia_beta1));
  append_kv(os, "sophia_beta2", fmt_double(train.opt.sophia_beta2));
  append_kv(os, "sophia_eps", fmt_double(train.opt.sophia_eps));
  append_kv(os, "sophia_hessian_interval", std::to_string(train.opt.hessian_interval));
  append_kv(os, "sophia_rho", fmt_double(train.opt.sophia_rho));
  append_kv(os, "weight_decay", fmt_double(train.opt.weight_decay));
  return os.str();
}

std::string model_config_text(const ModelConfig& cfg) {
  std::ostringstream os;
  model_keys_to(os, cfg);
  return os.str();
}

ModelConfig model_config_from_text(const std::string& text) {
  KvMap kv = parse_kv_text(text, "checkpoint config");
  ModelConfig m;
  KvReader r(kv);
  read_model_keys(r, m);
  r.reject_unknown("checkpoint config");
  m.resolve();
  return m;
}

SynthSpec synth_spec_from_map(const KvMap& kv, uint64_t* seed_out) {
  SynthSpec spec;
  KvReader r(kv);
  std::string task = r.str("task", "copy");
  if (task == "copy") {
    spec.task = SynthTask::kCopy;
  } else if (task == "order") {
    spec.task = SynthTask::kOrder;
  } else if (task == "segment") {
    spec.task = SynthTask::kSegment;
  } else {
    fail("synth key task expects copy|order|segment, got '", task, "'");
  }
  spec.vocab_size = r.integer("vocab_size", spec.vocab_size);
  spec.len_min = r.integer("len_min", spec.len_min);
  spec.len_max = r.integer("len_max", spec.len_max);
  spec.frames_per_token_min =
      r.integer("frames_per_token_min", spec.frames_per_token_min);
  spec.frames_per_token_max =
      r.integer("frames_per_token_max", spec.frames_per_token_max);
  spec.noise_sigma = static_cast<float>(r.real("noise_sigma", spec.noise_sigma));
  spec.projection_seed = r.u64("projection_seed", spec.projection_seed);
  spec.feature_dim = r.integer("feature_dim", spec.feature_dim);
  spec.n_train = r.integer("n_train", spec.n_train);
  spec.n_dev = r.integer("n_dev", spec.n_dev);
  spec.n_test = r.integer("n_test", spec.n_test);
  uint64_t seed = r.u64("seed", 1);
  if (seed_out) *seed_out = seed;
  r.reject_unknown("synth spec");
  spec.validate();
  return spec;
}

SynthSpec synth_spec_from_file(const std::string& path, uint64_t* seed_out) {
  return synth_spec_from_map(read_kv_file(path), seed_out);
}

}  // namespace signformer
