#include "signformer/model.hpp"

#include <cmath>
#include <cstdio>

namespace signformer {

void ModelConfig::resolve() {
  if (heads == 0) heads = hidden_d == 32 ? 4 : 8;
  if (ff_dim == 0) ff_dim = 4 * hidden_d;
  validate();
}

void ModelConfig::validate() const {
  check(hidden_d >= 1 && hidden_d <= 256,
        "hidden_d must be in [1,256] (larger found detrimental), got ", hidden_d);
  check(heads >= 1, "heads must be resolved and >= 1, got ", heads);
  check(hidden_d % heads == 0, "heads ", heads, " must divide hidden_d ", hidden_d);
  check(enc_layers >= 1, "enc_layers must be >= 1, got ", enc_layers);
  check(dec_layers >= 1, "dec_layers must be >= 1, got ", dec_layers);
  check(ff_dim >= 1, "ff_dim must be >= 1, got ", ff_dim);
  check(kernel_k >= 1 && kernel_k % 2 == 1, "kernel_k must be odd, got ", kernel_k);
  check(conv_expansion >= 1, "conv_expansion must be >= 1, got ", conv_expansion);
  check(cope_p_max >= 1, "cope_p_max must be >= 1, got ", cope_p_max);
  check(gloss.samples_k >= 1, "gloss.samples_k must be >= 1, got ", gloss.samples_k);
  check(gloss.window_radius > 0.0f, "gloss.window_radius must be positive");
  check(vocab_v >= kReservedTokens + 1, "vocab_v must cover the ", kReservedTokens,
        " reserved tokens plus content, got ", vocab_v);
  check(feature_dim_f >= 1, "feature_dim_f must be >= 1, got ", feature_dim_f);
  check(dropout >= 0.0f && dropout < 1.0f, "dropout must be in [0,1), got ", dropout);
  check(ape_t_max >= 1, "ape_t_max must be >= 1, got ", ape_t_max);
}

Tensor Parameters::create(const std::string& name, const Shape& shape, bool trainable) {
  check(by_name_.count(name) == 0, "duplicate parameter name ", name);
  Tensor t = Tensor::zeros(shape, trainable);
  by_name_.emplace(name, t);
  return t;
}

const Tensor& Parameters::at(const std::string& name) const {
  auto it = by_name_.find(name);
  check(it != by_name_.end(), "missing parameter ", name);
  return it->second;
}

long long Parameters::trainable_count() const {
  long long n = 0;
  for (const auto& [name, t] : by_name_)
    if (t.requires_grad()) n += static_cast<long long>(t.size());
  return n;
}

void Parameters::zero_grads() {
  for (auto& [name, t] : by_name_) t.zero_grad();
}

namespace {

std::string layer_tag(const char* stack, int idx) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s.l%02d.", stack, idx);
  return buf;
}

std::string head_tag(int idx) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "h%02d", idx);
  return buf;
}

using ParamFn = std::function<void(const std::string&, const Shape&, ParamKind)>;

void enumerate_attention(const std::string& prefix, int d, const ParamFn& fn) {
  fn(prefix + ".wq", {d, d}, ParamKind::kWeight);
  fn(prefix + ".bq", {d}, ParamKind::kBias);
  fn(prefix + ".wk", {d, d}, ParamKind::kWeight);
  fn(prefix + ".bk", {d}, ParamKind::kBias);
  fn(prefix + ".wv", {d, d}, ParamKind::kWeight);
  fn(prefix + ".bv", {d}, ParamKind::kBias);
  fn(prefix + ".wo", {d, d}, ParamKind::kWeight);
  fn(prefix + ".bo", {d}, ParamKind::kBias);
}

void enumerate_norm(const std::string& prefix, int d, const ParamFn& fn) {
  fn(prefix + ".gain", {d}, ParamKind::kGain);
  fn(prefix + ".bias", {d}, ParamKind::kBias);
}

void enumerate_cope(const std::string& prefix, const ModelConfig& cfg, const ParamFn& fn) {
  for (int h = 0; h < cfg.heads; ++h)
    fn(prefix + ".cope." + head_tag(h), {cfg.cope_p_max + 1, cfg.d_head()},
       ParamKind::kCopeTable);
}

void enumerate_ff(const std::string& base, const ModelConfig& cfg, const ParamFn& fn) {
  const int d = cfg.hidden_d;
  enumerate_norm(base + "ff_norm", d, fn);
  fn(base + "ff.w1", {d, cfg.ff_dim}, ParamKind::kWeight);
  fn(base + "ff.b1", {cfg.ff_dim}, ParamKind::kBias);
  fn(base + "ff.w2", {cfg.ff_dim, d}, ParamKind::kWeight);
  fn(base + "ff.b2", {d}, ParamKind::kBias);
}

}  // namespace

void for_each_parameter(const ModelConfig& cfg, const ParamFn& fn) {
  const int d = cfg.hidden_d;
  fn("src_embed.weight", {cfg.feature_dim_f, d}, ParamKind::kWeight);
  fn("src_embed.bias", {d}, ParamKind::kBias);
  for (int l = 0; l < cfg.enc_layers; ++l) {
    const std::string base = layer_tag("enc", l);
    enumerate_norm(base + "attn_norm", d, fn);
    enumerate_attention(base + "gloss", d, fn);
    fn(base + "gloss.offsets", {cfg.heads, cfg.gloss.samples_k}, ParamKind::kOffsets);
    if (cfg.use_cope) enumerate_cope(base + "gloss", cfg, fn);
    if (cfg.conv_style == ConvStyle::kSignformer) {
      const int e = cfg.conv_expansion * d;
      enumerate_norm(base + "conv.norm_in", d, fn);
      fn(base + "conv.pw1.w", {d, e}, ParamKind::kWeight);
      fn(base + "conv.pw1.b", {e}, ParamKind::kBias);
      fn(base + "conv.dw.w", {e, cfg.kernel_k}, ParamKind::kDepthwise);
      fn(base + "conv.dw.b", {e}, ParamKind::kBias);
      fn(base + "conv.pw2.w", {e, d}, ParamKind::kWeight);
      fn(base + "conv.pw2.b", {d}, ParamKind::kBias);
      enumerate_norm(base + "conv.norm_out", d, fn);
    } else {
      enumerate_norm(base + "conv.norm_in", d, fn);
      fn(base + "conv.pw1.w", {d, 2 * d}, ParamKind::kWeight);
      fn(base + "conv.pw1.b", {2 * d}, ParamKind::kBias);
      fn(base + "conv.dw.w", {d, cfg.kernel_k}, ParamKind::kDepthwise);
      fn(base + "conv.dw.b", {d}, ParamKind::kBias);
      fn(base + "conv.bn.gain", {d}, ParamKind::kGain);
      fn(base + "conv.bn.bias", {d}, ParamKind::kBias);
      fn(base + "conv.bn.rmean", {d}, ParamKind::kRunningMean);
      fn(base + "conv.bn.rvar", {d}, ParamKind::kRunningVar);
      fn(base + "conv.pw2.w", {d, d}, ParamKind::kWeight);
      fn(base + "conv.pw2.b", {d}, ParamKind::kBias);
    }
    enumerate_ff(base, cfg, fn);
  }
  enumerate_norm("enc.final_norm", d, fn);
  fn("dec.embed", {cfg.vocab_v, d}, ParamKind::kEmbedding);
  for (int l = 0; l < cfg.dec_layers; ++l) {
    const std::string base = layer_tag("dec", l);
    enumerate_norm(base + "self_norm", d, fn);
    enumerate_attention(base + "self", d, fn);
    enumerate_norm(base + "cross_norm", d, fn);
    enumerate_attention(base + "cross", d, fn);
    if (cfg.use_cope) enumerate_cope(base + "cross", cfg, fn);
    enumerate_ff(base, cfg, fn);
  }
  enumerate_norm("dec.final_norm", d, fn);
  if (!cfg.tie_output_embedding)
    fn("out.w", {d, cfg.vocab_v}, ParamKind::kWeight);
  fn("out.b", {cfg.vocab_v}, ParamKind::kBias);
}

Parameters init_parameters(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Parameters params;
  std::map<std::string, ParamKind> kinds;
  for_each_parameter(cfg, [&](const std::string& name, const Shape& shape, ParamKind k) {
    const bool trainable =
        k != ParamKind::kRunningMean && k != ParamKind::kRunningVar;
    params.create(name, shape, trainable);
    kinds[name] = k;
  });
  Rng rng(seed);
  const float embed_sigma = 1.0f / std::sqrt(static_cast<float>(cfg.hidden_d));
  const float cope_sigma = 1.0f / std::sqrt(static_cast<float>(cfg.d_head()));
  for (auto& [name, t] : params.entries()) {
    auto data = t.data_mut();
    switch (kinds.at(name)) {
      case ParamKind::kWeight: {
        const float bound =
            std::sqrt(6.0f / static_cast<float>(t.dim(0) + t.dim(1)));
        for (auto& v : data) v = rng.uniform(-bound, bound);
        break;
      }
      case ParamKind::kDepthwise: {
        const float bound = std::sqrt(6.0f / static_cast<float>(t.dim(1) + 1));
        for (auto& v : data) v = rng.uniform(-bound, bound);
        break;
      }
      case ParamKind::kEmbedding:
        for (auto& v : data) v = rng.gaussian() * embed_sigma;
        break;
      case ParamKind::kCopeTable:
        for (auto& v : data) v = rng.gaussian() * cope_sigma;
        break;
      case ParamKind::kOffsets: {
        const int k = t.dim(1);
        const float r = cfg.gloss.window_radius;
        for (int h = 0; h < t.dim(0); ++h)
          for (int i = 0; i < k; ++i)
            data[static_cast<std::size_t>(h) * k + i] =
                k == 1 ? 0.0f : -r + 2.0f * r * i / static_cast<float>(k - 1);
        break;
      }
      case ParamKind::kGain:
      case ParamKind::kRunningVar:
        for (auto& v : data) v = 1.0f;
        break;
      case ParamKind::kBias:
      case ParamKind::kRunningMean:
        break;  // zeros
    }
  }
  return params;
}

namespace {

LayerNormParams bind_norm(const Parameters& p, const std::string& prefix) {
  return {p.at(prefix + ".gain"), p.at(prefix + ".bias")};
}

AttentionParams bind_attention(const Parameters& p, const std::string& prefix) {
  AttentionParams a;
  a.wq = p.at(prefix + ".wq");
  a.bq = p.at(prefix + ".bq");
  a.wk = p.at(prefix + ".wk");
  a.bk = p.at(prefix + ".bk");
  a.wv = p.at(prefix + ".wv");
  a.bv = p.at(prefix + ".bv");
  a.wo = p.at(prefix + ".wo");
  a.bo = p.at(prefix + ".bo");
  return a;
}

CopeTables bind_cope(const Parameters& p, const std::string& prefix,
                     const ModelConfig& cfg) {
  CopeTables c;
  c.p_max = static_cast<float>(cfg.cope_p_max);
  for (int h = 0; h < cfg.heads; ++h)
    c.per_head.push_back(p.at(prefix + ".cope." + head_tag(h)));
  return c;
}

ConvModuleParams bind_conv(const Parameters& p, const std::string& base,
                           const ModelConfig& cfg) {
  ConvModuleParams c;
  c.norm_in = bind_norm(p, base + "conv.norm_in");
  c.pw1_w = p.at(base + "conv.pw1.w");
  c.pw1_b = p.at(base + "conv.pw1.b");
  c.dw_w = p.at(base + "conv.dw.w");
  c.dw_b = p.at(base + "conv.dw.b");
  c.pw2_w = p.at(base + "conv.pw2.w");
  c.pw2_b = p.at(base + "conv.pw2.b");
  if (cfg.conv_style == ConvStyle::kSignformer) {
    c.norm_out = bind_norm(p, base + "conv.norm_out");
  } else {
    c.bn_gain = p.at(base + "conv.bn.gain");
    c.bn_bias = p.at(base + "conv.bn.bias");
    c.bn_rmean = p.at(base + "conv.bn.rmean");
    c.bn_rvar = p.at(base + "conv.bn.rvar");
  }
  return c;
}

FeedForwardParams bind_ff(const Parameters& p, const std::string& base) {
  FeedForwardParams f;
  f.norm = bind_norm(p, base + "ff_norm");
  f.w1 = p.at(base + "ff.w1");
  f.b1 = p.at(base + "ff.b1");
  f.w2 = p.at(base + "ff.w2");
  f.b2 = p.at(base + "ff.b2");
  return f;
}

}  // namespace

Tensor conv_module(const Tensor& x, const ConvModuleParams& p, const ModelConfig& cfg,
                   const Tensor& pad_mask, const ForwardCtx& ctx) {
  check(cfg.conv_style == ConvStyle::kSignformer, "conv_module requires signformer style");
  Tensor y = layer_norm(x, p.norm_in.gain, p.norm_in.bias);
  y = conv1d_pointwise(y, p.pw1_w, p.pw1_b);
  y = relu6(y);
  y = conv1d_depthwise(y, p.dw_w, p.dw_b, pad_mask);
  y = relu6(y);
  y = conv1d_pointwise(y, p.pw2_w, p.pw2_b);
  y = layer_norm(y, p.norm_out.gain, p.norm_out.bias);
  if (ctx.training) y = dropout(y, cfg.dropout, *ctx.rng, true);
  return add(x, y);
}

Tensor conv_module_original(const Tensor& x, const ConvModuleParams& p,
                            const ModelConfig& cfg, const Tensor& pad_mask,
                            const ForwardCtx& ctx) {
  check(cfg.conv_style == ConvStyle::kConformerOriginal,
        "conv_module_original requires conformer_original style");
  const int d = x.dim(1);
  Tensor y = layer_norm(x, p.norm_in.gain, p.norm_in.bias);
  y = conv1d_pointwise(y, p.pw1_w, p.pw1_b);
  Tensor value = slice_cols(y, 0, d);
  Tensor gate = slice_cols(y, d, d);
  y = mul(value, sigmoid(gate));  // GLU
  y = conv1d_depthwise(y, p.dw_w, p.dw_b, pad_mask);
  Tensor rmean = p.bn_rmean, rvar = p.bn_rvar;
  y = batch_norm_time(y, p.bn_gain, p.bn_bias, rmean, rvar, ctx.training);
  y = mul(y, sigmoid(y));  // Swish
  if (ctx.training) y = dropout(y, cfg.dropout, *ctx.rng, true);
  y = conv1d_pointwise(y, p.pw2_w, p.pw2_b);
  return add(x, y);
}

Model::Model(ModelConfig cfg, Parameters params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  // verify the parameter set matches the config exactly
  std::size_t expected = 0;
  for_each_parameter(cfg_, [&](const std::string& name, const Shape& shape, ParamKind) {
    const Tensor& t = params_.at(name);
    check(t.shape() == shape, "parameter ", name, " has shape ", shape_str(t.shape()),
          ", config expects ", shape_str(shape));
    ++expected;
  });
  check(expected == params_.entries().size(), "parameter set holds ",
        params_.entries().size(), " tensors, config expects ", expected);

  ape_ = ApeTable::build(cfg_.ape_t_max, cfg_.hidden_d);
  src_w_ = params_.at("src_embed.weight");
  src_b_ = params_.at("src_embed.bias");
  for (int l = 0; l < cfg_.enc_layers; ++l) {
    const std::string base = layer_tag("enc", l);
    EncoderLayerParams e;
    e.attn_norm = bind_norm(params_, base + "attn_norm");
    e.attn = bind_attention(params_, base + "gloss");
    e.offsets = params_.at(base + "gloss.offsets");
    if (cfg_.use_cope) e.cope = bind_cope(params_, base + "gloss", cfg_);
    e.conv = bind_conv(params_, base, cfg_);
    e.ff = bind_ff(params_, base);
    enc_.push_back(std::move(e));
  }
  enc_final_ = bind_norm(params_, "enc.final_norm");
  tok_embed_ = params_.at("dec.embed");
  for (int l = 0; l < cfg_.dec_layers; ++l) {
    const std::string base = layer_tag("dec", l);
    DecoderLayerParams dl;
    dl.self_norm = bind_norm(params_, base + "self_norm");
    dl.self_attn = bind_attention(params_, base + "self");
    dl.cross_norm = bind_norm(params_, base + "cross_norm");
    dl.cross_attn = bind_attention(params_, base + "cross");
    if (cfg_.use_cope) dl.cope = bind_cope(params_, base + "cross", cfg_);
    dl.ff = bind_ff(params_, base);
    dec_.push_back(std::move(dl));
  }
  dec_final_ = bind_norm(params_, "dec.final_norm");
  if (!cfg_.tie_output_embedding) out_w_ = params_.at("out.w");
  out_b_ = params_.at("out.b");
}

Model Model::init(ModelConfig cfg, uint64_t seed) {
  cfg.resolve();
  Parameters params = init_parameters(cfg, seed);
  return Model(std::move(cfg), std::move(params));
}

Tensor Model::feed_forward(const Tensor& x, const FeedForwardParams& p,
                           const ForwardCtx& ctx) const {
  Tensor y = layer_norm(x, p.norm.gain, p.norm.bias);
  y = conv1d_pointwise(y, p.w1, p.b1);
  y = relu6(y);
  if (ctx.training) y = dropout(y, cfg_.dropout, *ctx.rng, true);
  return conv1d_pointwise(y, p.w2, p.b2);
}

Tensor Model::output_logits(const Tensor& h) const {
  if (cfg_.tie_output_embedding) return add(matmul(h, transpose(tok_embed_)), out_b_);
  return conv1d_pointwise(h, out_w_, out_b_);
}

Tensor Model::encode(const Tensor& frames, const Tensor& src_mask,
                     const ForwardCtx& ctx) const {
  check(frames.rank() == 2, "encoder expects [T,F] frames");
  check(frames.dim(1) == cfg_.feature_dim_f, "frame feature dim ", frames.dim(1),
        " does not match configured feature_dim_f ", cfg_.feature_dim_f);
  check(!ctx.training || ctx.rng != nullptr, "training forward needs an rng");
  Tensor h = conv1d_pointwise(frames, src_w_, src_b_);
  if (cfg_.use_ape)
    h = ape_add(h, ape_,
                cfg_.ape_scale_sqrt_d ? std::sqrt(static_cast<float>(cfg_.hidden_d))
                                      : 1.0f);
  for (const auto& layer : enc_) {
    Tensor a = gloss_attention(layer_norm(h, layer.attn_norm.gain, layer.attn_norm.bias),
                               cfg_.heads, cfg_.gloss, layer.attn, layer.offsets,
                               src_mask, cfg_.use_cope ? &layer.cope : nullptr);
    if (ctx.training) a = dropout(a, cfg_.dropout, *ctx.rng, true);
    h = add(h, a);
    h = cfg_.conv_style == ConvStyle::kSignformer
            ? conv_module(h, layer.conv, cfg_, src_mask, ctx)
            : conv_module_original(h, layer.conv, cfg_, src_mask, ctx);
    Tensor f = feed_forward(h, layer.ff, ctx);
    if (ctx.training) f = dropout(f, cfg_.dropout, *ctx.rng, true);
    h = add(h, f);
  }
  return layer_norm(h, enc_final_.gain, enc_final_.bias);
}

Tensor Model::decode(const std::vector<int>& tokens, const Tensor& enc_out,
                     const Tensor& src_mask, const ForwardCtx& ctx) const {
  check(!tokens.empty() && tokens[0] == kBosId, "decoder input must begin with BOS");
  for (int id : tokens)
    check(id >= 0 && id < cfg_.vocab_v, "token id ", id, " out of vocabulary range [0,",
          cfg_.vocab_v, ")");
  check(enc_out.rank() == 2 && enc_out.dim(1) == cfg_.hidden_d,
        "encoder output must be [T,hidden]");
  check(!ctx.training || ctx.rng != nullptr, "training forward needs an rng");
  const int l = static_cast<int>(tokens.size());
  Tensor e = embedding_lookup(tok_embed_, tokens);
  if (cfg_.use_ape)
    e = ape_add(e, ape_,
                cfg_.ape_scale_sqrt_d ? std::sqrt(static_cast<float>(cfg_.hidden_d))
                                      : 1.0f);
  MaskSet masks = build_masks({1}, l);
  for (const auto& layer : dec_) {
    Tensor ln = layer_norm(e, layer.self_norm.gain, layer.self_norm.bias);
    Tensor s = multi_head_attention(ln, ln, ln, cfg_.heads, layer.self_attn,
                                    masks.tgt_causal);
    if (ctx.training) s = dropout(s, cfg_.dropout, *ctx.rng, true);
    e = add(e, s);
    Tensor ln2 = layer_norm(e, layer.cross_norm.gain, layer.cross_norm.bias);
    Tensor c = multi_head_attention(ln2, enc_out, enc_out, cfg_.heads, layer.cross_attn,
                                    src_mask, cfg_.use_cope ? &layer.cope : nullptr,
                                    cfg_.cope_cross_mode);
    if (ctx.training) c = dropout(c, cfg_.dropout, *ctx.rng, true);
    e = add(e, c);
    Tensor f = feed_forward(e, layer.ff, ctx);
    if (ctx.training) f = dropout(f, cfg_.dropout, *ctx.rng, true);
    e = add(e, f);
  }
  e = layer_norm(e, dec_final_.gain, dec_final_.bias);
  return output_logits(e);
}

Model::EncodedSource Model::encode_source(const Tensor& frames,
                                          const Tensor& src_mask) const {
  EncodedSource src;
  src.enc_out = encode(frames, src_mask, {});
  src.src_mask = src_mask;
  for (const auto& layer : dec_) {
    src.cross_k.push_back(conv1d_pointwise(src.enc_out, layer.cross_attn.wk,
                                           layer.cross_attn.bk));
    src.cross_v.push_back(conv1d_pointwise(src.enc_out, layer.cross_attn.wv,
                                           layer.cross_attn.bv));
  }
  if (cfg_.tie_output_embedding) src.tied_embed_t = transpose(tok_embed_);
  return src;
}

Model::DecodeStream Model::new_stream() const {
  DecodeStream s;
  s.self_k.resize(dec_.size());
  s.self_v.resize(dec_.size());
  return s;
}

std::vector<float> Model::decode_step(const EncodedSource& src, DecodeStream& stream,
                                      int token) const {
  check(token >= 0 && token < cfg_.vocab_v, "token id ", token,
        " out of vocabulary range [0,", cfg_.vocab_v, ")");
  const int d = cfg_.hidden_d;
  const int heads = cfg_.heads;
  const int dh = cfg_.d_head();
  const int pos = stream.length;
  const int t_src = src.enc_out.dim(0);
  const float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(dh));

  Tensor e = embedding_lookup(tok_embed_, {token});
  if (cfg_.use_ape) {
    check(pos < cfg_.ape_t_max, "decode position ", pos,
          " exceeds position table capacity ", cfg_.ape_t_max);
    std::vector<float> row(ape_.table.data().begin() + static_cast<std::size_t>(pos) * d,
                           ape_.table.data().begin() +
                               static_cast<std::size_t>(pos + 1) * d);
    Tensor ape_row = Tensor::from_data({1, d}, std::move(row));
    e = add(cfg_.ape_scale_sqrt_d ? scale(e, std::sqrt(static_cast<float>(d))) : e,
            ape_row);
  }

  Tensor mask_bias;
  if (src.src_mask.defined()) {
    std::vector<float> bias(t_src);
    auto md = src.src_mask.data();
    for (int j = 0; j < t_src; ++j) bias[j] = md[j] == 1.0f ? 0.0f : -1e9f;
    mask_bias = Tensor::from_data({t_src}, std::move(bias));
  }

  for (std::size_t li = 0; li < dec_.size(); ++li) {
    const auto& layer = dec_[li];
    // self attention over the cached prefix
    Tensor ln = layer_norm(e, layer.self_norm.gain, layer.self_norm.bias);
    Tensor qr = conv1d_pointwise(ln, layer.self_attn.wq, layer.self_attn.bq);
    Tensor kr = conv1d_pointwise(ln, layer.self_attn.wk, layer.self_attn.bk);
    Tensor vr = conv1d_pointwise(ln, layer.self_attn.wv, layer.self_attn.bv);
    auto& kcache = stream.self_k[li];
    auto& vcache = stream.self_v[li];
    kcache.insert(kcache.end(), kr.data().begin(), kr.data().end());
    vcache.insert(vcache.end(), vr.data().begin(), vr.data().end());
    const int t_cur = pos + 1;
    Tensor kall = Tensor::from_data({t_cur, d}, kcache);
    Tensor vall = Tensor::from_data({t_cur, d}, vcache);
    std::vector<Tensor> head_outs;
    for (int h = 0; h < heads; ++h) {
      Tensor qh = slice_cols(qr, h * dh, dh);
      Tensor kh = slice_cols(kall, h * dh, dh);
      Tensor vh = slice_cols(vall, h * dh, dh);
      Tensor logits = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
      Tensor probs = softmax(logits, 1);
      head_outs.push_back(matmul(probs, vh));
    }
    Tensor merged = heads == 1 ? head_outs[0] : concat_cols(head_outs);
    e = add(e, conv1d_pointwise(merged, layer.self_attn.wo, layer.self_attn.bo));

    // cross attention against the cached source projections
    Tensor ln2 = layer_norm(e, layer.cross_norm.gain, layer.cross_norm.bias);
    Tensor qc = conv1d_pointwise(ln2, layer.cross_attn.wq, layer.cross_attn.bq);
    head_outs.clear();
    for (int h = 0; h < heads; ++h) {
      Tensor qh = slice_cols(qc, h * dh, dh);
      Tensor kh = slice_cols(src.cross_k[li], h * dh, dh);
      Tensor vh = slice_cols(src.cross_v[li], h * dh, dh);
      Tensor raw = matmul(qh, transpose(kh));
      Tensor logits = scale(raw, inv_sqrt_dh);
      if (cfg_.use_cope) {
        Tensor gates = sigmoid(raw);
        if (src.src_mask.defined()) gates = mul(gates, src.src_mask);
        Tensor positions = gate_positions(gates, cfg_.cope_cross_mode,
                                          layer.cope.p_max);
        logits = add(logits, cope_logit_bias(qh, positions, layer.cope.per_head[h]));
      }
      if (mask_bias.defined()) logits = add(logits, mask_bias);
      Tensor probs = softmax(logits, 1);
      head_outs.push_back(matmul(probs, vh));
    }
    merged = heads == 1 ? head_outs[0] : concat_cols(head_outs);
    e = add(e, conv1d_pointwise(merged, layer.cross_attn.wo, layer.cross_attn.bo));

    Tensor f = feed_forward(e, layer.ff, {});
    e = add(e, f);
  }
  e = layer_norm(e, dec_final_.gain, dec_final_.bias);
  Tensor logits = cfg_.tie_output_embedding
                      ? add(matmul(e, src.tied_embed_t), out_b_)
                      : conv1d_pointwise(e, out_w_, out_b_);
  stream.length = pos + 1;
  return std::vector<float>(logits.data().begin(), logits.data().end());
}

long long ParamCountBreakdown::total() const {
  return src_embed + encoder_attn + encoder_conv + encoder_ff + encoder_norms +
         gloss_offsets + cope_tables + token_embed + decoder_self + decoder_cross +
         decoder_ff + decoder_norms + output_proj;
}

ParamCountBreakdown param_count(const ModelConfig& cfg) {
  cfg.validate();
  const long long d = cfg.hidden_d;
  const long long ff = cfg.ff_dim;
  const long long v = cfg.vocab_v;
  const long long f = cfg.feature_dim_f;
  const long long k = cfg.kernel_k;
  const long long h = cfg.heads;
  const long long dh = d / h;
  const long long attn = 4 * (d * d + d);
  const long long norm = 2 * d;
  const long long ff_block = d * ff + ff + ff * d + d;
  const long long cope_layer = cfg.use_cope ? h * (cfg.cope_p_max + 1) * dh : 0;

  ParamCountBreakdown b;
  b.src_embed = f * d + d;
  long long conv;
  if (cfg.conv_style == ConvStyle::kSignformer) {
    const long long e = cfg.conv_expansion * d;
    conv = norm + (d * e + e) + (e * k + e) + (e * d + d) + norm;
  } else {
    conv = norm + (d * 2 * d + 2 * d) + (d * k + d) + norm /*bn affine*/ +
           (d * d + d);
  }
  b.encoder_attn = cfg.enc_layers * attn;
  b.encoder_conv = cfg.enc_layers * conv;
  b.encoder_ff = cfg.enc_layers * ff_block;
  b.encoder_norms = cfg.enc_layers * 2 * norm + norm;  // attn_norm + ff_norm + final
  b.gloss_offsets = cfg.enc_layers * h * cfg.gloss.samples_k;
  b.cope_tables = (cfg.enc_layers + cfg.dec_layers) * cope_layer;
  b.token_embed = v * d;
  b.decoder_self = cfg.dec_layers * attn;
  b.decoder_cross = cfg.dec_layers * attn;
  b.decoder_ff = cfg.dec_layers * ff_block;
  b.decoder_norms = cfg.dec_layers * 3 * norm + norm;  // self + cross + ff + final
  b.output_proj = cfg.tie_output_embedding ? v : d * v + v;
  return b;
}

std::vector<LineupEntry> lineup_configs(int vocab_v, int feature_dim) {
  auto base = [&](int d, int ff, bool cope) {
    ModelConfig cfg;
    cfg.hidden_d = d;
    cfg.ff_dim = ff;
    cfg.use_cope = cope;
    cfg.tie_output_embedding = true;
    cfg.vocab_v = vocab_v;
    cfg.feature_dim_f = feature_dim;
    cfg.resolve();
    return cfg;
  };
  return {
      {"feather", 0.57, base(64, 256, false)},
      {"feather_cope", 1.22, base(64, 256, true)},
      {"mid", 1.41, base(128, 512, false)},
      {"mid_cope", 2.70, base(128, 512, true)},
      {"full", 3.88, base(256, 512, false)},
      {"full_cope", 6.44, base(256, 512, true)},
  };
}

}  // namespace signformer
