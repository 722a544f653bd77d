#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "signformer/attention.hpp"
#include "signformer/position.hpp"
#include "signformer/rng.hpp"
#include "signformer/tensor.hpp"
#include "signformer/tokens.hpp"

namespace signformer {

enum class ConvStyle { kSignformer, kConformerOriginal };

struct ModelConfig {
  int hidden_d = 64;
  int heads = 0;    // 0 resolves to 4 when hidden_d == 32, else 8
  int enc_layers = 2;
  int dec_layers = 2;
  int ff_dim = 0;   // 0 resolves to 4*hidden_d
  int kernel_k = 31;
  int conv_expansion = 2;
  bool use_cope = false;
  int cope_p_max = 128;
  CopeMode cope_cross_mode = CopeMode::kPrefix;
  GlossAttentionConfig gloss;
  int vocab_v = 0;
  int feature_dim_f = 1024;
  float dropout = 0.1f;
  ConvStyle conv_style = ConvStyle::kSignformer;
  bool tie_output_embedding = false;
  bool use_ape = true;
  bool ape_scale_sqrt_d = true;
  int ape_t_max = 512;

  int d_head() const { return hidden_d / heads; }
  // Fills the auto fields, then validates; throws naming the bad field.
  void resolve();
  void validate() const;
};

enum class ParamKind {
  kWeight,       // Xavier-uniform by fan-in/fan-out
  kDepthwise,    // [C,K] temporal kernels
  kBias,
  kGain,
  kEmbedding,    // normal(0, D^-1/2)
  kCopeTable,    // normal(0, d_head^-1/2)
  kOffsets,      // even span of [-R, R]
  kRunningMean,  // non-trainable buffer
  kRunningVar,
};

// Named, ordered (lexicographic) collection of model tensors.
class Parameters {
 public:
  Tensor create(const std::string& name, const Shape& shape, bool trainable);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return by_name_.count(name) > 0; }
  std::map<std::string, Tensor>& entries() { return by_name_; }
  const std::map<std::string, Tensor>& entries() const { return by_name_; }
  long long trainable_count() const;
  void zero_grads();

 private:
  std::map<std::string, Tensor> by_name_;
};

// Enumerates every tensor the config implies, in creation order.
void for_each_parameter(
    const ModelConfig& cfg,
    const std::function<void(const std::string&, const Shape&, ParamKind)>& fn);

// Xavier/normal/zeros initialization, fully determined by the seed.
Parameters init_parameters(const ModelConfig& cfg, uint64_t seed);

struct LayerNormParams {
  Tensor gain, bias;
};

struct ConvModuleParams {
  LayerNormParams norm_in, norm_out;  // norm_out unused by conformer_original
  Tensor pw1_w, pw1_b, dw_w, dw_b, pw2_w, pw2_b;
  Tensor bn_gain, bn_bias, bn_rmean, bn_rvar;  // conformer_original only
};

struct FeedForwardParams {
  LayerNormParams norm;
  Tensor w1, b1, w2, b2;
};

struct EncoderLayerParams {
  LayerNormParams attn_norm;
  AttentionParams attn;
  Tensor offsets;
  CopeTables cope;
  ConvModuleParams conv;
  FeedForwardParams ff;
};

struct DecoderLayerParams {
  LayerNormParams self_norm;
  AttentionParams self_attn;
  LayerNormParams cross_norm;
  AttentionParams cross_attn;
  CopeTables cope;
  FeedForwardParams ff;
};

struct ForwardCtx {
  bool training = false;
  Rng* rng = nullptr;  // required when training (dropout)
};

// y = x + Dropout(LN_out(PW2(ReLU6(DW(ReLU6(PW1(LN_in(x))))))))
Tensor conv_module(const Tensor& x, const ConvModuleParams& p, const ModelConfig& cfg,
                   const Tensor& pad_mask, const ForwardCtx& ctx);
// Conformer-style comparison flow:
// x + PW2(Dropout(Swish(BN(DW(GLU(PW1(LN(x))))))))
Tensor conv_module_original(const Tensor& x, const ConvModuleParams& p,
                            const ModelConfig& cfg, const Tensor& pad_mask,
                            const ForwardCtx& ctx);

class Model {
 public:
  Model(ModelConfig cfg, Parameters params);
  static Model init(ModelConfig cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  Parameters& parameters() { return params_; }
  const Parameters& parameters() const { return params_; }

  // [T,F] frames -> [T,hidden] encoder states. src_mask is a per-frame {0,1}
  // row or undefined.
  Tensor encode(const Tensor& frames, const Tensor& src_mask,
                const ForwardCtx& ctx = {}) const;
  // Teacher-forced decoding: tokens must start with BOS; returns [L,V] logits.
  Tensor decode(const std::vector<int>& tokens, const Tensor& enc_out,
                const Tensor& src_mask, const ForwardCtx& ctx = {}) const;

  // Incremental inference with per-layer key/value caches. decode_step feeds
  // one token and returns the next-token logits row; it matches the
  // teacher-forced path exactly.
  struct EncodedSource {
    Tensor enc_out;
    Tensor src_mask;
    std::vector<Tensor> cross_k, cross_v;  // per decoder layer
    Tensor tied_embed_t;                   // [D,V] when output weights are tied
  };
  struct DecodeStream {
    std::vector<std::vector<float>> self_k, self_v;  // per layer, rows of [D]
    int length = 0;
  };
  EncodedSource encode_source(const Tensor& frames, const Tensor& src_mask) const;
  DecodeStream new_stream() const;
  std::vector<float> decode_step(const EncodedSource& src, DecodeStream& stream,
                                 int token) const;

 private:
  Tensor feed_forward(const Tensor& x, const FeedForwardParams& p,
                      const ForwardCtx& ctx) const;
  Tensor output_logits(const Tensor& h) const;

  ModelConfig cfg_;
  Parameters params_;
  ApeTable ape_;
  Tensor src_w_, src_b_;
  std::vector<EncoderLayerParams> enc_;
  LayerNormParams enc_final_;
  Tensor tok_embed_;
  std::vector<DecoderLayerParams> dec_;
  LayerNormParams dec_final_;
  Tensor out_w_, out_b_;
};

struct ParamCountBreakdown {
  long long src_embed = 0;
  long long encoder_attn = 0;
  long long encoder_conv = 0;
  long long encoder_ff = 0;
  long long encoder_norms = 0;
  long long gloss_offsets = 0;
  long long cope_tables = 0;
  long long token_embed = 0;
  long long decoder_self = 0;
  long long decoder_cross = 0;
  long long decoder_ff = 0;
  long long decoder_norms = 0;
  long long output_proj = 0;

  long long total() const;
};

// Closed-form trainable-parameter count; equals the runtime sum exactly.
ParamCountBreakdown param_count(const ModelConfig& cfg);

struct LineupEntry {
  std::string name;
  double published_params_m;  // published target, millions
  ModelConfig cfg;
};

// The shipped Feather/Mid/Full presets with and without contextual positions.
std::vector<LineupEntry> lineup_configs(int vocab_v = 2891, int feature_dim = 1024);

}  // namespace signformer
