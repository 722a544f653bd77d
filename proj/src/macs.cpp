#include "signformer/macs.hpp"

namespace signformer {

namespace {
constexpr long long kPerMac = 2;
}

long long encoder_macs(const ModelConfig& cfg, int t_frames) {
  const long long t = t_frames;
  const long long d = cfg.hidden_d;
  const long long e = cfg.conv_style == ConvStyle::kSignformer
                          ? static_cast<long long>(cfg.conv_expansion) * d
                          : d;
  const long long k_samples = cfg.gloss.samples_k;
  long long per_layer = 0;
  // gloss attention: projections, sample interpolation, dots and mixes
  per_layer += kPerMac * 4 * t * d * d;
  per_layer += kPerMac * 2 * t * k_samples * d;  // interpolate k and v samples
  per_layer += kPerMac * 2 * t * k_samples * d;  // query dots + weighted mix
  if (cfg.use_cope) per_layer += kPerMac * 2 * t * k_samples * d;  // table bias
  // convolution block
  if (cfg.conv_style == ConvStyle::kSignformer) {
    per_layer += kPerMac * (t * d * e + t * e * cfg.kernel_k + t * e * d);
  } else {
    per_layer += kPerMac * (t * d * 2 * d + t * d * cfg.kernel_k + t * d * d);
  }
  // feed-forward
  per_layer += kPerMac * 2 * t * d * cfg.ff_dim;
  return kPerMac * t * cfg.feature_dim_f * d + cfg.enc_layers * per_layer;
}

long long cross_cache_macs(const ModelConfig& cfg, int t_frames) {
  const long long t = t_frames;
  const long long d = cfg.hidden_d;
  return cfg.dec_layers * kPerMac * 2 * t * d * d;
}

long long decoder_step_macs(const ModelConfig& cfg, int prefix_len, int t_frames) {
  const long long d = cfg.hidden_d;
  const long long t_src = t_frames;
  const long long t_self = prefix_len + 1;
  long long per_layer = 0;
  per_layer += kPerMac * 4 * d * d;        // self q,k,v,o projections
  per_layer += kPerMac * 2 * t_self * d;   // self logits + mix
  per_layer += kPerMac * 2 * d * d;        // cross q,o projections
  per_layer += kPerMac * 2 * t_src * d;    // cross logits + mix
  if (cfg.use_cope) per_layer += kPerMac * 2 * t_src * d;  // gates reuse + bias
  per_layer += kPerMac * 2 * d * cfg.ff_dim;
  return cfg.dec_layers * per_layer + kPerMac * d * cfg.vocab_v;
}

long long translate_macs(const ModelConfig& cfg, int t_frames, int out_len, int beam) {
  long long total = encoder_macs(cfg, t_frames) + cross_cache_macs(cfg, t_frames);
  // BOS step plus one step per generated token, per beam
  for (int step = 0; step <= out_len; ++step)
    total += static_cast<long long>(beam) * decoder_step_macs(cfg, step, t_frames);
  return total;
}

}  // namespace signformer
