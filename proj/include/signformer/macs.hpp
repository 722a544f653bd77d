#pragma once

#include "signformer/model.hpp"

namespace signformer {

// Analytic multiply-accumulate counts, 2 ops per MAC (matmul [M,K]x[K,N]
// counts 2*M*K*N). Elementwise work and normalization statistics are not
// counted.

long long encoder_macs(const ModelConfig& cfg, int t_frames);
// per-layer cross-attention K/V projections of the encoder output, once per
// translated sequence
long long cross_cache_macs(const ModelConfig& cfg, int t_frames);
// one incremental decoder step with prefix_len tokens already consumed
long long decoder_step_macs(const ModelConfig& cfg, int prefix_len, int t_frames);
// full greedy/beam translate of one sequence producing out_len tokens
long long translate_macs(const ModelConfig& cfg, int t_frames, int out_len, int beam);

}  // namespace signformer
