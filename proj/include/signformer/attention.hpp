#pragma once

#include <vector>

#include "signformer/ops.hpp"
#include "signformer/tensor.hpp"

namespace signformer {

// Projection weights of one attention block.
struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

// Learned contextual-position tables, one [p_max+1, d_head] table per head.
struct CopeTables {
  std::vector<Tensor> per_head;
  float p_max = 128.0f;
};

struct GlossAttentionConfig {
  int samples_k = 8;
  float window_radius = 16.0f;
};

// Scaled dot-product attention over heads splits of D. attend_mask is {0,1}
// with 1 = may attend; it can be [Tq,Tk] or a broadcast [Tk] row, or
// undefined for full attention. Masked logits are filled with -1e9 and fully
// masked rows produce zeros. When cope is given, sigmoid gates of the raw
// (unscaled) q.k products are accumulated in cope_mode order over the keys
// (gates at masked keys are dropped) and the interpolated table bias is added
// to the logits per head.
Tensor multi_head_attention(const Tensor& q_src, const Tensor& k_src,
                            const Tensor& v_src, int heads,
                            const AttentionParams& p,
                            const Tensor& attend_mask = Tensor(),
                            const CopeTables* cope = nullptr,
                            CopeMode cope_mode = CopeMode::kPrefix);

// Deformable local attention: each query i samples cfg.samples_k keys/values
// by linear interpolation at positions i + offsets[h,k] (offsets clamped to
// the window radius, positions to [0,T-1]) and attends over just those
// samples. offsets is the learnable [heads, samples_k] tensor. pad_mask
// zeroes masked input rows before projection so padded frame values cannot
// leak. With cope, gates accumulate over the samples in temporal order.
Tensor gloss_attention(const Tensor& x, int heads, const GlossAttentionConfig& cfg,
                       const AttentionParams& p, const Tensor& offsets,
                       const Tensor& pad_mask = Tensor(),
                       const CopeTables* cope = nullptr);

}  // namespace signformer
