#include "signformer/attention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace signformer {

namespace {

constexpr float kMaskFill = -1e9f;

// additive logit bias and per-row keep flag from a {0,1} attend mask
struct MaskBias {
  Tensor bias;      // same shape as mask
  Tensor row_keep;  // [Tq,1], zero where a row is fully masked; undefined if all rows live
};

MaskBias make_mask_bias(const Tensor& mask, int tq, int tk) {
  MaskBias mb;
  auto md = mask.data();
  std::vector<float> bias(mask.size());
  for (std::size_t i = 0; i < bias.size(); ++i) {
    check(md[i] == 0.0f || md[i] == 1.0f, "attend mask entries must be 0 or 1");
    bias[i] = md[i] == 1.0f ? 0.0f : kMaskFill;
  }
  mb.bias = Tensor::from_data(mask.shape(), std::move(bias));
  if (mask.rank() == 2) {
    check(mask.dim(0) == tq && mask.dim(1) == tk, "attend mask shape ",
          shape_str(mask.shape()), " does not match logits [", tq, ",", tk, "]");
    std::vector<float> keep(tq, 0.0f);
    bool all_live = true;
    for (int i = 0; i < tq; ++i) {
      for (int j = 0; j < tk; ++j)
        if (md[static_cast<std::size_t>(i) * tk + j] == 1.0f) {
          keep[i] = 1.0f;
          break;
        }
      all_live = all_live && keep[i] == 1.0f;
    }
    if (!all_live) mb.row_keep = Tensor::from_data({tq, 1}, std::move(keep));
  } else {
    check(mask.rank() == 1 && mask.dim(0) == tk, "attend mask must be [Tq,Tk] or [Tk]");
    bool any = false;
    for (int j = 0; j < tk; ++j) any = any || md[j] == 1.0f;
    if (!any) mb.row_keep = Tensor::zeros({tq, 1});
  }
  return mb;
}

}  // namespace

Tensor multi_head_attention(const Tensor& q_src, const Tensor& k_src,
                            const Tensor& v_src, int heads,
                            const AttentionParams& p, const Tensor& attend_mask,
                            const CopeTables* cope, CopeMode cope_mode) {
  check(q_src.rank() == 2 && k_src.rank() == 2 && v_src.rank() == 2,
        "attention inputs must be rank 2");
  const int d = q_src.dim(1);
  check(heads >= 1 && d % heads == 0, "model dim ", d, " not divisible by ", heads,
        " heads");
  check(k_src.dim(0) == v_src.dim(0), "key/value lengths disagree");
  const int tq = q_src.dim(0), tk = k_src.dim(0);
  const int dh = d / heads;
  if (cope)
    check(static_cast<int>(cope->per_head.size()) == heads,
          "cope table count does not match heads");

  Tensor q = conv1d_pointwise(q_src, p.wq, p.bq);
  Tensor k = conv1d_pointwise(k_src, p.wk, p.bk);
  Tensor v = conv1d_pointwise(v_src, p.wv, p.bv);

  MaskBias mb;
  if (attend_mask.defined()) mb = make_mask_bias(attend_mask, tq, tk);
  Tensor gate_mask;
  if (cope && attend_mask.defined() && attend_mask.rank() == 1)
    gate_mask = attend_mask;

  const float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(dh));
  std::vector<Tensor> head_outs;
  head_outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor raw = matmul(qh, transpose(kh));
    Tensor logits = scale(raw, inv_sqrt_dh);
    if (cope) {
      Tensor gates = sigmoid(raw);
      if (gate_mask.defined()) gates = mul(gates, gate_mask);
      Tensor positions = gate_positions(gates, cope_mode, cope->p_max);
      logits = add(logits, cope_logit_bias(qh, positions, cope->per_head[h]));
    }
    if (mb.bias.defined()) logits = add(logits, mb.bias);
    Tensor probs = softmax(logits, 1);
    if (mb.row_keep.defined()) probs = mul(probs, mb.row_keep);
    head_outs.push_back(matmul(probs, vh));
  }
  Tensor merged = heads == 1 ? head_outs[0] : concat_cols(head_outs);
  return conv1d_pointwise(merged, p.wo, p.bo);
}

Tensor gloss_attention(const Tensor& x, int heads, const GlossAttentionConfig& cfg,
                       const AttentionParams& p, const Tensor& offsets,
                       const Tensor& pad_mask, const CopeTables* cope) {
  check(x.rank() == 2, "gloss_attention expects [T,D]");
  const int t = x.dim(0), d = x.dim(1);
  check(heads >= 1 && d % heads == 0, "model dim ", d, " not divisible by ", heads,
        " heads");
  check(offsets.rank() == 2 && offsets.dim(0) == heads &&
            offsets.dim(1) == cfg.samples_k,
        "offsets must be [heads, samples_k]");
  if (cope)
    check(static_cast<int>(cope->per_head.size()) == heads,
          "cope table count does not match heads");
  const int dh = d / heads;
  const int ks = cfg.samples_k;

  Tensor xin = x;
  if (pad_mask.defined()) {
    check(pad_mask.rank() == 1 && pad_mask.dim(0) == t, "pad_mask must be [T]");
    std::vector<float> col(pad_mask.data().begin(), pad_mask.data().end());
    xin = mul(x, Tensor::from_data({t, 1}, std::move(col)));
  }

  Tensor q = conv1d_pointwise(xin, p.wq, p.bq);
  Tensor k = conv1d_pointwise(xin, p.wk, p.bk);
  Tensor v = conv1d_pointwise(xin, p.wv, p.bv);

  const float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(dh));
  std::vector<Tensor> head_outs;
  head_outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor pos = sample_positions(offsets, h, t, cfg.window_radius);
    Tensor ksamp = interp_gather(kh, pos);
    Tensor vsamp = interp_gather(vh, pos);
    Tensor raw = rowwise_block_dot(qh, ksamp, ks);
    Tensor logits = scale(raw, inv_sqrt_dh);
    if (cope) {
      Tensor gates = sigmoid(raw);
      // visit samples in temporal order per query row
      std::vector<int> order(static_cast<std::size_t>(t) * ks);
      auto pd = pos.data();
      for (int i = 0; i < t; ++i) {
        int* row = order.data() + static_cast<std::size_t>(i) * ks;
        std::iota(row, row + ks, 0);
        std::stable_sort(row, row + ks, [&](int a, int b) {
          return pd[static_cast<std::size_t>(i) * ks + a] <
                 pd[static_cast<std::size_t>(i) * ks + b];
        });
      }
      Tensor positions = ordered_gate_positions(gates, order, cope->p_max);
      logits = add(logits, cope_logit_bias(qh, positions, cope->per_head[h]));
    }
    Tensor probs = softmax(logits, 1);
    head_outs.push_back(rowwise_block_mix(probs, vsamp, ks));
  }
  Tensor merged = heads == 1 ? head_outs[0] : concat_cols(head_outs);
  return conv1d_pointwise(merged, p.wo, p.bo);
}

}  // namespace signformer
