#pragma once

#include <vector>

#include "signformer/ops.hpp"
#include "signformer/tensor.hpp"

namespace signformer {

// Fixed sinusoidal position table: row p holds sin(p/10000^(2i/D)) at even
// columns and cos of the same angle at odd ones.
struct ApeTable {
  Tensor table;  // [t_max, d], constant
  int t_max = 0;
  int d = 0;

  static ApeTable build(int t_max, int d);
};

// out = x*input_scale + table rows 0..T-1. input_scale is sqrt(D) by
// convention; pass 1 to disable.
Tensor ape_add(const Tensor& x, const ApeTable& ape, float input_scale);

struct MaskSet {
  Tensor src_pad;     // [B, T] per-sequence {0,1}, 1 marks a real frame
  Tensor tgt_causal;  // [L, L] lower-triangular ones, diagonal included
};

// pad_to == 0 pads to the longest sequence.
MaskSet build_masks(const std::vector<int>& src_lengths, int tgt_length,
                    int pad_to = 0);

// Fractional key positions from accumulated sigmoid gates of q.k products.
// Causal mode accumulates from key j up to query i and requires Q == T.
Tensor cope_positions(const Tensor& q, const Tensor& k, CopeMode mode,
                      float p_max);

}  // namespace signformer
