#include "signformer/position.hpp"

#include <algorithm>
#include <cmath>

namespace signformer {

ApeTable ApeTable::build(int t_max, int d) {
  check(t_max >= 1 && d >= 1, "ape table dims must be positive");
  std::vector<float> data(static_cast<std::size_t>(t_max) * d, 0.0f);
  for (int pos = 0; pos < t_max; ++pos)
    for (int i = 0; i * 2 < d; ++i) {
      const double angle =
          pos / std::pow(10000.0, (2.0 * i) / static_cast<double>(d));
      data[static_cast<std::size_t>(pos) * d + 2 * i] =
          static_cast<float>(std::sin(angle));
      if (2 * i + 1 < d)
        data[static_cast<std::size_t>(pos) * d + 2 * i + 1] =
            static_cast<float>(std::cos(angle));
    }
  ApeTable ape;
  ape.table = Tensor::from_data({t_max, d}, std::move(data));
  ape.t_max = t_max;
  ape.d = d;
  return ape;
}

Tensor ape_add(const Tensor& x, const ApeTable& ape, float input_scale) {
  check(x.rank() == 2, "ape_add expects [T,D]");
  const int t = x.dim(0), d = x.dim(1);
  check(d == ape.d, "ape_add feature dim ", d, " does not match table dim ", ape.d);
  check(t <= ape.t_max, "sequence length ", t, " exceeds position table capacity ",
        ape.t_max);
  std::vector<float> rows(ape.table.data().begin(),
                          ape.table.data().begin() + static_cast<std::size_t>(t) * d);
  Tensor slice = Tensor::from_data({t, d}, std::move(rows));
  return add(input_scale == 1.0f ? x : scale(x, input_scale), slice);
}

MaskSet build_masks(const std::vector<int>& src_lengths, int tgt_length, int pad_to) {
  check(!src_lengths.empty(), "build_masks requires at least one sequence");
  check(tgt_length >= 1, "target length must be >= 1");
  int t_max = 0;
  for (int l : src_lengths) {
    check(l >= 1, "zero-length source sequence");
    t_max = std::max(t_max, l);
  }
  if (pad_to > 0) {
    check(pad_to >= t_max, "pad_to ", pad_to, " shorter than longest sequence ", t_max);
    t_max = pad_to;
  }
  const int b = static_cast<int>(src_lengths.size());
  std::vector<float> pad(static_cast<std::size_t>(b) * t_max, 0.0f);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < src_lengths[i]; ++j)
      pad[static_cast<std::size_t>(i) * t_max + j] = 1.0f;
  std::vector<float> causal(static_cast<std::size_t>(tgt_length) * tgt_length, 0.0f);
  for (int i = 0; i < tgt_length; ++i)
    for (int j = 0; j <= i; ++j)
      causal[static_cast<std::size_t>(i) * tgt_length + j] = 1.0f;
  MaskSet masks;
  masks.src_pad = Tensor::from_data({b, t_max}, std::move(pad));
  masks.tgt_causal = Tensor::from_data({tgt_length, tgt_length}, std::move(causal));
  return masks;
}

Tensor cope_positions(const Tensor& q, const Tensor& k, CopeMode mode, float p_max) {
  check(q.rank() == 2 && k.rank() == 2, "cope_positions expects rank-2 q and k");
  check(q.dim(1) == k.dim(1), "cope_positions feature dims disagree");
  if (mode == CopeMode::kCausal)
    check(q.dim(0) == k.dim(0), "causal cope_positions requires matching lengths");
  Tensor gates = sigmoid(matmul(q, transpose(k)));
  return gate_positions(gates, mode, p_max);
}

}  // namespace signformer
