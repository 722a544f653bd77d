#pragma once

#include <string>
#include <vector>

#include "signformer/rng.hpp"
#include "signformer/tensor.hpp"

namespace signformer {

// Elementwise / arithmetic. add/sub/mul broadcast the right operand against
// the left (numpy-style, right side only): equal shape, scalar, or any shape
// whose dims are 1 or match after left-padding with 1s.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor relu6(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor dropout(const Tensor& x, float p, Rng& rng, bool enabled);
Tensor sum(const Tensor& x);

// Linear algebra. matmul accepts [*,M,K] x [*,K,N] with equal batch dims or
// an unbatched right operand. transpose is rank-2.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  float eps = 1e-6f);

// Convolutions over [T,C] sequences; pointwise doubles as the Linear layer.
Tensor conv1d_pointwise(const Tensor& x, const Tensor& w, const Tensor& b);
// pad_mask is per-frame {0,1}; masked frames are zeroed on input and output
// so padding never leaks through the temporal kernel. Pass an undefined
// tensor for no masking. Kernel width must be odd.
Tensor conv1d_depthwise(const Tensor& x, const Tensor& w, const Tensor& b,
                        const Tensor& pad_mask);

// Gathers and layout.
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
// Linear interpolation gather at fractional row positions, clamped to
// [0, T-1]. Differentiable in seq, and in pos where pos carries gradients.
Tensor interp_gather(const Tensor& seq, const Tensor& pos);
Tensor slice_cols(const Tensor& x, int start, int len);
Tensor concat_cols(const std::vector<Tensor>& parts);

// Blocked attention helpers for the deformable encoder attention:
// samples holds K sampled rows per query, flattened to [T*K, d].
Tensor rowwise_block_dot(const Tensor& q, const Tensor& samples, int block);
Tensor rowwise_block_mix(const Tensor& w, const Tensor& samples, int block);
// Continuous sample positions t + offsets[head,k], offsets clamped to
// [-radius, radius] and results to [0, t_len-1]; output flat [t_len*K].
Tensor sample_positions(const Tensor& offsets, int head, int t_len, float radius);

// Gate accumulation for contextual positions. gates is [Q,T]; the result is
// the running sum over keys (inclusive), capped at p_max:
//   causal: sum over t in [j..i] (requires Q==T, zero above the diagonal)
//   prefix: sum over t in [0..j]
//   suffix: sum over t in [j..T-1]
enum class CopeMode { kCausal, kPrefix, kSuffix };
Tensor gate_positions(const Tensor& gates, CopeMode mode, float p_max);
// Same accumulation over K sampled keys per query, visiting samples in the
// temporal order given by order (row-major [T,K] permutation of 0..K-1).
Tensor ordered_gate_positions(const Tensor& gates, const std::vector<int>& order,
                              float p_max);
// bias[i,j] = lerp(q[i].e[floor(p)], q[i].e[ceil(p)]) over the learned
// position table e = [p_max+1, d]. positions must already lie in range.
Tensor cope_logit_bias(const Tensor& q, const Tensor& positions, const Tensor& table);

// Mean label-smoothed negative log-likelihood over non-pad positions.
// targets must be aligned to logits rows and must not contain BOS.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     int pad_id, float smoothing);

// Batch norm over the time axis of [T,C] (conformer_original flow only).
// Mutates running stats when training.
Tensor batch_norm_time(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       Tensor& running_mean, Tensor& running_var, bool training,
                       float momentum = 0.1f, float eps = 1e-5f);

namespace test_hooks {
// When set to an op name ("relu6", "sigmoid"), that op's backward rule is
// deliberately skewed. Used by the gradcheck fault-injection fixture.
extern std::string corrupt_backward_op;
// When watching, relu6 records the smallest distance of any input to its
// kinks at 0 and 6. Gradient-check fixtures redraw seeds until clear.
extern bool watch_relu6_kinks;
extern float relu6_min_kink_distance;
}  // namespace test_hooks

}  // namespace signformer
