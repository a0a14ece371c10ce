#pragma once

// Differentiable tensor operations.  Layout convention for volumes is
// channels-last: [T, H, W, C].  Token sequences are [L, C].

#include <cstdint>
#include <span>
#include <vector>

#include "salfom/tensor.hpp"

namespace salfom::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor reshape(const Tensor& a, Shape shape);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Scalar sum_i a_i * weights_i with constant weights.
Tensor weighted_sum(const Tensor& a, std::span<const double> weights);

// x [..., in] times weight [in, out] (+ bias [out]).  `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Normalizes over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

// Normalizes each channel group over every position and the group's channels.
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// y[..., c] = x[..., c] * scale[c] + shift[c] with constant per-channel factors.
Tensor channel_affine(const Tensor& x, std::span<const double> scale, std::span<const double> shift);

Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Token groups for multi-head attention.  Every token index appears in at most
// one window; tokens absent from all windows produce zeros.  When `labels` is
// non-empty, a query only attends to keys of its window with an equal label.
struct AttentionLayout {
    std::vector<std::vector<std::int32_t>> windows;
    std::vector<std::int32_t> labels;
};

AttentionLayout full_attention_layout(std::int64_t tokens);

// qkv [L, 3C] packed as (q | k | v); returns [L, C].
Tensor attention(const Tensor& qkv, int heads, const AttentionLayout& layout);

// Stride-1 "same" convolution over [T, H, W, Cin] with odd kernel (kt, kh, kw).
// weight is [kt*kh*kw*Cin, Cout] in (dt, dy, dx, cin) row order; bias [Cout] or undefined.
Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, int kt, int kh, int kw);

// Half-pixel bilinear resampling of [T, H, W, C] to [T, out_h, out_w, C].
Tensor resize_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w);

// Gathers slices along axis 0.
Tensor select_frames(const Tensor& x, std::span<const std::int64_t> indices);

// Attention pooling over time: per location, softmax(q . x_t / sqrt(C)) weighted
// sum of x_t.  x [T, H, W, C], query [C] -> [1, H, W, C].
Tensor temporal_attention_pool(const Tensor& x, const Tensor& query);
Tensor temporal_mean(const Tensor& x);

// Concatenates along the last axis; leading dims must agree.
Tensor concat_last(const std::vector<Tensor>& parts);

// x [T*S, C] + spatial [S, C] (broadcast over t) + temporal[t] (rows 0..T-1 of [Tmax, C]).
Tensor add_positional(const Tensor& x, const Tensor& spatial, const Tensor& temporal,
                      std::int64_t frames);

// [T, H, W, C] -> [T*(H/p)*(W/p), p*p*C], patch rows in (t, py, px) order.
Tensor patchify(const Tensor& clip, int patch);

// Nearest temporal resampling that keeps the last frame aligned:
// output j reads input ceil((j+1)*T_in/T_out) - 1.
std::vector<std::int64_t> last_aligned_indices(std::int64_t t_in, std::int64_t t_out);

}  // namespace salfom::ops
