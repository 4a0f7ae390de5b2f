#pragma once

#include <vector>

#include "bseg/autograd.hpp"

namespace bseg {
namespace ops {

// ---- elementwise -----------------------------------------------------------
Var add(const Var& a, const Var& b);        // same shape
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);        // b must be nonzero
Var add_scalar(const Var& a, double c);
Var mul_scalar(const Var& a, double c);
Var rsub_scalar(double c, const Var& a);    // c - a
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var log(const Var& a);
Var clamp(const Var& a, double lo, double hi);  // zero grad outside [lo,hi]

// ---- reductions ------------------------------------------------------------
Var sum_all(const Var& a);    // -> shape {1}
Var mean_all(const Var& a);   // -> shape {1}

// ---- broadcasting ----------------------------------------------------------
// p has the same shape as x except dim0 == 1 (position embeddings and the like).
Var broadcast_add0(const Var& x, const Var& p);
// gate: (B,1,H,W) multiplied across the channels of x: (B,C,H,W).
Var mul_channel_gate(const Var& x, const Var& gate);

// ---- shape -----------------------------------------------------------------
Var reshape(const Var& x, Shape new_shape);
Var permute(const Var& x, const std::vector<int>& perm);
Var transpose_last2(const Var& x);
Var concat_channels(const std::vector<Var>& xs);  // along dim 1 of (B,C,H,W)
Var slice_channels(const Var& x, int64_t from, int64_t count);  // dim 1 of (B,C,H,W)

// ---- linear algebra --------------------------------------------------------
// x: (..., in) flattened over leading dims; w: (out, in); b: (out) or null.
Var linear(const Var& x, const Var& w, const Var& b);
// a: (L..., m, k), b: (L..., k, n) with identical leading dims.
Var bmm(const Var& a, const Var& b);
Var softmax_lastdim(const Var& x);
// gamma/beta: (d) over the last dim.
Var layernorm_lastdim(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// ---- convolution & friends -------------------------------------------------
// x: (B,Cin,H,W); w: (Cout,Cin/groups,kh,kw); b: (Cout) or null.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int groups = 1);
/// Edge-clamped spatial padding of (B,C,H,W).
Var replicate_pad2d(const Var& x, int pad);
Var maxpool2d(const Var& x, int kernel, int stride, int pad);
Var avgpool2d(const Var& x, int kernel);  // non-overlapping, kernel == stride
// Half-pixel-aligned bilinear resize, both up and down.
Var resize_bilinear(const Var& x, int64_t out_h, int64_t out_w);

// Per-channel mean/var over (B,H,W) in training mode; running stats in eval
// mode. running_mean/var are owned by the caller and updated in place during
// training (biased batch variance normalizes, unbiased updates the stats).
Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                Tensor& running_var, bool training, double momentum = 0.1, double eps = 1e-5);

}  // namespace ops
}  // namespace bseg
