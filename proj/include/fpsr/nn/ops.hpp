#pragma once

#include "fpsr/nn/autograd.hpp"

// Differentiable tensor operations. Every function builds one graph node whose
// backward closure accumulates into its inputs.
namespace fpsr::nn::ops {

// Convolutions and resampling.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
Var pixel_shuffle(const Var& x, int factor);
Var upsample_nearest(const Var& x, int factor);
Var avg_pool2(const Var& x);
Var global_avg_pool(const Var& x);
Var concat_channels(const Var& a, const Var& b);
Var pad_channels(const Var& x, int channels);

/// Fully connected layer on the flattened (c,h,w) features of each sample.
/// weight is (out, in, 1, 1); result is (n, out, 1, 1).
Var linear(const Var& x, const Var& weight, const Var& bias);

/// Normalization with batch statistics; the statistics are written to
/// batch_mean / batch_var (biased) when non-null.
Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps,
                     Tensor* batch_mean, Tensor* batch_var);
/// Normalization with fixed statistics.
Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta, const Tensor& mean,
                    const Tensor& var, double eps);

// Activations.
Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var prelu(const Var& x, const Var& alpha);
Var sigmoid(const Var& x);

// Elementwise arithmetic. Binary ops require equal shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double s);
Var add_scalar(const Var& x, double s);
Var square(const Var& x);
Var abs(const Var& x);
Var sqrt(const Var& x);
Var log(const Var& x);
Var clamp(const Var& x, double lo, double hi);
/// Multiplies by a constant tensor of the same shape (no gradient to the mask).
Var mul_const(const Var& x, const Tensor& mask);

// Reductions.
Var sum(const Var& x);
Var mean(const Var& x);
/// Per-sample sum over (c,h,w): result (n,1,1,1).
Var sum_per_sample(const Var& x);
/// Mean over the batch axis: result (1,c,h,w).
Var mean_over_batch(const Var& x);

/// Per-sample Gram matrix G[c,c'] = sum_{h,w} f[c]f[c'] / (C*H*W); result (n,1,C,C).
Var gram(const Var& features);

// Combinators for readable expression code.
inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& x) { return scale(x, s); }

}  // namespace fpsr::nn::ops
