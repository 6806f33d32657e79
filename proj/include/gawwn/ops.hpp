#pragma once

// Differentiable tensor operations. There is no implicit broadcasting beyond
// tensor-scalar arithmetic; replicate_* functions make expansion explicit.

#include <cstddef>
#include <span>
#include <vector>

#include "gawwn/tensor.hpp"

namespace gawwn {

// Elementwise (operands must have identical shapes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// Tensor-scalar.
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
Tensor one_minus(const Tensor& x);

// Nonlinearities.
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double alpha);

// Reductions to a {1} tensor.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor dot(const Tensor& a, const Tensor& b);

// Structural.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::span<const std::size_t> order);
Tensor permute(const Tensor& x, std::initializer_list<std::size_t> order);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
// Channel-axis concatenation of N,C,H,W maps ("depth concatenation").
Tensor concat_depth(std::initializer_list<Tensor> parts);

// [F] -> [N,F].
Tensor replicate_rows(const Tensor& v, std::size_t n);
// [N,1,H,W] -> [N,C,H,W].
Tensor replicate_channels(const Tensor& x, std::size_t channels);

// Dense algebra.
Tensor matmul(const Tensor& a, const Tensor& b);        // [m,k] x [k,n]
Tensor transpose(const Tensor& x);                      // [m,n] -> [n,m]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);  // [N,in] x [in,out] + [out]

// Convolution family (N,C,H,W).
Tensor conv2d(const Tensor& input, const Tensor& weight, std::size_t stride, std::size_t pad);
Tensor deconv2d(const Tensor& input, const Tensor& weight, std::size_t stride, std::size_t pad);
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
// Non-overlapping pooling windows (stride == window); trailing remainder dropped.
Tensor max_pool2d(const Tensor& x, std::size_t kh, std::size_t kw);
Tensor mean_pool(const Tensor& x, std::size_t kh, std::size_t kw);

/// Per-channel normalization over N and spatial axes of [N,C] or [N,C,H,W].
/// Training mode normalizes with batch statistics and folds them into the
/// running buffers; evaluation mode uses the running buffers.
struct BatchNormBuffers {
  Tensor running_mean;
  Tensor running_var;
};
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormBuffers& buffers, bool training, double momentum = 0.1,
                  double eps = 1e-5);

/// Temporal convolution of a one-hot character sequence, evaluated by lookup.
/// `indices` holds batch*length symbol ids (negative = padding, an all-zero
/// one-hot column). weight is [F, alphabet, width]; output is [B, F, 1, L-width+1].
Tensor char_conv1d(std::span<const int> indices, std::size_t batch, std::size_t length,
                   const Tensor& weight, const Tensor& bias);

/// Mean binary cross-entropy of sigmoid(logits) against a constant 0/1 target.
/// Probabilities are clamped to [clamp, 1-clamp] for the value; the gradient
/// is that of the unclamped log-sigmoid so a saturated discriminator still
/// passes signal to the generator.
Tensor sigmoid_cross_entropy(const Tensor& logits, double target, double clamp = 1e-7);

}  // namespace gawwn
