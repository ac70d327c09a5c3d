#pragma once

#include <optional>
#include <vector>

#include "slfm/tensor.hpp"

namespace slfm {

enum class Activation { gelu, silu, identity };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

// --- elementwise / algebra --------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // Hadamard product
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor activation(const Tensor& x, Activation kind);

// --- linear algebra ----------------------------------------------------------

// a[M,K] * b[K,N]
Tensor matmul(const Tensor& a, const Tensor& b);

// y = x W + b for x[..., D_in], W[D_in, D_out], b[D_out].
Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b);

// --- convolutions ------------------------------------------------------------

// Cross-correlation with zero padding. x[C_in,T], kernel[C_out,C_in,K].
Tensor conv1d(const Tensor& x, const Tensor& kernel, const std::optional<Tensor>& bias,
              int stride, int padding);

// Adjoint of strided conv1d. x[C_in,T], kernel[C_in,C_out,K]; output length is
// exactly T*stride, the K-stride frames of overhang are cropped symmetrically
// (floor((K-stride)/2) leading).
Tensor transposed_conv1d(const Tensor& x, const Tensor& kernel, const std::optional<Tensor>& bias,
                         int stride);
int tconv_crop(int K, int stride);

// Per-channel 2-D convolution over (S,T) with same padding; x[C,S,T],
// kernel[C,K_s,K_t], odd kernels only.
Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel);

// --- normalization -----------------------------------------------------------

// Normalize over the last axis to zero mean / unit variance, then affine.
// x[..., D], gamma[D], beta[D].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Per-frame variant for channel-major sequence data: x[C,T] is normalized over
// C at each frame t. Pass null gamma/beta for a plain (non-affine) norm.
Tensor layer_norm_frames(const Tensor& x, const Tensor* gamma, const Tensor* beta,
                         double eps = 1e-5);

// --- reductions ---------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// mean((a-b)^2) over all elements, fused.
Tensor mse(const Tensor& a, const Tensor& b);

// --- shape surgery -------------------------------------------------------------

// O(1); shares storage.
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose2d(const Tensor& x);
// Rows along axis 0, for any rank (a row is one index of axis 0).
Tensor slice_rows(const Tensor& x, int r0, int r1);
Tensor concat_rows(const std::vector<Tensor>& xs);
// View x as [A,B,T] and reorder to [B,A,T].
Tensor swap_groups(const Tensor& x, int A, int B);

// --- conditioning helpers ------------------------------------------------------

// x[C,T] * (1 + scale[C]) + shift[C], broadcast over frames.
Tensor modulate_frames(const Tensor& x, const Tensor& scale, const Tensor& shift);
// x[C,T] + alpha[C] * branch[C,T]  (gated residual)
Tensor gate_add(const Tensor& x, const Tensor& branch, const Tensor& alpha);

// Shared-weight conv applied independently to each of S contiguous channel
// groups of x[S*C_in,T]; kernel[C_out,C_in,K], same output layout [S*C_out,T].
Tensor grouped_conv1d_shared(const Tensor& x, int groups, const Tensor& kernel,
                             const std::optional<Tensor>& bias, int stride, int padding);

// Sinusoidal embedding of a scalar position (geometric frequencies, max
// period 1e4). Plain leaf tensor of shape [dim].
Tensor sinusoidal_embedding(double t, int dim);

}  // namespace slfm
