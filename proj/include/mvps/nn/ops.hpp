#pragma once

#include "mvps/nn/tensor.hpp"
#include "mvps/rng.hpp"

namespace mvps::nn {

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, float s);
Tensor mul_scalar(const Tensor& a, float s);
Tensor relu(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// Expand size-1 dims of `a` to `shape` (ranks must match).
Tensor broadcast_to(const Tensor& a, const Shape& shape);

// ---- reductions ----
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_axes(const Tensor& a, const std::vector<int>& axes, bool keepdim);
Tensor mean_axes(const Tensor& a, const std::vector<int>& axes, bool keepdim);
// Max over one axis; gradient flows to the first argmax.
Tensor max_axis(const Tensor& a, int axis, bool keepdim);

// ---- shape ----
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int start, int len);

Tensor softmax(const Tensor& a, int axis);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);                     // [M,K]x[K,N]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);    // x[N,K], w[K,M], b[M]

// ---- image-shaped (NCHW) ----
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
Tensor nearest_upsample2x(const Tensor& x);
Tensor avg_pool2x2(const Tensor& x);
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);
Tensor space_to_depth2(const Tensor& x);
Tensor depth_to_space2(const Tensor& x);

// ---- normalization ----
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);
// Parameter-free per-(sample, channel) normalization over spatial positions.
Tensor spatial_norm(const Tensor& x, float eps = 1e-5f);
// Training-mode batch norm over (B,H,W) per channel; batch statistics are
// written to *out_mean / *out_var (biased) for running-buffer updates.
Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        float eps, std::vector<float>* out_mean, std::vector<float>* out_var);
// Eval-mode batch norm with frozen statistics.
Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const Tensor& run_mean, const Tensor& run_var, float eps);

// ---- misc ----
Tensor embedding(const Tensor& table, const std::vector<int>& ids);  // [V,D] -> [n,D]
Tensor mse_loss(const Tensor& a, const Tensor& b);
Tensor randn(const Shape& shape, Rng& rng, float stddev = 1.0f);

}  // namespace mvps::nn
