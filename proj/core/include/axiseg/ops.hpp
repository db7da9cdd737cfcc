#pragma once

#include "axiseg/graph.hpp"
#include "axiseg/tensor.hpp"

namespace axiseg {

// Elementwise binary (shapes must match exactly).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// Elementwise unary.
Tensor relu(const Tensor& t);
Tensor sigmoid(const Tensor& t);
Tensor log_op(const Tensor& t);
Tensor clamp(const Tensor& t, double lo, double hi);  // zero gradient outside [lo, hi]
Tensor scalar_mul(const Tensor& t, double c);
Tensor scalar_add(const Tensor& t, double c);

// Reductions to shape [1].
Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);

/// Standard matrix product of a [m x k] and b [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Numerically stable softmax over the last axis; every slice sums to 1.
Tensor softmax_lastdim(const Tensor& t);

/// Cross-correlation with "same" (ceil-mode) padding. x is [C_in x H x W],
/// weights [C_out x C_in x k x k] with k in {1, 3}, bias [C_out], stride in
/// {1, 2}. Output is [C_out x ceil(H/stride) x ceil(W/stride)].
Tensor conv2d(const Tensor& x, const Tensor& weights, const Tensor& bias, int stride);

/// Per spatial position, normalizes the channel vector to zero mean and unit
/// variance (epsilon 1e-5 inside the square root), then applies gain and bias
/// (each [C]).
Tensor layer_norm_channels(const Tensor& x, const Tensor& gain, const Tensor& bias);

/// Doubles H and W of a [C x H x W] tensor by pixel replication.
Tensor upsample_nearest2x(const Tensor& x);

/// Same payload, new extents (element count must be preserved).
Tensor reshape(const Tensor& t, Shape shape);

// Channel-range views of a [C x H x W] tensor (used by multi-head split/merge).
Tensor slice_channels(const Tensor& t, int c_begin, int c_end);
Tensor concat_channels(std::span<const Tensor> parts);

/// The [C] vector at spatial position (i, j) of a [C x H x W] tensor.
Tensor spatial_pick(const Tensor& t, int i, int j);

}  // namespace axiseg
