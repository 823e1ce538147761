#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bcr/nn/tensor.hpp"

namespace bcr::nn {

// Every op records exact reverse-mode state when an input requires grad and
// grad recording is enabled. Shape problems raise ShapeError naming the op.

/// 2-D matrix product. With `transpose_b`, b is read as [n, k].
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

// Elementwise binary ops broadcast when one operand's shape is a suffix of
// the other's (e.g. [T, D] + [D]).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, float factor);
Tensor add_scalar(const Tensor& x, float value);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor gelu(const Tensor& x);
/// Gradient is zero where the input lies outside [lo, hi].
Tensor clamp(const Tensor& x, float lo, float hi);

Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

/// x * rsqrt(mean(x^2) + eps) * weight, over the last axis.
Tensor rms_norm(const Tensor& x, const Tensor& weight, float eps = 1e-5f);

/// Rows of `table` ([V, D]) selected by ids -> [ids.size(), D].
Tensor embedding(const Tensor& table, std::span<const int> ids);

/// Writes `value` wherever mask is nonzero. `mask` covers a suffix of x's
/// shape (given by `mask_shape`) and is broadcast over leading axes. Filled
/// entries receive no gradient; with value = -inf this is the additive mask
/// used ahead of softmax.
Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask,
                   const Shape& mask_shape, float value);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, int begin, int end);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor sum(const Tensor& x, int axis);
Tensor mean(const Tensor& x, int axis);

/// out[r, j] = x[r, index[r * k + j]] for a 2-D x; result is [rows, k].
Tensor gather(const Tensor& x, std::span<const int> index, int k);

/// Rotary position encoding on [N, n_heads * head_dim] rows, rotating
/// adjacent pairs inside each head by position * theta^(-2i/head_dim).
Tensor rope(const Tensor& x, std::span<const int> positions, int n_heads,
            float theta = 10000.0f);

/// Applies the same rotation to a raw row in place (inference path).
void rope_inplace(std::span<float> row, int position, int n_heads,
                  float theta = 10000.0f);

}  // namespace bcr::nn
