#pragma once

#include <cstddef>
#include <span>

#include "exprfuse/rng.hpp"
#include "exprfuse/tape.hpp"

// Differentiable operations. Each op checks its operand shapes, computes the
// forward value, and records a backward rule on the operands' tape.

namespace exprfuse {

// [m×k]·[k×n] -> [m×n]
Var matmul(Var a, Var b);

// Affine map over the last axis: x[..., in]·w[in×out] + bias[out].
// `bias` may be an invalid Var for no bias.
Var linear(Var x, Var w, Var bias);

// Batched product over a leading axis: a[B×m×k]·b[B×k×n], or with
// `transpose_b` a[B×m×k]·b[B×n×k]ᵀ.
Var batched_matmul(Var a, Var b, bool transpose_b = false);

Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var relu(Var x);

Var sum(Var x);
Var mean(Var x);

// Softmax along `axis` with max subtraction. Negative axes count from the end.
Var softmax(Var x, int axis = -1);

// Normalizes each slice along the last axis to zero mean and unit variance,
// then applies gain and bias (both shaped [last]).
Var layer_norm(Var x, Var gain, Var bias, double eps);

// Concatenation along the last axis; all other dimensions must agree.
Var concat_last(std::span<const Var> parts);
// Columns [offset, offset + width) of the last axis.
Var slice_last(Var x, std::size_t offset, std::size_t width);

Var reshape(Var x, Shape shape);

// Inverted dropout: in training mode each element is zeroed with probability
// `rate` and survivors are scaled by 1/(1 - rate). Evaluation mode, or a zero
// rate, returns `x` unchanged. Throws ConfigError unless 0 <= rate < 1.
Var dropout(Var x, double rate, bool training, Rng& rng);

// 2-D convolution on NHWC input with "same" zero padding and unit stride.
// `w` is [kernel*kernel*in_channels × out_channels] in (ky, kx, c) row order.
Var conv2d_same(Var x, Var w, Var bias, std::size_t kernel);

// Non-overlapping max pooling with square window `size` on NHWC input.
// Spatial dims must be divisible by `size`. Ties go to the first element.
Var max_pool(Var x, std::size_t size);

}  // namespace exprfuse
