#pragma once

#include <cstdint>
#include <span>

#include "spamdet/tensor.hpp"

// Differentiable tensor operations. Every op is a pure function of its
// inputs; when a GradTape is active and an input requires gradients, the op
// records its backward rule on that tape.
namespace spamdet::ops {

// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);

// x[m x n] + bias[n], bias broadcast over rows.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);

// Numerically stable softmax along `axis` (max-subtracted).
Tensor softmax(const Tensor& x, std::size_t axis);

// Normalizes each slice along the last dimension, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  float eps = 1e-12f);

// Tanh approximation of x * Phi(x).
Tensor gelu(const Tensor& x);

// Mean softmax cross-entropy of logits[batch x classes] against labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

// Sum of all elements, shape [1].
Tensor sum(const Tensor& x);

// Rows of table[v x d] selected by ids -> [ids.size() x d].
Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> ids);

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_cols(std::span<const Tensor> parts);

// Stacks rank-1 [n] or rank-2 [r x n] parts into one [rows x n] matrix.
Tensor stack_rows(std::span<const Tensor> parts);

Tensor reshape(const Tensor& x, Shape shape);

}  // namespace spamdet::ops
