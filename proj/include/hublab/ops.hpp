#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hublab/tensor.hpp"

namespace hublab {

using TokenId = std::int32_t;

// a[m x k] * b[k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
// a[m x k] * b[n x k]^T. Weight matrices are stored [out x in].
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);
// x[n x d] + table[row % period] for each row; used for position embeddings.
Tensor add_tiled_rows(const Tensor& x, const Tensor& table, std::size_t period);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Softmax over the last axis, max-subtracted.
Tensor softmax(const Tensor& x);
// weight * x / sqrt(mean(x^2) + eps) over the last axis.
Tensor rms_norm(const Tensor& x, const Tensor& weight, float eps);
// tanh approximation.
Tensor gelu(const Tensor& x);

// Gathers rows of table[V x d]; ids outside [0, V) raise IndexError.
Tensor embedding(const Tensor& table, std::span<const TokenId> ids);

// Mean over rows of -log softmax(logits)[target].
Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets);

// Causal multi-head self-attention over packed projections.
// qkv is [batch*seq x 3d] laid out as [q | k | v]; returns [batch*seq x d].
Tensor causal_attention(const Tensor& qkv, std::size_t batch, std::size_t n_heads);

// Throws NumericError naming `what` when any value is NaN or infinite.
void check_finite(const Tensor& x, const char* what);

}  // namespace hublab
