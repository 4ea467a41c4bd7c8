#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lightpeft/tensor.hpp"

namespace lightpeft {

// a[..., k] x b[k, n] -> [..., n]; leading axes of a are flattened into rows.
Tensor matmul(const Tensor& a, const Tensor& b);

enum class BinaryKind { add, mul };

// b must equal a in shape or match a trailing suffix of a's shape; it is
// then broadcast along a's leading axes (and its gradient summed over them).
Tensor elementwise(const Tensor& a, const Tensor& b, BinaryKind kind);
inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, BinaryKind::add); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, BinaryKind::mul); }

enum class Activation { relu, gelu };

// gelu(x) = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
Tensor activation(const Tensor& x, Activation kind);
double activation_value(double x, Activation kind);

// Mean cross-entropy over rows of logits[batch, classes].
Tensor softmax_ce_loss(const Tensor& logits, std::span<const int> labels);

// Normalizes over the last axis: (x - mean) / sqrt(var + eps) * gain + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
// Sum of |x|; the subgradient at exactly 0 is taken as 0.
Tensor abs_sum(const Tensor& x);

// Row gather: table[vocab, d] at ids -> index_shape + [d].
Tensor embedding(const Tensor& table, std::span<const int> ids, const Shape& index_shape);

// x[batch, seq, d] -> [batch, d], mean over seq.
Tensor mean_pool(const Tensor& x);

struct AttentionShape {
  std::size_t heads = 1;
  std::size_t head_dim = 1;
  bool causal = false;
};

// Scaled dot-product attention for all heads at once. q, k, v are
// [batch, seq, heads * head_dim] with head h occupying columns
// [h * head_dim, (h + 1) * head_dim). Output has the same layout.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionShape& shape);

// x[..., groups * width] with column group g multiplied by m[g].
Tensor scale_column_groups(const Tensor& x, const Tensor& m, std::size_t width);

// Numerically stable row softmax of a [rows, cols] buffer (no graph).
std::vector<double> softmax_rows(std::span<const double> values, std::size_t rows, std::size_t cols);

}  // namespace lightpeft
