#pragma once

// Differentiable tensor operations. Shapes are explicit; nothing broadcasts
// implicitly. Every op throws std::invalid_argument on a shape mismatch and
// std::domain_error if its output contains NaN or Inf.

#include <cstdint>
#include <span>
#include <vector>

#include "jebgfn/ndmath/tensor.hpp"

namespace jebgfn::nd {

/// Value written into masked-out entries of masked_log_softmax. Finite, and
/// exp() of it underflows to exactly 0.
inline constexpr double kMaskedLogProb = -1e30;

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);     // elementwise
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor add_bias(const Tensor& a, const Tensor& bias);  // [m,n] + [n] per row
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor square(const Tensor& a);

/// Numerically stable log-softmax of a rank-1 or rank-2 tensor along `axis`.
Tensor log_softmax(const Tensor& a, std::size_t axis);
/// Row-wise log-softmax over entries where mask != 0. Masked entries hold
/// kMaskedLogProb and receive no gradient. Every row needs one valid entry.
Tensor masked_log_softmax(const Tensor& a, std::span<const std::uint8_t> mask);

Tensor sum(const Tensor& a);   // -> scalar
Tensor mean(const Tensor& a);  // -> scalar

/// out[j] = sum of a[i] over i with segment[i] == j. `a` is rank 1 (or [n,1]).
Tensor segment_sum(const Tensor& a, std::span<const std::size_t> segment, std::size_t segments);
/// [m*group, n] -> [m, n] by summing consecutive groups of rows.
Tensor group_sum(const Tensor& a, std::size_t group);

/// out[i] = a[i, column[i]] for a of shape [m,n].
Tensor gather_columns(const Tensor& a, std::span<const std::size_t> column);
/// Rows of `table` [V,h] selected by `index` -> [len(index), h].
Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> index);
/// Sums `per_row` consecutive table rows per output row -> [len(index)/per_row, h].
/// Equivalent to a one-hot concatenation multiplied by `table`.
Tensor embedding_bag(const Tensor& table, std::span<const std::size_t> index, std::size_t per_row);

Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis);
Tensor reshape(const Tensor& a, Shape shape);

}  // namespace jebgfn::nd
