#pragma once

#include <amlora/graph.hpp>
#include <amlora/random.hpp>

#include <cstdint>
#include <span>
#include <vector>

// Differentiable operations on Graph nodes. Every op validates shapes and
// throws DimensionError naming the offending shapes. Matrices are 2-D row-major;
// ops described as "per row" treat any tensor as rows() x cols().
namespace amlora::ops {

/// [m x k] * [k x n] -> [m x n]
Var matmul(Var a, Var b);
/// x [m x k], w [n x k] -> x * w^T [m x n]; the usual dense-layer product.
Var linear(Var x, Var w);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product of equal shapes.
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// x [m x n] + bias [n] broadcast over rows.
Var add_bias(Var x, Var bias);
/// x [m x n] with s [m x 1]: each row i scaled by s_i.
Var row_scale(Var x, Var s);
/// Column j of g [m x k] as [m x 1].
Var select_column(Var g, std::size_t j);
/// Horizontal concatenation of [m x k_i] blocks.
Var concat_cols(std::span<const Var> blocks);

Var relu(Var x);
/// Softmax along the last axis, max-subtracted.
Var softmax(Var logits);
/// Mean over rows of -log softmax(logits)[label].
Var cross_entropy(Var logits, std::span<const std::uint32_t> labels);
/// Sum of absolute values; subgradient 0 at 0.
Var l1_norm(Var t);
Var sum(Var t);

/// Per-row zero-mean unit-variance normalization without affine terms.
Var layer_norm(Var x, double eps = 1e-5);
/// Gathers rows of table [V x d] for ids; out-of-range ids raise ValidationError.
Var embedding(Var table, std::span<const std::uint32_t> ids);
/// x [(b*L) x d] + pos [L x d] tiled over the batch.
Var add_positional(Var x, Var pos, std::size_t seq_len);
/// Mean over the L positions of each sequence: [(b*L) x d] -> [b x d].
Var mean_pool(Var x, std::size_t seq_len);
/// Multi-head scaled dot-product self-attention over q, k, v of shape
/// [(b*L) x d]; each sequence attends only within itself.
Var attention(Var q, Var k, Var v, std::size_t seq_len, std::size_t num_heads);
/// Inverted dropout with keep-probability 1-p; identity when p == 0.
Var dropout(Var x, double p, Rng &rng);

} // namespace amlora::ops
