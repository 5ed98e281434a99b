#pragma once

#include <cstddef>
#include <span>
#include <variant>
#include <vector>

#include "mpft/autodiff/tape.hpp"

namespace mpft::ad {

// All binary ops require operands on the same tape. Broadcasting is limited
// to scalar-tensor (scale, scale_by) and the explicit row-bias op add_row.

Var matmul(Var a, Var b);
Var transpose(Var a);
/// Per-slice product of [n x m x k] with [n x k x p], or with [n x p x k]
/// transposed when `transpose_b` is set.
Var batch_matmul(Var a, Var b, bool transpose_b = false);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var relu(Var a);
/// max(x, 0) + log1p(exp(-|x|)); strictly positive for finite x.
Var softplus(Var a);
Var scale(Var a, double factor);
/// Multiplies every element of `a` by the single element of `s` (shape {1}).
Var scale_by(Var a, Var s);
/// Adds vector `bias` [d] to every row of `a` [... x d].
Var add_row(Var a, Var bias);
Var reshape(Var a, Shape shape);

enum class Elementwise { Add, Mul, Relu, Softplus, Scale };
using Operand = std::variant<std::monostate, Var, double>;
/// Dispatcher over the elementwise family; binary kinds take a Var, Scale
/// takes a double, unary kinds take nothing.
Var elementwise(Elementwise kind, Var a, Operand b = {});

/// Per-row zero-mean unit-variance normalization over the last axis, then
/// gain * xhat + bias. Biased variance; eps inside the square root.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
/// Softmax over the last axis.
Var softmax(Var x);

/// [(B*T) x (H*dh)] -> [(B*H) x T x dh]
Var split_heads(Var x, std::size_t heads, std::size_t tokens);
/// Inverse of split_heads.
Var merge_heads(Var x, std::size_t heads);
/// [B x T x d] -> [B x d]
Var mean_tokens(Var x);
Var sum(Var x);

/// Mean over the batch of -log softmax(logits)_label via max-shifted
/// log-sum-exp. Labels must lie in [0, C).
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels);

}  // namespace mpft::ad
