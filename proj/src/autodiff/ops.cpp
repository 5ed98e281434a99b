#include "mpft/autodiff/ops.hpp"

#include <string>

#include "mpft/errors.hpp"

namespace mpft::ad {

namespace {

Tape& same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
  return a.tape();
}

void require_rank(Var a, std::size_t rank, const char* op) {
  if (a.shape().size() != rank) {
    throw DimensionError(std::string(op) + " expects rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
  }
}

void require_same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + " shape mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

Var binary(OpKind kind, Var a, Var b, const char* op) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a, b, op);
  return tape.record(kind, {a.id(), b.id()});
}

Var unary(OpKind kind, Var a, OpAttrs attrs = {}) {
  return a.tape().record(kind, {a.id()}, std::move(attrs));
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  return tape.record(OpKind::MatMul, {a.id(), b.id()});
}

Var transpose(Var a) {
  require_rank(a, 2, "transpose");
  return unary(OpKind::Transpose, a);
}

Var batch_matmul(Var a, Var b, bool transpose_b) {
  Tape& tape = same_tape(a, b);
  require_rank(a, 3, "batch_matmul");
  require_rank(b, 3, "batch_matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const std::size_t inner_b = transpose_b ? sb[2] : sb[1];
  if (sa[0] != sb[0] || sa[2] != inner_b) {
    throw DimensionError("batch_matmul shapes disagree: " + shape_str(sa) + " x " + shape_str(sb) +
                         (transpose_b ? " (transposed)" : ""));
  }
  OpAttrs attrs;
  attrs.flag = transpose_b;
  return tape.record(OpKind::BatchMatMul, {a.id(), b.id()}, std::move(attrs));
}

Var add(Var a, Var b) { return binary(OpKind::Add, a, b, "add"); }
Var sub(Var a, Var b) { return binary(OpKind::Sub, a, b, "sub"); }
Var mul(Var a, Var b) { return binary(OpKind::Mul, a, b, "mul"); }
Var relu(Var a) { return unary(OpKind::Relu, a); }
Var softplus(Var a) { return unary(OpKind::Softplus, a); }

Var scale(Var a, double factor) {
  OpAttrs attrs;
  attrs.scalar = factor;
  return unary(OpKind::Scale, a, std::move(attrs));
}

Var scale_by(Var a, Var s) {
  Tape& tape = same_tape(a, s);
  if (s.value().size() != 1) {
    throw DimensionError("scale_by needs a single-element factor, got " + shape_str(s.shape()));
  }
  return tape.record(OpKind::ScaleBy, {a.id(), s.id()});
}

Var add_row(Var a, Var bias) {
  Tape& tape = same_tape(a, bias);
  require_rank(bias, 1, "add_row bias");
  if (a.shape().back() != bias.shape()[0]) {
    throw DimensionError("add_row bias " + shape_str(bias.shape()) + " does not match rows of " +
                         shape_str(a.shape()));
  }
  return tape.record(OpKind::AddRow, {a.id(), bias.id()});
}

Var reshape(Var a, Shape shape) {
  if (numel(shape) != a.value().size()) {
    throw DimensionError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  OpAttrs attrs;
  attrs.shape = std::move(shape);
  return unary(OpKind::Reshape, a, std::move(attrs));
}

Var elementwise(Elementwise kind, Var a, Operand b) {
  switch (kind) {
    case Elementwise::Add:
    case Elementwise::Mul: {
      const Var* other = std::get_if<Var>(&b);
      if (!other) throw ContractError("binary elementwise op needs a tensor operand");
      return kind == Elementwise::Add ? add(a, *other) : mul(a, *other);
    }
    case Elementwise::Relu:
      return relu(a);
    case Elementwise::Softplus:
      return softplus(a);
    case Elementwise::Scale: {
      if (const double* factor = std::get_if<double>(&b)) return scale(a, *factor);
      if (const Var* s = std::get_if<Var>(&b)) return scale_by(a, *s);
      throw ContractError("scale needs a scalar operand");
    }
  }
  throw ContractError("unknown elementwise kind");
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& tape = same_tape(x, gain);
  same_tape(x, bias);
  if (!(eps > 0.0)) throw ContractError("layer_norm eps must be positive");
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw DimensionError("layer_norm affine parameters must be [" + std::to_string(d) + "], got " +
                         shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  }
  OpAttrs attrs;
  attrs.scalar = eps;
  return tape.record(OpKind::LayerNorm, {x.id(), gain.id(), bias.id()}, std::move(attrs));
}

Var softmax(Var x) { return unary(OpKind::Softmax, x); }

Var split_heads(Var x, std::size_t heads, std::size_t tokens) {
  require_rank(x, 2, "split_heads");
  if (heads == 0 || tokens == 0 || x.shape()[1] % heads != 0 || x.shape()[0] % tokens != 0) {
    throw DimensionError("split_heads cannot split " + shape_str(x.shape()) + " into " +
                         std::to_string(heads) + " heads of " + std::to_string(tokens) + " tokens");
  }
  OpAttrs attrs;
  attrs.count = heads;
  attrs.count2 = tokens;
  return unary(OpKind::SplitHeads, x, std::move(attrs));
}

Var merge_heads(Var x, std::size_t heads) {
  require_rank(x, 3, "merge_heads");
  if (heads == 0 || x.shape()[0] % heads != 0) {
    throw DimensionError("merge_heads cannot merge " + shape_str(x.shape()) + " with " +
                         std::to_string(heads) + " heads");
  }
  OpAttrs attrs;
  attrs.count = heads;
  return unary(OpKind::MergeHeads, x, std::move(attrs));
}

Var mean_tokens(Var x) {
  require_rank(x, 3, "mean_tokens");
  return unary(OpKind::MeanTokens, x);
}

Var sum(Var x) { return unary(OpKind::Sum, x); }

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t batch = logits.shape()[0], classes = logits.shape()[1];
  if (labels.size() != batch) {
    throw DimensionError("softmax_cross_entropy got " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(batch) + " rows");
  }
  for (std::size_t y : labels) {
    if (y >= classes) {
      throw IndexError("label " + std::to_string(y) + " out of range [0, " +
                       std::to_string(classes) + ")");
    }
  }
  OpAttrs attrs;
  attrs.labels.assign(labels.begin(), labels.end());
  return unary(OpKind::SoftmaxCrossEntropy, logits, std::move(attrs));
}

}  // namespace mpft::ad
