#pragma once

#include <cstddef>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mpft/autodiff/tensor.hpp"

namespace mpft::ad {

enum class OpKind {
  Constant,
  Leaf,
  MatMul,
  Transpose,
  BatchMatMul,
  Add,
  Sub,
  Mul,
  Relu,
  Softplus,
  Scale,
  ScaleBy,
  AddRow,
  Reshape,
  LayerNorm,
  Softmax,
  SplitHeads,
  MergeHeads,
  MeanTokens,
  Sum,
  SoftmaxCrossEntropy,
};

std::string_view op_name(OpKind kind);

// Non-tensor arguments of a recorded op. Only the fields an op reads are
// meaningful; the rest keep their defaults.
struct OpAttrs {
  double scalar = 0.0;                 // Scale factor, LayerNorm eps
  std::size_t count = 0;               // heads (Split/Merge), batch (Split)
  std::size_t count2 = 0;              // tokens (Split/Merge)
  bool flag = false;                   // BatchMatMul: transpose second operand
  Shape shape;                         // Reshape target
  std::vector<std::size_t> labels;     // SoftmaxCrossEntropy targets
};

struct Node {
  OpKind kind = OpKind::Constant;
  std::vector<std::size_t> inputs;
  OpAttrs attrs;
  Tensor value;
  std::vector<double> saved;  // op-specific forward intermediates
  bool needs_grad = false;
  Tensor* param = nullptr;    // gradient destination for tracked leaves
};

class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; valid for the
/// lifetime of its tape.
class Var {
 public:
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool needs_grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

 private:
  Tape* tape_;
  std::size_t id_;
};

/// Single-owner record of one forward pass. Rebuilt per pass: a tape is
/// created, ops append nodes in execution order, backward() walks them in
/// reverse, and the tape is discarded.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records a copy of `t` that never receives gradient.
  Var constant(Tensor t);

  /// Records `param`. When `track` is set and the tensor requires grad,
  /// backward() writes the gradient into param's grad slot; otherwise the
  /// tensor enters the tape as a constant. The same tensor recorded twice
  /// yields the same node.
  Var leaf(Tensor& param, bool track = true);

  /// Appends an op node, computing its value from the inputs.
  Var record(OpKind kind, std::vector<std::size_t> inputs, OpAttrs attrs = {});

  /// Reverse accumulation from a scalar loss. Every tracked leaf receives a
  /// gradient (zeros when the loss does not depend on it); intermediate
  /// gradients are dropped when this returns.
  void backward(Var loss);

  /// Recomputes every op node from its recorded inputs and reports whether
  /// all outputs are bitwise identical to the recorded ones.
  bool replay_matches() const;

  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> leaf_ids_;
};

}  // namespace mpft::ad
