#include "mpft/autodiff/tape.hpp"

#include "kernels.hpp"
#include "mpft/errors.hpp"

namespace mpft::ad {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::BatchMatMul: return "batch_matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Relu: return "relu";
    case OpKind::Softplus: return "softplus";
    case OpKind::Scale: return "scale";
    case OpKind::ScaleBy: return "scale_by";
    case OpKind::AddRow: return "add_row";
    case OpKind::Reshape: return "reshape";
    case OpKind::LayerNorm: return "layer_norm";
    case OpKind::Softmax: return "softmax";
    case OpKind::SplitHeads: return "split_heads";
    case OpKind::MergeHeads: return "merge_heads";
    case OpKind::MeanTokens: return "mean_tokens";
    case OpKind::Sum: return "sum";
    case OpKind::SoftmaxCrossEntropy: return "softmax_cross_entropy";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape_->node(id_).value; }

bool Var::needs_grad() const { return tape_->node(id_).needs_grad; }

Var Tape::constant(Tensor t) {
  Node node;
  node.kind = OpKind::Constant;
  t.set_requires_grad(false);
  node.value = std::move(t);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor& param, bool track) {
  if (auto it = leaf_ids_.find(&param); it != leaf_ids_.end()) return Var(this, it->second);
  Node node;
  node.kind = OpKind::Leaf;
  node.value = Tensor(param.shape(), param.values());
  node.needs_grad = track && param.requires_grad();
  node.param = node.needs_grad ? &param : nullptr;
  nodes_.push_back(std::move(node));
  leaf_ids_.emplace(&param, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(OpKind kind, std::vector<std::size_t> inputs, OpAttrs attrs) {
  std::vector<const Tensor*> in;
  in.reserve(inputs.size());
  bool needs_grad = false;
  for (std::size_t id : inputs) {
    if (id >= nodes_.size()) throw ContractError("op input is not on this tape");
    in.push_back(&nodes_[id].value);
    needs_grad = needs_grad || nodes_[id].needs_grad;
  }
  Node node;
  node.kind = kind;
  node.value = kernels::forward(kind, attrs, in, node.saved);
#ifndef NDEBUG
  bool inputs_finite = true;
  for (const Tensor* t : in) inputs_finite = inputs_finite && t->all_finite();
  if (inputs_finite && !node.value.all_finite()) {
    throw NumericError(std::string("non-finite output from ") + std::string(op_name(kind)) +
                       " on finite inputs");
  }
#endif
  node.inputs = std::move(inputs);
  node.attrs = std::move(attrs);
  node.needs_grad = needs_grad;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ContractError("loss was recorded on a different tape");
  const Node& root = nodes_.at(loss.id());
  if (root.value.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_str(root.value.shape()));
  }
  std::vector<std::vector<double>> grads(nodes_.size());
  grads[loss.id()] = {1.0};
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!node.needs_grad || grads[i].empty()) continue;
    if (node.kind == OpKind::Leaf || node.kind == OpKind::Constant) continue;
    std::vector<const Tensor*> in;
    std::vector<std::vector<double>*> slots;
    for (std::size_t id : node.inputs) {
      in.push_back(&nodes_[id].value);
      slots.push_back(nodes_[id].needs_grad ? &grads[id] : nullptr);
    }
    kernels::backward(node.kind, node.attrs, in, node.value, node.saved, grads[i], slots);
    grads[i].clear();
    grads[i].shrink_to_fit();
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& node = nodes_[i];
    if (node.kind != OpKind::Leaf || node.param == nullptr) continue;
    if (grads[i].empty()) grads[i].assign(node.value.size(), 0.0);
    node.param->set_grad(std::move(grads[i]));
  }
}

bool Tape::replay_matches() const {
  for (const Node& node : nodes_) {
    if (node.kind == OpKind::Leaf || node.kind == OpKind::Constant) continue;
    std::vector<const Tensor*> in;
    for (std::size_t id : node.inputs) in.push_back(&nodes_[id].value);
    std::vector<double> saved;
    if (!bit_equal(kernels::forward(node.kind, node.attrs, in, saved), node.value)) return false;
  }
  return true;
}

}  // namespace mpft::ad
