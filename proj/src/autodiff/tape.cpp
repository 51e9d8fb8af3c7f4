#include "csou/autodiff/tape.hpp"

#include <algorithm>

#include "csou/errors.hpp"

namespace csou::ad {

const Tensor& Var::value() const {
  if (!tape_) throw AutodiffError("use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.op = "leaf";
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.op = op;
  node.value = std::move(value);
  for (const Var& v : inputs) {
    if (v.tape() != this) throw AutodiffError(std::string(op) + ": input from another tape");
    node.inputs.push_back(v.id());
    node.requires_grad = node.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw AutodiffError("backward: loss belongs to another tape");
  if (backward_done_) throw AutodiffError("backward called twice without reset");
  if (nodes_[loss.id()].value.size() != 1) {
    throw AutodiffError("backward needs a scalar loss, got shape " +
                        to_string(nodes_[loss.id()].value.shape()));
  }
  backward_done_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || node.grad.empty()) continue;
    // The closure may grow other nodes' buffers but never this one.
    std::vector<double> g = std::move(node.grad);
    node.backward(*this, node.value, g);
    node.grad = std::move(g);
  }
}

void Tape::reset() {
  for (Node& node : nodes_) node.grad.clear();
  backward_done_ = false;
}

Tensor Tape::grad(Var v) const {
  const Node& node = nodes_.at(v.id());
  if (node.grad.empty()) return Tensor(node.value.shape(), 0.0);
  return Tensor(node.value.shape(), node.grad);
}

std::span<double> Tape::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

void Tape::accumulate(std::size_t id, std::span<const double> g) {
  if (!nodes_[id].requires_grad) return;
  std::span<double> buf = grad_buffer(id);
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

}  // namespace csou::ad
