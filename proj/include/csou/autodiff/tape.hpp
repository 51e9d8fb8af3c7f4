#pragma once

// Reverse-mode tape. Nodes are appended in creation order, which is also a
// topological order, so backward() is a single reverse sweep.

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "csou/autodiff/tensor.hpp"

namespace csou::ad {

class Tape;

// Handle to a tape node. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// `out` is the node's own value and grad_out is d(loss)/d(out); the closure
// accumulates into its inputs' buffers.
using BackwardFn =
    std::function<void(Tape& tape, const Tensor& out, std::span<const double> grad_out)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Records an op result. The backward closure is dropped when no input
  // requires a gradient.
  Var record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse.
  void backward(Var loss);
  // Clears all gradients so backward() may run again.
  void reset();

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Gradient of the last backward() (zeros if the node got none).
  Tensor grad(Var v) const;
  // Accumulation buffer for node `id`, allocated on first use.
  std::span<double> grad_buffer(std::size_t id);
  void accumulate(std::size_t id, std::span<const double> g);

  std::size_t size() const { return nodes_.size(); }
  const char* op_name(std::size_t id) const { return nodes_[id].op; }

 private:
  struct Node {
    const char* op;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;  // stable addresses: values stay valid as the tape grows
  bool backward_done_ = false;
};

}  // namespace csou::ad
