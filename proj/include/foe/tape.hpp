#pragma once

#include <functional>
#include <vector>

#include "foe/tensor.hpp"

namespace foe {

class Tape;

// Handle to a node on the tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int32_t id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Invoked during backward with the accumulated output gradient; responsible
// for pushing contributions into the parents via Tape::accumulate_grad.
using BackwardFn = std::function<void(Tape&, const Tensor&)>;

// Reverse-mode tape. Nodes are recorded in topological (creation) order.
// One tape per worker; backward() may run once per recording.
class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Records an interior node. The backward fn is dropped when no parent
  // requires gradients, so untracked subgraphs cost no closures.
  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn fn);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  Var detach(Var v) { return constant(value(v)); }

  // Reverse sweep from a real scalar loss. Gradients of real nodes are f64;
  // gradients of complex nodes are c128 carrying (dL/dRe, dL/dIm).
  void backward(Var loss);

  bool has_grad(Var v) const;
  const Tensor& grad(Var v) const;

  void accumulate_grad(int32_t id, const Tensor& g);

  size_t node_count() const { return nodes_.size(); }
  // Nodes holding a backward closure, i.e. the differentiated subgraph.
  size_t tracked_node_count() const;

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    BackwardFn backward;
  };

  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> has_grad_;
  bool consumed_ = false;
};

}  // namespace foe
