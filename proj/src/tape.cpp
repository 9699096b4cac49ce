#include "foe/tape.hpp"

namespace foe {

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  grads_.emplace_back();
  has_grad_.push_back(0);
  return Var{this, int32_t(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, BackwardFn fn) {
  bool needs_grad = false;
  for (const Var& p : parents) {
    FOE_CHECK(p.tape == this, "op mixes tensors from different tapes");
    needs_grad = needs_grad || node(p).requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs_grad;
  if (needs_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  grads_.emplace_back();
  has_grad_.push_back(0);
  return Var{this, int32_t(nodes_.size() - 1)};
}

const Tape::Node& Tape::node(Var v) const {
  FOE_CHECK(v.tape == this && v.id >= 0 && size_t(v.id) < nodes_.size(),
            "invalid tape handle");
  return nodes_[size_t(v.id)];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

void Tape::accumulate_grad(int32_t id, const Tensor& g) {
  FOE_CHECK(id >= 0 && size_t(id) < nodes_.size(), "bad gradient target");
  const Tensor& v = nodes_[size_t(id)].value;
  FOE_CHECK(same_shape(g.shape(), v.shape()), "gradient shape ",
            shape_str(g.shape()), " does not match value shape ",
            shape_str(v.shape()));
  FOE_CHECK(g.dtype() == v.dtype(), "gradient dtype mismatch");
  if (!has_grad_[size_t(id)]) {
    grads_[size_t(id)] = g;
    has_grad_[size_t(id)] = 1;
    return;
  }
  Tensor& acc = grads_[size_t(id)];
  if (g.is_complex()) {
    cdouble* a = acc.cdata();
    const cdouble* b = g.cdata();
    for (int64_t i = 0; i < g.numel(); ++i) a[i] += b[i];
  } else {
    double* a = acc.rdata();
    const double* b = g.rdata();
    for (int64_t i = 0; i < g.numel(); ++i) a[i] += b[i];
  }
}

void Tape::backward(Var loss) {
  FOE_CHECK(!consumed_, "backward() already ran on this tape");
  const Node& ln = node(loss);
  FOE_CHECK(!ln.value.is_complex(), "loss must be real");
  FOE_CHECK(ln.value.numel() == 1, "loss must be scalar, got shape ",
            shape_str(ln.value.shape()));
  consumed_ = true;

  accumulate_grad(loss.id, Tensor::full(ln.value.shape(), 1.0));
  for (int32_t id = loss.id; id >= 0; --id) {
    if (!has_grad_[size_t(id)]) continue;
    const Node& n = nodes_[size_t(id)];
    if (n.backward) n.backward(*this, grads_[size_t(id)]);
  }
}

bool Tape::has_grad(Var v) const {
  node(v);
  return has_grad_[size_t(v.id)] != 0;
}

const Tensor& Tape::grad(Var v) const {
  FOE_CHECK(node(v).requires_grad, "grad() on a node without requires_grad");
  FOE_CHECK(has_grad_[size_t(v.id)], "no gradient recorded; run backward()");
  return grads_[size_t(v.id)];
}

size_t Tape::tracked_node_count() const {
  size_t n = 0;
  for (const Node& node : nodes_)
    if (node.backward) ++n;
  return n;
}

}  // namespace foe
