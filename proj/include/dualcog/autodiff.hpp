#ifndef DUALCOG_AUTODIFF_HPP_
#define DUALCOG_AUTODIFF_HPP_

#include <functional>
#include <span>
#include <vector>

#include "dualcog/tensor.hpp"

// Reverse-mode automatic differentiation over dense tensors. A Graph records
// operations eagerly as they are applied; backward() replays them in reverse.
// Nodes that depend on no trainable leaf carry no backward closure, so a graph
// built from frozen leaves doubles as a plain forward pass.
namespace dualcog::ad {

struct Var {
  int id = -1;
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, int self)>;

  Var constant(Tensor value);
  // Leaf backed by an external tensor that must outlive the graph.
  Var leaf(const Tensor& external, bool requires_grad);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  // Gradient accumulated by backward(); empty tensor when none reached v.
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }
  bool has_grad(Var v) const { return nodes_[v.id].has_grad; }

  // Seeds d(loss)/d(loss) = 1 for a 1×1 loss and propagates to every node.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // Used by op implementations.
  Var push(Tensor value, std::initializer_list<Var> parents, Backward fn);
  Tensor& grad_mut(int id);
  const Tensor& grad_of(int id) const { return nodes_[id].grad; }
  const Tensor& value_of(int id) const;
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// Rows of `table` selected by ids.
Var embed(Graph& g, Var table, std::span<const int> ids);
Var add(Graph& g, Var a, Var b);
// a + bias broadcast over rows (bias is 1×cols).
Var add_row(Graph& g, Var a, Var bias);
Var sub(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
Var add_const(Graph& g, Var x, const Tensor& c);
Var mul_const(Graph& g, Var x, const Tensor& c);
Var scale(Graph& g, Var x, double s);
Var exp(Graph& g, Var x);
Var minimum(Graph& g, Var a, Var b);
Var clamp(Graph& g, Var x, double lo, double hi);
Var sum(Graph& g, Var x);
// Rows [start, start + count) of x.
Var slice_rows(Graph& g, Var x, int start, int count);
Var matmul(Graph& g, Var a, Var b);
// a · bᵀ
Var matmul_nt(Graph& g, Var a, Var b);
Var layer_norm(Graph& g, Var x, Var gain, Var bias, double eps = 1e-5);
// tanh approximation of GELU
Var gelu(Graph& g, Var x);
// Multi-head causal self-attention over packed [Q | K | V] columns.
Var causal_attention(Graph& g, Var qkv, int n_heads);
// Column of log softmax(logits[rows[i]])[targets[i]].
Var pick_log_softmax(Graph& g, Var logits, std::span<const int> rows,
                     std::span<const int> targets);

}  // namespace dualcog::ad

#endif  // DUALCOG_AUTODIFF_HPP_
