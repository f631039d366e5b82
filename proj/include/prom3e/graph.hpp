#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "prom3e/tensor.hpp"

namespace prom3e {

class Graph;

// Handle to a value recorded on a Graph.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const noexcept { return id != static_cast<std::size_t>(-1); }
};

// Tape of executed operations. Values are recorded in execution order and
// backward() replays the tape in exact reverse order, accumulating gradients
// additively into every input that requires them.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&)>;

  // With grad disabled, parameter() records constants and no backward
  // closures are stored (inference mode).
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Var constant(Tensor value);
  Var parameter(Tensor value);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  // Gradient w.r.t. v after backward(); zero tensor if v was unreachable.
  const Tensor& grad(Var v);
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  void backward(Var loss);

  // Used by op implementations.
  Var record(Tensor value, bool requires_grad, BackwardFn fn);
  Tensor& grad_buffer(Var v);  // allocated on first use
  bool any_requires_grad(std::initializer_list<Var> vs) const;

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool grad_enabled_;
};

// Differentiable operations. All take and return 2-D values; row-broadcast
// rules are documented per op. Shape mismatches throw ShapeError naming both
// shapes.
namespace ops {

Var matmul(Graph& g, Var a, Var b);           // [m,k] x [k,n]
Var add(Graph& g, Var a, Var b);              // same shape, or b is [1,n] broadcast over rows
Var sub(Graph& g, Var a, Var b);              // same shape
Var mul(Graph& g, Var a, Var b);              // elementwise, same shape
Var scale(Graph& g, Var a, double c);         // a * c
Var mul_scalar(Graph& g, Var a, Var s);       // a * s, s is [1,1]
Var add_scalar(Graph& g, Var a, Var s);       // a + s, s is [1,1]
Var gelu(Graph& g, Var a);                    // exact 0.5 x (1 + erf(x / sqrt 2))
Var exp(Graph& g, Var a);
Var log(Graph& g, Var a);
Var layer_norm(Graph& g, Var x, Var gain, Var bias);  // per row; gain/bias [1,n]
Var softmax_rows(Graph& g, Var a);
Var log_softmax_rows(Graph& g, Var a);
Var l2_normalize_rows(Graph& g, Var a);
Var sum(Graph& g, Var a);                     // -> [1,1]
Var mean(Graph& g, Var a);                    // -> [1,1]
Var sum_cols(Graph& g, Var a);                // [m,n] -> [m,1]
Var diagonal(Graph& g, Var a);                // [n,n] -> [n,1]

// Token-axis helpers. A token batch holds B records of T tokens each as a
// [B*T, E] matrix; row b*T + t is token t of record b.
Var stack_tokens(Graph& g, const std::vector<Var>& tokens);   // T x [B,E] -> [B*T,E]
Var select_token(Graph& g, Var x, std::size_t tokens, std::size_t index);  // -> [B,E]
Var broadcast_rows(Graph& g, Var row, std::size_t rows);      // [1,E] -> [rows,E]

// Scaled dot-product self-attention applied independently to each record and
// head. q, k, v: [B*T, E]; heads must divide E.
Var attention(Graph& g, Var q, Var k, Var v, std::size_t tokens, std::size_t heads);

// Pairwise Euclidean distances, entry (j,p) = || pred_j - truth_p ||.
// Differentiable w.r.t. both arguments.
Var pairwise_distance(Graph& g, Var pred, Var truth);

}  // namespace ops

}  // namespace prom3e
