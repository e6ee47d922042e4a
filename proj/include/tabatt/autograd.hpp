#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "tabatt/tensor.hpp"

namespace tabatt {

class Tape;

// Handle to a node on a tape. Cheap to copy.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& val() const;
  const Shape& shape() const { return val().shape(); }
};

// Reverse-mode autodiff tape. Nodes are appended in topological order;
// backward walks them once in reverse insertion order.
class Tape {
 public:
  // Gradient routine: given the node's output gradient, accumulate into the
  // input gradients via Tape::accumulate.
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Var leaf(Tensor value);
  Var record(Tensor value, std::vector<int> inputs, BackwardFn backward);

  const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  size_t node_count() const { return nodes_.size(); }

  // Valid during/after backward().
  const Tensor& grad(int id) const { return grads_[static_cast<size_t>(id)]; }
  void accumulate(int id, const Tensor& g);

  // Computes gradients of a scalar loss w.r.t. every node. Deterministic.
  void backward(Var loss);

  // For ops whose backward needs the output node id (e.g. sigmoid reuses y).
  Var replace_backward(int id, BackwardFn backward) {
    nodes_[static_cast<size_t>(id)].backward = std::move(backward);
    return Var{this, id};
  }

 private:
  struct Node {
    Tensor value;
    std::vector<int> inputs;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> touched_;
};

enum class BinOp { Add, Sub, Mul, Div };
enum class ReduceOp { Sum, Mean, Max };
enum class UnaryOp { Relu, Sigmoid, Sqrt, Neg };

Var binary(BinOp op, Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }

Var unary(UnaryOp op, Var x);
Var relu(Var x);
Var sigmoid(Var x);
Var sqrt(Var x);
Var neg(Var x);

Var scale(Var x, double c);      // multiply by constant
Var shift(Var x, double c);      // add constant

Var matmul(Var a, Var b);

Var reduce(ReduceOp op, Var x, std::vector<int> axes, bool keepdims);
Var sum(Var x, std::vector<int> axes, bool keepdims = false);
Var mean(Var x, std::vector<int> axes, bool keepdims = false);
Var reduce_max(Var x, std::vector<int> axes, bool keepdims = false);
Var sum_all(Var x);   // -> shape {1}
Var mean_all(Var x);  // -> shape {1}

Var softmax_lastaxis(Var x);

Var reshape(Var x, Shape new_shape);
Var permute(Var x, std::vector<int> order);
Var concat(const std::vector<Var>& parts, int axis);
// Half-open [start, stop) per axis; must cover every axis.
Var slice(Var x, const std::vector<std::pair<int64_t, int64_t>>& ranges);

Var constant(Tape& tape, Tensor value);

}  // namespace tabatt
