#pragma once

// Tape-based reverse-mode differentiation over dense matrices.
//
// A Graph records every operation as a node holding its forward value. Calling
// backward() on a 1x1 node walks the tape in reverse, accumulating adjoints.
// accumulate_param_grads() then adds each parameter leaf's adjoint into the
// gradient buffer of the matching array. Graphs are single-use.
//
// A Graph built with gradients disabled treats parameters as constants and
// records no backward closures; use it for inference.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "ecdiff/matrix.hpp"
#include "ecdiff/params.hpp"

namespace ecdiff {

template <typename T>
class Graph {
 public:
  struct Var {
    std::size_t id;
  };

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix<T> value);
  Var param(const ParamArray<T>& p);

  const Matrix<T>& value(Var v) const { return nodes_[v.id].value; }
  /// Adjoint of `v` after backward(); empty if no gradient reached it.
  const Matrix<T>& grad(Var v) const { return nodes_[v.id].grad; }
  T scalar(Var v) const { return nodes_[v.id].value[0]; }
  std::size_t node_count() const { return nodes_.size(); }

  Var matmul(Var a, Var b);     // a * b
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var transpose(Var a);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  /// Adds the 1 x d row vector `row` to every row of `a`.
  Var add_row(Var a, Var row);
  Var scale(Var a, T s);
  Var relu(Var a);
  /// Per-row layer normalization with 1 x d gain and bias.
  Var layer_norm(Var x, Var gain, Var bias, T eps = T(1e-5));
  Var softmax_rows(Var a);
  Var slice_cols(Var a, std::size_t begin, std::size_t end);
  Var concat_cols(std::span<const Var> parts);
  Var zero_diagonal(Var a);
  /// mean((a - b)^2) as a 1x1 node.
  Var mean_squared_error(Var a, Var b);
  /// sum |a_ij| as a 1x1 node; subgradient at 0 is 0.
  Var sum_abs(Var a);

  void backward(Var loss);
  /// Adds parameter-leaf adjoints into `params` gradient buffers. Leaves must
  /// have been created from arrays owned by `params`.
  void accumulate_param_grads(ModelParams<T>& params) const;

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    bool needs_grad = false;
    const ParamArray<T>* source = nullptr;
    std::function<void(Graph&, const Node&)> back;
  };

  Var push(Matrix<T> value, bool needs_grad, std::function<void(Graph&, const Node&)> back = {});
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }
  Matrix<T>& grad_buffer(Var v);

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;
extern template class Graph<long double>;

}  // namespace ecdiff
