#include "ecdiff/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "ecdiff/kernels.hpp"

namespace ecdiff {

using kernels::Op;
using kernels::parallel::gemm;

template <typename T>
typename Graph<T>::Var Graph<T>::push(Matrix<T> value, bool needs_grad,
                                      std::function<void(Graph&, const Node&)> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Matrix<T>& Graph<T>::grad_buffer(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix<T>(n.value.rows(), n.value.cols());
  return n.grad;
}

template <typename T>
typename Graph<T>::Var Graph<T>::constant(Matrix<T> value) {
  return push(std::move(value), false);
}

template <typename T>
typename Graph<T>::Var Graph<T>::param(const ParamArray<T>& p) {
  Var v = push(p.value, grad_enabled_);
  nodes_[v.id].source = &p;
  return v;
}

template <typename T>
typename Graph<T>::Var Graph<T>::matmul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  require_shape(A.cols() == B.rows(), "matmul: " + A.shape_str() + " * " + B.shape_str());
  Matrix<T> C(A.rows(), B.cols());
  gemm(A, Op::None, B, Op::None, C);
  return push(std::move(C), needs(a) || needs(b), [a, b](Graph& g, const Node& self) {
    if (g.needs(a)) gemm(self.grad, Op::None, g.value(b), Op::Transpose, g.grad_buffer(a), true);
    if (g.needs(b)) gemm(g.value(a), Op::Transpose, self.grad, Op::None, g.grad_buffer(b), true);
  });
}

template <typename T>
typename Graph<T>::Var Graph<T>::matmul_nt(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  require_shape(A.cols() == B.cols(), "matmul_nt: " + A.shape_str() + " * " + B.shape_str() + "^T");
  Matrix<T> C(A.rows(), B.rows());
  gemm(A, Op::None, B, Op::Transpose, C);
  return push(std::move(C), needs(a) || needs(b), [a, b](Graph& g, const Node& self) {
    if (g.needs(a)) gemm(self.grad, Op::None, g.value(b), Op::None, g.grad_buffer(a), true);
    if (g.needs(b)) gemm(self.grad, Op::Transpose, g.value(a), Op::None, g.grad_buffer(b), true);
  });
}

template <typename T>
typename Graph<T>::Var Graph<T>::transpose(Var a) {
  return push(value(a).transposed(), needs(a), [a](Graph& g, const Node& self) {
    auto& ga = g.grad_buffer(a);
    for (std::size_t r = 0; r < self.grad.rows(); ++r)
      for (std::size_t c = 0; c < self.grad.cols(); ++c) ga(c, r) += self.grad(r, c);
  });
}

template <typename T>
typename Graph<T>::Var Graph<T>::add(Var a, Var b) {
  require_shape(value(a).same_shape(value(b)), "add: " + value(a).shape_str() + " vs " + value(b).shape_str());
  return push(value(a) + value(b), needs(a) || needs(b), [a, b](Graph& g, const Node& self) {
    if (g.needs(a)) g.grad_buffer(a) += self.grad;
    if (g.needs(b)) g.grad_buffer(b) += self.grad;
  });
}

template <typename T>
typename Graph<T>::Var Graph<T>::sub(Var a, Var b) {
  require_shape(value(a).same_shape(value(b)), "sub: " + value(a).shape_str() + " vs " + value(b).shape_str());
  return push(value(a) - value(b), needs(a) || needs(b), [a, b](Graph& g, const Node& self) {
    if (g.needs(a)) g.grad_buffer(a) += self.grad;
    if (g.needs(b)) g.grad_buffer(b) -= self.grad;
  });
}

template <typename T>
typename Graph<T>::Var Graph<T>::add_row(Var a, Var row) {
  const auto& A = value(a);
  const auto& R = value(row);
  require_shape(R.rows() == 1 && R.cols() == A.cols(), "add_row: " + A.shape_str() + " + " + R.shape_str());
  Matrix<T> out = A;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += R[c];
  return push(std::move(out), needs(a) || needs(row), [a, row](Graph& g, const Node& self) {
    if (g.needs(a)) g.grad_buffer(a) += self.grad;
    if (g.needs(row)) {
      auto& gr = g.grad_buffer(row);
      for (std::size_t r = 0; r < self.grad.rows(); ++r)
        for (std::size_t c = 0; c < self.grad.cols(); ++c) gr[c] += self.grad(r, c);
    }
  });
}

template <typename T>
typename Graph<T>::Var Graph<T>::scale(Var a, T s) {
  return push(value(a) * s, needs(a), [a, s](Graph& g, const Node& self) {
    auto& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * self.grad[i];
  });
}

template <typename T>
typename Graph<T>::Var Graph<T>::relu(Var a) {
  Matrix<T> out = value(a);
  for (auto& v : out.flat()) v = v > T(0) ? v : T(0);
  return push(std::move(out), needs(a), [a](Graph& g, const Node& self) {
    auto& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (self.value[i] > T(0)) ga[i] += self.grad[i];
  });
}

template <typename T>
typename Graph<T>::Var Graph<T>::layer_norm(Var x, Var gain, Var bias, T eps) {
  const auto& X = value(x);
  const auto& G = value(gain);
  const auto& B = value(bias);
  const std::size_t n = X.rows(), d = X.cols();
  require_shape(G.rows() == 1 && G.cols() == d && B.same_shape(G), "layer_norm: affine shape mismatch");
  Matrix<T> xhat(n, d), out(n, d);
  std::vector<T> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    T mean = 0;
    for (std::size_t c = 0; c < d; ++c) mean += X(r, c);
    mean /= T(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (X(r, c) - mean) * (X(r, c) - mean);
    var /= T(d);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat(r, c) = (X(r, c) - mean) * inv_std[r];
      out(r, c) = G[c] * xhat(r, c) + B[c];
    }
  }
  const bool ng = needs(x) || needs(gain) || needs(bias);
  return push(std::move(out), ng,
              [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, const Node& self) {
                const std::size_t n = xhat.rows(), d = xhat.cols();
                const auto& dy = self.grad;
                if (g.needs(gain)) {
                  auto& gg = g.grad_buffer(gain);
                  for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < d; ++c) gg[c] += dy(r, c) * xhat(r, c);
                }
                if (g.needs(bias)) {
                  auto& gb = g.grad_buffer(bias);
                  for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < d; ++c) gb[c] += dy(r, c);
                }
                if (g.needs(x)) {
                  const auto& G = g.value(gain);
                  auto& gx = g.grad_buffer(x);
                  std::vector<T> dxhat(d);
                  for (std::size_t r = 0; r < n; ++r) {
                    T mean_dxhat = 0, mean_dxhat_xhat = 0;
                    for (std::size_t c = 0; c < d; ++c) {
                      dxhat[c] = dy(r, c) * G[c];
                      mean_dxhat += dxhat[c];
                      mean_dxhat_xhat += dxhat[c] * xhat(r, c);
                    }
                    mean_dxhat /= T(d);
                    mean_dxhat_xhat /= T(d);
                    for (std::size_t c = 0; c < d; ++c)
                      gx(r, c) += inv_std[r] * (dxhat[c] - mean_dxhat - xhat(r, c) * mean_dxhat_xhat);
                  }
                }
              });
}

template <typename T>
typename Graph<T>::Var Graph<T>::softmax_rows(Var a) {
  Matrix<T> out = value(a);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const T mx = *std::max_element(row.begin(), row.end());
    T sum = 0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : row) v /= sum;
  }
  return push(std::move(out), needs(a), [a](Graph& g, const Node& self) {
    auto& ga = g.grad_buffer(a);
    const auto& y = self.value;
    for (std::size_t r = 0; r < y.rows(); ++r) {
      T dot = 0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += self.grad(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += y(r, c) * (self.grad(r, c) - dot);
    }
  });
}

template <typename T>
typename Graph<T>::Var Graph<T>::slice_cols(Var a, std::size_t begin, std::size_t end) {
  const auto& A = value(a);
  require_shape(begin < end && end <= A.cols(), "slice_cols: range out of bounds");
  Matrix<T> out(A.rows(), end - begin);
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = A(r, c);
  return push(std::move(out), needs(a), [a, begin](Graph& g, const Node& self) {
    auto& ga = g.grad_buffer(a);
    for (std::size_t r = 0; r < self.grad.rows(); ++r)
      for (std::size_t c = 0; c < self.grad.cols(); ++c) ga(r, c + begin) += self.grad(r, c);
  });
}

template <typename T>
typename Graph<T>::Var Graph<T>::concat_cols(std::span<const Var> parts) {
  require_shape(!parts.empty(), "concat_cols: no inputs");
  const std::size_t rows = value(parts[0]).rows();
  std::size_t cols = 0;
  bool ng = false;
  for (Var p : parts) {
    require_shape(value(p).rows() == rows, "concat_cols: row count mismatch");
    cols += value(p).cols();
    ng = ng || needs(p);
  }
  Matrix<T> out(rows, cols);
  std::size_t off = 0;
  for (Var p : parts) {
    const auto& P = value(p);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < P.cols(); ++c) out(r, off + c) = P(r, c);
    off += P.cols();
  }
  std::vector<Var> ids(parts.begin(), parts.end());
  return push(std::move(out), ng, [ids = std::move(ids)](Graph& g, const Node& self) {
    std::size_t off = 0;
    for (Var p : ids) {
      const std::size_t w = g.value(p).cols();
      if (g.needs(p)) {
        auto& gp = g.grad_buffer(p);
        for (std::size_t r = 0; r < gp.rows(); ++r)
          for (std::size_t c = 0; c < w; ++c) gp(r, c) += self.grad(r, off + c);
      }
      off += w;
    }
  });
}

template <typename T>
typename Graph<T>::Var Graph<T>::zero_diagonal(Var a) {
  Matrix<T> out = value(a);
  require_shape(out.rows() == out.cols(), "zero_diagonal: matrix not square");
  for (std::size_t i = 0; i < out.rows(); ++i) out(i, i) = T(0);
  return push(std::move(out), needs(a), [a](Graph& g, const Node& self) {
    auto& ga = g.grad_buffer(a);
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < ga.cols(); ++c)
        if (r != c) ga(r, c) += self.grad(r, c);
  });
}

template <typename T>
typename Graph<T>::Var Graph<T>::mean_squared_error(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  require_shape(A.same_shape(B), "mean_squared_error: " + A.shape_str() + " vs " + B.shape_str());
  T s = 0;
  for (std::size_t i = 0; i < A.size(); ++i) s += (A[i] - B[i]) * (A[i] - B[i]);
  const T n = T(A.size());
  return push(Matrix<T>(1, 1, s / n), needs(a) || needs(b), [a, b, n](Graph& g, const Node& self) {
    const T k = T(2) * self.grad[0] / n;
    const auto& A = g.value(a);
    const auto& B = g.value(b);
    if (g.needs(a)) {
      auto& ga = g.grad_buffer(a);
      for (std::size_t i = 0; i < A.size(); ++i) ga[i] += k * (A[i] - B[i]);
    }
    if (g.needs(b)) {
      auto& gb = g.grad_buffer(b);
      for (std::size_t i = 0; i < A.size(); ++i) gb[i] -= k * (A[i] - B[i]);
    }
  });
}

template <typename T>
typename Graph<T>::Var Graph<T>::sum_abs(Var a) {
  T s = 0;
  for (T v : value(a).flat()) s += std::abs(v);
  return push(Matrix<T>(1, 1, s), needs(a), [a](Graph& g, const Node& self) {
    const auto& A = g.value(a);
    auto& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < A.size(); ++i) {
      if (A[i] > T(0)) ga[i] += self.grad[0];
      else if (A[i] < T(0)) ga[i] -= self.grad[0];
    }
  });
}

template <typename T>
void Graph<T>::backward(Var loss) {
  require_shape(value(loss).size() == 1, "backward: loss must be 1x1");
  grad_buffer(loss)[0] = T(1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.back) n.back(*this, n);
  }
}

template <typename T>
void Graph<T>::accumulate_param_grads(ModelParams<T>& params) const {
  std::unordered_map<const ParamArray<T>*, ParamArray<T>*> owned;
  for (auto& a : params.arrays()) owned.emplace(&a, &a);
  for (const Node& n : nodes_) {
    if (!n.source || n.grad.empty()) continue;
    auto it = owned.find(n.source);
    if (it == owned.end()) throw std::invalid_argument("accumulate_param_grads: leaf " + n.source->name + " not owned by params");
    it->second->grad += n.grad;
  }
}

template class Graph<float>;
template class Graph<double>;
template class Graph<long double>;

}  // namespace ecdiff
