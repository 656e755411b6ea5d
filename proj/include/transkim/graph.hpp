#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "transkim/tensor.hpp"

namespace transkim {

// Reverse-mode tape. Every differentiable operation appends one node holding
// its operands, its output and a closure that pushes the output gradient back
// to the operands. Nodes are stored in creation order, so operands always
// precede their consumers; backward() walks them in exact reverse order.
//
// Operations are recorded only when the graph is recording and at least one
// operand requires a gradient. A non-recording graph is a plain evaluator.
//
// A Graph and the tensors it produced belong to one thread at a time.
template <typename T>
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }
  std::string_view op_name(std::size_t i) const { return nodes_[i].op; }
  void clear() { nodes_.clear(); }

  // Seeds d(root)/d(root) = 1 and propagates. Leaf gradients accumulate
  // across calls; intermediate gradients are recomputed each call.
  void backward(Tensor<T> root);

  // Batched matrix product over the last two dims, batch dims broadcast.
  // With trans_b, b is read as its last-two-dims transpose.
  Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_b = false);

  // Elementwise with numpy-style broadcasting.
  Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
  Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
  Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
  Tensor<T> scale(const Tensor<T>& x, T s);
  Tensor<T> add_scalar(const Tensor<T>& x, T s);

  Tensor<T> softmax_lastdim(const Tensor<T>& x);
  Tensor<T> log_softmax_lastdim(const Tensor<T>& x);
  // x is [B, ..., Nq, Nk]; key_mask is [B, Nk] and may carry fractional
  // weights. Differentiable in both arguments.
  Tensor<T> masked_softmax(const Tensor<T>& x, const Tensor<T>& key_mask);

  Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                       const Tensor<T>& bias, T eps);
  Tensor<T> gelu(const Tensor<T>& x);

  // Row subset of a [n, d] tensor; keep must be strictly increasing in [0, n).
  Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> keep);
  // Inverse placement of gather_rows: rows of x land at keep, zeros elsewhere.
  Tensor<T> scatter_rows(const Tensor<T>& x, std::span<const std::size_t> keep,
                         std::size_t n);

  Tensor<T> reshape(const Tensor<T>& x, Shape shape);
  Tensor<T> transpose(const Tensor<T>& x, int dim0, int dim1);
  // Drops the last dim by picking index idx.
  Tensor<T> select_lastdim(const Tensor<T>& x, std::size_t idx);

  Tensor<T> sum(const Tensor<T>& x);
  Tensor<T> mean(const Tensor<T>& x);

  // sum_i weights[i] * -log softmax(logits[i])[targets[i]] over rows of a
  // [M, C] tensor. Rows with weight 0 are skipped (their target may be < 0).
  Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                          std::span<const T> weights);

  // Forward value is `hard`; the gradient passes unchanged to `soft`.
  Tensor<T> straight_through(const Tensor<T>& hard, const Tensor<T>& soft);

  // Rows of a [V, d] table; ids outside [0, V) throw VocabError.
  Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids);

 private:
  struct Node {
    std::string_view op;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    std::function<void()> backward;
  };

  bool wants_grad(std::initializer_list<const Tensor<T>*> inputs) const;
  Tensor<T> make_output(Shape shape, bool grad);
  void record(std::string_view op, std::vector<Tensor<T>> inputs,
              Tensor<T> output, std::function<void()> backward);
  Tensor<T> broadcast_binary(std::string_view op, const Tensor<T>& a,
                             const Tensor<T>& b, int kind);

  bool recording_;
  std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace transkim
