#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "deiqt/tensor.hpp"

namespace deiqt {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid until the
/// tape is cleared.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t numel() const { return value().numel(); }
  /// Scalar value of a single-element var.
  T item() const;

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Wengert list for reverse-mode differentiation. Ops append nodes in
/// execution order, so the list is already topologically sorted and
/// backward is a single reverse sweep.
///
/// A non-recording tape still evaluates values but skips the closures and
/// gradient bookkeeping, which is what inference uses.
template <typename T>
class Tape {
 public:
  /// Accumulates the node's output gradient into its inputs' gradients.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(Tensor<T> value);
  /// Leaf bound to a parameter. Binding the same tensor twice returns the
  /// same var, so gradients from several samples on one tape accumulate.
  Var<T> param(const Tensor<T>& p);

  /// Seeds d(loss)/d(loss) = 1, sweeps the list in reverse, adds leaf
  /// gradients into each bound parameter's `grad`, then clears the tape.
  void backward(const Var<T>& loss);
  void clear();

  // Interface used by op implementations.
  Var<T> push(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn);
  Var<T> push(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn);
  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  /// Gradient buffer of a node, zero-filled on first access.
  std::vector<T>& grad(std::size_t id);

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    BackwardFn backward;
    const Tensor<T>* param = nullptr;
    bool needs_grad = false;
  };

  Var<T> push_node(Node node);

  bool record_;
  std::deque<Node> nodes_;
  std::unordered_map<const Tensor<T>*, std::size_t> param_ids_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
T Var<T>::item() const {
  const auto& v = value();
  if (v.numel() != 1) throw ContractError("item() on non-scalar " + shape_str(v.shape));
  return v.data[0];
}

// Primitive ops. All record their gradient rule when the tape is recording.

/// [m x k] . [k x n] -> [m x n]
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> transpose(const Var<T>& a);
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
/// Elementwise product.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T factor);
/// Adds a vector of length last_dim(x) to every last-axis slice of x.
template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias);
/// Sum of all elements, shape [1].
template <typename T>
Var<T> sum(const Var<T>& x);
template <typename T>
Var<T> mean(const Var<T>& x);
template <typename T>
Var<T> softmax_lastdim(const Var<T>& x);
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps);
/// Tanh-form Gaussian error linear unit.
template <typename T>
Var<T> gelu(const Var<T>& x);
/// Rows [begin, end) of a 2-D var.
template <typename T>
Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t end);
/// Columns [begin, end) of a 2-D var.
template <typename T>
Var<T> slice_cols(const Var<T>& x, std::size_t begin, std::size_t end);
template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts);
template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts);
/// Stacks `times` copies of a single-row var.
template <typename T>
Var<T> repeat_rows(const Var<T>& row, std::size_t times);
template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) {
  return add(a, b);
}
template <typename T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) {
  return sub(a, b);
}

// Raw kernels, exposed for oracles and tests. Row-major, accumulate into c.

/// c[m x n] += a[m x k] . b[k x n]
template <typename T>
void gemm_accumulate(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c);

template <typename T>
T gelu_value(T x);

}  // namespace deiqt
