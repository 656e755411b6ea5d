#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "transkim/errors.hpp"

namespace transkim {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape);

// Dense row-major array with an optional gradient buffer. Tensor is a handle:
// copies share storage, which is what lets a Graph record its operands.
// Use clone() for an independent copy.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }
  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    auto n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }
  static Tensor from(Shape shape, std::vector<T> data,
                     bool requires_grad = false) {
    if (numel_of(shape) != data.size()) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
    return Tensor(std::move(shape), std::move(data), requires_grad);
  }
  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(p_); }
  const Shape& shape() const { return p_->shape; }
  std::size_t rank() const { return p_->shape.size(); }
  // Negative indices count from the back.
  std::size_t dim(int i) const {
    return p_->shape[i < 0 ? p_->shape.size() + i : static_cast<std::size_t>(i)];
  }
  std::size_t numel() const { return p_->data.size(); }

  std::span<T> data() { return p_->data; }
  std::span<const T> data() const { return p_->data; }
  std::vector<T>& storage() { return p_->data; }
  const std::vector<T>& storage() const { return p_->data; }
  T& operator[](std::size_t i) { return p_->data[i]; }
  const T& operator[](std::size_t i) const { return p_->data[i]; }
  T item() const { return p_->data.at(0); }

  bool requires_grad() const { return p_->requires_grad; }
  void set_requires_grad(bool on) { p_->requires_grad = on; }
  bool has_grad() const { return !p_->grad.empty(); }
  std::span<T> grad() { return p_->grad; }
  std::span<const T> grad() const { return p_->grad; }
  // Allocates a zero gradient if absent.
  // Handle semantics: gradient buffers are mutable through const handles.
  std::span<T> ensure_grad() const {
    if (p_->grad.size() != p_->data.size()) p_->grad.assign(p_->data.size(), T(0));
    return p_->grad;
  }
  void zero_grad() const {
    if (!p_->grad.empty()) std::fill(p_->grad.begin(), p_->grad.end(), T(0));
  }
  void drop_grad() const { p_->grad.clear(); }

  Tensor clone() const {
    Tensor t(p_->shape, p_->data, p_->requires_grad);
    t.p_->grad = p_->grad;
    return t;
  }
  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>::from(p_->shape,
                           std::vector<U>(p_->data.begin(), p_->data.end()));
  }

  bool same_storage(const Tensor& other) const { return p_ == other.p_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };

  Tensor(Shape shape, std::vector<T> data, bool requires_grad)
      : p_(std::make_shared<Storage>()) {
    p_->shape = std::move(shape);
    p_->data = std::move(data);
    p_->requires_grad = requires_grad;
  }

  std::shared_ptr<Storage> p_;
};

}  // namespace transkim
