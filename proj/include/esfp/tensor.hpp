#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace esfp::ad {

inline long shape_numel(const std::vector<int>& shape) {
  long n = 1;
  for (int e : shape) n *= e;
  return n;
}

inline std::string shape_string(const std::vector<int>& shape) {
  std::string s = "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

/// Dense N-dimensional array with an optional same-shape gradient buffer.
/// Copies are shallow; ops allocate fresh outputs.
template <typename T>
class Tensor {
 public:
  Tensor() : d_(std::make_shared<Data>()) {}

  explicit Tensor(std::vector<int> shape, T fill = T(0)) : d_(std::make_shared<Data>()) {
    for (int e : shape) {
      if (e <= 0) throw std::invalid_argument("tensor extent must be positive, got " + shape_string(shape));
    }
    d_->shape = std::move(shape);
    d_->values.assign(shape_numel(d_->shape), fill);
  }

  static Tensor from_values(std::vector<int> shape, std::vector<T> values) {
    Tensor t(shape);
    if (static_cast<long>(values.size()) != t.numel())
      throw std::invalid_argument("value count does not match shape " + shape_string(shape));
    t.d_->values = std::move(values);
    return t;
  }

  static Tensor scalar(T value) { return from_values({1}, {value}); }

  const std::vector<int>& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  int dim(int i) const { return d_->shape.at(static_cast<size_t>(i)); }
  long numel() const { return static_cast<long>(d_->values.size()); }
  bool defined() const { return !d_->shape.empty(); }

  std::span<T> values() { return d_->values; }
  std::span<const T> values() const { return d_->values; }
  T* data() { return d_->values.data(); }
  const T* data() const { return d_->values.data(); }

  bool requires_grad() const { return d_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    d_->requires_grad = on;
    if (on)
      d_->grad.assign(d_->values.size(), T(0));
    else
      d_->grad.clear();
    return *this;
  }

  std::span<T> grad() {
    require_grad_buffer();
    return d_->grad;
  }
  std::span<const T> grad() const {
    require_grad_buffer();
    return d_->grad;
  }
  void zero_grad() {
    if (d_->requires_grad) d_->grad.assign(d_->values.size(), T(0));
  }

  /// Row-major scalar access, rank checked. Intended for setup and tests.
  T& at(std::initializer_list<int> idx) { return d_->values[flat_index(idx)]; }
  T at(std::initializer_list<int> idx) const { return d_->values[flat_index(idx)]; }

  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

  Tensor clone() const {
    Tensor t;
    t.d_->shape = d_->shape;
    t.d_->values = d_->values;
    if (d_->requires_grad) {
      t.d_->requires_grad = true;
      t.d_->grad = d_->grad;
    }
    return t;
  }

 private:
  struct Data {
    std::vector<int> shape;
    std::vector<T> values;
    std::vector<T> grad;
    bool requires_grad = false;
  };

  long flat_index(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != rank()) throw std::invalid_argument("index rank mismatch");
    long flat = 0;
    int i = 0;
    for (int v : idx) {
      if (v < 0 || v >= d_->shape[static_cast<size_t>(i)]) throw std::out_of_range("tensor index out of range");
      flat = flat * d_->shape[static_cast<size_t>(i)] + v;
      ++i;
    }
    return flat;
  }

  void require_grad_buffer() const {
    if (!d_->requires_grad) throw std::logic_error("tensor does not track gradients");
  }

  std::shared_ptr<Data> d_;
};

/// Reverse-mode tape: records one backward closure per executed op, replays
/// them last-to-first. Gradients accumulate additively, so fan-out and
/// unrolled timestep graphs sum naturally.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    ops_.push_back(std::move(backward_fn));
    consumed_ = false;
  }

  /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. The tape is
  /// cleared afterwards; a second backward without new forward ops throws.
  void backward(Tensor<T> loss) {
    if (loss.numel() != 1) throw std::invalid_argument("backward requires a scalar loss");
    if (ops_.empty()) {
      throw std::logic_error(consumed_ ? "stale tape: backward already consumed this graph"
                                       : "backward on an empty tape");
    }
    if (!loss.requires_grad()) throw std::logic_error("loss does not depend on any tracked tensor");
    loss.grad()[0] = T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    ops_.clear();
    consumed_ = true;
  }

  void clear() {
    ops_.clear();
    consumed_ = false;
  }

  size_t size() const { return ops_.size(); }

 private:
  std::vector<std::function<void()>> ops_;
  bool consumed_ = false;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace esfp::ad
