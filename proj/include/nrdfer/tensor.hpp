#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nrdfer {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Raised for any shape/dimension contract violation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an operation produces NaN/Inf from finite inputs.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 64-byte aligned storage. Vectorized kernels peel a different number of
/// leading elements depending on alignment, so a fixed alignment keeps
/// floating-point results identical from run to run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <typename T>
struct TensorNode;

template <typename T>
using BackwardFn = std::function<void(TensorNode<T>&)>;

/// Storage and graph bookkeeping behind a Tensor handle.
///
/// A node is immutable once an operation has produced it; only leaves
/// (parameters, buffers) are ever written in place, and only outside of a
/// recorded computation.
template <typename T>
struct TensorNode {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
  // Shape-only tensor: no storage, no gradient. Used to propagate shapes
  // through configurations too large to materialize.
  bool meta = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> inputs;
  BackwardFn<T> backward_fn;

  /// Gradient buffer, zero-initialized on first access.
  std::span<T> grad_buffer();
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Buffer<T> data, bool requires_grad = false);
  Tensor(Shape shape, const std::vector<T>& data, bool requires_grad = false)
      : Tensor(std::move(shape), Buffer<T>(data.begin(), data.end()), requires_grad) {}
  explicit Tensor(std::shared_ptr<TensorNode<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);
  static Tensor meta(const Shape& shape);

  bool defined() const { return node_ != nullptr; }
  bool is_meta() const { return node_->meta; }
  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return shape_numel(node_->shape); }

  std::span<const T> data() const { return node_->data; }
  /// Direct write access for leaves (parameter updates, buffer statistics).
  std::span<T> mutable_data();
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  const std::string& op() const { return node_->op; }
  TensorNode<T>* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode<T>>& node_ptr() const { return node_; }

  /// Copy of the values with no graph attached.
  Tensor detach() const;

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

/// Thread-local switch disabling graph recording (evaluation, optimizer steps).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Thread-local switch making parameter initializers return meta tensors.
class MetaInitGuard {
 public:
  MetaInitGuard();
  ~MetaInitGuard();
  MetaInitGuard(const MetaInitGuard&) = delete;
  MetaInitGuard& operator=(const MetaInitGuard&) = delete;

 private:
  bool previous_;
};

bool meta_init_enabled();

/// Nodes reachable from a root, ordered so every node follows its inputs.
template <typename T>
struct ComputationTape {
  std::vector<TensorNode<T>*> nodes;
};

template <typename T>
ComputationTape<T> build_tape(const Tensor<T>& root);

/// Reverse-mode sweep from a single-element loss. Gradients accumulate
/// into every reachable tensor that requires grad.
template <typename T>
void backward(const Tensor<T>& loss);

namespace detail {

/// Wraps freshly computed values into a result tensor, attaching the
/// backward function only when gradient recording applies.
template <typename T>
Tensor<T> make_result(Shape shape, Buffer<T> data, const char* op,
                      std::vector<Tensor<T>> inputs, BackwardFn<T> fn);

template <typename T>
bool any_meta(std::initializer_list<const Tensor<T>*> tensors);

}  // namespace detail

}  // namespace nrdfer
