#include "nrdfer/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace nrdfer {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
thread_local bool g_meta_init = false;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool meta_init_enabled() { return g_meta_init; }
MetaInitGuard::MetaInitGuard() : previous_(g_meta_init) { g_meta_init = true; }
MetaInitGuard::~MetaInitGuard() { g_meta_init = previous_; }

template <typename T>
std::span<T> TensorNode<T>::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), T(0));
  return grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, Buffer<T> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("shape " + shape_to_string(shape) + " holds " + std::to_string(shape_numel(shape)) +
                     " values but data has " + std::to_string(data.size()));
  }
  node_ = std::make_shared<TensorNode<T>>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value, bool requires_grad) {
  return Tensor(shape, Buffer<T>(shape_numel(shape), value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor({1}, Buffer<T>{value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::meta(const Shape& shape) {
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = shape;
  node->meta = true;
  node->op = "meta";
  return Tensor(std::move(node));
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= ndim()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_to_string(shape()));
  }
  return node_->shape[axis];
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (node_->data.size() != 1) {
    throw ShapeError("item() needs a single-element tensor, got " + shape_to_string(shape()));
  }
  return node_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  if (is_meta()) return meta(shape());
  return Tensor(shape(), node_->data, false);
}

template <typename T>
ComputationTape<T> build_tape(const Tensor<T>& root) {
  ComputationTape<T> tape;
  std::unordered_set<TensorNode<T>*> visited;
  // Iterative post-order DFS; graphs are deep enough to make recursion risky.
  std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      TensorNode<T>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      tape.nodes.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward() needs a single-element loss, got " +
                     (loss.defined() ? shape_to_string(loss.shape()) : std::string("undefined")));
  }
  if (loss.is_meta()) throw ShapeError("backward() through a meta tensor");
  if (!loss.requires_grad()) return;
  auto tape = build_tape(loss);
  loss.node()->grad_buffer()[0] += T(1);
  for (auto it = tape.nodes.rbegin(); it != tape.nodes.rend(); ++it) {
    TensorNode<T>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

namespace detail {

template <typename T>
Tensor<T> make_result(Shape shape, Buffer<T> data, const char* op, std::vector<Tensor<T>> inputs,
                      BackwardFn<T> fn) {
  for (const T& v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs_grad = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node_ptr());
    node->backward_fn = std::move(fn);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
bool any_meta(std::initializer_list<const Tensor<T>*> tensors) {
  for (const auto* t : tensors) {
    if (t && t->defined() && t->is_meta()) return true;
  }
  return false;
}

template Tensor<float> make_result(Shape, Buffer<float>, const char*, std::vector<Tensor<float>>,
                                   BackwardFn<float>);
template Tensor<double> make_result(Shape, Buffer<double>, const char*, std::vector<Tensor<double>>,
                                    BackwardFn<double>);
template bool any_meta(std::initializer_list<const Tensor<float>*>);
template bool any_meta(std::initializer_list<const Tensor<double>*>);

}  // namespace detail

template struct TensorNode<float>;
template struct TensorNode<double>;
template class Tensor<float>;
template class Tensor<double>;
template ComputationTape<float> build_tape(const Tensor<float>&);
template ComputationTape<double> build_tape(const Tensor<double>&);
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace nrdfer
