#pragma once

#include <cstddef>
#include <vector>

#include "nrdfer/tensor.hpp"

// Differentiable tensor operations. Shapes must match exactly; the only
// implicit expansion is a single-element operand in the elementwise ops.
namespace nrdfer {

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);

/// [m x k] . [k x n]
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// Batched [B x m x k] . [B x k x n]
template <typename T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);
/// x[..., in] . weight[out x in]^T + bias[out]; bias may be undefined.
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Output extent of a convolution along one axis (floor convention).
std::size_t conv_output_size(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t padding);

/// Cross-correlation of x[B x Cin x H x W] with weight[Cout x Cin x kh x kw].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Conv2dOptions options);

/// Per-channel normalization of x[B x C x H x W]. In training mode batch
/// statistics are used and the running buffers are updated in place.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       Tensor<T>& running_mean, Tensor<T>& running_var, bool training, T momentum = T(0.1),
                       T eps = T(1e-5));

/// Normalization over the last axis.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));

template <typename T> Tensor<T> relu(const Tensor<T>& x);
/// Exact (erf) GELU.
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

/// Mean cross-entropy of logits[B x K] (or a single [K] row) against labels.
template <typename T> Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
/// Mean along one axis; the axis is removed from the result shape.
template <typename T> Tensor<T> mean(const Tensor<T>& x, std::size_t axis);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, const Shape& shape);
/// Collapses all axes from `start_axis` on into one.
template <typename T> Tensor<T> flatten(const Tensor<T>& x, std::size_t start_axis = 0);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order);
template <typename T> Tensor<T> transpose(const Tensor<T>& x, std::size_t axis0, std::size_t axis1);
/// Contiguous sub-range [start, start + length) along an axis.
template <typename T> Tensor<T> narrow(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
/// Stacks `count` copies of x along a new leading axis.
template <typename T> Tensor<T> repeat_leading(const Tensor<T>& x, std::size_t count);

}  // namespace nrdfer
