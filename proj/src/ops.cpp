#include "nrdfer/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace nrdfer {

using detail::any_meta;
using detail::make_result;

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
ConstMatrixMap<T> as_matrix(const Buffer<T>& v, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return ConstMatrixMap<T>(v.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
MatrixMap<T> as_matrix(std::span<T> v, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return MatrixMap<T>(v.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
bool wants_grad(const TensorNode<T>& self, std::size_t input) {
  return input < self.inputs.size() && self.inputs[input] && self.inputs[input]->requires_grad;
}

void require_ndim(const char* op, const Shape& shape, std::size_t ndim) {
  if (shape.size() != ndim) {
    throw ShapeError(std::string(op) + ": expected a " + std::to_string(ndim) + "-d tensor, got " +
                     shape_to_string(shape));
  }
}

void require_axis(const char* op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_to_string(shape));
  }
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

enum class Binary { kAdd, kSub, kMul };

template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, Binary kind, const char* name) {
  Shape out_shape;
  if (a.shape() == b.shape()) {
    out_shape = a.shape();
  } else if (b.numel() == 1) {
    out_shape = a.shape();
  } else if (a.numel() == 1) {
    out_shape = b.shape();
  } else {
    throw ShapeError(std::string(name) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  if (any_meta({&a, &b})) return Tensor<T>::meta(out_shape);
  const std::size_t n = shape_numel(out_shape);
  const std::size_t sa = a.numel() == n ? 1 : 0;
  const std::size_t sb = b.numel() == n ? 1 : 0;
  const auto& da = a.node()->data;
  const auto& db = b.node()->data;
  Buffer<T> out(n);
  switch (kind) {
    case Binary::kAdd:
      for (std::size_t i = 0; i < n; ++i) out[i] = da[i * sa] + db[i * sb];
      break;
    case Binary::kSub:
      for (std::size_t i = 0; i < n; ++i) out[i] = da[i * sa] - db[i * sb];
      break;
    case Binary::kMul:
      for (std::size_t i = 0; i < n; ++i) out[i] = da[i * sa] * db[i * sb];
      break;
  }
  return make_result<T>(out_shape, std::move(out), name, {a, b}, [kind, n, sa, sb](TensorNode<T>& self) {
    const auto& g = self.grad;
    if (wants_grad(self, 0)) {
      auto ga = self.inputs[0]->grad_buffer();
      const auto& vb = self.inputs[1]->data;
      for (std::size_t i = 0; i < n; ++i) ga[i * sa] += kind == Binary::kMul ? g[i] * vb[i * sb] : g[i];
    }
    if (wants_grad(self, 1)) {
      auto gb = self.inputs[1]->grad_buffer();
      const auto& va = self.inputs[0]->data;
      for (std::size_t i = 0; i < n; ++i) {
        T d = g[i];
        if (kind == Binary::kSub) d = -d;
        if (kind == Binary::kMul) d *= va[i * sa];
        gb[i * sb] += d;
      }
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(a, b, Binary::kAdd, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(a, b, Binary::kSub, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(a, b, Binary::kMul, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  if (x.is_meta()) return Tensor<T>::meta(x.shape());
  Buffer<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return make_result<T>(x.shape(), std::move(out), "scale", {x}, [factor](TensorNode<T>& self) {
    auto gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * self.grad[i];
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_ndim("matmul", a.shape(), 2);
  require_ndim("matmul", b.shape(), 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_to_string(a.shape()) + " . " +
                     shape_to_string(b.shape()));
  }
  if (any_meta({&a, &b})) return Tensor<T>::meta({m, n});
  Buffer<T> out(m * n);
  as_matrix<T>(std::span<T>(out), m, n).noalias() = as_matrix(a.node()->data, m, k) * as_matrix(b.node()->data, k, n);
  return make_result<T>({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](TensorNode<T>& self) {
    auto g = as_matrix(self.grad, m, n);
    if (wants_grad(self, 0)) {
      as_matrix(self.inputs[0]->grad_buffer(), m, k).noalias() += g * as_matrix(self.inputs[1]->data, k, n).transpose();
    }
    if (wants_grad(self, 1)) {
      as_matrix(self.inputs[1]->grad_buffer(), k, n).noalias() += as_matrix(self.inputs[0]->data, m, k).transpose() * g;
    }
  });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  require_ndim("bmm", a.shape(), 3);
  require_ndim("bmm", b.shape(), 3);
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  if (b.dim(0) != batch || b.dim(1) != k) {
    throw ShapeError("bmm: incompatible shapes " + shape_to_string(a.shape()) + " . " + shape_to_string(b.shape()));
  }
  if (any_meta({&a, &b})) return Tensor<T>::meta({batch, m, n});
  Buffer<T> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    as_matrix<T>(std::span<T>(out), m, n, i * m * n).noalias() =
        as_matrix(a.node()->data, m, k, i * m * k) * as_matrix(b.node()->data, k, n, i * k * n);
  }
  return make_result<T>({batch, m, n}, std::move(out), "bmm", {a, b}, [batch, m, k, n](TensorNode<T>& self) {
    for (std::size_t i = 0; i < batch; ++i) {
      auto g = as_matrix(self.grad, m, n, i * m * n);
      if (wants_grad(self, 0)) {
        as_matrix(self.inputs[0]->grad_buffer(), m, k, i * m * k).noalias() +=
            g * as_matrix(self.inputs[1]->data, k, n, i * k * n).transpose();
      }
      if (wants_grad(self, 1)) {
        as_matrix(self.inputs[1]->grad_buffer(), k, n, i * k * n).noalias() +=
            as_matrix(self.inputs[0]->data, m, k, i * m * k).transpose() * g;
      }
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_ndim("linear", weight.shape(), 2);
  if (x.ndim() == 0 || x.shape().back() != weight.dim(1)) {
    throw ShapeError("linear: input " + shape_to_string(x.shape()) + " does not match weight " +
                     shape_to_string(weight.shape()));
  }
  const std::size_t in = weight.dim(1), out_dim = weight.dim(0);
  if (bias.defined() && bias.shape() != Shape{out_dim}) {
    throw ShapeError("linear: bias " + shape_to_string(bias.shape()) + " does not match " + std::to_string(out_dim) +
                     " outputs");
  }
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  if (any_meta({&x, &weight, &bias})) return Tensor<T>::meta(out_shape);
  const std::size_t rows = x.numel() / in;
  Buffer<T> out(rows * out_dim);
  auto y = as_matrix<T>(std::span<T>(out), rows, out_dim);
  y.noalias() = as_matrix(x.node()->data, rows, in) * as_matrix(weight.node()->data, out_dim, in).transpose();
  if (bias.defined()) {
    y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.node()->data.data(),
                                                                         static_cast<Eigen::Index>(out_dim));
  }
  std::vector<Tensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(out_shape, std::move(out), "linear", std::move(inputs),
                        [rows, in, out_dim](TensorNode<T>& self) {
                          auto g = as_matrix(self.grad, rows, out_dim);
                          if (wants_grad(self, 0)) {
                            as_matrix(self.inputs[0]->grad_buffer(), rows, in).noalias() +=
                                g * as_matrix(self.inputs[1]->data, out_dim, in);
                          }
                          if (wants_grad(self, 1)) {
                            as_matrix(self.inputs[1]->grad_buffer(), out_dim, in).noalias() +=
                                g.transpose() * as_matrix(self.inputs[0]->data, rows, in);
                          }
                          if (wants_grad(self, 2)) {
                            as_matrix(self.inputs[2]->grad_buffer(), 1, out_dim).noalias() += g.colwise().sum();
                          }
                        });
}

std::size_t conv_output_size(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (input + 2 * padding < kernel) {
    throw ShapeError("conv2d: kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(input + 2 * padding));
  }
  return (input + 2 * padding - kernel) / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Conv2dOptions options) {
  require_ndim("conv2d", x.shape(), 4);
  require_ndim("conv2d", weight.shape(), 4);
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != cin) {
    throw ShapeError("conv2d: input " + shape_to_string(x.shape()) + " has " + std::to_string(cin) +
                     " channels but weight " + shape_to_string(weight.shape()) + " expects " +
                     std::to_string(weight.dim(1)));
  }
  if (bias.defined() && bias.shape() != Shape{cout}) {
    throw ShapeError("conv2d: bias " + shape_to_string(bias.shape()) + " does not match " + std::to_string(cout) +
                     " output channels");
  }
  const std::size_t stride = options.stride, pad = options.padding;
  const std::size_t ho = conv_output_size(h, kh, stride, pad);
  const std::size_t wo = conv_output_size(w, kw, stride, pad);
  const Shape out_shape{batch, cout, ho, wo};
  if (any_meta({&x, &weight, &bias})) return Tensor<T>::meta(out_shape);

  const std::size_t taps = cin * kh * kw;
  const std::size_t plane = ho * wo;
  const std::size_t columns = batch * plane;
  auto cols = std::make_shared<Buffer<T>>(taps * columns, T(0));
  const auto& xd = x.node()->data;
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        T* row = cols->data() + ((c * kh + i) * kw + j) * columns;
        for (std::size_t b = 0; b < batch; ++b) {
          const T* src = xd.data() + (b * cin + c) * h * w;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + i) - static_cast<std::ptrdiff_t>(pad);
            T* dst = row + b * plane + oy * wo;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * stride + j) - static_cast<std::ptrdiff_t>(pad);
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ox] = src[iy * w + ix];
            }
          }
        }
      }
    }
  }
  RowMatrix<T> result = as_matrix(weight.node()->data, cout, taps) * as_matrix(*cols, taps, columns);
  Buffer<T> out(batch * cout * plane);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      const T offset = bias.defined() ? bias.node()->data[co] : T(0);
      const T* src = result.data() + co * columns + b * plane;
      T* dst = out.data() + (b * cout + co) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + offset;
    }
  }
  std::vector<Tensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  const bool keep_cols = grad_enabled() && (weight.requires_grad());
  if (!keep_cols) cols.reset();
  return make_result<T>(
      out_shape, std::move(out), "conv2d", std::move(inputs),
      [=](TensorNode<T>& self) {
        RowMatrix<T> g(cout, columns);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t co = 0; co < cout; ++co) {
            const T* src = self.grad.data() + (b * cout + co) * plane;
            std::copy(src, src + plane, g.data() + co * columns + b * plane);
          }
        }
        if (wants_grad(self, 2)) {
          auto gb = self.inputs[2]->grad_buffer();
          for (std::size_t co = 0; co < cout; ++co) gb[co] += g.row(static_cast<Eigen::Index>(co)).sum();
        }
        if (wants_grad(self, 1)) {
          as_matrix(self.inputs[1]->grad_buffer(), cout, taps).noalias() += g * as_matrix(*cols, taps, columns).transpose();
        }
        if (wants_grad(self, 0)) {
          RowMatrix<T> dcols = as_matrix(self.inputs[1]->data, cout, taps).transpose() * g;
          auto gx = self.inputs[0]->grad_buffer();
          for (std::size_t c = 0; c < cin; ++c) {
            for (std::size_t i = 0; i < kh; ++i) {
              for (std::size_t j = 0; j < kw; ++j) {
                const T* row = dcols.data() + ((c * kh + i) * kw + j) * columns;
                for (std::size_t b = 0; b < batch; ++b) {
                  T* dst = gx.data() + (b * cin + c) * h * w;
                  for (std::size_t oy = 0; oy < ho; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * stride + i) - static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    const T* src = row + b * plane + oy * wo;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                      const std::ptrdiff_t ix =
                          static_cast<std::ptrdiff_t>(ox * stride + j) - static_cast<std::ptrdiff_t>(pad);
                      if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[iy * w + ix] += src[ox];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                       Tensor<T>& running_var, bool training, T momentum, T eps) {
  require_ndim("batch_norm2d", x.shape(), 4);
  const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  for (const Tensor<T>* p : std::initializer_list<const Tensor<T>*>{&gamma, &beta, &running_mean, &running_var}) {
    if (p->shape() != Shape{channels}) {
      throw ShapeError("batch_norm2d: parameter " + shape_to_string(p->shape()) + " does not match " +
                       std::to_string(channels) + " channels");
    }
  }
  if (any_meta({&x, &gamma, &beta})) return Tensor<T>::meta(x.shape());
  const std::size_t count = batch * plane;
  const auto& xd = x.node()->data;
  const auto& gd = gamma.node()->data;
  const auto& bd = beta.node()->data;
  Buffer<T> mean(channels), inv_std(channels);
  if (training) {
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    for (std::size_t c = 0; c < channels; ++c) {
      T s = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* src = xd.data() + (b * channels + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) s += src[p];
      }
      const T mu = s / T(count);
      T ss = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* src = xd.data() + (b * channels + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) ss += (src[p] - mu) * (src[p] - mu);
      }
      const T var = ss / T(count);
      mean[c] = mu;
      inv_std[c] = T(1) / std::sqrt(var + eps);
      const T unbiased = count > 1 ? ss / T(count - 1) : var;
      rm[c] = (T(1) - momentum) * rm[c] + momentum * mu;
      rv[c] = (T(1) - momentum) * rv[c] + momentum * unbiased;
    }
  } else {
    const auto& rm = running_mean.node()->data;
    const auto& rv = running_var.node()->data;
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = rm[c];
      inv_std[c] = T(1) / std::sqrt(rv[c] + eps);
    }
  }
  auto normalized = std::make_shared<Buffer<T>>(xd.size());
  Buffer<T> out(xd.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (b * channels + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        const T xh = (xd[base + p] - mean[c]) * inv_std[c];
        (*normalized)[base + p] = xh;
        out[base + p] = gd[c] * xh + bd[c];
      }
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), "batch_norm2d", {x, gamma, beta},
      [=, inv_std = std::move(inv_std)](TensorNode<T>& self) {
        const auto& g = self.grad;
        const auto& xh = *normalized;
        const auto& gam = self.inputs[1]->data;
        Buffer<T> sum_g(channels, T(0)), sum_gx(channels, T(0));
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (b * channels + c) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
              sum_g[c] += g[base + p];
              sum_gx[c] += g[base + p] * xh[base + p];
            }
          }
        }
        if (wants_grad(self, 1)) {
          auto gg = self.inputs[1]->grad_buffer();
          for (std::size_t c = 0; c < channels; ++c) gg[c] += sum_gx[c];
        }
        if (wants_grad(self, 2)) {
          auto gb = self.inputs[2]->grad_buffer();
          for (std::size_t c = 0; c < channels; ++c) gb[c] += sum_g[c];
        }
        if (!wants_grad(self, 0)) return;
        auto gx = self.inputs[0]->grad_buffer();
        const T n = T(count);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (b * channels + c) * plane;
            const T k = gam[c] * inv_std[c];
            for (std::size_t p = 0; p < plane; ++p) {
              if (training) {
                gx[base + p] += k * (g[base + p] - sum_g[c] / n - xh[base + p] * sum_gx[c] / n);
              } else {
                gx[base + p] += k * g[base + p];
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.ndim() == 0) throw ShapeError("layer_norm: empty shape");
  const std::size_t width = x.shape().back();
  if (gamma.shape() != Shape{width} || beta.shape() != Shape{width}) {
    throw ShapeError("layer_norm: affine parameters do not match width " + std::to_string(width) + " of " +
                     shape_to_string(x.shape()));
  }
  if (any_meta({&x, &gamma, &beta})) return Tensor<T>::meta(x.shape());
  const std::size_t rows = x.numel() / width;
  const auto& xd = x.node()->data;
  const auto& gd = gamma.node()->data;
  const auto& bd = beta.node()->data;
  auto normalized = std::make_shared<Buffer<T>>(xd.size());
  auto inv_std = std::make_shared<Buffer<T>>(rows);
  Buffer<T> out(xd.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = xd.data() + r * width;
    T mu = 0;
    for (std::size_t i = 0; i < width; ++i) mu += src[i];
    mu /= T(width);
    T var = 0;
    for (std::size_t i = 0; i < width; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= T(width);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t i = 0; i < width; ++i) {
      const T xh = (src[i] - mu) * is;
      (*normalized)[r * width + i] = xh;
      out[r * width + i] = gd[i] * xh + bd[i];
    }
  }
  return make_result<T>(x.shape(), std::move(out), "layer_norm", {x, gamma, beta}, [=](TensorNode<T>& self) {
    const auto& g = self.grad;
    const auto& xh = *normalized;
    const auto& gam = self.inputs[1]->data;
    if (wants_grad(self, 1) || wants_grad(self, 2)) {
      std::span<T> gg = wants_grad(self, 1) ? self.inputs[1]->grad_buffer() : std::span<T>();
      std::span<T> gb = wants_grad(self, 2) ? self.inputs[2]->grad_buffer() : std::span<T>();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < width; ++i) {
          if (!gg.empty()) gg[i] += g[r * width + i] * xh[r * width + i];
          if (!gb.empty()) gb[i] += g[r * width + i];
        }
      }
    }
    if (!wants_grad(self, 0)) return;
    auto gx = self.inputs[0]->grad_buffer();
    const T n = T(width);
    for (std::size_t r = 0; r < rows; ++r) {
      T sum_d = 0, sum_dx = 0;
      for (std::size_t i = 0; i < width; ++i) {
        const T d = g[r * width + i] * gam[i];
        sum_d += d;
        sum_dx += d * xh[r * width + i];
      }
      const T is = (*inv_std)[r];
      for (std::size_t i = 0; i < width; ++i) {
        const T d = g[r * width + i] * gam[i];
        gx[r * width + i] += is * (d - sum_d / n - xh[r * width + i] * sum_dx / n);
      }
    }
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  if (x.is_meta()) return Tensor<T>::meta(x.shape());
  Buffer<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  return make_result<T>(x.shape(), std::move(out), "relu", {x}, [](TensorNode<T>& self) {
    auto gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (self.data[i] > T(0)) gx[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  if (x.is_meta()) return Tensor<T>::meta(x.shape());
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  Buffer<T> out(x.numel());
  const auto& xd = x.node()->data;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(0.5) * xd[i] * (T(1) + std::erf(xd[i] * inv_sqrt2));
  return make_result<T>(x.shape(), std::move(out), "gelu", {x}, [inv_sqrt2](TensorNode<T>& self) {
    const T inv_sqrt_2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<T>;
    const auto& xd = self.inputs[0]->data;
    auto gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const T v = xd[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      gx[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  require_axis("softmax", x.shape(), axis);
  if (x.is_meta()) return Tensor<T>::meta(x.shape());
  const AxisSplit s = split_at(x.shape(), axis);
  const auto& xd = x.node()->data;
  Buffer<T> out(xd.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      T peak = xd[base];
      for (std::size_t k = 1; k < s.extent; ++k) peak = std::max(peak, xd[base + k * s.inner]);
      T total = 0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const T e = std::exp(xd[base + k * s.inner] - peak);
        out[base + k * s.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] /= total;
    }
  }
  return make_result<T>(x.shape(), std::move(out), "softmax", {x}, [s](TensorNode<T>& self) {
    const auto& y = self.data;
    const auto& g = self.grad;
    auto gx = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        T dot = 0;
        for (std::size_t k = 0; k < s.extent; ++k) dot += g[base + k * s.inner] * y[base + k * s.inner];
        for (std::size_t k = 0; k < s.extent; ++k) {
          const std::size_t idx = base + k * s.inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 1 && logits.ndim() != 2) {
    throw ShapeError("cross_entropy: logits must be [K] or [B x K], got " + shape_to_string(logits.shape()));
  }
  const std::size_t batch = logits.ndim() == 2 ? logits.dim(0) : 1;
  const std::size_t classes = logits.shape().back();
  if (labels.size() != batch) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(batch));
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
  }
  if (logits.is_meta()) return Tensor<T>::meta({1});
  const auto& z = logits.node()->data;
  auto probs = std::make_shared<Buffer<T>>(z.size());
  T loss = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = z.data() + b * classes;
    const T peak = *std::max_element(row, row + classes);
    T total = 0;
    for (std::size_t k = 0; k < classes; ++k) total += std::exp(row[k] - peak);
    const T log_total = std::log(total) + peak;
    for (std::size_t k = 0; k < classes; ++k) (*probs)[b * classes + k] = std::exp(row[k] - log_total);
    loss += log_total - row[labels[b]];
  }
  loss /= T(batch);
  return make_result<T>({1}, {loss}, "cross_entropy", {logits}, [=](TensorNode<T>& self) {
    const T g = self.grad[0] / T(batch);
    auto gz = self.inputs[0]->grad_buffer();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t k = 0; k < classes; ++k) {
        const T target = static_cast<int>(k) == labels[b] ? T(1) : T(0);
        gz[b * classes + k] += g * ((*probs)[b * classes + k] - target);
      }
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  if (x.is_meta()) return Tensor<T>::meta({1});
  T total = 0;
  for (T v : x.data()) total += v;
  return make_result<T>({1}, {total}, "sum", {x}, [](TensorNode<T>& self) {
    auto gx = self.inputs[0]->grad_buffer();
    for (auto& v : gx) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / T(x.numel()));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis) {
  require_axis("mean", x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  if (x.is_meta()) return Tensor<T>::meta(out_shape);
  const AxisSplit s = split_at(x.shape(), axis);
  const auto& xd = x.node()->data;
  Buffer<T> out(s.outer * s.inner, T(0));
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.extent; ++k) {
      const T* src = xd.data() + (o * s.extent + k) * s.inner;
      T* dst = out.data() + o * s.inner;
      for (std::size_t in = 0; in < s.inner; ++in) dst[in] += src[in];
    }
  }
  for (auto& v : out) v /= T(s.extent);
  return make_result<T>(out_shape, std::move(out), "mean_axis", {x}, [s](TensorNode<T>& self) {
    auto gx = self.inputs[0]->grad_buffer();
    const T w = T(1) / T(s.extent);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t k = 0; k < s.extent; ++k) {
        T* dst = gx.data() + (o * s.extent + k) * s.inner;
        const T* src = self.grad.data() + o * s.inner;
        for (std::size_t in = 0; in < s.inner; ++in) dst[in] += w * src[in];
      }
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(x.shape()) + " as " + shape_to_string(shape));
  }
  for (auto d : shape) {
    if (d == 0) throw ShapeError("reshape: zero-sized dimension in " + shape_to_string(shape));
  }
  if (x.is_meta()) return Tensor<T>::meta(shape);
  Buffer<T> out(x.data().begin(), x.data().end());
  return make_result<T>(shape, std::move(out), "reshape", {x}, [](TensorNode<T>& self) {
    auto gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& x, std::size_t start_axis) {
  require_axis("flatten", x.shape(), start_axis);
  Shape shape(x.shape().begin(), x.shape().begin() + static_cast<std::ptrdiff_t>(start_axis));
  std::size_t tail = 1;
  for (std::size_t i = start_axis; i < x.ndim(); ++i) tail *= x.dim(i);
  shape.push_back(tail);
  return reshape(x, shape);
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  const std::size_t nd = x.ndim();
  if (order.size() != nd) throw ShapeError("permute: order length does not match " + shape_to_string(x.shape()));
  std::vector<bool> seen(nd, false);
  for (auto a : order) {
    if (a >= nd || seen[a]) throw ShapeError("permute: invalid axis order for " + shape_to_string(x.shape()));
    seen[a] = true;
  }
  Shape out_shape(nd);
  for (std::size_t i = 0; i < nd; ++i) out_shape[i] = x.dim(order[i]);
  if (x.is_meta()) return Tensor<T>::meta(out_shape);
  std::vector<std::size_t> in_stride(nd, 1);
  for (std::size_t i = nd; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.dim(i);
  const std::size_t n = x.numel();
  auto source = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> counter(nd, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (*source)[i] = offset;
    for (std::size_t a = nd; a-- > 0;) {
      ++counter[a];
      offset += in_stride[order[a]];
      if (counter[a] < out_shape[a]) break;
      offset -= counter[a] * in_stride[order[a]];
      counter[a] = 0;
    }
  }
  const auto& xd = x.node()->data;
  Buffer<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xd[(*source)[i]];
  return make_result<T>(out_shape, std::move(out), "permute", {x}, [source](TensorNode<T>& self) {
    auto gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < source->size(); ++i) gx[(*source)[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, std::size_t axis0, std::size_t axis1) {
  require_axis("transpose", x.shape(), axis0);
  require_axis("transpose", x.shape(), axis1);
  std::vector<std::size_t> order(x.ndim());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::swap(order[axis0], order[axis1]);
  return permute(x, order);
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  require_axis("narrow", x.shape(), axis);
  if (length == 0 || start + length > x.dim(axis)) {
    throw ShapeError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") outside axis " + std::to_string(axis) + " of " + shape_to_string(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  if (x.is_meta()) return Tensor<T>::meta(out_shape);
  const AxisSplit s = split_at(x.shape(), axis);
  const std::size_t block = length * s.inner;
  const auto& xd = x.node()->data;
  Buffer<T> out(s.outer * block);
  for (std::size_t o = 0; o < s.outer; ++o) {
    const T* src = xd.data() + (o * s.extent + start) * s.inner;
    std::copy(src, src + block, out.data() + o * block);
  }
  return make_result<T>(out_shape, std::move(out), "narrow", {x}, [s, start, block](TensorNode<T>& self) {
    auto gx = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      T* dst = gx.data() + (o * s.extent + start) * s.inner;
      const T* src = self.grad.data() + o * block;
      for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  require_axis("concat", parts[0].shape(), axis);
  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  bool meta = false;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = parts[0].shape();
    if (a.size() != b.size()) throw ShapeError("concat: rank mismatch");
    a[axis] = b[axis] = 0;
    if (a != b) {
      throw ShapeError("concat: " + shape_to_string(p.shape()) + " incompatible with " +
                       shape_to_string(parts[0].shape()) + " along axis " + std::to_string(axis));
    }
    out_shape[axis] += p.dim(axis);
    meta = meta || p.is_meta();
  }
  if (meta) return Tensor<T>::meta(out_shape);
  const AxisSplit s = split_at(out_shape, axis);
  std::vector<std::size_t> widths, offsets;
  std::size_t running = 0;
  for (const auto& p : parts) {
    widths.push_back(p.dim(axis) * s.inner);
    offsets.push_back(running);
    running += widths.back();
  }
  const std::size_t row = s.extent * s.inner;
  Buffer<T> out(s.outer * row);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pd = parts[k].node()->data;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy(pd.data() + o * widths[k], pd.data() + (o + 1) * widths[k], out.data() + o * row + offsets[k]);
    }
  }
  return make_result<T>(out_shape, std::move(out), "concat", parts, [=](TensorNode<T>& self) {
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (!wants_grad(self, k)) continue;
      auto gp = self.inputs[k]->grad_buffer();
      for (std::size_t o = 0; o < s.outer; ++o) {
        const T* src = self.grad.data() + o * row + offsets[k];
        T* dst = gp.data() + o * widths[k];
        for (std::size_t i = 0; i < widths[k]; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Tensor<T> repeat_leading(const Tensor<T>& x, std::size_t count) {
  if (count == 0) throw ShapeError("repeat_leading: count must be positive");
  Shape out_shape{count};
  out_shape.insert(out_shape.end(), x.shape().begin(), x.shape().end());
  if (x.is_meta()) return Tensor<T>::meta(out_shape);
  const std::size_t n = x.numel();
  Buffer<T> out(count * n);
  for (std::size_t c = 0; c < count; ++c) std::copy(x.data().begin(), x.data().end(), out.begin() + c * n);
  return make_result<T>(out_shape, std::move(out), "repeat_leading", {x}, [count, n](TensorNode<T>& self) {
    auto gx = self.inputs[0]->grad_buffer();
    for (std::size_t c = 0; c < count; ++c) {
      for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[c * n + i];
    }
  });
}

#define NRDFER_INSTANTIATE_OPS(T)                                                                           \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> scale(const Tensor<T>&, T);                                                            \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Conv2dOptions);           \
  template Tensor<T> batch_norm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&,         \
                                  Tensor<T>&, bool, T, T);                                                  \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                   \
  template Tensor<T> relu(const Tensor<T>&);                                                                \
  template Tensor<T> gelu(const Tensor<T>&);                                                                \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                                \
  template Tensor<T> cross_entropy(const Tensor<T>&, const std::vector<int>&);                              \
  template Tensor<T> sum(const Tensor<T>&);                                                                 \
  template Tensor<T> mean(const Tensor<T>&);                                                                \
  template Tensor<T> mean(const Tensor<T>&, std::size_t);                                                   \
  template Tensor<T> reshape(const Tensor<T>&, const Shape&);                                               \
  template Tensor<T> flatten(const Tensor<T>&, std::size_t);                                                \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                            \
  template Tensor<T> transpose(const Tensor<T>&, std::size_t, std::size_t);                                 \
  template Tensor<T> narrow(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                       \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                                    \
  template Tensor<T> repeat_leading(const Tensor<T>&, std::size_t);

NRDFER_INSTANTIATE_OPS(float)
NRDFER_INSTANTIATE_OPS(double)

}  // namespace nrdfer
