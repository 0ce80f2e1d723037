#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "nrdfer/ops.hpp"
#include "nrdfer/tensor.hpp"

namespace nrdfer {

/// Seeded source for parameter initialization. Kaiming-uniform weights,
/// zero biases, N(0, 0.02) position embeddings.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  template <typename T>
  Tensor<T> kaiming_uniform(const Shape& shape, std::size_t fan_in);
  template <typename T>
  Tensor<T> normal(const Shape& shape, double stddev);
  template <typename T>
  Tensor<T> constant(const Shape& shape, double value, bool requires_grad = true);

 private:
  std::mt19937_64 rng_;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// Flat view of a model's state: trainable parameters and non-trainable
/// buffers (normalization statistics), each under a dotted path.
template <typename T>
struct ParameterSet {
  std::vector<NamedTensor<T>> parameters;
  std::vector<NamedTensor<T>> buffers;

  std::size_t parameter_count() const;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features, Initializer& init);

  Tensor<T> forward(const Tensor<T>& x) const { return linear(x, weight, bias); }
  void collect(const std::string& prefix, ParameterSet<T>& set) const;

  Tensor<T> weight;  // [out x in]
  Tensor<T> bias;    // [out]
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(std::size_t width, Initializer& init);

  Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, ParameterSet<T>& set) const;

  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
         std::size_t padding, Initializer& init);

  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight, bias, options); }
  void collect(const std::string& prefix, ParameterSet<T>& set) const;

  Tensor<T> weight;
  Tensor<T> bias;
  Conv2dOptions options;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(std::size_t channels, Initializer& init);

  Tensor<T> forward(const Tensor<T>& x, bool training);
  void collect(const std::string& prefix, ParameterSet<T>& set) const;

  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

/// conv3x3 -> batch norm -> ReLU.
template <typename T>
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride, Initializer& init);

  Tensor<T> forward(const Tensor<T>& x, bool training);
  void collect(const std::string& prefix, ParameterSet<T>& set) const;

  Conv2d<T> conv;
  BatchNorm2d<T> norm;
};

/// Attention probabilities of one layer for one sequence: heads x tokens x tokens,
/// rows indexed by the querying token.
struct AttentionMap {
  std::size_t heads = 0;
  std::size_t tokens = 0;
  std::vector<double> weights;

  double at(std::size_t head, std::size_t query, std::size_t key) const {
    return weights[(head * tokens + query) * tokens + key];
  }

  /// Slice batch element `index` out of a [B x heads x n x n] probability tensor.
  template <typename T>
  static AttentionMap from_tensor(const Tensor<T>& probs, std::size_t index);
};

template <typename T>
struct AttentionOutput {
  Tensor<T> output;     // same shape as the input tokens
  Tensor<T> attention;  // [B x heads x n x n]
};

/// Scaled dot-product multi-head self-attention over [B x n x d] (or [n x d]) tokens.
template <typename T>
class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(std::size_t model_dim, std::size_t heads, Initializer& init);

  AttentionOutput<T> forward(const Tensor<T>& tokens) const;
  void collect(const std::string& prefix, ParameterSet<T>& set) const;

  std::size_t model_dim() const { return model_dim_; }
  std::size_t heads() const { return heads_; }

  Linear<T> query;
  Linear<T> key;
  Linear<T> value;
  Linear<T> output;

 private:
  std::size_t model_dim_ = 0;
  std::size_t heads_ = 1;
};

/// Pre-norm encoder: x + MHSA(LN(x)), then + FFN(LN(.)) with a GELU hidden
/// layer of ffn_ratio * model_dim units.
template <typename T>
class TransformerEncoderLayer {
 public:
  TransformerEncoderLayer() = default;
  TransformerEncoderLayer(std::size_t model_dim, std::size_t heads, std::size_t ffn_ratio, Initializer& init);

  AttentionOutput<T> forward(const Tensor<T>& tokens) const;
  void collect(const std::string& prefix, ParameterSet<T>& set) const;

  std::size_t model_dim() const { return attention.model_dim(); }

  LayerNorm<T> norm1;
  MultiHeadSelfAttention<T> attention;
  LayerNorm<T> norm2;
  Linear<T> ffn_in;
  Linear<T> ffn_out;
};

}  // namespace nrdfer
