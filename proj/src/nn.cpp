#include "nrdfer/nn.hpp"

#include <cmath>

namespace nrdfer {

template <typename T>
Tensor<T> Initializer::kaiming_uniform(const Shape& shape, std::size_t fan_in) {
  if (meta_init_enabled()) return Tensor<T>::meta(shape);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Buffer<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng_));
  return Tensor<T>(shape, std::move(values), true);
}

template <typename T>
Tensor<T> Initializer::normal(const Shape& shape, double stddev) {
  if (meta_init_enabled()) return Tensor<T>::meta(shape);
  std::normal_distribution<double> dist(0.0, stddev);
  Buffer<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng_));
  return Tensor<T>(shape, std::move(values), true);
}

template <typename T>
Tensor<T> Initializer::constant(const Shape& shape, double value, bool requires_grad) {
  if (meta_init_enabled()) return Tensor<T>::meta(shape);
  return Tensor<T>::full(shape, static_cast<T>(value), requires_grad);
}

template <typename T>
std::size_t ParameterSet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters) n += p.tensor.numel();
  return n;
}

template <typename T>
Linear<T>::Linear(std::size_t in_features, std::size_t out_features, Initializer& init)
    : weight(init.kaiming_uniform<T>({out_features, in_features}, in_features)),
      bias(init.constant<T>({out_features}, 0.0)) {}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParameterSet<T>& set) const {
  set.parameters.push_back({prefix + ".weight", weight});
  set.parameters.push_back({prefix + ".bias", bias});
}

template <typename T>
LayerNorm<T>::LayerNorm(std::size_t width, Initializer& init)
    : gamma(init.constant<T>({width}, 1.0)), beta(init.constant<T>({width}, 0.0)) {}

template <typename T>
void LayerNorm<T>::collect(const std::string& prefix, ParameterSet<T>& set) const {
  set.parameters.push_back({prefix + ".gamma", gamma});
  set.parameters.push_back({prefix + ".beta", beta});
}

template <typename T>
Conv2d<T>::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
                  std::size_t padding, Initializer& init)
    : weight(init.kaiming_uniform<T>({out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel)),
      bias(init.constant<T>({out_channels}, 0.0)),
      options{stride, padding} {}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, ParameterSet<T>& set) const {
  set.parameters.push_back({prefix + ".weight", weight});
  set.parameters.push_back({prefix + ".bias", bias});
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::size_t channels, Initializer& init)
    : gamma(init.constant<T>({channels}, 1.0)),
      beta(init.constant<T>({channels}, 0.0)),
      running_mean(init.constant<T>({channels}, 0.0, false)),
      running_var(init.constant<T>({channels}, 1.0, false)) {}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, bool training) {
  return batch_norm2d(x, gamma, beta, running_mean, running_var, training);
}

template <typename T>
void BatchNorm2d<T>::collect(const std::string& prefix, ParameterSet<T>& set) const {
  set.parameters.push_back({prefix + ".gamma", gamma});
  set.parameters.push_back({prefix + ".beta", beta});
  set.buffers.push_back({prefix + ".running_mean", running_mean});
  set.buffers.push_back({prefix + ".running_var", running_var});
}

template <typename T>
ConvBlock<T>::ConvBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride, Initializer& init)
    : conv(in_channels, out_channels, 3, stride, 1, init), norm(out_channels, init) {}

template <typename T>
Tensor<T> ConvBlock<T>::forward(const Tensor<T>& x, bool training) {
  return relu(norm.forward(conv.forward(x), training));
}

template <typename T>
void ConvBlock<T>::collect(const std::string& prefix, ParameterSet<T>& set) const {
  conv.collect(prefix + ".conv", set);
  norm.collect(prefix + ".norm", set);
}

template <typename T>
AttentionMap AttentionMap::from_tensor(const Tensor<T>& probs, std::size_t index) {
  if (probs.ndim() != 4 || probs.dim(2) != probs.dim(3)) {
    throw ShapeError("attention probabilities must be [B x heads x n x n], got " + shape_to_string(probs.shape()));
  }
  if (index >= probs.dim(0)) throw std::out_of_range("attention batch index out of range");
  AttentionMap map;
  map.heads = probs.dim(1);
  map.tokens = probs.dim(2);
  const std::size_t block = map.heads * map.tokens * map.tokens;
  auto values = probs.data().subspan(index * block, block);
  map.weights.assign(values.begin(), values.end());
  return map;
}

template AttentionMap AttentionMap::from_tensor(const Tensor<float>&, std::size_t);
template AttentionMap AttentionMap::from_tensor(const Tensor<double>&, std::size_t);

template <typename T>
MultiHeadSelfAttention<T>::MultiHeadSelfAttention(std::size_t model_dim, std::size_t heads, Initializer& init)
    : model_dim_(model_dim), heads_(heads) {
  if (heads == 0 || model_dim % heads != 0) {
    throw ShapeError("attention: model dim " + std::to_string(model_dim) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  query = Linear<T>(model_dim, model_dim, init);
  key = Linear<T>(model_dim, model_dim, init);
  value = Linear<T>(model_dim, model_dim, init);
  output = Linear<T>(model_dim, model_dim, init);
}

template <typename T>
AttentionOutput<T> MultiHeadSelfAttention<T>::forward(const Tensor<T>& tokens) const {
  const bool unbatched = tokens.ndim() == 2;
  if ((tokens.ndim() != 2 && tokens.ndim() != 3) || tokens.shape().back() != model_dim_) {
    throw ShapeError("attention: expected [B x n x " + std::to_string(model_dim_) + "] tokens, got " +
                     shape_to_string(tokens.shape()));
  }
  const Tensor<T> x = unbatched ? reshape(tokens, {1, tokens.dim(0), tokens.dim(1)}) : tokens;
  const std::size_t batch = x.dim(0), n = x.dim(1), head_dim = model_dim_ / heads_;

  auto split_heads = [&](const Tensor<T>& t) {
    return reshape(permute(reshape(t, {batch, n, heads_, head_dim}), {0, 2, 1, 3}), {batch * heads_, n, head_dim});
  };
  const Tensor<T> q = split_heads(query.forward(x));
  const Tensor<T> k = split_heads(key.forward(x));
  const Tensor<T> v = split_heads(value.forward(x));
  const Tensor<T> scores = scale(bmm(q, transpose(k, 1, 2)), T(1) / std::sqrt(T(head_dim)));
  const Tensor<T> probs = softmax(scores, 2);
  const Tensor<T> context = bmm(probs, v);
  const Tensor<T> merged =
      reshape(permute(reshape(context, {batch, heads_, n, head_dim}), {0, 2, 1, 3}), {batch, n, model_dim_});
  Tensor<T> out = output.forward(merged);
  if (unbatched) out = reshape(out, tokens.shape());
  return {out, reshape(probs, {batch, heads_, n, n})};
}

template <typename T>
void MultiHeadSelfAttention<T>::collect(const std::string& prefix, ParameterSet<T>& set) const {
  query.collect(prefix + ".query", set);
  key.collect(prefix + ".key", set);
  value.collect(prefix + ".value", set);
  output.collect(prefix + ".output", set);
}

template <typename T>
TransformerEncoderLayer<T>::TransformerEncoderLayer(std::size_t model_dim, std::size_t heads, std::size_t ffn_ratio,
                                                    Initializer& init)
    : norm1(model_dim, init),
      attention(model_dim, heads, init),
      norm2(model_dim, init),
      ffn_in(model_dim, ffn_ratio * model_dim, init),
      ffn_out(ffn_ratio * model_dim, model_dim, init) {}

template <typename T>
AttentionOutput<T> TransformerEncoderLayer<T>::forward(const Tensor<T>& tokens) const {
  auto attended = attention.forward(norm1.forward(tokens));
  const Tensor<T> hidden = add(tokens, attended.output);
  const Tensor<T> out = add(hidden, ffn_out.forward(gelu(ffn_in.forward(norm2.forward(hidden)))));
  return {out, attended.attention};
}

template <typename T>
void TransformerEncoderLayer<T>::collect(const std::string& prefix, ParameterSet<T>& set) const {
  norm1.collect(prefix + ".norm1", set);
  attention.collect(prefix + ".attn", set);
  norm2.collect(prefix + ".norm2", set);
  ffn_in.collect(prefix + ".ffn_in", set);
  ffn_out.collect(prefix + ".ffn_out", set);
}

#define NRDFER_INSTANTIATE_NN(T)                                                         \
  template Tensor<T> Initializer::kaiming_uniform<T>(const Shape&, std::size_t);         \
  template Tensor<T> Initializer::normal<T>(const Shape&, double);                       \
  template Tensor<T> Initializer::constant<T>(const Shape&, double, bool);               \
  template struct ParameterSet<T>;                                                       \
  template class Linear<T>;                                                              \
  template class LayerNorm<T>;                                                           \
  template class Conv2d<T>;                                                              \
  template class BatchNorm2d<T>;                                                         \
  template class ConvBlock<T>;                                                           \
  template class MultiHeadSelfAttention<T>;                                              \
  template class TransformerEncoderLayer<T>;

NRDFER_INSTANTIATE_NN(float)
NRDFER_INSTANTIATE_NN(double)

}  // namespace nrdfer
