#include "nrdfer/model.hpp"

#include <string>

namespace nrdfer {

template <typename T>
SpatialStage<T>::SpatialStage(const ModelConfig& config, Initializer& init) : config_(config) {
  const std::size_t c = config.channels;
  stem_blocks[0] = ConvBlock<T>(3, c / 2, config.stem_strides[0], init);
  stem_blocks[1] = ConvBlock<T>(c / 2, c, config.stem_strides[1], init);
  stem_blocks[2] = ConvBlock<T>(c, c, config.stem_strides[2], init);
  downsample = Conv2d<T>(c, c, 3, 2, 1, init);
  dynamic_blocks[0] = ConvBlock<T>(c, c, 2, init);
  dynamic_blocks[1] = ConvBlock<T>(c, c, 1, init);
  dynamic_blocks[2] = ConvBlock<T>(c, c, 1, init);
  position_embedding = init.normal<T>({config.spatial_tokens(), c}, 0.02);
  for (std::size_t i = 0; i < config.spatial_layers; ++i) {
    encoders.emplace_back(c, config.spatial_heads, config.ffn_ratio, init);
  }
}

template <typename T>
Tensor<T> SpatialStage<T>::stem(const Tensor<T>& frames, bool training) {
  const std::size_t side = config_.image_size;
  if (frames.ndim() != 5 || frames.dim(2) != 3 || frames.dim(3) != side || frames.dim(4) != side) {
    throw ShapeError("stem: expected [B x n x 3 x " + std::to_string(side) + " x " + std::to_string(side) +
                     "] frames, got " + shape_to_string(frames.shape()));
  }
  const std::size_t batch = frames.dim(0), n = frames.dim(1);
  Tensor<T> x = reshape(frames, {batch * n, 3, side, side});
  for (auto& block : stem_blocks) x = block.forward(x, training);
  return reshape(x, {batch, n, x.dim(1), x.dim(2), x.dim(3)});
}

template <typename T>
Tensor<T> SpatialStage<T>::dynamic_features(const Tensor<T>& stem_maps) const {
  if (stem_maps.ndim() != 5) throw ShapeError("dynamic_features: expected 5-d stem maps");
  const std::size_t n = stem_maps.dim(1);
  if (n < 2) throw ShapeError("dynamic_features: need at least 2 frames, got " + std::to_string(n));
  return sub(narrow(stem_maps, 1, 1, n - 1), narrow(stem_maps, 1, 0, n - 1));
}

template <typename T>
Tensor<T> SpatialStage<T>::static_features(const Tensor<T>& stem_maps) const {
  if (stem_maps.ndim() != 5) throw ShapeError("static_features: expected 5-d stem maps");
  const std::size_t batch = stem_maps.dim(0), n = stem_maps.dim(1);
  if (n < 2) throw ShapeError("static_features: need at least 2 frames, got " + std::to_string(n));
  const std::size_t c = stem_maps.dim(2), h = stem_maps.dim(3), w = stem_maps.dim(4);
  const Tensor<T> y = downsample.forward(reshape(narrow(stem_maps, 1, 0, n - 1), {batch * (n - 1), c, h, w}));
  return reshape(y, {batch, n - 1, c, y.dim(2), y.dim(3)});
}

template <typename T>
Tensor<T> SpatialStage<T>::dynamic_branch(const Tensor<T>& dynamic, bool training) {
  const std::size_t batch = dynamic.dim(0), m = dynamic.dim(1);
  Tensor<T> x = reshape(dynamic, {batch * m, dynamic.dim(2), dynamic.dim(3), dynamic.dim(4)});
  for (auto& block : dynamic_blocks) x = block.forward(x, training);
  return reshape(x, {batch, m, x.dim(1), x.dim(2), x.dim(3)});
}

template <typename T>
Tensor<T> SpatialStage<T>::static_branch(const Tensor<T>& static_maps) const {
  const std::size_t batch = static_maps.dim(0), m = static_maps.dim(1);
  const std::size_t c = static_maps.dim(2), h = static_maps.dim(3), w = static_maps.dim(4);
  if (h * w != position_embedding.dim(0) || c != position_embedding.dim(1)) {
    throw ShapeError("static_branch: maps " + shape_to_string(static_maps.shape()) + " do not match position embedding " +
                     shape_to_string(position_embedding.shape()));
  }
  Tensor<T> tokens = transpose(reshape(static_maps, {batch * m, c, h * w}), 1, 2);
  tokens = add(tokens, repeat_leading(position_embedding, batch * m));
  for (const auto& layer : encoders) tokens = layer.forward(tokens).output;
  return reshape(transpose(tokens, 1, 2), {batch, m, c, h, w});
}

template <typename T>
SpatialFeatures<T> SpatialStage<T>::forward(const Tensor<T>& frames, bool training) {
  SpatialFeatures<T> f;
  f.stem = stem(frames, training);
  f.dynamic = dynamic_features(f.stem);
  f.static_maps = static_features(f.stem);
  f.static_out = static_branch(f.static_maps);
  if (config_.use_dsf) {
    f.dynamic_out = dynamic_branch(f.dynamic, training);
    if (f.dynamic_out.shape() != f.static_out.shape()) {
      throw ShapeError("dsf: dynamic branch " + shape_to_string(f.dynamic_out.shape()) + " vs static branch " +
                       shape_to_string(f.static_out.shape()));
    }
    f.fused = add(f.dynamic_out, f.static_out);
  } else {
    f.dynamic_out = f.static_out.is_meta() ? Tensor<T>::meta(f.static_out.shape())
                                           : Tensor<T>::zeros(f.static_out.shape());
    f.fused = f.static_out;
  }
  return f;
}

template <typename T>
void SpatialStage<T>::collect(const std::string& prefix, ParameterSet<T>& set) const {
  for (std::size_t i = 0; i < 3; ++i) stem_blocks[i].collect(prefix + ".stem" + std::to_string(i), set);
  downsample.collect(prefix + ".downsample", set);
  for (std::size_t i = 0; i < 3; ++i) dynamic_blocks[i].collect(prefix + ".dynamic" + std::to_string(i), set);
  set.parameters.push_back({prefix + ".position_embedding", position_embedding});
  for (std::size_t i = 0; i < encoders.size(); ++i) encoders[i].collect(prefix + ".encoder" + std::to_string(i), set);
}

template <typename T>
TemporalStage<T>::TemporalStage(const ModelConfig& config, Initializer& init) : config_(config) {
  const std::size_t d = config.token_dim();
  position_embedding = init.normal<T>({config.num_frames(), d}, 0.02);
  learned_token = init.normal<T>({d}, 0.02);
  for (std::size_t i = 0; i < config.temporal_layers; ++i) {
    encoders.emplace_back(d, config.temporal_heads, config.ffn_ratio, init);
  }
  final_norm = LayerNorm<T>(d, init);
  head = Linear<T>(d, kNumClasses, init);
}

template <typename T>
Tensor<T> TemporalStage<T>::make_dct(const Tensor<T>& frame_tokens) const {
  if (frame_tokens.ndim() != 3) {
    throw ShapeError("make_dct: expected [B x n x D] frame tokens, got " + shape_to_string(frame_tokens.shape()));
  }
  return mean(frame_tokens, 1);
}

template <typename T>
Tensor<T> TemporalStage<T>::class_tokens(const Tensor<T>& frame_tokens) const {
  if (config_.use_dct) return make_dct(frame_tokens);
  return repeat_leading(learned_token, frame_tokens.dim(0));
}

template <typename T>
TemporalOutput<T> TemporalStage<T>::forward(const Tensor<T>& fused) const {
  if (fused.ndim() != 5) throw ShapeError("temporal stage: expected 5-d fused maps, got " + shape_to_string(fused.shape()));
  const std::size_t batch = fused.dim(0), n = fused.dim(1);
  const std::size_t d = fused.dim(2) * fused.dim(3) * fused.dim(4);
  if (d != position_embedding.dim(1)) {
    throw ShapeError("temporal stage: token dim " + std::to_string(d) + " differs from embedding dim " +
                     std::to_string(position_embedding.dim(1)));
  }
  if (n + 1 > position_embedding.dim(0)) {
    throw ShapeError("temporal stage: " + std::to_string(n + 1) + " tokens exceed the " +
                     std::to_string(position_embedding.dim(0)) + " position embeddings");
  }
  TemporalOutput<T> out;
  const Tensor<T> frame_tokens = reshape(fused, {batch, n, d});
  out.class_token = class_tokens(frame_tokens);
  Tensor<T> tokens = concat<T>({reshape(out.class_token, {batch, 1, d}), frame_tokens}, 1);
  tokens = add(tokens, repeat_leading(narrow(position_embedding, 0, 0, n + 1), batch));
  for (const auto& layer : encoders) {
    auto result = layer.forward(tokens);
    tokens = result.output;
    out.attention.push_back(result.attention);
  }
  const Tensor<T> cls = reshape(narrow(tokens, 1, 0, 1), {batch, d});
  out.logits = head.forward(final_norm.forward(cls));
  return out;
}

template <typename T>
void TemporalStage<T>::collect(const std::string& prefix, ParameterSet<T>& set) const {
  set.parameters.push_back({prefix + ".position_embedding", position_embedding});
  set.parameters.push_back({prefix + ".learned_token", learned_token});
  for (std::size_t i = 0; i < encoders.size(); ++i) encoders[i].collect(prefix + ".encoder" + std::to_string(i), set);
  final_norm.collect(prefix + ".final_norm", set);
  head.collect(prefix + ".head", set);
}

namespace {
const ModelConfig& validated(const ModelConfig& config) {
  config.validate();
  return config;
}
}  // namespace

template <typename T>
NrDferNet<T>::NrDferNet(const ModelConfig& config)
    : config_(validated(config)), init_(config.seed), spatial_(config_, init_), temporal_(config_, init_) {}

template <typename T>
ModelOutput<T> NrDferNet<T>::forward(const Tensor<T>& frames, bool training) {
  ModelOutput<T> out;
  out.spatial = spatial_.forward(frames, training);
  out.temporal = temporal_.forward(out.spatial.fused);
  out.logits = out.temporal.logits;
  return out;
}

template <typename T>
ParameterSet<T> NrDferNet<T>::parameters() const {
  ParameterSet<T> set;
  spatial_.collect("spatial", set);
  temporal_.collect("temporal", set);
  return set;
}

template class SpatialStage<float>;
template class SpatialStage<double>;
template class TemporalStage<float>;
template class TemporalStage<double>;
template class NrDferNet<float>;
template class NrDferNet<double>;

}  // namespace nrdfer
