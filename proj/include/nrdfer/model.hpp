#pragma once

#include <vector>

#include "nrdfer/config.hpp"
#include "nrdfer/nn.hpp"

namespace nrdfer {

/// Intermediate maps of the spatial stage for a batch of B clips of n frames.
template <typename T>
struct SpatialFeatures {
  Tensor<T> stem;         // F     [B x n x C x H x W]
  Tensor<T> dynamic;      // F^D   [B x (n-1) x C x H x W]
  Tensor<T> static_maps;  // F^S   [B x (n-1) x C x H/2 x W/2]
  Tensor<T> dynamic_out;  // F^D'  [B x (n-1) x C x H/2 x W/2]
  Tensor<T> static_out;   // F^S'  [B x (n-1) x C x H/2 x W/2]
  Tensor<T> fused;        // F^DS  [B x (n-1) x C x H/2 x W/2]
};

/// Conv stem followed by dynamic-static fusion.
template <typename T>
class SpatialStage {
 public:
  SpatialStage(const ModelConfig& config, Initializer& init);

  /// frames [B x n x 3 x H_in x W_in] -> [B x n x C x H x W]
  Tensor<T> stem(const Tensor<T>& frames, bool training);
  /// Adjacent-frame differences F_{i+1} - F_i; needs n >= 2.
  Tensor<T> dynamic_features(const Tensor<T>& stem_maps) const;
  /// Stride-2 convolution of the first n-1 frames.
  Tensor<T> static_features(const Tensor<T>& stem_maps) const;
  /// Three conv blocks, the first downsampling.
  Tensor<T> dynamic_branch(const Tensor<T>& dynamic, bool training);
  /// Per-frame patch tokens + position embedding through M shared encoders.
  Tensor<T> static_branch(const Tensor<T>& static_maps) const;

  SpatialFeatures<T> forward(const Tensor<T>& frames, bool training);
  void collect(const std::string& prefix, ParameterSet<T>& set) const;

  bool uses_dsf() const { return config_.use_dsf; }
  void set_use_dsf(bool enabled) { config_.use_dsf = enabled; }

  ConvBlock<T> stem_blocks[3];
  Conv2d<T> downsample;
  ConvBlock<T> dynamic_blocks[3];
  Tensor<T> position_embedding;  // E_p^S [Q x C]
  std::vector<TransformerEncoderLayer<T>> encoders;

 private:
  ModelConfig config_;
};

template <typename T>
struct TemporalOutput {
  Tensor<T> logits;       // [B x 7]
  Tensor<T> class_token;  // token placed at position 0, before position embedding [B x D]
  std::vector<Tensor<T>> attention;  // per layer [B x heads x (n+1) x (n+1)]
};

/// Class token + N encoders + linear classifier over the class-token output.
template <typename T>
class TemporalStage {
 public:
  TemporalStage(const ModelConfig& config, Initializer& init);

  /// Mean over the frame axis of [B x n x D] tokens.
  Tensor<T> make_dct(const Tensor<T>& frame_tokens) const;
  /// Class token for each sequence: the DCT, or the learned token when DCT is disabled.
  Tensor<T> class_tokens(const Tensor<T>& frame_tokens) const;
  /// fused [B x n x C x h x w] with n + 1 <= T.
  TemporalOutput<T> forward(const Tensor<T>& fused) const;
  void collect(const std::string& prefix, ParameterSet<T>& set) const;

  bool uses_dct() const { return config_.use_dct; }
  void set_use_dct(bool enabled) { config_.use_dct = enabled; }

  Tensor<T> position_embedding;  // E_p^T [T x D]
  Tensor<T> learned_token;       // [D], used only when use_dct is false
  std::vector<TransformerEncoderLayer<T>> encoders;
  LayerNorm<T> final_norm;
  Linear<T> head;

 private:
  ModelConfig config_;
};

template <typename T>
struct ModelOutput {
  Tensor<T> logits;  // [B x 7]
  SpatialFeatures<T> spatial;
  TemporalOutput<T> temporal;
};

/// Full network: spatial stage (stem + DSF) then temporal stage (DCT + encoders).
template <typename T>
class NrDferNet {
 public:
  explicit NrDferNet(const ModelConfig& config);

  /// frames [B x n x 3 x H_in x W_in], 2 <= n <= T.
  ModelOutput<T> forward(const Tensor<T>& frames, bool training);

  ParameterSet<T> parameters() const;
  const ModelConfig& config() const { return config_; }
  /// Ablation switches; parameters of disabled parts are kept.
  void set_use_dsf(bool enabled) {
    config_.use_dsf = enabled;
    spatial_.set_use_dsf(enabled);
  }
  void set_use_dct(bool enabled) {
    config_.use_dct = enabled;
    temporal_.set_use_dct(enabled);
  }

  SpatialStage<T>& spatial() { return spatial_; }
  const SpatialStage<T>& spatial() const { return spatial_; }
  TemporalStage<T>& temporal() { return temporal_; }
  const TemporalStage<T>& temporal() const { return temporal_; }

 private:
  ModelConfig config_;
  Initializer init_;
  SpatialStage<T> spatial_;
  TemporalStage<T> temporal_;
};

}  // namespace nrdfer
