#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>

#include <nlohmann/json.hpp>

namespace nrdfer {

inline constexpr std::size_t kNumClasses = 7;

/// Fixed class order used by labels, logits, checkpoints and reports.
inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "happiness", "sadness", "neutral", "anger", "surprise", "disgust", "fear"};

inline constexpr int kNeutralClass = 2;

/// Architecture hyper-parameters. Clip length is segments * frames_per_segment.
struct ModelConfig {
  std::size_t image_size = 112;
  std::size_t channels = 64;
  std::array<std::size_t, 3> stem_strides{2, 2, 1};
  std::size_t segments = 8;            // U
  std::size_t frames_per_segment = 2;  // V
  std::size_t spatial_layers = 2;      // M
  std::size_t temporal_layers = 4;     // N
  std::size_t spatial_heads = 4;
  std::size_t temporal_heads = 4;
  std::size_t ffn_ratio = 4;
  bool use_dsf = true;
  bool use_dct = true;
  std::uint64_t seed = 0;

  std::size_t num_frames() const { return segments * frames_per_segment; }
  /// Side of the stem feature maps (H = W).
  std::size_t stem_size() const;
  /// Side of the fused dynamic-static maps (H/2).
  std::size_t fused_size() const { return stem_size() / 2; }
  /// Static-branch tokens per frame, (H/2)(W/2).
  std::size_t spatial_tokens() const { return fused_size() * fused_size(); }
  /// Temporal model dimension C*H*W/4.
  std::size_t token_dim() const { return channels * spatial_tokens(); }

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;

  /// 112x112 input, C = 64, T = 16, M = 2, N = 4.
  static ModelConfig full_scale();
  /// 32x32 input, C = 16, T = 8; the scale used by training experiments.
  static ModelConfig micro();
  /// Tiny network (< 5k parameters) for exhaustive finite-difference checks.
  static ModelConfig gradient_check();
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace nrdfer
