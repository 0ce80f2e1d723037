#include "nrdfer/config.hpp"

#include <stdexcept>
#include <string>

#include "nrdfer/ops.hpp"

namespace nrdfer {

std::size_t ModelConfig::stem_size() const {
  std::size_t side = image_size;
  for (auto stride : stem_strides) side = conv_output_size(side, 3, stride, 1);
  return side;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (image_size == 0 || channels == 0) fail("image_size and channels must be positive");
  if (channels % 2 != 0) fail("channels must be even (stem uses C/2 channels first)");
  for (auto s : stem_strides) {
    if (s == 0) fail("stem strides must be positive");
  }
  const std::size_t side = stem_size();
  if (side < 2 || side % 2 != 0) fail("stem output side " + std::to_string(side) + " must be even and >= 2");
  if (segments == 0 || frames_per_segment == 0) fail("segments and frames_per_segment must be positive");
  if (num_frames() < 2) fail("clips need at least two frames");
  if (spatial_heads == 0 || channels % spatial_heads != 0) fail("channels must be divisible by spatial_heads");
  if (temporal_heads == 0 || token_dim() % temporal_heads != 0) fail("token dim must be divisible by temporal_heads");
  if (ffn_ratio == 0) fail("ffn_ratio must be positive");
}

ModelConfig ModelConfig::full_scale() { return ModelConfig{}; }

ModelConfig ModelConfig::micro() {
  ModelConfig c;
  c.image_size = 32;
  c.channels = 16;
  c.stem_strides = {2, 1, 1};
  c.segments = 4;
  c.frames_per_segment = 2;
  c.spatial_layers = 1;
  c.temporal_layers = 2;
  return c;
}

ModelConfig ModelConfig::gradient_check() {
  ModelConfig c;
  c.image_size = 4;
  c.channels = 4;
  c.stem_strides = {1, 1, 1};
  c.segments = 2;
  c.frames_per_segment = 2;
  c.spatial_layers = 1;
  c.temporal_layers = 1;
  c.spatial_heads = 2;
  c.temporal_heads = 4;
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size},
                     {"channels", c.channels},
                     {"stem_strides", c.stem_strides},
                     {"segments", c.segments},
                     {"frames_per_segment", c.frames_per_segment},
                     {"spatial_layers", c.spatial_layers},
                     {"temporal_layers", c.temporal_layers},
                     {"spatial_heads", c.spatial_heads},
                     {"temporal_heads", c.temporal_heads},
                     {"ffn_ratio", c.ffn_ratio},
                     {"use_dsf", c.use_dsf},
                     {"use_dct", c.use_dct},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.channels = j.value("channels", d.channels);
  c.stem_strides = j.value("stem_strides", d.stem_strides);
  c.segments = j.value("segments", d.segments);
  c.frames_per_segment = j.value("frames_per_segment", d.frames_per_segment);
  c.spatial_layers = j.value("spatial_layers", d.spatial_layers);
  c.temporal_layers = j.value("temporal_layers", d.temporal_layers);
  c.spatial_heads = j.value("spatial_heads", d.spatial_heads);
  c.temporal_heads = j.value("temporal_heads", d.temporal_heads);
  c.ffn_ratio = j.value("ffn_ratio", d.ffn_ratio);
  c.use_dsf = j.value("use_dsf", d.use_dsf);
  c.use_dct = j.value("use_dct", d.use_dct);
  c.seed = j.value("seed", d.seed);
}

}  // namespace nrdfer
