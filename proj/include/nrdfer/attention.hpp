#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nrdfer/nn.hpp"

namespace nrdfer {

/// Class-token attention over the frame tokens, normalized to sum to 1.
struct FrameAttentionProfile {
  std::string clip_id;
  std::string model_tag;  // "dct" or "learned_token"
  std::vector<double> weights;
  std::vector<std::size_t> source_frames;  // optional source index per frame token
  bool degenerate = false;  // class-token row carried no mass onto frames; weights fall back to uniform
};

/// Averages heads per layer, multiplies layer matrices in order
/// (R = A_N ... A_1), takes row 0, drops column 0 and renormalizes.
/// Throws std::invalid_argument on an empty list or inconsistent maps.
FrameAttentionProfile attention_rollout(const std::vector<AttentionMap>& maps);

/// Header `clip_id,model_tag,frame,source_frame,weight`; weights with %.9g.
std::string attention_csv(const std::vector<FrameAttentionProfile>& profiles);

/// Bar chart: one bar per frame token, 40 px pitch, 200 px plot height.
std::string attention_svg(const FrameAttentionProfile& profile);

}  // namespace nrdfer
