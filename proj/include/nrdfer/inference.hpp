#pragma once

#include <string>
#include <vector>

#include "nrdfer/decision.hpp"
#include "nrdfer/metrics.hpp"
#include "nrdfer/model.hpp"
#include "nrdfer/sampling.hpp"

namespace nrdfer {

/// Stacks clips of equal length and size into [B x T x 3 x H x W].
template <typename T>
Tensor<T> clips_to_tensor(const std::vector<const Clip*>& clips);

/// Snippet logits from fused maps [B x (T-1) x C x h x w]. A window of L
/// frames covers fused maps [start, start + L - 1), so its token sequence is
/// the class token plus L - 1 frame tokens with position rows 0..L-1.
/// Each returned tensor is [B x 7]. Requires L >= 2.
template <typename T>
std::vector<Tensor<T>> snippet_logits(const TemporalStage<T>& temporal, const Tensor<T>& fused,
                                      const SnippetPlan& plan);

/// Same snippets, each run through the whole network on its own frames
/// (eval mode). Equal to snippet_logits up to rounding.
template <typename T>
std::vector<Tensor<T>> snippet_logits_full(NrDferNet<T>& model, const Tensor<T>& frames, const SnippetPlan& plan);

struct InferenceOptions {
  bool use_sf = true;
  std::size_t snippet_length = 3;  // L
  std::size_t snippet_stride = 2;  // S
  double mu1 = 0.7;
  double mu2 = 0.05;
  std::size_t batch_size = 16;
  bool keep_attention = false;
};

struct ClipPrediction {
  std::string clip_id;
  int label = 0;
  FilterDecision decision;
  std::vector<AttentionMap> attention;  // per temporal layer, when requested

  int predicted() const { return decision.predicted_class(); }
};

/// Eval-mode forward over all clips, with the snippet filter when enabled.
std::vector<ClipPrediction> predict(NrDferNet<float>& model, const std::vector<Clip>& clips,
                                    const InferenceOptions& options);

/// Deterministic test-time clips for every sequence.
std::vector<Clip> test_clips(const std::vector<RawSequence>& sequences, const ModelConfig& config);

ConfusionMatrix confusion(const std::vector<ClipPrediction>& predictions);

}  // namespace nrdfer
