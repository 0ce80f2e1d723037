#include "nrdfer/inference.hpp"

#include <algorithm>
#include <stdexcept>

namespace nrdfer {

template <typename T>
Tensor<T> clips_to_tensor(const std::vector<const Clip*>& clips) {
  if (clips.empty()) throw std::invalid_argument("no clips to stack");
  const FrameStack& first = clips.front()->frames;
  Buffer<T> data;
  data.reserve(clips.size() * first.pixels.size());
  for (const Clip* clip : clips) {
    const FrameStack& f = clip->frames;
    if (f.count != first.count || f.height != first.height || f.width != first.width) {
      throw ShapeError("clip " + clip->source_id + " does not match the batch's frame count or size");
    }
    data.insert(data.end(), f.pixels.begin(), f.pixels.end());
  }
  return Tensor<T>({clips.size(), first.count, 3, first.height, first.width}, std::move(data));
}

template <typename T>
std::vector<Tensor<T>> snippet_logits(const TemporalStage<T>& temporal, const Tensor<T>& fused,
                                      const SnippetPlan& plan) {
  if (plan.width < 2) throw std::invalid_argument("snippets need at least 2 frames");
  if (fused.ndim() != 5 || fused.dim(1) + 1 != plan.frames) {
    throw ShapeError("snippet plan over " + std::to_string(plan.frames) + " frames does not fit fused maps " +
                     shape_to_string(fused.shape()));
  }
  std::vector<Tensor<T>> out;
  for (const auto& r : plan.ranges) out.push_back(temporal.forward(narrow(fused, 1, r.start, r.length - 1)).logits);
  return out;
}

template <typename T>
std::vector<Tensor<T>> snippet_logits_full(NrDferNet<T>& model, const Tensor<T>& frames, const SnippetPlan& plan) {
  if (plan.width < 2) throw std::invalid_argument("snippets need at least 2 frames");
  if (frames.ndim() != 5 || frames.dim(1) != plan.frames) {
    throw ShapeError("snippet plan over " + std::to_string(plan.frames) + " frames does not fit clip batch " +
                     shape_to_string(frames.shape()));
  }
  std::vector<Tensor<T>> out;
  for (const auto& r : plan.ranges) out.push_back(model.forward(narrow(frames, 1, r.start, r.length), false).logits);
  return out;
}

namespace {

std::vector<double> row(const Tensor<float>& logits, std::size_t b) {
  const auto k = logits.dim(1);
  const auto d = logits.data().subspan(b * k, k);
  return std::vector<double>(d.begin(), d.end());
}

}  // namespace

std::vector<ClipPrediction> predict(NrDferNet<float>& model, const std::vector<Clip>& clips,
                                    const InferenceOptions& options) {
  NoGradGuard no_grad;
  const std::size_t t = model.config().num_frames();
  std::optional<SnippetPlan> plan;
  if (options.use_sf) plan = plan_snippets(t, options.snippet_length, options.snippet_stride);
  const std::size_t batch = std::max<std::size_t>(1, options.batch_size);
  std::vector<ClipPrediction> out;
  out.reserve(clips.size());
  for (std::size_t begin = 0; begin < clips.size(); begin += batch) {
    const std::size_t end = std::min(clips.size(), begin + batch);
    std::vector<const Clip*> group;
    for (std::size_t i = begin; i < end; ++i) group.push_back(&clips[i]);
    const auto result = model.forward(clips_to_tensor<float>(group), false);
    std::vector<Tensor<float>> snippets;
    if (plan) snippets = snippet_logits(model.temporal(), result.spatial.fused, *plan);
    for (std::size_t b = 0; b < group.size(); ++b) {
      ClipPrediction p;
      p.clip_id = group[b]->source_id;
      p.label = group[b]->label;
      const auto seq = row(result.logits, b);
      if (plan) {
        std::vector<std::vector<double>> per_snippet;
        for (const auto& s : snippets) per_snippet.push_back(row(s, b));
        p.decision = apply_filter(seq, per_snippet, options.mu1, options.mu2);
      } else {
        p.decision = pass_through(seq);
      }
      if (options.keep_attention) {
        for (const auto& a : result.temporal.attention) p.attention.push_back(AttentionMap::from_tensor(a, b));
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::vector<Clip> test_clips(const std::vector<RawSequence>& sequences, const ModelConfig& config) {
  std::vector<Clip> out;
  out.reserve(sequences.size());
  for (const auto& s : sequences) out.push_back(sample_test(s, config.segments, config.frames_per_segment));
  return out;
}

ConfusionMatrix confusion(const std::vector<ClipPrediction>& predictions) {
  ConfusionMatrix cm;
  for (const auto& p : predictions) cm.add(p.label, p.predicted());
  return cm;
}

#define NRDFER_INSTANTIATE(T)                                                                                 \
  template Tensor<T> clips_to_tensor<T>(const std::vector<const Clip*>&);                                    \
  template std::vector<Tensor<T>> snippet_logits<T>(const TemporalStage<T>&, const Tensor<T>&,               \
                                                    const SnippetPlan&);                                     \
  template std::vector<Tensor<T>> snippet_logits_full<T>(NrDferNet<T>&, const Tensor<T>&, const SnippetPlan&);
NRDFER_INSTANTIATE(float)
NRDFER_INSTANTIATE(double)
#undef NRDFER_INSTANTIATE

}  // namespace nrdfer
