#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace nrdfer {

struct SnippetRange {
  std::size_t start = 0;
  std::size_t length = 0;
};

/// Sliding windows of width L and stride S over a clip of T frames.
/// N_s = floor((T - L) / S) + 1 windows starting at 0, S, 2S, ...
struct SnippetPlan {
  std::size_t frames = 0;
  std::size_t width = 0;
  std::size_t stride = 0;
  std::vector<SnippetRange> ranges;

  std::size_t count() const { return ranges.size(); }
};

/// Throws std::invalid_argument unless 1 <= L <= T and S >= 1.
SnippetPlan plan_snippets(std::size_t frames, std::size_t width, std::size_t stride);

/// Numerically stable softmax of a logits vector.
std::vector<double> softmax_probabilities(std::span<const double> logits);

struct SnippetScore {
  double p_max = 0;
  double p_neutral = 0;
  int argmax = 0;
  bool confident = false;  // p_max > mu1 and p_neutral < mu2
};

/// Outcome of the snippet-based filter.
struct FilterDecision {
  std::vector<double> sequence_logits;
  bool triggered = false;
  std::optional<std::size_t> trigger_index;  // first confident snippet
  std::vector<SnippetScore> snippets;

  /// Softmax of the sequence logits; the neutral entry is zeroed when triggered.
  std::vector<double> final_probabilities() const;
  /// Argmax of final_probabilities(), lowest index on ties. Never neutral when triggered.
  int predicted_class() const;
  /// Argmax of the unfiltered sequence logits.
  int sequence_class() const;
};

/// The filter never modifies the inputs. With no snippets the result is an
/// untriggered pass-through. mu1 and mu2 must lie in (0, 1).
FilterDecision apply_filter(std::span<const double> sequence_logits,
                            const std::vector<std::vector<double>>& snippet_logits, double mu1, double mu2);

/// Identity filter used when snippet filtering is disabled.
FilterDecision pass_through(std::span<const double> sequence_logits);

}  // namespace nrdfer
