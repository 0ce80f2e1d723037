#include "nrdfer/decision.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "nrdfer/config.hpp"

namespace nrdfer {

SnippetPlan plan_snippets(std::size_t frames, std::size_t width, std::size_t stride) {
  if (width == 0 || stride == 0) throw std::invalid_argument("snippet width and stride must be positive");
  if (width > frames) {
    throw std::invalid_argument("snippet width " + std::to_string(width) + " exceeds clip length " +
                                std::to_string(frames));
  }
  SnippetPlan plan{frames, width, stride, {}};
  const std::size_t count = (frames - width) / stride + 1;
  for (std::size_t i = 0; i < count; ++i) plan.ranges.push_back({i * stride, width});
  return plan;
}

std::vector<double> softmax_probabilities(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax of an empty vector");
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - peak);
    total += p[i];
  }
  for (auto& v : p) v /= total;
  return p;
}

namespace {

int argmax(std::span<const double> values) {
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

void check_logits(std::span<const double> logits, const char* what) {
  if (logits.size() != kNumClasses) {
    throw std::invalid_argument(std::string(what) + " must have " + std::to_string(kNumClasses) + " entries, got " +
                                std::to_string(logits.size()));
  }
}

}  // namespace

std::vector<double> FilterDecision::final_probabilities() const {
  auto p = softmax_probabilities(sequence_logits);
  if (triggered) p[kNeutralClass] = 0.0;
  return p;
}

int FilterDecision::predicted_class() const {
  if (!triggered) return sequence_class();
  const auto p = final_probabilities();
  int best = -1;
  for (int c = 0; c < static_cast<int>(p.size()); ++c) {
    if (c == kNeutralClass) continue;
    if (best < 0 || p[c] > p[best]) best = c;
  }
  return best;
}

int FilterDecision::sequence_class() const { return argmax(sequence_logits); }

FilterDecision apply_filter(std::span<const double> sequence_logits,
                            const std::vector<std::vector<double>>& snippet_logits, double mu1, double mu2) {
  if (!(mu1 > 0 && mu1 < 1) || !(mu2 > 0 && mu2 < 1)) {
    throw std::invalid_argument("filter thresholds must lie in (0, 1)");
  }
  check_logits(sequence_logits, "sequence logits");
  FilterDecision d = pass_through(sequence_logits);
  for (std::size_t i = 0; i < snippet_logits.size(); ++i) {
    check_logits(snippet_logits[i], "snippet logits");
    const auto p = softmax_probabilities(snippet_logits[i]);
    SnippetScore s;
    s.argmax = argmax(p);
    s.p_max = p[s.argmax];
    s.p_neutral = p[kNeutralClass];
    s.confident = s.p_max > mu1 && s.p_neutral < mu2;
    if (s.confident && !d.triggered) {
      d.triggered = true;
      d.trigger_index = i;
    }
    d.snippets.push_back(s);
  }
  return d;
}

FilterDecision pass_through(std::span<const double> sequence_logits) {
  check_logits(sequence_logits, "sequence logits");
  FilterDecision d;
  d.sequence_logits.assign(sequence_logits.begin(), sequence_logits.end());
  return d;
}

}  // namespace nrdfer
