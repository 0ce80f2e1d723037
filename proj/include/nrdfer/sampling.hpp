#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace nrdfer {

/// Contiguous RGB frames, [count x 3 x height x width], values in [0, 1].
struct FrameStack {
  std::size_t count = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  std::size_t frame_size() const { return 3 * height * width; }
  std::span<const float> frame(std::size_t index) const;
  std::span<float> frame(std::size_t index);
  /// Appends one frame; the first frame fixes the dimensions.
  void append(std::span<const float> frame, std::size_t frame_height, std::size_t frame_width);
};

struct RawSequence {
  FrameStack frames;
  int label = 0;
  std::string source_id;
};

/// Fixed-length clip of U*V frames drawn from a RawSequence.
struct Clip {
  FrameStack frames;
  int label = 0;
  std::vector<std::size_t> frame_indices;
  std::string source_id;
};

struct Segment {
  std::size_t start = 0;
  std::size_t length = 0;
};

/// Splits [0, frame_count) into `segments` near-equal runs; the remainder
/// goes one frame each to the leading segments. Trailing segments are empty
/// when frame_count < segments.
std::vector<Segment> split_segments(std::size_t frame_count, std::size_t segments);

/// V random indices per segment: without replacement when the segment holds
/// at least V frames, with replacement otherwise; sorted within the segment.
std::vector<std::size_t> train_indices(std::size_t frame_count, std::size_t segments, std::size_t per_segment,
                                       std::mt19937_64& rng);

/// The centred run of V frames of each segment, starting at floor((len - V) / 2).
/// Segments shorter than V spread V picks evenly over their frames.
std::vector<std::size_t> test_indices(std::size_t frame_count, std::size_t segments, std::size_t per_segment);

Clip gather_clip(const RawSequence& sequence, std::vector<std::size_t> indices);
Clip sample_train(const RawSequence& sequence, std::size_t segments, std::size_t per_segment, std::mt19937_64& rng);
Clip sample_test(const RawSequence& sequence, std::size_t segments, std::size_t per_segment);

}  // namespace nrdfer
