#include "nrdfer/sampling.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace nrdfer {

std::span<const float> FrameStack::frame(std::size_t index) const {
  if (index >= count) throw std::out_of_range("frame index " + std::to_string(index) + " >= " + std::to_string(count));
  return std::span<const float>(pixels).subspan(index * frame_size(), frame_size());
}

std::span<float> FrameStack::frame(std::size_t index) {
  if (index >= count) throw std::out_of_range("frame index " + std::to_string(index) + " >= " + std::to_string(count));
  return std::span<float>(pixels).subspan(index * frame_size(), frame_size());
}

void FrameStack::append(std::span<const float> frame, std::size_t frame_height, std::size_t frame_width) {
  if (count == 0) {
    height = frame_height;
    width = frame_width;
  } else if (frame_height != height || frame_width != width) {
    throw std::invalid_argument("frame " + std::to_string(count) + " is " + std::to_string(frame_height) + "x" +
                                std::to_string(frame_width) + ", sequence frames are " + std::to_string(height) + "x" +
                                std::to_string(width));
  }
  if (frame.size() != frame_size()) throw std::invalid_argument("frame buffer size does not match 3 x H x W");
  pixels.insert(pixels.end(), frame.begin(), frame.end());
  ++count;
}

std::vector<Segment> split_segments(std::size_t frame_count, std::size_t segments) {
  if (segments == 0) throw std::invalid_argument("segment count must be positive");
  std::vector<Segment> out(segments);
  const std::size_t base = frame_count / segments, extra = frame_count % segments;
  std::size_t start = 0;
  for (std::size_t i = 0; i < segments; ++i) {
    out[i].start = start;
    out[i].length = base + (i < extra ? 1 : 0);
    start += out[i].length;
  }
  return out;
}

namespace {

void check_sampling_args(std::size_t frame_count, std::size_t segments, std::size_t per_segment) {
  if (frame_count == 0) throw std::invalid_argument("cannot sample from an empty sequence");
  if (segments == 0 || per_segment == 0) throw std::invalid_argument("U and V must be positive");
}

}  // namespace

std::vector<std::size_t> train_indices(std::size_t frame_count, std::size_t segments, std::size_t per_segment,
                                       std::mt19937_64& rng) {
  check_sampling_args(frame_count, segments, per_segment);
  std::vector<std::size_t> out;
  out.reserve(segments * per_segment);
  for (const auto& seg : split_segments(frame_count, segments)) {
    std::vector<std::size_t> picks;
    if (seg.length == 0) {
      picks.assign(per_segment, frame_count - 1);
    } else if (seg.length >= per_segment) {
      std::vector<std::size_t> pool(seg.length);
      std::iota(pool.begin(), pool.end(), seg.start);
      for (std::size_t i = 0; i < per_segment; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, seg.length - 1);
        std::swap(pool[i], pool[pick(rng)]);
      }
      picks.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(per_segment));
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, seg.length - 1);
      for (std::size_t i = 0; i < per_segment; ++i) picks.push_back(seg.start + pick(rng));
    }
    std::sort(picks.begin(), picks.end());
    out.insert(out.end(), picks.begin(), picks.end());
  }
  return out;
}

std::vector<std::size_t> test_indices(std::size_t frame_count, std::size_t segments, std::size_t per_segment) {
  check_sampling_args(frame_count, segments, per_segment);
  std::vector<std::size_t> out;
  out.reserve(segments * per_segment);
  for (const auto& seg : split_segments(frame_count, segments)) {
    for (std::size_t j = 0; j < per_segment; ++j) {
      if (seg.length == 0) {
        out.push_back(frame_count - 1);
      } else if (seg.length >= per_segment) {
        out.push_back(seg.start + (seg.length - per_segment) / 2 + j);
      } else {
        out.push_back(seg.start + j * seg.length / per_segment);
      }
    }
  }
  return out;
}

Clip gather_clip(const RawSequence& sequence, std::vector<std::size_t> indices) {
  Clip clip;
  clip.label = sequence.label;
  clip.source_id = sequence.source_id;
  clip.frames.pixels.reserve(indices.size() * sequence.frames.frame_size());
  for (auto i : indices) clip.frames.append(sequence.frames.frame(i), sequence.frames.height, sequence.frames.width);
  clip.frame_indices = std::move(indices);
  return clip;
}

Clip sample_train(const RawSequence& sequence, std::size_t segments, std::size_t per_segment, std::mt19937_64& rng) {
  return gather_clip(sequence, train_indices(sequence.frames.count, segments, per_segment, rng));
}

Clip sample_test(const RawSequence& sequence, std::size_t segments, std::size_t per_segment) {
  return gather_clip(sequence, test_indices(sequence.frames.count, segments, per_segment));
}

}  // namespace nrdfer
