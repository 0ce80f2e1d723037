#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nrdfer/sampling.hpp"

namespace nrdfer {

/// Procedural stand-in for expression videos. Every class has a motif made of
/// an oriented drifting grating (class-specific orientation, frequency and
/// drift speed; the neutral motif does not drift) plus a tinted blob at a
/// class-specific location. Per-sequence phase, amplitude and blob jitter
/// vary; Gaussian pixel noise is added and values are quantized to 1/255.
///
/// Two noise types replace whole frames:
///  - irrelevant (N1): random blobs and a random grating unrelated to any class;
///  - neutral (N2): the neutral motif inside a non-neutral sequence, leaving
///    the expression as one contiguous run.
struct SynthSpec {
  std::size_t sequences = 70;  // used by the CLI; labels cycle through the 7 classes
  std::size_t image_size = 32;
  std::size_t min_frames = 24;
  std::size_t max_frames = 40;
  double n1_rate = 0.0;
  double n2_rate = 0.0;
  double pixel_noise = 0.03;
  std::size_t folds = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);

enum class FrameKind : char { kClean = '.', kIrrelevant = '1', kNeutral = '2' };

struct SyntheticSequence {
  RawSequence sequence;
  std::vector<FrameKind> mask;  // one entry per frame
  int fold = 0;
};

/// Sequence i has label i % 7 and fold (i / 7) % folds. Each sequence draws
/// from its own generator seeded by (seed, i), so output does not depend on
/// generation order.
std::vector<SyntheticSequence> generate(const SynthSpec& spec, std::size_t n_sequences);

std::string mask_to_string(const std::vector<FrameKind>& mask);

/// Writes `<dir>/clips/<id>/NNNNNN.ppm`, `<dir>/manifest.csv` and
/// `<dir>/noise_masks.csv` (header `clip_dir,mask`).
void write_synthetic_dataset(const std::filesystem::path& dir, const std::vector<SyntheticSequence>& sequences);

/// Reads `noise_masks.csv`; rows are returned in file order.
std::vector<std::pair<std::string, std::vector<FrameKind>>> read_noise_masks(const std::filesystem::path& path);

}  // namespace nrdfer
