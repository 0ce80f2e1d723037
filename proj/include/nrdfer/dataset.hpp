#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nrdfer/sampling.hpp"

namespace nrdfer {

/// One row of a dataset manifest CSV (header `clip_dir,label,fold`).
/// Relative clip directories resolve against the manifest's directory.
struct ManifestEntry {
  std::string clip_dir;
  int label = 0;
  int fold = 0;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// Binary PPM (P6, maxval 255). Pixels are CHW floats, byte / 255.
FrameStack read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, std::span<const float> chw, std::size_t height, std::size_t width);

/// All `*.ppm` files of a directory in lexicographic filename order.
FrameStack read_frame_dir(const std::filesystem::path& dir);

struct FoldFilter {
  std::optional<int> only;     // keep rows with this fold
  std::optional<int> exclude;  // drop rows with this fold
};

std::vector<RawSequence> load_dataset(const std::filesystem::path& manifest, FoldFilter filter = {});

}  // namespace nrdfer
