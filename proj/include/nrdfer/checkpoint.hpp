#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nrdfer/model.hpp"

namespace nrdfer {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
  std::string name;
  bool buffer = false;  // normalization statistics rather than a trainable parameter
  Shape shape;
  std::vector<float> values;
};

/// Model configuration plus every parameter and buffer, in collection order.
struct Checkpoint {
  ModelConfig config;
  std::vector<CheckpointEntry> entries;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

Checkpoint capture(const NrDferNet<float>& model);
/// Copies values into an existing model; names, order and shapes must match.
void restore(NrDferNet<float>& model, const Checkpoint& checkpoint);

/// Little-endian binary layout, see docs/formats.md.
std::vector<std::uint8_t> encode(const Checkpoint& checkpoint);
Checkpoint decode(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Builds a model from the stored configuration and restores its state.
std::unique_ptr<NrDferNet<float>> load_model(const std::filesystem::path& path);

}  // namespace nrdfer
