#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "nrdfer/config.hpp"

namespace nrdfer {

/// 7x7 counts, rows = true class, columns = predicted class.
class ConfusionMatrix {
 public:
  void add(int truth, int predicted, std::uint64_t count = 1);
  std::uint64_t at(int truth, int predicted) const { return counts_[truth][predicted]; }
  std::uint64_t total() const;
  std::uint64_t row_total(int truth) const;
  std::uint64_t trace() const;

 private:
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts_{};
};

/// Mean recall over classes with at least one true instance.
/// Throws std::domain_error for an empty matrix.
double uar(const ConfusionMatrix& cm);
/// trace / total. Throws std::domain_error for an empty matrix.
double war(const ConfusionMatrix& cm);

/// Header `true_class,<7 class names>`, then one row per true class.
std::string confusion_csv(const ConfusionMatrix& cm);
void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& cm);

}  // namespace nrdfer
