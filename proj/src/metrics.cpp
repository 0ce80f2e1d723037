#include "nrdfer/metrics.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nrdfer {

void ConfusionMatrix::add(int truth, int predicted, std::uint64_t count) {
  const int k = static_cast<int>(kNumClasses);
  if (truth < 0 || truth >= k || predicted < 0 || predicted >= k) {
    throw std::out_of_range("confusion matrix index (" + std::to_string(truth) + ", " + std::to_string(predicted) +
                            ") outside 0..6");
  }
  counts_[truth][predicted] += count;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (const auto& row : counts_) {
    for (auto v : row) n += v;
  }
  return n;
}

std::uint64_t ConfusionMatrix::row_total(int truth) const {
  std::uint64_t n = 0;
  for (auto v : counts_.at(truth)) n += v;
  return n;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t n = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) n += counts_[c][c];
  return n;
}

double uar(const ConfusionMatrix& cm) {
  double sum = 0;
  int present = 0;
  for (int c = 0; c < static_cast<int>(kNumClasses); ++c) {
    const auto n = cm.row_total(c);
    if (n == 0) continue;
    sum += static_cast<double>(cm.at(c, c)) / static_cast<double>(n);
    ++present;
  }
  if (present == 0) throw std::domain_error("UAR of an empty confusion matrix");
  return sum / present;
}

double war(const ConfusionMatrix& cm) {
  const auto n = cm.total();
  if (n == 0) throw std::domain_error("WAR of an empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(n);
}

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream out;
  out << "true_class";
  for (auto name : kClassNames) out << ',' << name;
  out << '\n';
  for (int t = 0; t < static_cast<int>(kNumClasses); ++t) {
    out << kClassNames[t];
    for (int p = 0; p < static_cast<int>(kNumClasses); ++p) out << ',' << cm.at(t, p);
    out << '\n';
  }
  return out.str();
}

void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& cm) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << confusion_csv(cm);
}

}  // namespace nrdfer
