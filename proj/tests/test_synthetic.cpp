#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>

#include "nrdfer/config.hpp"
#include "nrdfer/dataset.hpp"
#include "nrdfer/synthetic.hpp"

namespace nrdfer {
namespace {

namespace fs = std::filesystem;

std::size_t count_kind(const std::vector<FrameKind>& mask, FrameKind kind) {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), kind));
}

// Per-channel 2-D DFT magnitudes, invariant to the phase of the motif.
std::vector<float> spectrum(std::span<const float> px, std::size_t side) {
  const double w = 2.0 * std::acos(-1.0) / static_cast<double>(side);
  std::vector<std::complex<double>> twiddle(side);
  for (std::size_t k = 0; k < side; ++k) twiddle[k] = std::polar(1.0, -w * static_cast<double>(k));
  std::vector<float> out(px.size());
  std::vector<std::complex<double>> rows(side * side);
  for (std::size_t c = 0; c < 3; ++c) {
    const float* img = px.data() + c * side * side;
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t u = 0; u < side; ++u) {
        std::complex<double> acc = 0;
        for (std::size_t x = 0; x < side; ++x) acc += static_cast<double>(img[y * side + x]) * twiddle[(u * x) % side];
        rows[y * side + u] = acc;
      }
    for (std::size_t v = 0; v < side; ++v)
      for (std::size_t u = 0; u < side; ++u) {
        std::complex<double> acc = 0;
        for (std::size_t y = 0; y < side; ++y) acc += rows[y * side + u] * twiddle[(v * y) % side];
        out[(c * side + v) * side + u] = static_cast<float>(std::abs(acc));
      }
  }
  return out;
}

// Nearest class mean over frame spectra, a linear classifier on fixed features.
class SpectrumProbe {
 public:
  void fit(const std::vector<SyntheticSequence>& data) {
    sums_.assign(kNumClasses, {});
    counts_.assign(kNumClasses, 0);
    for (const auto& s : data)
      for (std::size_t f = 0; f < s.mask.size(); ++f) {
        if (s.mask[f] != FrameKind::kClean) continue;
        const auto feat = spectrum(s.sequence.frames.frame(f), s.sequence.frames.width);
        auto& acc = sums_[static_cast<std::size_t>(s.sequence.label)];
        acc.resize(feat.size(), 0.0);
        for (std::size_t k = 0; k < feat.size(); ++k) acc[k] += feat[k];
        ++counts_[static_cast<std::size_t>(s.sequence.label)];
      }
    for (std::size_t c = 0; c < kNumClasses; ++c)
      for (auto& v : sums_[c]) v /= static_cast<double>(counts_[c]);
  }

  int predict(std::span<const float> px, std::size_t side) const {
    const auto feat = spectrum(px, side);
    int best = 0;
    double best_d = 1e300;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      double d = 0;
      for (std::size_t k = 0; k < feat.size(); ++k) d += (feat[k] - sums_[c][k]) * (feat[k] - sums_[c][k]);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    return best;
  }

 private:
  std::vector<std::vector<double>> sums_;
  std::vector<std::size_t> counts_;
};

TEST(SynthSpec, Validation) {
  SynthSpec s;
  EXPECT_NO_THROW(s.validate());
  s.n1_rate = 0.6;
  s.n2_rate = 0.6;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = SynthSpec{};
  s.min_frames = 50;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = SynthSpec{};
  s.image_size = 4;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = SynthSpec{};
  s.n2_rate = -0.1;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(SynthSpec, JsonDefaultsAndRoundTrip) {
  const auto s = nlohmann::json::parse(R"({"n1_rate":0.2,"seed":9})").get<SynthSpec>();
  EXPECT_EQ(s.n1_rate, 0.2);
  EXPECT_EQ(s.seed, 9u);
  EXPECT_EQ(s.image_size, 32u);
  EXPECT_EQ(nlohmann::json(nlohmann::json(s).get<SynthSpec>()), nlohmann::json(s));
}

TEST(Generate, LabelsFoldsAndLengths) {
  SynthSpec spec;
  spec.folds = 3;
  const auto data = generate(spec, 30);
  ASSERT_EQ(data.size(), 30u);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    EXPECT_EQ(s.sequence.label, static_cast<int>(i % 7));
    EXPECT_EQ(s.fold, static_cast<int>((i / 7) % 3));
    EXPECT_GE(s.sequence.frames.count, spec.min_frames);
    EXPECT_LE(s.sequence.frames.count, spec.max_frames);
    EXPECT_EQ(s.mask.size(), s.sequence.frames.count);
    EXPECT_EQ(s.sequence.frames.height, 32u);
  }
  EXPECT_EQ(data[3].sequence.source_id, "seq_00003");
}

TEST(Generate, PixelsAreQuantizedToBytes) {
  const auto data = generate(SynthSpec{}, 7);
  for (const auto& s : data)
    for (float v : s.sequence.frames.pixels) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
      const float b = v * 255.0f;
      ASSERT_EQ(b, std::round(b));
    }
}

TEST(Generate, Deterministic) {
  SynthSpec spec;
  spec.n1_rate = 0.2;
  spec.n2_rate = 0.3;
  spec.seed = 42;
  const auto a = generate(spec, 10);
  const auto b = generate(spec, 10);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].sequence.frames.pixels, b[i].sequence.frames.pixels);
    EXPECT_EQ(a[i].mask, b[i].mask);
  }
}

TEST(Generate, SequencesIndependentOfCount) {
  SynthSpec spec;
  spec.seed = 3;
  const auto few = generate(spec, 4);
  const auto many = generate(spec, 12);
  for (std::size_t i = 0; i < few.size(); ++i) EXPECT_EQ(few[i].sequence.frames.pixels, many[i].sequence.frames.pixels);
}

TEST(Generate, SeedChangesOutput) {
  SynthSpec a, b;
  b.seed = 1;
  EXPECT_NE(generate(a, 1)[0].sequence.frames.pixels, generate(b, 1)[0].sequence.frames.pixels);
}

TEST(Generate, CleanSpecHasCleanMasks) {
  for (const auto& s : generate(SynthSpec{}, 14)) EXPECT_EQ(count_kind(s.mask, FrameKind::kClean), s.mask.size());
}

TEST(Generate, NeutralNoiseRateAndContiguousExpression) {
  SynthSpec spec;
  spec.n2_rate = 0.8;
  spec.seed = 5;
  for (const auto& s : generate(spec, 70)) {
    const double len = static_cast<double>(s.mask.size());
    const auto neutral = count_kind(s.mask, FrameKind::kNeutral);
    if (s.sequence.label == kNeutralClass) {
      EXPECT_EQ(neutral, 0u);
      continue;
    }
    EXPECT_LE(std::abs(static_cast<double>(neutral) - 0.8 * len), 1.0);
    const auto mask = mask_to_string(s.mask);
    const auto first = mask.find('.'), last = mask.rfind('.');
    ASSERT_NE(first, std::string::npos);
    EXPECT_EQ(mask.substr(first, last - first + 1).find('2'), std::string::npos) << mask;
  }
}

TEST(Generate, IrrelevantNoiseRate) {
  SynthSpec spec;
  spec.n1_rate = 0.2;
  spec.seed = 6;
  for (const auto& s : generate(spec, 70)) {
    const double len = static_cast<double>(s.mask.size());
    EXPECT_LE(std::abs(static_cast<double>(count_kind(s.mask, FrameKind::kIrrelevant)) - 0.2 * len), 1.0);
    EXPECT_EQ(count_kind(s.mask, FrameKind::kNeutral), 0u);
  }
}

TEST(Generate, BothNoiseTypesDoNotOverlap) {
  SynthSpec spec;
  spec.n1_rate = 0.3;
  spec.n2_rate = 0.5;
  for (const auto& s : generate(spec, 21)) {
    const double len = static_cast<double>(s.mask.size());
    EXPECT_LE(std::abs(static_cast<double>(count_kind(s.mask, FrameKind::kIrrelevant)) - 0.3 * len), 1.0);
  }
}

TEST(Generate, ClassesAreLinearlySeparable) {
  SynthSpec train_spec;
  train_spec.seed = 1;
  SynthSpec test_spec;
  test_spec.seed = 2;
  SpectrumProbe probe;
  probe.fit(generate(train_spec, 35));
  std::size_t correct = 0, total = 0;
  for (const auto& s : generate(test_spec, 35))
    for (std::size_t f = 0; f < s.mask.size(); f += 3) {
      correct += probe.predict(s.sequence.frames.frame(f), 32) == s.sequence.label;
      ++total;
    }
  EXPECT_GT(static_cast<double>(correct) / static_cast<double>(total), 0.95);
}

TEST(Generate, NeutralNoiseFramesLookNeutral) {
  SynthSpec train_spec;
  train_spec.seed = 1;
  SynthSpec test_spec;
  test_spec.seed = 3;
  test_spec.n2_rate = 0.5;
  SpectrumProbe probe;
  probe.fit(generate(train_spec, 35));
  std::size_t neutral = 0, total = 0;
  for (const auto& s : generate(test_spec, 35))
    for (std::size_t f = 0; f < s.mask.size(); f += 3) {
      if (s.mask[f] != FrameKind::kNeutral) continue;
      neutral += probe.predict(s.sequence.frames.frame(f), 32) == kNeutralClass;
      ++total;
    }
  ASSERT_GT(total, 0u);
  EXPECT_GT(static_cast<double>(neutral) / static_cast<double>(total), 0.95);
}

TEST(WriteSyntheticDataset, RoundTripsThroughManifest) {
  const fs::path dir = fs::temp_directory_path() / "nrdfer_synth_roundtrip";
  fs::remove_all(dir);
  SynthSpec spec;
  spec.n1_rate = 0.25;
  spec.min_frames = 6;
  spec.max_frames = 9;
  const auto data = generate(spec, 9);
  write_synthetic_dataset(dir, data);
  const auto loaded = load_dataset(dir / "manifest.csv");
  const auto masks = read_noise_masks(dir / "noise_masks.csv");
  ASSERT_EQ(loaded.size(), data.size());
  ASSERT_EQ(masks.size(), data.size());
  const auto entries = read_manifest(dir / "manifest.csv");
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(loaded[i].label, data[i].sequence.label);
    EXPECT_EQ(entries[i].fold, data[i].fold);
    EXPECT_EQ(loaded[i].frames.pixels, data[i].sequence.frames.pixels);
    EXPECT_EQ(masks[i].second, data[i].mask);
    EXPECT_EQ(masks[i].first, entries[i].clip_dir);
  }
  const auto folded = load_dataset(dir / "manifest.csv", FoldFilter{.only = 1, .exclude = std::nullopt});
  EXPECT_EQ(folded.size(), 2u);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace nrdfer
