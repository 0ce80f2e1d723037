#include "nrdfer/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "nrdfer/config.hpp"
#include "nrdfer/dataset.hpp"

namespace nrdfer {

namespace fs = std::filesystem;

void SynthSpec::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("synth spec: " + msg); };
  if (image_size < 8) fail("image_size must be >= 8");
  if (min_frames == 0 || min_frames > max_frames) fail("need 1 <= min_frames <= max_frames");
  if (n1_rate < 0 || n1_rate > 1 || n2_rate < 0 || n2_rate > 1) fail("noise rates must lie in [0, 1]");
  if (n1_rate + n2_rate > 1) fail("n1_rate + n2_rate must not exceed 1");
  if (pixel_noise < 0) fail("pixel_noise must be non-negative");
  if (folds == 0) fail("folds must be positive");
}

void to_json(nlohmann::json& j, const SynthSpec& s) {
  j = nlohmann::json{{"sequences", s.sequences}, {"image_size", s.image_size}, {"min_frames", s.min_frames},
                     {"max_frames", s.max_frames}, {"n1_rate", s.n1_rate},       {"n2_rate", s.n2_rate},
                     {"pixel_noise", s.pixel_noise}, {"folds", s.folds},         {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SynthSpec& s) {
  SynthSpec d;
  s.sequences = j.value("sequences", d.sequences);
  s.image_size = j.value("image_size", d.image_size);
  s.min_frames = j.value("min_frames", d.min_frames);
  s.max_frames = j.value("max_frames", d.max_frames);
  s.n1_rate = j.value("n1_rate", d.n1_rate);
  s.n2_rate = j.value("n2_rate", d.n2_rate);
  s.pixel_noise = j.value("pixel_noise", d.pixel_noise);
  s.folds = j.value("folds", d.folds);
  s.seed = j.value("seed", d.seed);
}

namespace {

constexpr double kPi = std::numbers::pi;

struct Rgb {
  double r, g, b;
  double operator[](std::size_t c) const { return c == 0 ? r : (c == 1 ? g : b); }
};

Rgb hue_to_rgb(double hue) {
  const double h = hue * 6.0;
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  Rgb c{0, 0, 0};
  switch (static_cast<int>(h) % 6) {
    case 0: c = {1, x, 0}; break;
    case 1: c = {x, 1, 0}; break;
    case 2: c = {0, 1, x}; break;
    case 3: c = {0, x, 1}; break;
    case 4: c = {x, 0, 1}; break;
    default: c = {1, 0, x}; break;
  }
  return c;
}

struct SequenceStyle {
  double phase = 0;
  double amplitude = 1;
  double jitter_x = 0;
  double jitter_y = 0;
};

void render_motif(int cls, std::size_t frame, const SequenceStyle& style, std::size_t size, std::span<float> out) {
  const double s = static_cast<double>(size);
  const double theta = cls * kPi / kNumClasses;
  const double freq = 2.0 * kPi * (2 + cls % 3) / s;
  double velocity = 0.0;
  if (cls != kNeutralClass) velocity = (cls % 2 ? 0.35 : -0.35) * (1.0 + 0.25 * (cls % 3));
  const double angle = 2.0 * kPi * cls / kNumClasses;
  const double cx = s / 2 + 0.28 * s * std::cos(angle) + style.jitter_x;
  const double cy = s / 2 + 0.28 * s * std::sin(angle) + style.jitter_y;
  const double sigma = 0.12 * s;
  const Rgb tint = hue_to_rgb(static_cast<double>(cls) / kNumClasses);
  const double ct = std::cos(theta), st = std::sin(theta);
  const double shift = style.phase + velocity * static_cast<double>(frame);
  const std::size_t plane = size * size;
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double grating = std::sin(freq * (x * ct + y * st) + shift);
      const double dx = x - cx, dy = y - cy;
      const double blob = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = 0.5 + style.amplitude * (0.18 * grating + 0.35 * blob * (tint[c] - 0.4));
        out[c * plane + y * size + x] = static_cast<float>(v);
      }
    }
  }
}

void render_irrelevant(std::mt19937_64& rng, std::size_t size, std::span<float> out) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double s = static_cast<double>(size);
  const double theta = unit(rng) * kPi, freq = 2.0 * kPi * (1.0 + 5.0 * unit(rng)) / s, phase = unit(rng) * 2 * kPi;
  struct Blob {
    double x, y, sigma;
    Rgb color;
  };
  std::vector<Blob> blobs;
  for (int i = 0; i < 3; ++i) {
    blobs.push_back({unit(rng) * s, unit(rng) * s, (0.08 + 0.12 * unit(rng)) * s, {unit(rng), unit(rng), unit(rng)}});
  }
  const std::size_t plane = size * size;
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double grating = 0.25 * std::sin(freq * (x * std::cos(theta) + y * std::sin(theta)) + phase);
      for (std::size_t c = 0; c < 3; ++c) {
        double v = 0.5 + grating;
        for (const auto& b : blobs) {
          const double dx = x - b.x, dy = y - b.y;
          v += 0.5 * std::exp(-(dx * dx + dy * dy) / (2 * b.sigma * b.sigma)) * (b.color[c] - 0.5);
        }
        out[c * plane + y * size + x] = static_cast<float>(v);
      }
    }
  }
}

std::size_t count_for_rate(double rate, std::size_t frames) {
  if (rate <= 0) return 0;
  return std::min(frames, static_cast<std::size_t>(std::ceil(rate * static_cast<double>(frames) - 1e-9)));
}

SyntheticSequence generate_one(const SynthSpec& spec, std::size_t index) {
  std::seed_seq seeds{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seeds);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int label = static_cast<int>(index % kNumClasses);
  std::uniform_int_distribution<std::size_t> length_dist(spec.min_frames, spec.max_frames);
  const std::size_t frames = length_dist(rng);

  SequenceStyle style;
  style.phase = unit(rng) * 2 * kPi;
  style.amplitude = 0.8 + 0.4 * unit(rng);
  style.jitter_x = (unit(rng) * 2 - 1) * 1.5;
  style.jitter_y = (unit(rng) * 2 - 1) * 1.5;

  std::vector<FrameKind> mask(frames, FrameKind::kClean);
  if (label != kNeutralClass) {
    const std::size_t neutral = count_for_rate(spec.n2_rate, frames);
    if (neutral > 0) {
      const std::size_t run = frames - neutral;
      std::uniform_int_distribution<std::size_t> start_dist(0, frames - run);
      const std::size_t start = start_dist(rng);
      for (std::size_t f = 0; f < frames; ++f) {
        if (f < start || f >= start + run) mask[f] = FrameKind::kNeutral;
      }
    }
  }
  std::vector<std::size_t> candidates;
  for (std::size_t f = 0; f < frames; ++f) {
    if (mask[f] == FrameKind::kClean) candidates.push_back(f);
  }
  const std::size_t irrelevant = std::min(count_for_rate(spec.n1_rate, frames), candidates.size());
  for (std::size_t i = 0; i < irrelevant; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
    std::swap(candidates[i], candidates[pick(rng)]);
    mask[candidates[i]] = FrameKind::kIrrelevant;
  }

  SyntheticSequence out;
  out.sequence.label = label;
  std::ostringstream id;
  id << "seq_" << std::setw(5) << std::setfill('0') << index;
  out.sequence.source_id = id.str();
  out.fold = static_cast<int>((index / kNumClasses) % spec.folds);
  const std::size_t size = spec.image_size;
  std::vector<float> frame(3 * size * size);
  std::normal_distribution<double> noise(0.0, spec.pixel_noise);
  for (std::size_t f = 0; f < frames; ++f) {
    switch (mask[f]) {
      case FrameKind::kClean: render_motif(label, f, style, size, frame); break;
      case FrameKind::kNeutral: render_motif(kNeutralClass, f, style, size, frame); break;
      case FrameKind::kIrrelevant: render_irrelevant(rng, size, frame); break;
    }
    for (auto& v : frame) {
      const double noisy = std::clamp(v + (spec.pixel_noise > 0 ? noise(rng) : 0.0), 0.0, 1.0);
      v = static_cast<float>(std::lround(noisy * 255.0)) / 255.0f;
    }
    out.sequence.frames.append(frame, size, size);
  }
  out.mask = std::move(mask);
  return out;
}

}  // namespace

std::vector<SyntheticSequence> generate(const SynthSpec& spec, std::size_t n_sequences) {
  spec.validate();
  std::vector<SyntheticSequence> out;
  out.reserve(n_sequences);
  for (std::size_t i = 0; i < n_sequences; ++i) out.push_back(generate_one(spec, i));
  return out;
}

std::string mask_to_string(const std::vector<FrameKind>& mask) {
  std::string s;
  for (auto k : mask) s.push_back(static_cast<char>(k));
  return s;
}

void write_synthetic_dataset(const fs::path& dir, const std::vector<SyntheticSequence>& sequences) {
  fs::create_directories(dir / "clips");
  std::vector<ManifestEntry> entries;
  std::ofstream masks(dir / "noise_masks.csv", std::ios::binary);
  if (!masks) throw DataError("cannot write " + (dir / "noise_masks.csv").string());
  masks << "clip_dir,mask\n";
  for (const auto& s : sequences) {
    const std::string rel = "clips/" + s.sequence.source_id;
    const fs::path clip_dir = dir / rel;
    fs::create_directories(clip_dir);
    const auto& frames = s.sequence.frames;
    for (std::size_t f = 0; f < frames.count; ++f) {
      std::ostringstream name;
      name << std::setw(6) << std::setfill('0') << f << ".ppm";
      write_ppm(clip_dir / name.str(), frames.frame(f), frames.height, frames.width);
    }
    entries.push_back({rel, s.sequence.label, s.fold});
    masks << rel << ',' << mask_to_string(s.mask) << '\n';
  }
  write_manifest(dir / "manifest.csv", entries);
}

std::vector<std::pair<std::string, std::vector<FrameKind>>> read_noise_masks(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "clip_dir,mask") throw DataError(path.string() + ": expected header 'clip_dir,mask'");
  std::vector<std::pair<std::string, std::vector<FrameKind>>> out;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DataError(path.string() + ": malformed row '" + line + "'");
    std::vector<FrameKind> mask;
    for (char c : line.substr(comma + 1)) {
      if (c != '.' && c != '1' && c != '2') throw DataError(path.string() + ": bad mask character");
      mask.push_back(static_cast<FrameKind>(c));
    }
    out.emplace_back(line.substr(0, comma), std::move(mask));
  }
  return out;
}

}  // namespace nrdfer
