#include "nrdfer/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "nrdfer/config.hpp"

namespace nrdfer {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

int parse_int(const std::string& text, const std::string& what, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const int value = std::stoi(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return value;
  } catch (const std::exception&) {
    throw DataError("manifest line " + std::to_string(line_no) + ": bad " + what + " '" + text + "'");
  }
}

}  // namespace

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::vector<ManifestEntry> entries;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != "clip_dir,label,fold") {
        throw DataError("manifest " + path.string() + ": expected header 'clip_dir,label,fold', got '" + line + "'");
      }
      header_seen = true;
      continue;
    }
    const auto fields = split_csv_line(line);
    if (fields.size() != 3 || fields[0].empty()) {
      throw DataError("manifest line " + std::to_string(line_no) + ": expected 3 fields");
    }
    ManifestEntry e{fields[0], parse_int(fields[1], "label", line_no), parse_int(fields[2], "fold", line_no)};
    if (e.label < 0 || e.label >= static_cast<int>(kNumClasses)) {
      throw DataError("manifest line " + std::to_string(line_no) + ": label " + fields[1] + " outside 0..6");
    }
    entries.push_back(std::move(e));
  }
  if (!header_seen) throw DataError("manifest " + path.string() + " is empty");
  return entries;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << "clip_dir,label,fold\n";
  for (const auto& e : entries) {
    if (e.clip_dir.find(',') != std::string::npos) throw DataError("clip_dir may not contain ',': " + e.clip_dir);
    out << e.clip_dir << ',' << e.label << ',' << e.fold << '\n';
  }
}

FrameStack read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  auto next_token = [&]() {
    std::string token;
    char c = 0;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!token.empty()) break;
        continue;
      }
      token.push_back(c);
    }
    return token;
  };
  if (next_token() != "P6") throw DataError(path.string() + ": not a binary PPM (P6)");
  std::size_t width = 0, height = 0, maxval = 0;
  try {
    width = std::stoul(next_token());
    height = std::stoul(next_token());
    maxval = std::stoul(next_token());
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed PPM header");
  }
  if (width == 0 || height == 0 || maxval != 255) {
    throw DataError(path.string() + ": unsupported PPM (need positive size and maxval 255)");
  }
  std::vector<unsigned char> raw(width * height * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw DataError(path.string() + ": truncated pixel data");
  std::vector<float> chw(raw.size());
  const std::size_t plane = width * height;
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) chw[c * plane + p] = static_cast<float>(raw[p * 3 + c]) / 255.0f;
  }
  FrameStack stack;
  stack.append(chw, height, width);
  return stack;
}

void write_ppm(const fs::path& path, std::span<const float> chw, std::size_t height, std::size_t width) {
  const std::size_t plane = height * width;
  if (chw.size() != 3 * plane) throw DataError("write_ppm: buffer does not hold 3 x H x W values");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image " + path.string());
  out << "P6\n" << width << ' ' << height << "\n255\n";
  std::vector<unsigned char> raw(3 * plane);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      const float v = std::clamp(chw[c * plane + p], 0.0f, 1.0f);
      raw[p * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

FrameStack read_frame_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("clip directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    return a.filename().string() < b.filename().string();
  });
  if (files.empty()) throw DataError("no .ppm frames in " + dir.string());
  FrameStack stack;
  for (const auto& f : files) {
    const FrameStack frame = read_ppm(f);
    stack.append(frame.pixels, frame.height, frame.width);
  }
  return stack;
}

std::vector<RawSequence> load_dataset(const fs::path& manifest, FoldFilter filter) {
  const fs::path base = manifest.parent_path();
  std::vector<RawSequence> out;
  for (const auto& e : read_manifest(manifest)) {
    if (filter.only && e.fold != *filter.only) continue;
    if (filter.exclude && e.fold == *filter.exclude) continue;
    const fs::path dir = fs::path(e.clip_dir).is_absolute() ? fs::path(e.clip_dir) : base / e.clip_dir;
    RawSequence seq;
    seq.frames = read_frame_dir(dir);
    seq.label = e.label;
    seq.source_id = e.clip_dir;
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace nrdfer
