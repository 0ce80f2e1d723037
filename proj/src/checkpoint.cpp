#include "nrdfer/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace nrdfer {

static_assert(std::numeric_limits<float>::is_iec559, "checkpoints store IEEE-754 binary32");

namespace {

constexpr char kMagic[4] = {'N', 'R', 'D', 'F'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void raw(const void* data, std::size_t size) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + size);
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4, "integer");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string string(std::size_t size) {
    need(size, "string");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), size);
    pos_ += size;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError("checkpoint truncated while reading " + std::string(what) + " at byte " +
                            std::to_string(pos_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffu) throw CheckpointError(std::string(what) + " too large for the checkpoint format");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

Checkpoint capture(const NrDferNet<float>& model) {
  Checkpoint ckpt;
  ckpt.config = model.config();
  const auto set = model.parameters();
  auto add = [&](const NamedTensor<float>& t, bool buffer) {
    if (t.tensor.is_meta()) throw CheckpointError("cannot capture shape-only tensor " + t.name);
    const auto d = t.tensor.data();
    ckpt.entries.push_back({t.name, buffer, t.tensor.shape(), std::vector<float>(d.begin(), d.end())});
  };
  for (const auto& p : set.parameters) add(p, false);
  for (const auto& b : set.buffers) add(b, true);
  return ckpt;
}

void restore(NrDferNet<float>& model, const Checkpoint& checkpoint) {
  auto set = model.parameters();
  std::vector<NamedTensor<float>*> targets;
  for (auto& p : set.parameters) targets.push_back(&p);
  for (auto& b : set.buffers) targets.push_back(&b);
  if (targets.size() != checkpoint.entries.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(checkpoint.entries.size()) + " tensors, model has " +
                          std::to_string(targets.size()));
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& e = checkpoint.entries[i];
    auto& t = *targets[i];
    if (e.name != t.name) throw CheckpointError("checkpoint entry " + e.name + " where model expects " + t.name);
    if (e.shape != t.tensor.shape()) {
      throw CheckpointError("shape mismatch for " + e.name + ": checkpoint " + shape_to_string(e.shape) +
                            ", model " + shape_to_string(t.tensor.shape()));
    }
    std::copy(e.values.begin(), e.values.end(), t.tensor.mutable_data().begin());
  }
}

std::vector<std::uint8_t> encode(const Checkpoint& checkpoint) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  const std::string config = nlohmann::json(checkpoint.config).dump();
  w.u32(checked_u32(config.size(), "config"));
  w.raw(config.data(), config.size());
  w.u32(checked_u32(checkpoint.entries.size(), "entry count"));
  for (const auto& e : checkpoint.entries) {
    if (shape_numel(e.shape) != e.values.size()) throw CheckpointError("entry " + e.name + ": shape/value mismatch");
    w.u32(checked_u32(e.name.size(), "name"));
    w.raw(e.name.data(), e.name.size());
    w.u32(e.buffer ? 1 : 0);
    w.u32(checked_u32(e.shape.size(), "rank"));
    for (auto d : e.shape) w.u32(checked_u32(d, "dimension"));
    for (float v : e.values) w.f32(v);
  }
  return w.bytes;
}

Checkpoint decode(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.string(4) != std::string(kMagic, 4)) throw CheckpointError("not a checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  try {
    ckpt.config = nlohmann::json::parse(r.string(r.u32())).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = r.string(r.u32());
    const auto kind = r.u32();
    if (kind > 1) throw CheckpointError("entry " + e.name + ": unknown kind " + std::to_string(kind));
    e.buffer = kind == 1;
    const auto rank = r.u32();
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.u32());
    const std::size_t n = shape_numel(e.shape);
    e.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) e.values[k] = r.f32();
    ckpt.entries.push_back(std::move(e));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after the last checkpoint entry");
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = encode(checkpoint);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

std::unique_ptr<NrDferNet<float>> load_model(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  auto model = std::make_unique<NrDferNet<float>>(ckpt.config);
  restore(*model, ckpt);
  return model;
}

}  // namespace nrdfer
