#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "nrdfer/checkpoint.hpp"
#include "nrdfer/ops.hpp"

namespace nrdfer {
namespace {

namespace fs = std::filesystem;

ModelConfig small_config(std::uint64_t seed) {
  auto c = ModelConfig::gradient_check();
  c.seed = seed;
  return c;
}

std::uint32_t read_u32(const std::vector<std::uint8_t>& bytes, std::size_t at) {
  return static_cast<std::uint32_t>(bytes[at]) | static_cast<std::uint32_t>(bytes[at + 1]) << 8 |
         static_cast<std::uint32_t>(bytes[at + 2]) << 16 | static_cast<std::uint32_t>(bytes[at + 3]) << 24;
}

// Runs one training-mode forward so the batch-norm buffers move off their initial values.
void touch_buffers(NrDferNet<float>& net) {
  const auto& c = net.config();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0, 1);
  std::vector<float> px(2 * c.num_frames() * 3 * c.image_size * c.image_size);
  for (auto& v : px) v = u(rng);
  NoGradGuard guard;
  net.forward(Tensor<float>({2, c.num_frames(), 3, c.image_size, c.image_size}, px), true);
}

TEST(Checkpoint, CaptureListsParametersThenBuffers) {
  NrDferNet<float> net(small_config(0));
  const auto ck = capture(net);
  const auto set = net.parameters();
  ASSERT_EQ(ck.entries.size(), set.parameters.size() + set.buffers.size());
  for (std::size_t i = 0; i < set.parameters.size(); ++i) {
    EXPECT_EQ(ck.entries[i].name, set.parameters[i].name);
    EXPECT_FALSE(ck.entries[i].buffer);
  }
  EXPECT_TRUE(ck.entries.back().buffer);
}

TEST(Checkpoint, EncodeDecodeIsBitExact) {
  NrDferNet<float> net(small_config(3));
  touch_buffers(net);
  const auto ck = capture(net);
  const auto bytes = encode(ck);
  const auto back = decode(bytes);
  EXPECT_EQ(nlohmann::json(back.config), nlohmann::json(ck.config));
  ASSERT_EQ(back.entries.size(), ck.entries.size());
  for (std::size_t i = 0; i < ck.entries.size(); ++i) {
    EXPECT_EQ(back.entries[i].name, ck.entries[i].name);
    EXPECT_EQ(back.entries[i].buffer, ck.entries[i].buffer);
    EXPECT_EQ(back.entries[i].shape, ck.entries[i].shape);
    ASSERT_EQ(back.entries[i].values.size(), ck.entries[i].values.size());
    EXPECT_EQ(std::memcmp(back.entries[i].values.data(), ck.entries[i].values.data(),
                          ck.entries[i].values.size() * sizeof(float)),
              0);
  }
  EXPECT_EQ(encode(back), bytes);
}

TEST(Checkpoint, HeaderLayout) {
  NrDferNet<float> net(small_config(0));
  const auto bytes = encode(capture(net));
  ASSERT_GT(bytes.size(), 12u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "NRDF");
  EXPECT_EQ(read_u32(bytes, 4), kCheckpointVersion);
  const auto json_len = read_u32(bytes, 8);
  const std::string json(bytes.begin() + 12, bytes.begin() + 12 + json_len);
  EXPECT_EQ(nlohmann::json::parse(json).at("channels"), 4);
  EXPECT_EQ(read_u32(bytes, 12 + json_len), capture(net).entries.size());
}

TEST(Checkpoint, RestoreReproducesOutputs) {
  NrDferNet<float> a(small_config(1));
  touch_buffers(a);
  NrDferNet<float> b(small_config(2));
  restore(b, decode(encode(capture(a))));
  const auto& c = a.config();
  std::vector<float> px(c.num_frames() * 3 * c.image_size * c.image_size, 0.25f);
  const Tensor<float> x({1, c.num_frames(), 3, c.image_size, c.image_size}, px);
  NoGradGuard guard;
  const auto la = a.forward(x, false).logits;
  const auto lb = b.forward(x, false).logits;
  EXPECT_TRUE(std::equal(la.data().begin(), la.data().end(), lb.data().begin()));
}

TEST(Checkpoint, RestoreRejectsMismatchedModel) {
  NrDferNet<float> small(small_config(0));
  NrDferNet<float> micro(ModelConfig::micro());
  EXPECT_THROW(restore(micro, capture(small)), CheckpointError);
  auto ck = capture(small);
  ck.entries[0].name = "renamed";
  EXPECT_THROW(restore(small, ck), CheckpointError);
  ck = capture(small);
  ck.entries[0].shape = {ck.entries[0].values.size()};
  EXPECT_THROW(restore(small, ck), CheckpointError);
}

TEST(Checkpoint, DecodeRejectsCorruptInput) {
  NrDferNet<float> net(small_config(0));
  const auto bytes = encode(capture(net));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode(bad_magic), CheckpointError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(decode(bad_version), CheckpointError);
  const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 3);
  EXPECT_THROW(decode(truncated), CheckpointError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode(trailing), CheckpointError);
  EXPECT_THROW(decode(std::vector<std::uint8_t>{}), CheckpointError);
}

TEST(Checkpoint, FileRoundTripAndLoadModel) {
  const fs::path path = fs::temp_directory_path() / "nrdfer_checkpoint_test.nrdf";
  NrDferNet<float> net(small_config(5));
  touch_buffers(net);
  write_checkpoint(path, capture(net));
  const auto loaded = load_model(path);
  EXPECT_EQ(encode(capture(*loaded)), encode(capture(net)));
  fs::remove(path);
  EXPECT_THROW(read_checkpoint(path), CheckpointError);
}

}  // namespace
}  // namespace nrdfer
