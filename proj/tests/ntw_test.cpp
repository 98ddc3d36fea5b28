#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "fruitnet/ntw.hpp"
#include "test_util.hpp"

namespace fruitnet {
namespace {

namespace fs = std::filesystem;

class NtwTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("fruitnet_ntw_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path dir_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

bool bit_identical(const TensorF& a, const TensorF& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(float)) == 0;
}

// Byte writer kept independent of the library encoder, standing in for the
// external exporter.
struct Writer {
  std::string bytes = "NTW1";
  void u8(unsigned v) { bytes.push_back(static_cast<char>(v)); }
  void u16(unsigned v) { u8(v & 0xFF), u8(v >> 8); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8((v >> (8 * i)) & 0xFF);
  }
  void tensor(const std::string& name, const TensorF& t) {
    u16(static_cast<unsigned>(name.size()));
    bytes += name;
    u8(0);
    u8(static_cast<unsigned>(t.rank()));
    for (Index d : t.shape()) u32(static_cast<std::uint32_t>(d));
    for (Index i = 0; i < t.size(); ++i) u32(std::bit_cast<std::uint32_t>(t[i]));
  }
};

void randomize(ModelGraph& m, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  for (auto& [name, t] : m.params) t = testing::random_tensor<float>(t.shape(), rng, -3, 3);
}

TEST_F(NtwTest, RoundTripIsBitExactForBothArchitectures) {
  ModelGraph models[] = {build_mobilenet(false, {.input_size = 32}), build_base_cnn(6, {.input_size = 32})};
  for (ModelGraph& m : models) {
    randomize(m, 1);
    const fs::path path = dir_ / "w.ntw";
    save_weights(m, path);
    ModelGraph fresh = m;
    randomize(fresh, 2);
    load_weights(fresh, path);
    ASSERT_EQ(fresh.params.size(), m.params.size());
    for (const auto& [name, t] : m.params) EXPECT_TRUE(bit_identical(t, fresh.params.at(name))) << name;
    // Saving the reloaded model reproduces the file byte for byte.
    save_weights(fresh, dir_ / "again.ntw");
    EXPECT_EQ(slurp(path), slurp(dir_ / "again.ntw"));
  }
}

TEST_F(NtwTest, SpecialFloatValuesSurvive) {
  WeightStore s;
  TensorF t({5});
  t[0] = -0.0f;
  t[1] = std::numeric_limits<float>::denorm_min();
  t[2] = std::numeric_limits<float>::infinity();
  t[3] = std::bit_cast<float>(0x7FC01234u);  // NaN with payload
  t[4] = 1.0f / 3.0f;
  s.set("x", t);
  const WeightStore back = decode_ntw(encode_ntw(s));
  EXPECT_TRUE(bit_identical(back.at("x"), t));
}

TEST_F(NtwTest, LayoutMatchesHandWrittenBytes) {
  WeightStore s;
  s.set("a/kernel", TensorF({2, 1}, {1.5f, -2.0f}));
  s.set("b", TensorF({3}, {0.0f, 1.0f, 2.0f}));
  Writer w;
  w.u32(2);
  w.tensor("a/kernel", s.at("a/kernel"));
  w.tensor("b", s.at("b"));
  EXPECT_EQ(encode_ntw(s), w.bytes);
  // Magic, count, then the first name length.
  EXPECT_EQ(w.bytes.substr(0, 10), std::string("NTW1\x02\x00\x00\x00\x08\x00", 10));
}

TEST_F(NtwTest, BadMagicIsRejected) {
  WeightStore s;
  s.set("t", TensorF({2}, {1, 2}));
  std::string bytes = encode_ntw(s);
  bytes[3] = '2';
  spit(dir_ / "bad.ntw", bytes);
  try {
    read_ntw(dir_ / "bad.ntw");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("bad magic/version"), std::string::npos) << e.what();
  }
}

TEST_F(NtwTest, TruncationAnywhereIsRejected) {
  ModelGraph m = build_base_cnn(6, {.input_size = 32});
  const std::string bytes = encode_ntw(m.params);
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{6}, std::size_t{9}, std::size_t{25},
                          bytes.size() / 2, bytes.size() - 1}) {
    try {
      decode_ntw(std::string_view(bytes).substr(0, cut));
      FAIL() << "accepted a file cut at " << cut;
    } catch (const FormatError& e) {
      const std::string what = e.what();
      EXPECT_TRUE(what.find("truncated") != std::string::npos || what.find("bad magic") != std::string::npos)
          << what;
    }
  }
  spit(dir_ / "cut.ntw", bytes.substr(0, bytes.size() - 7));
  EXPECT_THROW(read_ntw(dir_ / "cut.ntw"), FormatError);
}

TEST_F(NtwTest, MalformedHeadersAreRejected) {
  Writer dtype;
  dtype.u32(1);
  dtype.u16(1), dtype.bytes += "t", dtype.u8(1), dtype.u8(1), dtype.u32(1), dtype.u32(0);
  EXPECT_THROW(decode_ntw(dtype.bytes), FormatError);

  Writer trailing;
  trailing.u32(0);
  trailing.u8(7);
  EXPECT_THROW(decode_ntw(trailing.bytes), FormatError);

  Writer dup;
  dup.u32(2);
  dup.tensor("t", TensorF({1}, {1}));
  dup.tensor("t", TensorF({1}, {2}));
  EXPECT_THROW(decode_ntw(dup.bytes), FormatError);
}

TEST_F(NtwTest, MissingTensorsAreAllNamed) {
  ModelGraph m = build_base_cnn(6, {.input_size = 32});
  WeightStore partial = m.params;
  partial.erase("conv_2/kernel");
  partial.erase("bn_3/moving_mean");
  const WeightStore before = m.params;
  try {
    bind_weights(m, partial);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("conv_2/kernel"), std::string::npos) << what;
    EXPECT_NE(what.find("bn_3/moving_mean"), std::string::npos) << what;
  }
  EXPECT_EQ(m.params, before);
}

TEST_F(NtwTest, ShapeMismatchNamesBothShapes) {
  ModelGraph m = build_base_cnn(6, {.input_size = 32});
  WeightStore wrong = m.params;
  wrong.set("logits/kernel", TensorF({128, 5}));
  try {
    bind_weights(m, wrong);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("logits/kernel"), std::string::npos) << what;
    EXPECT_NE(what.find("[128x5]"), std::string::npos) << what;
    EXPECT_NE(what.find("[128x6]"), std::string::npos) << what;
  }
}

TEST_F(NtwTest, SkippedHeadLayersKeepTheirInit) {
  ModelGraph source = attach_transfer_head(build_mobilenet(false, {.input_size = 32}), 6, 1);
  randomize(source, 4);
  ModelGraph target = attach_transfer_head(build_mobilenet(false, {.input_size = 32}), 2, 1);
  const TensorF head = target.params.at("head_logits/kernel");
  bind_weights(target, source.params, {.skip_layers = head_layer_names(target)});
  EXPECT_TRUE(bit_identical(target.params.at("conv1/kernel"), source.params.at("conv1/kernel")));
  EXPECT_TRUE(bit_identical(target.params.at("head_logits/kernel"), head));
}

TEST_F(NtwTest, ExporterStyleFileLoadsIntoFullMobileNet) {
  // Written tensor by tensor in a different order than the model's, with an
  // extra unrelated tensor, the way an external converter might emit it.
  const ModelGraph reference = build_mobilenet(true, {.seed = 77});
  Writer w;
  w.u32(static_cast<std::uint32_t>(reference.params.size() + 1));
  std::vector<std::string> names;
  for (const auto& [name, t] : reference.params) names.push_back(name);
  std::reverse(names.begin(), names.end());
  for (const auto& name : names) w.tensor(name, reference.params.at(name));
  w.tensor("optimizer/iterations", TensorF({1}, {0}));
  spit(dir_ / "imagenet.ntw", w.bytes);

  ModelGraph m = build_mobilenet(true);
  const WeightStore file = load_weights(m, dir_ / "imagenet.ntw");
  EXPECT_EQ(file.size(), reference.params.size() + 1);
  for (const auto& [name, t] : reference.params) EXPECT_TRUE(bit_identical(m.params.at(name), t)) << name;
  EXPECT_EQ(census(m).parameters, 4253864);
}

TEST_F(NtwTest, UnreadablePathIsReported) {
  EXPECT_THROW(read_ntw(dir_ / "absent.ntw"), DataError);
}

}  // namespace
}  // namespace fruitnet
