#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "shakelab/checkpoint.hpp"
#include "shakelab/errors.hpp"

using namespace shakelab;
namespace fs = std::filesystem;

namespace {

template <typename T>
SgdOptimizer<T>* const no_opt = nullptr;

fs::path tmp(const char* name) {
  const fs::path dir = fs::path(SHAKELAB_TEST_TMP) / "ckpt";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ModelSpec small_spec() {
  ModelSpec s;
  s.depth = 8;
  s.base_width = 4;
  s.num_classes = 4;
  return s;
}

CheckpointMeta sample_meta() {
  CheckpointMeta m;
  m.config_json = R"({"model":{"depth":8}})";
  m.progress.next_epoch = 3;
  m.progress.step = 57;
  m.progress.shake_counter = 123456789012345ull;
  m.model_dtype = "double";
  m.stats.mean = {0.1, 0.2, 0.3};
  m.stats.std = {0.4, 0.5, 0.6};
  m.history.push_back({0, 0.1, 2.5, 80.0, 75.0, 1.25});
  m.history.push_back({1, 0.05, 1.5, 40.0, 35.5, 1.5});
  return m;
}

template <typename T>
void perturb(Model<T>& m, double by) {
  for (auto& p : m.params())
    for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] += static_cast<T>(by);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Model<double> a(small_spec(), 1);
  SgdOptimizer<double> opt_a(a.params(), 0.9, 5e-4);
  for (auto& p : a.params()) p.grad.fill(0.125);
  opt_a.step(a.params(), 0.1);
  a.buffers()[0].value.fill(0.75);
  const auto path = tmp("roundtrip.ckpt");
  const auto meta = sample_meta();
  save_checkpoint(path, a, &opt_a, meta);

  const Checkpoint ck = read_checkpoint(path);
  EXPECT_EQ(ck.meta.config_json, meta.config_json);
  EXPECT_EQ(ck.meta.progress.next_epoch, 3);
  EXPECT_EQ(ck.meta.progress.step, 57);
  EXPECT_EQ(ck.meta.progress.shake_counter, meta.progress.shake_counter);
  EXPECT_EQ(ck.meta.model_dtype, "double");
  EXPECT_EQ(ck.meta.stats.mean, meta.stats.mean);
  EXPECT_EQ(ck.meta.stats.std, meta.stats.std);
  ASSERT_EQ(ck.meta.history.size(), 2u);
  EXPECT_TRUE(ck.meta.history[1].same_result(meta.history[1]));
  EXPECT_EQ(ck.meta.history[1].seconds, 1.5);

  Model<double> b(small_spec(), 2);
  SgdOptimizer<double> opt_b(b.params(), 0.9, 5e-4);
  apply_checkpoint(ck, b, &opt_b);
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    EXPECT_EQ(a.params()[i].value, b.params()[i].value);
    EXPECT_EQ(opt_a.velocity()[i], opt_b.velocity()[i]);
  }
  for (std::size_t i = 0; i < a.buffers().size(); ++i)
    EXPECT_EQ(a.buffers()[i].value, b.buffers()[i].value);
}

TEST(Checkpoint, FloatModelRoundTrip) {
  Model<float> a(small_spec(), 3);
  const auto path = tmp("float.ckpt");
  save_checkpoint(path, a, no_opt<float>, CheckpointMeta{});
  Model<float> b(small_spec(), 4);
  apply_checkpoint(read_checkpoint(path), b, no_opt<float>);
  for (std::size_t i = 0; i < a.params().size(); ++i)
    EXPECT_EQ(a.params()[i].value, b.params()[i].value);
}

class CorruptCheckpoint : public ::testing::Test {
 protected:
  void SetUp() override {
    Model<float> m(small_spec(), 1);
    path_ = tmp("corrupt.ckpt");
    save_checkpoint(path_, m, no_opt<float>, sample_meta());
    bytes_ = slurp(path_);
  }
  fs::path path_;
  std::vector<char> bytes_;
};

TEST_F(CorruptCheckpoint, TruncationIsDetected) {
  for (std::size_t keep : {std::size_t{0}, std::size_t{7}, std::size_t{40}, bytes_.size() / 2,
                           bytes_.size() - 1}) {
    spit(path_, {bytes_.begin(), bytes_.begin() + static_cast<std::ptrdiff_t>(keep)});
    EXPECT_THROW(read_checkpoint(path_), FormatError) << keep;
  }
}

TEST_F(CorruptCheckpoint, FlippedByteFailsChecksum) {
  auto bad = bytes_;
  bad[bad.size() / 2] ^= 0x01;
  spit(path_, bad);
  try {
    read_checkpoint(path_);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }
}

TEST_F(CorruptCheckpoint, BadMagicIsRejected) {
  auto bad = bytes_;
  bad[0] = 'X';
  spit(path_, bad);
  EXPECT_THROW(read_checkpoint(path_), FormatError);
}

TEST(Checkpoint, MissingFileIsFormatError) {
  EXPECT_THROW(read_checkpoint(tmp("does_not_exist.ckpt")), FormatError);
}

TEST(Checkpoint, ShapeMismatchLeavesModelUntouched) {
  Model<float> wide(small_spec(), 1);
  auto spec = small_spec();
  spec.base_width = 8;
  Model<float> other(spec, 1);
  const auto path = tmp("wide.ckpt");
  save_checkpoint(path, other, no_opt<float>, CheckpointMeta{});
  Model<float> before(small_spec(), 1);
  perturb(wide, 0.0);
  EXPECT_THROW(apply_checkpoint(read_checkpoint(path), wide, no_opt<float>), FormatError);
  for (std::size_t i = 0; i < wide.params().size(); ++i)
    EXPECT_EQ(wide.params()[i].value, before.params()[i].value);
}

TEST(Checkpoint, SaveReplacesExistingFile) {
  const auto path = tmp("replace.ckpt");
  Model<float> a(small_spec(), 1), b(small_spec(), 2);
  save_checkpoint(path, a, no_opt<float>, CheckpointMeta{});
  save_checkpoint(path, b, no_opt<float>, CheckpointMeta{});
  Model<float> c(small_spec(), 3);
  apply_checkpoint(read_checkpoint(path), c, no_opt<float>);
  EXPECT_EQ(c.params()[0].value, b.params()[0].value);
  EXPECT_FALSE(fs::exists(path.string() + ".tmp"));
}

}  // namespace
