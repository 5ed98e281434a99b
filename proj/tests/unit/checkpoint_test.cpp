#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

#include "mpft/cli/checkpoint.hpp"
#include "mpft/errors.hpp"

using namespace mpft;
using namespace mpft::cli;

namespace {

Checkpoint sample() {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 1e3);
  Checkpoint c;
  c.config = {{"seed", 7}, {"name", "toy"}, {"nested", {{"alpha", 0.1}}}};
  for (std::size_t k = 0; k < 3; ++k) {
    NamedArray a{"array" + std::to_string(k), {k + 1, 3}, {}};
    for (std::size_t i = 0; i < (k + 1) * 3; ++i) a.data.push_back(n(rng));
    c.arrays.push_back(std::move(a));
  }
  c.arrays[0].data[0] = -0.0;
  c.arrays[0].data[1] = 5e-324;
  return c;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("mpft_ckpt_" + std::to_string(::getpid()) + "_" + name);
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  const Checkpoint c = sample();
  const Checkpoint back = decode_checkpoint(encode_checkpoint(c));
  EXPECT_EQ(back.config, c.config);
  ASSERT_EQ(back.arrays.size(), c.arrays.size());
  for (std::size_t k = 0; k < c.arrays.size(); ++k) {
    EXPECT_EQ(back.arrays[k].name, c.arrays[k].name);
    EXPECT_EQ(back.arrays[k].shape, c.arrays[k].shape);
    ASSERT_EQ(back.arrays[k].data.size(), c.arrays[k].data.size());
    EXPECT_EQ(std::memcmp(back.arrays[k].data.data(), c.arrays[k].data.data(), c.arrays[k].data.size() * 8), 0);
  }
  EXPECT_TRUE(std::signbit(back.find("array0").data[0]));
  EXPECT_THROW(back.find("missing"), Error);
}

TEST(Checkpoint, HeaderLayout) {
  const std::string bytes = encode_checkpoint(sample());
  ASSERT_GE(bytes.size(), 16u);
  EXPECT_EQ(bytes.substr(0, 4), "MPFT");
  std::uint32_t version = 0;
  for (int i = 3; i >= 0; --i) version = (version << 8) | static_cast<unsigned char>(bytes[4 + i]);
  EXPECT_EQ(version, kCheckpointVersion);
  std::uint64_t meta = 0;
  for (int i = 7; i >= 0; --i) meta = (meta << 8) | static_cast<unsigned char>(bytes[8 + i]);
  EXPECT_EQ(bytes.size(), 16 + meta + (3 + 6 + 9) * 8);
}

TEST(Checkpoint, CorruptPayloadByteIsIntegrityError) {
  std::string bytes = encode_checkpoint(sample());
  bytes[bytes.size() - 5] ^= 0x10;
  EXPECT_THROW(decode_checkpoint(bytes), IntegrityError);
}

TEST(Checkpoint, TruncationAndTrailingBytes) {
  const std::string bytes = encode_checkpoint(sample());
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 8)), IntegrityError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, 10)), IntegrityError);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), IntegrityError);
}

TEST(Checkpoint, BadMagicOrVersionIsFormatError) {
  std::string bytes = encode_checkpoint(sample());
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), FormatError);
  std::string version = bytes;
  version[4] = 2;
  EXPECT_THROW(decode_checkpoint(version), FormatError);
  EXPECT_THROW(decode_checkpoint("NOPE"), FormatError);
}

TEST(Checkpoint, EmptyArraySetIsValid) {
  Checkpoint c;
  const Checkpoint back = decode_checkpoint(encode_checkpoint(c));
  EXPECT_TRUE(back.arrays.empty());
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(c));
}

TEST(Checkpoint, DuplicateNamesRejected) {
  Checkpoint c;
  c.arrays.push_back({"w", {1}, {1.0}});
  c.arrays.push_back({"w", {1}, {2.0}});
  EXPECT_THROW(encode_checkpoint(c), FormatError);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const auto first = temp_path("a.ckpt"), second = temp_path("b.ckpt");
  save_checkpoint(first.string(), sample());
  save_checkpoint(second.string(), load_checkpoint(first.string()));
  EXPECT_EQ(read_file(first), read_file(second));
  std::filesystem::remove(first);
  std::filesystem::remove(second);
}

TEST(Checkpoint, MissingFile) {
  EXPECT_THROW(load_checkpoint(temp_path("does_not_exist").string()), Error);
}
