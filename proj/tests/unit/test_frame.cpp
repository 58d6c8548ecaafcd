#include <gtest/gtest.h>

#include <filesystem>

#include "dreammatcher/frame.hpp"
#include "support/generators.hpp"

using namespace dm;

TEST(Frame, ExactLayout) {
  const TensorGrid g(1, 2, 1, {1.0, -2.0});
  const auto bytes = encode_tensor(g);
  const std::vector<std::uint8_t> expected = {'D', 'M', 'T', '1', 3,    1, 0, 0, 0, 2, 0,    0,    0,
                                              1,   0,   0,   0,   0x00, 0, 0x80, 0x3f, 0, 0, 0, 0xc0};
  EXPECT_EQ(bytes, expected);
}

TEST(Frame, RoundTripRandom) {
  testkit::Gen gen(11);
  for (int trial = 0; trial < 200; ++trial) {
    const TensorGrid g = gen.float_grid(gen.index(1, 9), gen.index(1, 9), gen.index(1, 5));
    EXPECT_EQ(decode_tensor(encode_tensor(g)), g);
  }
}

TEST(Frame, LowerRanksLift) {
  ByteWriter w;
  w.raw(kTensorMagic);
  w.u8(2);
  w.u32(2);
  w.u32(3);
  for (int i = 0; i < 6; ++i) w.f32(static_cast<float>(i));
  const TensorGrid g = decode_tensor(w.bytes());
  EXPECT_EQ(g.height(), 2u);
  EXPECT_EQ(g.width(), 3u);
  EXPECT_EQ(g.channels(), 1u);
  EXPECT_EQ(g(1, 2, 0), 5.0);
}

TEST(Frame, Malformed) {
  auto bytes = encode_tensor(TensorGrid(2, 2, 1, 1.0));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_tensor(bad_magic), Error);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_tensor(truncated), Error);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_tensor(trailing), Error);
  auto nan = bytes;
  nan[nan.size() - 1] = 0x7f;
  nan[nan.size() - 2] = 0xc0;
  try {
    decode_tensor(nan);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::protocol);
  }
}

TEST(Frame, FileRoundTrip) {
  testkit::Gen gen(12);
  const TensorGrid g = gen.float_grid(3, 4, 2);
  const auto path = std::filesystem::temp_directory_path() / "dm_frame_test.dmt";
  save_tensor(path, g);
  EXPECT_EQ(load_tensor(path), g);
  std::filesystem::remove(path);
  EXPECT_THROW(load_tensor(path), Error);
}

TEST(Frame, LoadingADirectoryIsAnError) {
  try {
    load_tensor(std::filesystem::temp_directory_path());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
  EXPECT_THROW(load_tensor(std::filesystem::temp_directory_path() / "dm_missing_frame.dmt"), Error);
}
