#pragma once

// Tensor frame serialization:
//   "DMT1" | u8 rank | rank x u32 LE dims | prod(dims) x f32 LE payload
// Grids, masks and flows are written as rank-3 (H, W, C) frames.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dreammatcher/error.hpp"
#include "dreammatcher/tensors.hpp"

namespace dm {

inline constexpr std::array<std::uint8_t, 4> kTensorMagic = {'D', 'M', 'T', '1'};

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put_le(v); }
  void u32(std::uint32_t v) { put_le(v); }
  void u64(std::uint64_t v) { put_le(v); }
  void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::span<const std::uint8_t> data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }
  void str(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  std::vector<std::uint8_t>& bytes() noexcept { return bytes_; }
  std::vector<std::uint8_t> take() noexcept { return std::move(bytes_); }

 private:
  template <typename T>
  void put_le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8() { return get_le<std::uint8_t>(); }
  std::uint16_t u16() { return get_le<std::uint16_t>(); }
  std::uint32_t u32() { return get_le<std::uint32_t>(); }
  std::uint64_t u64() { return get_le<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }

  std::span<const std::uint8_t> raw(std::size_t n) {
    need(n);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::string str(std::size_t n) {
    auto bytes = raw(n);
    return {bytes.begin(), bytes.end()};
  }

  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  std::size_t position() const noexcept { return pos_; }

 private:
  void need(std::size_t n) const {
    require(remaining() >= n, ErrorKind::protocol, "truncated buffer");
  }

  template <typename T>
  T get_le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(data_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

/// Appends a rank-3 frame for the grid. Values are narrowed to f32.
inline void write_tensor_frame(ByteWriter& out, const TensorGrid& grid) {
  out.raw(kTensorMagic);
  out.u8(3);
  out.u32(static_cast<std::uint32_t>(grid.height()));
  out.u32(static_cast<std::uint32_t>(grid.width()));
  out.u32(static_cast<std::uint32_t>(grid.channels()));
  for (double v : grid.data()) out.f32(static_cast<float>(v));
}

/// Reads one frame. Rank 1 and 2 frames are lifted to (1, 1, n) and (h, w, 1).
inline TensorGrid read_tensor_frame(ByteReader& in) {
  auto magic = in.raw(4);
  require(std::equal(magic.begin(), magic.end(), kTensorMagic.begin()), ErrorKind::protocol,
          "tensor frame: bad magic");
  const std::uint8_t rank = in.u8();
  require(rank >= 1 && rank <= 3, ErrorKind::protocol, "tensor frame: unsupported rank " + std::to_string(rank));
  std::array<std::size_t, 3> dims = {1, 1, 1};
  std::array<std::size_t, 3> read{};
  for (std::uint8_t i = 0; i < rank; ++i) {
    read[i] = in.u32();
    require(read[i] >= 1, ErrorKind::protocol, "tensor frame: zero dimension");
  }
  if (rank == 1) dims = {1, 1, read[0]};
  if (rank == 2) dims = {read[0], read[1], 1};
  if (rank == 3) dims = read;
  const std::size_t count = dims[0] * dims[1] * dims[2];
  require(count <= in.remaining() / 4, ErrorKind::protocol, "tensor frame: payload truncated");
  std::vector<double> values(count);
  for (auto& v : values) {
    v = static_cast<double>(in.f32());
    require(std::isfinite(v), ErrorKind::protocol, "tensor frame: non-finite value");
  }
  return TensorGrid(dims[0], dims[1], dims[2], std::move(values));
}

inline std::vector<std::uint8_t> encode_tensor(const TensorGrid& grid) {
  ByteWriter w;
  write_tensor_frame(w, grid);
  return w.take();
}

inline TensorGrid decode_tensor(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  TensorGrid grid = read_tensor_frame(r);
  require(r.remaining() == 0, ErrorKind::protocol, "tensor frame: trailing bytes");
  return grid;
}

inline void save_tensor(const std::filesystem::path& path, const TensorGrid& grid) {
  const auto bytes = encode_tensor(grid);
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::io, "cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(f), ErrorKind::io, "write failed: " + path.string());
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::error_code ec;
  require(!std::filesystem::is_directory(path, ec), ErrorKind::io, "is a directory: " + path.string());
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::io, "cannot open: " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline TensorGrid load_tensor(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_tensor(bytes);
}

}  // namespace dm
