#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kge {

// 64-bit FNV-1a over a byte range.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

// Little-endian append-only encoder.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s);
  void raw(std::string_view s);

  const std::vector<std::uint8_t>& bytes() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

// Little-endian decoder; throws CacheError on truncation.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str();
  std::string raw(std::size_t n);

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const;

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

// Writes magic + payload + fnv1a64(payload) to path, replacing any existing file.
void write_checked_file(const std::filesystem::path& path, std::string_view magic,
                        const std::vector<std::uint8_t>& payload);

// Reads a file written by write_checked_file and returns the verified
// payload. Throws CacheError on a missing file, wrong magic family, version
// mismatch, truncation or checksum failure. `magic` is four bytes: a
// three-byte family tag followed by a version character.
std::vector<std::uint8_t> read_checked_file(const std::filesystem::path& path,
                                            std::string_view magic);

}  // namespace kge
