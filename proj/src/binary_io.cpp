#include "kge/binary_io.hpp"

#include <fstream>
#include <iterator>

#include "kge/error.hpp"

namespace kge {

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  raw(s);
}

void ByteWriter::raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

void ByteReader::need(std::size_t n) const {
  if (remaining() < n) throw CacheError("truncated binary payload");
}

std::uint8_t ByteReader::u8() {
  need(1);
  return bytes_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_++]} << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes_[pos_++]} << (8 * i);
  return v;
}

std::string ByteReader::str() { return raw(u32()); }

std::string ByteReader::raw(std::size_t n) {
  need(n);
  std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
  pos_ += n;
  return s;
}

void write_checked_file(const std::filesystem::path& path, std::string_view magic,
                        const std::vector<std::uint8_t>& payload) {
  ByteWriter trailer;
  trailer.u64(fnv1a64(payload));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  out.write(reinterpret_cast<const char*>(trailer.bytes().data()), 8);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<std::uint8_t> read_checked_file(const std::filesystem::path& path,
                                            std::string_view magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CacheError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  const std::string where = " in '" + path.string() + "'";
  if (bytes.size() < magic.size() + 8) throw CacheError("truncated file" + where);
  const std::string_view head(reinterpret_cast<const char*>(bytes.data()), magic.size());
  if (head.substr(0, magic.size() - 1) != magic.substr(0, magic.size() - 1))
    throw CacheError("not a " + std::string(magic.substr(0, magic.size() - 1)) + " file" + where);
  if (head != magic)
    throw CacheError("format version mismatch: found '" + std::string(head) + "', expected '" +
                     std::string(magic) + "'" + where);
  const std::span<const std::uint8_t> payload(bytes.data() + magic.size(),
                                              bytes.size() - magic.size() - 8);
  ByteReader trailer(std::span<const std::uint8_t>(bytes).last(8));
  if (trailer.u64() != fnv1a64(payload)) throw CacheError("checksum mismatch" + where);
  return {payload.begin(), payload.end()};
}

}  // namespace kge
