#include "zoomshot/binary_io.hpp"

#include <fstream>
#include <limits>

namespace zoomshot::binio {

void ByteWriter::string(std::string_view s) {
  if (s.size() > std::numeric_limits<std::uint32_t>::max())
    throw ValidationError("string too long for u32 length prefix");
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s);
}

void ByteReader::expect_magic(std::string_view magic) {
  if (remaining() < magic.size() ||
      std::memcmp(data_.data() + pos_, magic.data(), magic.size()) != 0)
    throw ParseError(ParseFault::BadMagic, pos_, "expected \"" + std::string(magic) + "\"");
  pos_ += magic.size();
}

std::uint8_t ByteReader::u8() { return get_le<std::uint8_t>(); }
std::uint32_t ByteReader::u32() { return get_le<std::uint32_t>(); }
std::uint64_t ByteReader::u64() { return get_le<std::uint64_t>(); }

float ByteReader::f32() {
  const std::uint32_t bits = u32();
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

double ByteReader::f64() {
  const std::uint64_t bits = u64();
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::string ByteReader::utf8(std::size_t length, const char* what) {
  require(length, 1, what);
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), length);
  if (!is_valid_utf8(s))
    throw ParseError(ParseFault::BadField, pos_, std::string(what) + " is not valid UTF-8");
  pos_ += length;
  return s;
}

void ByteReader::require(std::uint64_t count, std::size_t width, const char* what) const {
  const std::uint64_t avail = remaining();
  if (count > avail / width || count * width > avail)
    throw ParseError(ParseFault::Truncated, pos_,
                     std::string(what) + " needs " +
                         (count > std::numeric_limits<std::uint64_t>::max() / width
                              ? std::string("more than 2^64")
                              : std::to_string(count * width)) +
                         " bytes, " + std::to_string(avail) + " remain");
}

void ByteReader::expect_end() const {
  if (remaining() != 0)
    throw ParseError(ParseFault::TrailingBytes, pos_, std::to_string(remaining()) + " unexpected bytes");
}

bool is_valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong forms, surrogates, out-of-range code points.
    if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) || (extra == 3 && cp < 0x10000) ||
        (cp >= 0xD800 && cp <= 0xDFFF) || cp > 0x10FFFF)
      return false;
    i += extra + 1;
  }
  return true;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace zoomshot::binio
