#pragma once

// Little-endian primitives shared by the STRF/STRG/STRW/STRE artifact formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>

#include "stargnn/error.hpp"

namespace stargnn::io {

static_assert(std::endian::native == std::endian::little,
              "artifact readers assume a little-endian host");

template <typename T>
  requires std::is_arithmetic_v<T>
void write_le(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
  requires std::is_arithmetic_v<T>
T read_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) fail(ErrorKind::format, "unexpected end of file");
  return value;
}

inline void write_magic(std::ostream& out, std::string_view magic) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void expect_magic(std::istream& in, std::string_view magic, const std::string& what) {
  std::array<char, 4> buf{};
  in.read(buf.data(), 4);
  if (!in || std::string_view(buf.data(), 4) != magic)
    fail(ErrorKind::format, what + ": bad magic, expected " + std::string(magic));
}

void write_string16(std::ostream& out, std::string_view s);
std::string read_string16(std::istream& in);

// Writes through a sibling temp file and renames into place, so readers never
// observe a partially written artifact.
class AtomicFile {
 public:
  explicit AtomicFile(std::filesystem::path target);
  ~AtomicFile();
  AtomicFile(const AtomicFile&) = delete;
  AtomicFile& operator=(const AtomicFile&) = delete;

  std::ostream& stream() { return out_; }
  void commit();

 private:
  std::filesystem::path target_;
  std::filesystem::path temp_;
  std::ofstream out_;
  bool committed_ = false;
};

std::ifstream open_for_read(const std::filesystem::path& path, const std::string& what);

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string hex64(std::uint64_t value);

}  // namespace stargnn::io
