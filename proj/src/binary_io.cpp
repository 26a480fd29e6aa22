#include "stargnn/binary_io.hpp"

#include <atomic>
#include <cstdio>
#include <limits>
#include <system_error>

#include <unistd.h>

namespace stargnn::io {

void write_string16(std::ostream& out, std::string_view s) {
  require(s.size() <= std::numeric_limits<std::uint16_t>::max(), ErrorKind::contract,
          "string too long for u16 length prefix");
  write_le<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string16(std::istream& in) {
  const auto len = read_le<std::uint16_t>(in);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) fail(ErrorKind::format, "unexpected end of file in string");
  return s;
}

namespace {
std::atomic<unsigned> temp_counter{0};
}

AtomicFile::AtomicFile(std::filesystem::path target) : target_(std::move(target)) {
  if (target_.has_parent_path()) std::filesystem::create_directories(target_.parent_path());
  temp_ = target_;
  temp_ += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(temp_counter++);
  out_.open(temp_, std::ios::binary | std::ios::trunc);
  if (!out_) fail(ErrorKind::input, "cannot open for writing: " + temp_.string());
}

AtomicFile::~AtomicFile() {
  if (!committed_) {
    out_.close();
    std::error_code ec;
    std::filesystem::remove(temp_, ec);
  }
}

void AtomicFile::commit() {
  out_.flush();
  if (!out_) fail(ErrorKind::input, "write failed: " + temp_.string());
  out_.close();
  std::filesystem::rename(temp_, target_);
  committed_ = true;
}

std::ifstream open_for_read(const std::filesystem::path& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::input, "cannot open " + what + ": " + path.string());
  return in;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace stargnn::io
