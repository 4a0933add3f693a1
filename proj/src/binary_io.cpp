#include "steerlab/core/binary_io.hpp"

namespace steerlab::io {

void write_header(std::ostream& out, std::string_view magic, std::uint16_t version,
                  const std::string& metadata) {
  out.write(magic.data(), 4);
  write_pod<std::uint16_t>(out, version);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(metadata.size()));
  out.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
}

std::string read_header(std::istream& in, std::string_view magic, std::uint16_t expected_version) {
  std::array<char, 4> got{};
  in.read(got.data(), 4);
  if (in.gcount() != 4 || std::string_view(got.data(), 4) != magic) {
    fail(ErrorCode::CorruptFile, "bad magic, expected " + std::string(magic));
  }
  const auto version = read_pod<std::uint16_t>(in, "version");
  if (version != expected_version) {
    fail(ErrorCode::CorruptFile, "unsupported version " + std::to_string(version) + " (expected " +
                                     std::to_string(expected_version) + ")");
  }
  const auto length = read_pod<std::uint32_t>(in, "metadata length");
  if (length > (64u << 20)) fail(ErrorCode::CorruptFile, "metadata length out of range");
  std::string metadata(length, '\0');
  in.read(metadata.data(), length);
  if (in.gcount() != static_cast<std::streamsize>(length)) {
    fail(ErrorCode::CorruptFile, "truncated metadata");
  }
  return metadata;
}

}  // namespace steerlab::io
