#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>

#include "steerlab/core/error.hpp"

namespace steerlab::io {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, std::string_view what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    fail(ErrorCode::CorruptFile, "truncated while reading " + std::string(what));
  }
  return value;
}

inline void write_floats(std::ostream& out, std::span<const float> values) {
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size_bytes()));
}

inline void read_floats(std::istream& in, std::span<float> values, std::string_view what) {
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  if (in.gcount() != static_cast<std::streamsize>(values.size_bytes())) {
    fail(ErrorCode::CorruptFile, "truncated payload for " + std::string(what));
  }
}

/// Common header for every binary artifact: 4-byte magic, u16 version,
/// u32 metadata length, then a UTF-8 JSON metadata document.
void write_header(std::ostream& out, std::string_view magic, std::uint16_t version,
                  const std::string& metadata);

/// Validates magic and version and returns the metadata document.
std::string read_header(std::istream& in, std::string_view magic, std::uint16_t expected_version);

}  // namespace steerlab::io
