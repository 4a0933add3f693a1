#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>

namespace steerlab {

/// Incremental SHA-256 used for content addressing of artifacts.
class Hasher {
 public:
  Hasher();
  ~Hasher();
  Hasher(Hasher&&) noexcept;
  Hasher& operator=(Hasher&&) noexcept;

  Hasher& update(std::span<const std::byte> bytes);
  Hasher& update(std::string_view text);

  template <typename T>
  Hasher& update_pod(const T& value) {
    return update(std::as_bytes(std::span<const T, 1>(&value, 1)));
  }

  /// Lowercase hex digest. The hasher is consumed.
  std::string hex();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::string& path);

/// Derives a 64-bit seed from a master seed and a stage key.
std::uint64_t derive_seed(std::uint64_t master, std::string_view key);

}  // namespace steerlab
