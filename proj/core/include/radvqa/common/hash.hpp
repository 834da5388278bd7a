#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>

namespace radvqa {

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);
std::string sha256_hex(std::span<const std::byte> bytes);

/// Incremental SHA-256.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::string_view bytes);
  void update(const void* data, std::size_t size);
  std::string hex_digest();

 private:
  void* ctx_;
};

}  // namespace radvqa
