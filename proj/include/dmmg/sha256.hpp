#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace dmmg {

/// Incremental SHA-256 (FIPS 180-4).
class Sha256 {
 public:
  Sha256();
  void update(const void* data, size_t len);
  /// Finalizes and returns the digest as 64 lowercase hex characters.
  /// The object must not be updated afterwards.
  std::string hex_digest();

 private:
  void process_block(const std::uint8_t* block);
  std::uint32_t state_[8];
  std::uint8_t buffer_[64];
  size_t buffer_len_ = 0;
  std::uint64_t total_bytes_ = 0;
  bool finished_ = false;
};

std::string sha256_hex(const void* data, size_t len);

}  // namespace dmmg
