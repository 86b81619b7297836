// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace dscc {

/// Incremental SHA-256 producing lowercase hex digests.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(std::string_view bytes);
  Sha256& update(std::span<const double> values);  // little-endian IEEE-754 bytes
  Sha256& update_u64(std::uint64_t value);
  // Length-prefixed so that concatenations of different splits hash differently.
  Sha256& update_field(std::string_view bytes);
  std::string hex();

 private:
  void* ctx_;
};

std::string sha256_hex(std::string_view bytes);

}  // namespace dscc
