// SPDX-License-Identifier: Apache-2.0
#include "dscc/hash.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstring>
#include <stdexcept>

namespace dscc {

namespace {

EVP_MD_CTX* ctx_of(void* p) { return static_cast<EVP_MD_CTX*>(p); }

}  // namespace

Sha256::Sha256() : ctx_(EVP_MD_CTX_new()) {
  if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_of(ctx_), EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256: EVP initialisation failed");
  }
}

Sha256::~Sha256() { EVP_MD_CTX_free(ctx_of(ctx_)); }

Sha256& Sha256::update(std::string_view bytes) {
  EVP_DigestUpdate(ctx_of(ctx_), bytes.data(), bytes.size());
  return *this;
}

Sha256& Sha256::update(std::span<const double> values) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts unsupported");
  EVP_DigestUpdate(ctx_of(ctx_), values.data(), values.size_bytes());
  return *this;
}

Sha256& Sha256::update_u64(std::uint64_t value) {
  std::array<unsigned char, 8> buf{};
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(value >> (8 * i));
  EVP_DigestUpdate(ctx_of(ctx_), buf.data(), buf.size());
  return *this;
}

Sha256& Sha256::update_field(std::string_view bytes) {
  update_u64(bytes.size());
  return update(bytes);
}

std::string Sha256::hex() {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx_of(ctx_), digest.data(), &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes);
  return h.hex();
}

}  // namespace dscc
