// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include <openssl/evp.h>

#include "tinydistill/bytes.hpp"
#include "tinydistill/error.hpp"

namespace td {

/// SHA-256 digest; the content address used everywhere provenance is asserted.
using Digest = std::array<std::uint8_t, 32>;

/// Truncated digest used as a stable sample id.
using SampleId = std::array<std::uint8_t, 16>;

inline Digest sha256(std::span<const std::uint8_t> data) {
  Digest d{};
  unsigned int len = 0;
  check(EVP_Digest(data.data(), data.size(), d.data(), &len, EVP_sha256(), nullptr) == 1,
        "sha256 failed");
  check(len == d.size(), "sha256 digest length");
  return d;
}

inline Digest sha256_str(const std::string& s) {
  return sha256(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

template <std::size_t N>
std::string hex(const std::array<std::uint8_t, N>& d) {
  static const char* k = "0123456789abcdef";
  std::string out;
  out.reserve(2 * N);
  for (auto b : d) {
    out.push_back(k[b >> 4]);
    out.push_back(k[b & 0xF]);
  }
  return out;
}

inline std::string hex_bytes(std::span<const std::uint8_t> d) {
  static const char* k = "0123456789abcdef";
  std::string out;
  out.reserve(2 * d.size());
  for (auto b : d) {
    out.push_back(k[b >> 4]);
    out.push_back(k[b & 0xF]);
  }
  return out;
}

template <std::size_t N>
std::array<std::uint8_t, N> parse_hex(const std::string& s) {
  check(s.size() == 2 * N, "hex string of length " + std::to_string(2 * N) +
                               " expected, got " + std::to_string(s.size()));
  auto nib = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw Error(std::string("invalid hex character: ") + c);
  };
  std::array<std::uint8_t, N> out{};
  for (std::size_t i = 0; i < N; ++i)
    out[i] = static_cast<std::uint8_t>((nib(s[2 * i]) << 4) | nib(s[2 * i + 1]));
  return out;
}

inline Digest hash_file(const std::filesystem::path& p) {
  auto data = read_file(p);
  return sha256(data);
}

/// Sample id: first 16 bytes of SHA-256 over length-prefixed (query, response).
inline SampleId content_id(const std::string& query, const std::string& response) {
  ByteWriter w;
  w.u64(query.size());
  w.str_bytes(query);
  w.u64(response.size());
  w.str_bytes(response);
  Digest d = sha256(w.data());
  SampleId id{};
  std::copy(d.begin(), d.begin() + 16, id.begin());
  return id;
}

} // namespace td
