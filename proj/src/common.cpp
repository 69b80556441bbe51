#include "orbitchain/common.hpp"

#include "orbitchain/crypto.hpp"

namespace orbitchain {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::precondition: return "precondition";
    case ErrorKind::shape: return "shape";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::authorization: return "authorization";
    case ErrorKind::crypto: return "crypto";
    case ErrorKind::provenance: return "provenance";
    case ErrorKind::finality: return "finality";
    case ErrorKind::registry: return "registry";
    case ErrorKind::range: return "range";
    case ErrorKind::format: return "format";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::staleness: return "staleness";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0x0f]);
  }
  return out;
}

namespace {
int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}
}  // namespace

Bytes from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) fail(ErrorKind::format, "hex string has odd length");
  Bytes out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    int hi = hex_value(hex[2 * i]);
    int lo = hex_value(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) fail(ErrorKind::format, "invalid hex digit");
    out[i] = static_cast<std::uint8_t>((hi << 4) | lo);
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  Bytes pre;
  put_u64(pre, seed);
  append(pre, label);
  auto d = crypto::hash(pre);
  return get_u64(d.bytes, 0);
}

}  // namespace orbitchain
