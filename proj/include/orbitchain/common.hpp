#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace orbitchain {

using Bytes = std::vector<std::uint8_t>;
using json = nlohmann::json;

enum class ErrorKind {
  config,
  precondition,
  shape,
  numeric,
  authorization,
  crypto,
  provenance,
  finality,
  registry,
  range,
  format,
  not_found,
  staleness,
  degenerate,
  io,
};

const char* to_string(ErrorKind kind) noexcept;

/// Library-wide exception. `kind` identifies the failure class so callers
/// (notably the CLI exit-code mapping) can react without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

std::string to_hex(std::span<const std::uint8_t> bytes);
Bytes from_hex(std::string_view hex);

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }

// Little-endian fixed-width encoding helpers.
inline void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[off + i]) << (8 * i);
  return v;
}
inline std::uint64_t get_u64(std::span<const std::uint8_t> in, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[off + i]) << (8 * i);
  return v;
}
inline void append(Bytes& out, std::span<const std::uint8_t> more) {
  out.insert(out.end(), more.begin(), more.end());
}
inline void append(Bytes& out, std::string_view more) {
  out.insert(out.end(), more.begin(), more.end());
}

/// Canonical JSON: sorted keys, no insignificant whitespace, shortest
/// round-trip reals. nlohmann's default object type is an ordered std::map,
/// so a compact dump is already canonical.
inline std::string canonical_dump(const json& j) { return j.dump(); }

/// Shortest round-trip decimal text for a real (CSV output).
inline std::string fmt_real(double v) { return json(v).dump(); }

/// Deterministic 64-bit sub-seed derivation: SHA-256 over (seed, label).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

}  // namespace orbitchain
