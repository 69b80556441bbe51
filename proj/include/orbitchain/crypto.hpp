#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "orbitchain/common.hpp"

namespace orbitchain::crypto {

struct Digest {
  std::array<std::uint8_t, 32> bytes{};

  std::string hex() const { return to_hex(bytes); }
  static Digest from_hex(std::string_view hex);
  static Digest from_span(std::span<const std::uint8_t> raw);

  bool is_zero() const noexcept;
  auto operator<=>(const Digest&) const = default;
};

Digest hash(std::span<const std::uint8_t> payload);
Digest hash(std::string_view payload);

enum class TokenKind { LocalUpdate, PartialAggregate, GlobalModel, Distribution };

const char* to_string(TokenKind kind) noexcept;
TokenKind token_kind_from_string(std::string_view s);

struct ContributionToken {
  Digest value;
  TokenKind kind = TokenKind::LocalUpdate;

  std::string hex() const { return value.hex(); }
  bool operator==(const ContributionToken&) const = default;
};

/// K = H(tag(kind) | vendor | sat | round | timestamp | H(X)); every field is
/// preceded by its 4-byte little-endian length so distinct tuples never share
/// a preimage. `timestamp_s` is encoded as its IEEE-754 bit pattern.
Bytes token_preimage(std::string_view vendor_id, std::string_view sat_id,
                     std::uint64_t round, double timestamp_s,
                     const Digest& content_hash, TokenKind kind);

ContributionToken compute_token(std::string_view vendor_id, std::string_view sat_id,
                                std::uint64_t round, double timestamp_s,
                                const Digest& content_hash, TokenKind kind);

// ---------------------------------------------------------------------------
// Signatures: Ed25519 over SHA-256(message).

inline constexpr std::size_t kPublicKeySize = 32;
inline constexpr std::size_t kSecretKeySize = 64;
inline constexpr std::size_t kSignatureSize = 64;

struct KeyPair {
  Bytes public_key;
  Bytes secret_key;
};

KeyPair keypair_from_seed(std::span<const std::uint8_t> seed32);
/// Deterministic key material for a named principal under a scenario seed.
KeyPair derive_keypair(std::uint64_t seed, std::string_view principal_id);

Bytes sign(std::span<const std::uint8_t> message, std::span<const std::uint8_t> secret_key);
bool verify(std::span<const std::uint8_t> message, std::span<const std::uint8_t> signature,
            std::span<const std::uint8_t> public_key);

// ---------------------------------------------------------------------------

enum class Role { vendor, satellite, validator };

const char* to_string(Role role) noexcept;
Role role_from_string(std::string_view s);

struct Principal {
  Role role = Role::vendor;
  Bytes public_key;
  std::string vendor_id;  // owning vendor; equals the id for vendors
};

/// Append-only principal registry (the OrbitLedger key registry role).
class KeyRegistry {
 public:
  /// Throws registry error if `principal_id` is already present.
  void register_principal(const std::string& principal_id, Principal principal);

  const Principal* find(std::string_view principal_id) const;
  bool contains(std::string_view principal_id) const { return find(principal_id) != nullptr; }
  bool has_role(std::string_view principal_id, Role role) const;
  std::size_t size() const { return entries_.size(); }

  const std::map<std::string, Principal, std::less<>>& entries() const { return entries_; }

 private:
  std::map<std::string, Principal, std::less<>> entries_;
};

// ---------------------------------------------------------------------------

/// Binary Merkle accumulator with leaf/node domain separation
/// (leaf = H(0x00|L), node = H(0x01|l|r)) and duplicate-last padding.
/// Appends update only the right edge, so each append is O(log n).
class MerkleAccumulator {
 public:
  Digest append(const Digest& leaf);
  Digest root() const;
  std::size_t size() const { return leaves_.size(); }
  const std::vector<Digest>& leaves() const { return leaves_; }

  /// Sibling hashes bottom-up; length ceil(log2 n). Throws range error.
  std::vector<Digest> membership_proof(std::size_t index) const;

 private:
  std::vector<Digest> leaves_;
  std::vector<std::vector<Digest>> levels_;  // levels_[0] = hashed leaves
};

Digest merkle_leaf_hash(const Digest& leaf);
Digest merkle_node_hash(const Digest& left, const Digest& right);

bool verify_proof(const Digest& root, const Digest& leaf, std::size_t index,
                  std::span<const Digest> path);

}  // namespace orbitchain::crypto
