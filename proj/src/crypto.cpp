#include "orbitchain/crypto.hpp"

#include <algorithm>

#include <sodium.h>

#include <bit>

namespace orbitchain::crypto {

namespace {

void ensure_sodium() {
  static const bool ready = [] { return sodium_init() >= 0; }();
  if (!ready) fail(ErrorKind::crypto, "libsodium initialisation failed");
}

void put_field(Bytes& out, std::span<const std::uint8_t> field) {
  put_u32(out, static_cast<std::uint32_t>(field.size()));
  append(out, field);
}

void put_field(Bytes& out, std::string_view field) {
  put_u32(out, static_cast<std::uint32_t>(field.size()));
  append(out, field);
}

}  // namespace

Digest Digest::from_hex(std::string_view hex) {
  if (hex.size() != 64) fail(ErrorKind::format, "digest hex must be 64 characters");
  return from_span(orbitchain::from_hex(hex));
}

Digest Digest::from_span(std::span<const std::uint8_t> raw) {
  if (raw.size() != 32) fail(ErrorKind::format, "digest must be exactly 32 bytes");
  Digest d;
  std::copy(raw.begin(), raw.end(), d.bytes.begin());
  return d;
}

bool Digest::is_zero() const noexcept {
  for (auto b : bytes)
    if (b != 0) return false;
  return true;
}

Digest hash(std::span<const std::uint8_t> payload) {
  ensure_sodium();
  Digest d;
  crypto_hash_sha256(d.bytes.data(), payload.data(), payload.size());
  return d;
}

Digest hash(std::string_view payload) {
  return hash(std::span(reinterpret_cast<const std::uint8_t*>(payload.data()), payload.size()));
}

const char* to_string(TokenKind kind) noexcept {
  switch (kind) {
    case TokenKind::LocalUpdate: return "LocalUpdate";
    case TokenKind::PartialAggregate: return "PartialAggregate";
    case TokenKind::GlobalModel: return "GlobalModel";
    case TokenKind::Distribution: return "Distribution";
  }
  return "?";
}

TokenKind token_kind_from_string(std::string_view s) {
  if (s == "LocalUpdate") return TokenKind::LocalUpdate;
  if (s == "PartialAggregate") return TokenKind::PartialAggregate;
  if (s == "GlobalModel") return TokenKind::GlobalModel;
  if (s == "Distribution") return TokenKind::Distribution;
  fail(ErrorKind::format, "unknown token kind '" + std::string(s) + "'");
}

Bytes token_preimage(std::string_view vendor_id, std::string_view sat_id, std::uint64_t round,
                     double timestamp_s, const Digest& content_hash, TokenKind kind) {
  Bytes pre;
  put_field(pre, std::string("orbitchain.token.") + to_string(kind));
  put_field(pre, vendor_id);
  put_field(pre, sat_id);
  Bytes num;
  put_u64(num, round);
  put_field(pre, num);
  num.clear();
  put_u64(num, std::bit_cast<std::uint64_t>(timestamp_s));
  put_field(pre, num);
  put_field(pre, content_hash.bytes);
  return pre;
}

ContributionToken compute_token(std::string_view vendor_id, std::string_view sat_id,
                                std::uint64_t round, double timestamp_s,
                                const Digest& content_hash, TokenKind kind) {
  return {hash(token_preimage(vendor_id, sat_id, round, timestamp_s, content_hash, kind)), kind};
}

KeyPair keypair_from_seed(std::span<const std::uint8_t> seed32) {
  ensure_sodium();
  if (seed32.size() != crypto_sign_SEEDBYTES) fail(ErrorKind::format, "key seed must be 32 bytes");
  KeyPair kp{Bytes(kPublicKeySize), Bytes(kSecretKeySize)};
  crypto_sign_seed_keypair(kp.public_key.data(), kp.secret_key.data(), seed32.data());
  return kp;
}

KeyPair derive_keypair(std::uint64_t seed, std::string_view principal_id) {
  Bytes pre = to_bytes("orbitchain.key.");
  put_u64(pre, seed);
  append(pre, principal_id);
  auto d = hash(pre);
  return keypair_from_seed(d.bytes);
}

Bytes sign(std::span<const std::uint8_t> message, std::span<const std::uint8_t> secret_key) {
  ensure_sodium();
  if (secret_key.size() != kSecretKeySize) fail(ErrorKind::format, "secret key must be 64 bytes");
  auto digest = hash(message);
  Bytes sig(kSignatureSize);
  crypto_sign_detached(sig.data(), nullptr, digest.bytes.data(), digest.bytes.size(),
                       secret_key.data());
  return sig;
}

bool verify(std::span<const std::uint8_t> message, std::span<const std::uint8_t> signature,
            std::span<const std::uint8_t> public_key) {
  ensure_sodium();
  if (public_key.size() != kPublicKeySize) fail(ErrorKind::format, "public key must be 32 bytes");
  if (signature.size() != kSignatureSize) fail(ErrorKind::format, "signature must be 64 bytes");
  auto digest = hash(message);
  return crypto_sign_verify_detached(signature.data(), digest.bytes.data(), digest.bytes.size(),
                                     public_key.data()) == 0;
}

const char* to_string(Role role) noexcept {
  switch (role) {
    case Role::vendor: return "vendor";
    case Role::satellite: return "satellite";
    case Role::validator: return "validator";
  }
  return "?";
}

Role role_from_string(std::string_view s) {
  if (s == "vendor") return Role::vendor;
  if (s == "satellite") return Role::satellite;
  if (s == "validator") return Role::validator;
  fail(ErrorKind::format, "unknown role '" + std::string(s) + "'");
}

void KeyRegistry::register_principal(const std::string& principal_id, Principal principal) {
  if (principal_id.empty()) fail(ErrorKind::registry, "principal id must be non-empty");
  if (principal.public_key.size() != kPublicKeySize)
    fail(ErrorKind::format, "public key for '" + principal_id + "' must be 32 bytes");
  auto [it, inserted] = entries_.try_emplace(principal_id, std::move(principal));
  if (!inserted) fail(ErrorKind::registry, "principal '" + principal_id + "' already registered");
}

const Principal* KeyRegistry::find(std::string_view principal_id) const {
  auto it = entries_.find(principal_id);
  return it == entries_.end() ? nullptr : &it->second;
}

bool KeyRegistry::has_role(std::string_view principal_id, Role role) const {
  auto* p = find(principal_id);
  return p != nullptr && p->role == role;
}

Digest merkle_leaf_hash(const Digest& leaf) {
  std::array<std::uint8_t, 33> pre{};
  pre[0] = 0x00;
  std::copy(leaf.bytes.begin(), leaf.bytes.end(), pre.begin() + 1);
  return hash(pre);
}

Digest merkle_node_hash(const Digest& left, const Digest& right) {
  std::array<std::uint8_t, 65> pre{};
  pre[0] = 0x01;
  std::copy(left.bytes.begin(), left.bytes.end(), pre.begin() + 1);
  std::copy(right.bytes.begin(), right.bytes.end(), pre.begin() + 33);
  return hash(pre);
}

Digest MerkleAccumulator::append(const Digest& leaf) {
  leaves_.push_back(leaf);
  if (levels_.empty()) levels_.emplace_back();
  levels_[0].push_back(merkle_leaf_hash(leaf));
  for (std::size_t l = 0; levels_[l].size() > 1; ++l) {
    const auto& level = levels_[l];
    std::size_t parent = (level.size() - 1) / 2;
    const Digest& left = level[2 * parent];
    const Digest& right = 2 * parent + 1 < level.size() ? level[2 * parent + 1] : left;
    Digest node = merkle_node_hash(left, right);
    if (levels_.size() == l + 1) levels_.emplace_back();
    auto& up = levels_[l + 1];
    if (up.size() == parent)
      up.push_back(node);
    else
      up[parent] = node;
  }
  return root();
}

Digest MerkleAccumulator::root() const {
  if (levels_.empty()) return Digest{};
  return levels_.back().front();
}

std::vector<Digest> MerkleAccumulator::membership_proof(std::size_t index) const {
  if (index >= leaves_.size())
    fail(ErrorKind::range, "membership proof index " + std::to_string(index) + " out of range (" +
                               std::to_string(leaves_.size()) + " leaves)");
  std::vector<Digest> path;
  for (std::size_t l = 0; l + 1 < levels_.size(); ++l) {
    const auto& level = levels_[l];
    if (index % 2 == 0)
      path.push_back(index + 1 < level.size() ? level[index + 1] : level[index]);
    else
      path.push_back(level[index - 1]);
    index /= 2;
  }
  return path;
}

bool verify_proof(const Digest& root, const Digest& leaf, std::size_t index,
                  std::span<const Digest> path) {
  if (path.size() < 64 && (index >> path.size()) != 0) return false;
  Digest h = merkle_leaf_hash(leaf);
  for (const auto& sibling : path) {
    h = index % 2 == 0 ? merkle_node_hash(h, sibling) : merkle_node_hash(sibling, h);
    index /= 2;
  }
  return h == root;
}

}  // namespace orbitchain::crypto
