#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "orbitchain/crypto.hpp"
#include "orbitchain/fl.hpp"

using namespace orbitchain;
using crypto::Digest;

namespace {

Digest raw_hash(std::uint8_t tag, std::span<const std::uint8_t> a, std::span<const std::uint8_t> b = {}) {
  Bytes buf(1 + a.size() + b.size());
  buf[0] = tag;
  std::copy(a.begin(), a.end(), buf.begin() + 1);
  std::copy(b.begin(), b.end(), buf.begin() + 1 + static_cast<std::ptrdiff_t>(a.size()));
  return crypto::hash(buf);
}

// Full-rebuild oracle: hash leaves, then pair up levels duplicating the last.
Digest rebuild_root(const std::vector<Digest>& leaves) {
  std::vector<Digest> level;
  for (const auto& l : leaves) level.push_back(raw_hash(0x00, l.bytes));
  while (level.size() > 1) {
    if (level.size() % 2) level.push_back(level.back());
    std::vector<Digest> up;
    for (std::size_t i = 0; i < level.size(); i += 2) up.push_back(raw_hash(0x01, level[i].bytes, level[i + 1].bytes));
    level = up;
  }
  return level.front();
}

Digest random_digest(std::mt19937_64& rng) {
  Digest d;
  for (auto& b : d.bytes) b = static_cast<std::uint8_t>(rng());
  return d;
}

std::size_t ceil_log2(std::size_t n) {
  std::size_t k = 0;
  while ((std::size_t{1} << k) < n) ++k;
  return k;
}

}  // namespace

TEST(Hash, EmptyStringKnownAnswer) {
  EXPECT_EQ(crypto::hash(std::string_view{}).hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(crypto::hash("abc").hex(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Hash, SingleBitFlipChangesDigest) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 10000; ++trial) {
    Bytes x(1 + rng() % 64);
    for (auto& b : x) b = static_cast<std::uint8_t>(rng());
    const Digest before = crypto::hash(x);
    const std::size_t bit = rng() % (x.size() * 8);
    x[bit / 8] ^= static_cast<std::uint8_t>(1U << (bit % 8));
    ASSERT_NE(before, crypto::hash(x));
  }
}

TEST(Hash, HexRoundTrip) {
  const Digest d = crypto::hash("x");
  EXPECT_EQ(d.hex().size(), 64u);
  EXPECT_EQ(Digest::from_hex(d.hex()), d);
  EXPECT_THROW(Digest::from_hex("abc"), Error);
}

TEST(Token, DeterministicAndFieldSensitive) {
  const Digest h = crypto::hash("model");
  using crypto::TokenKind;
  const auto k = crypto::compute_token("v1", "s1", 3, 12.5, h, TokenKind::LocalUpdate);
  EXPECT_EQ(k, crypto::compute_token("v1", "s1", 3, 12.5, h, TokenKind::LocalUpdate));
  EXPECT_NE(k.value, crypto::compute_token("v1", "s1", 4, 12.5, h, TokenKind::LocalUpdate).value);
  EXPECT_NE(k.value, crypto::compute_token("v1", "s1", 3, 12.5, h, TokenKind::GlobalModel).value);
  EXPECT_NE(k.value, crypto::compute_token("v1", "s1", 3, 12.75, h, TokenKind::LocalUpdate).value);
}

TEST(Token, LengthPrefixingSeparatesShiftedFields) {
  const Digest h = crypto::hash("m");
  using crypto::TokenKind;
  std::mt19937_64 rng(2);
  const std::string alphabet = "ab";
  for (int trial = 0; trial < 2000; ++trial) {
    std::string joined;
    for (int i = 0; i < 6; ++i) joined += alphabet[rng() % 2];
    const std::size_t c1 = rng() % 7, c2 = rng() % 7;
    if (c1 == c2) continue;
    const auto a = crypto::token_preimage(joined.substr(0, c1), joined.substr(c1), 1, 0.0, h, TokenKind::LocalUpdate);
    const auto b = crypto::token_preimage(joined.substr(0, c2), joined.substr(c2), 1, 0.0, h, TokenKind::LocalUpdate);
    ASSERT_NE(a, b);
  }
}

TEST(Digest, MetadataCanonicalFormIsKeyOrderIndependent) {
  fl::UpdateMetadata m{"v1", "v1-s0", 2, 100, 1, 30.0};
  json shuffled = json::parse(R"({"timestamp_s":30.0,"sat_id":"v1-s0","round":2,"vendor_id":"v1","fetch_round":1,"data_size":100})");
  EXPECT_EQ(fl::canonical(m), fl::canonical(fl::metadata_from_json(shuffled)));
  auto m2 = m;
  m2.round = 3;
  EXPECT_NE(fl::canonical(m), fl::canonical(m2));
}

TEST(Merkle, BaseCases) {
  std::mt19937_64 rng(3);
  const Digest a = random_digest(rng), b = random_digest(rng);
  crypto::MerkleAccumulator acc;
  EXPECT_EQ(acc.append(a), raw_hash(0x00, a.bytes));
  const Digest la = raw_hash(0x00, a.bytes), lb = raw_hash(0x00, b.bytes);
  EXPECT_EQ(acc.append(b), raw_hash(0x01, la.bytes, lb.bytes));
  EXPECT_TRUE(acc.membership_proof(0).size() == 1);
  crypto::MerkleAccumulator one;
  one.append(a);
  EXPECT_TRUE(one.membership_proof(0).empty());
  EXPECT_TRUE(crypto::verify_proof(one.root(), a, 0, {}));
}

TEST(Merkle, ExhaustiveAgainstRebuildOracle) {
  std::mt19937_64 rng(4);
  for (std::size_t n = 1; n <= 16; ++n) {
    std::vector<Digest> leaves;
    crypto::MerkleAccumulator acc;
    for (std::size_t i = 0; i < n; ++i) {
      leaves.push_back(random_digest(rng));
      ASSERT_EQ(acc.append(leaves.back()), rebuild_root(leaves)) << "n=" << i + 1;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto path = acc.membership_proof(i);
      ASSERT_EQ(path.size(), ceil_log2(n));
      ASSERT_TRUE(crypto::verify_proof(acc.root(), leaves[i], i, path));
      for (std::size_t j = 0; j < n; ++j)
        if (leaves[j] != leaves[i]) ASSERT_FALSE(crypto::verify_proof(acc.root(), leaves[j], i, path));
      for (std::size_t s = 0; s < path.size(); ++s) {
        auto bad = path;
        bad[s].bytes[rng() % 32] ^= 0x40;
        ASSERT_FALSE(crypto::verify_proof(acc.root(), leaves[i], i, bad));
      }
    }
    EXPECT_THROW(acc.membership_proof(n), Error);
  }
}

TEST(Merkle, RootDependsOnOrder) {
  std::mt19937_64 rng(5);
  const Digest a = random_digest(rng), b = random_digest(rng), c = random_digest(rng);
  crypto::MerkleAccumulator x, y;
  for (const auto& d : {a, b, c}) x.append(d);
  for (const auto& d : {c, a, b}) y.append(d);
  EXPECT_NE(x.root(), y.root());
}

TEST(Signature, SignVerifyAndTamper) {
  const auto kp = crypto::derive_keypair(7, "vendor-a");
  const auto other = crypto::derive_keypair(7, "vendor-b");
  EXPECT_EQ(kp.public_key.size(), crypto::kPublicKeySize);
  Bytes msg = to_bytes("payload bytes");
  const Bytes sig = crypto::sign(msg, kp.secret_key);
  EXPECT_LE(sig.size(), crypto::kSignatureSize);
  EXPECT_EQ(sig, crypto::sign(msg, kp.secret_key));
  EXPECT_TRUE(crypto::verify(msg, sig, kp.public_key));
  EXPECT_FALSE(crypto::verify(msg, sig, other.public_key));
  msg[0] ^= 1;
  EXPECT_FALSE(crypto::verify(msg, sig, kp.public_key));
  EXPECT_THROW(crypto::sign(msg, Bytes(5)), Error);
  EXPECT_THROW(crypto::verify(msg, Bytes(3), kp.public_key), Error);
}

TEST(Registry, AppendOnly) {
  crypto::KeyRegistry reg;
  const auto kp = crypto::derive_keypair(1, "v");
  reg.register_principal("v", {crypto::Role::vendor, kp.public_key, "v"});
  EXPECT_THROW(reg.register_principal("v", {crypto::Role::validator, Bytes(32, 1), "v"}), Error);
  EXPECT_EQ(reg.size(), 1u);
  EXPECT_TRUE(reg.has_role("v", crypto::Role::vendor));
  EXPECT_EQ(reg.find("v")->public_key, kp.public_key);
}
