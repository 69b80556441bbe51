#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "orbitchain/common.hpp"
#include "orbitchain/crypto.hpp"
#include "orbitchain/fl.hpp"

namespace orbitchain::ledger {

using crypto::ContributionToken;
using crypto::Digest;

enum class EventKind { Commit, PartialAgg, GlobalAgg, Distribute, KeyRegistration };

const char* to_string(EventKind kind) noexcept;
EventKind event_kind_from_string(std::string_view s);
/// Block ordering phase: commits, then partial aggregates, global aggregates, distribution.
int phase_rank(EventKind kind) noexcept;
bool accumulates(EventKind kind) noexcept;

inline constexpr double kNormalizationTolerance = 1e-9;

struct LedgerEvent {
  EventKind kind = EventKind::Commit;
  std::uint64_t round = 0;
  std::optional<ContributionToken> token;  // absent for KeyRegistration
  Digest digest;
  std::string emitter_id;
  std::string vendor_id;  // M_vendor key; empty when not vendor-attributed
  json payload = json::object();

  bool operator==(const LedgerEvent&) const = default;
};

json to_json(const LedgerEvent& ev);
LedgerEvent event_from_json(const json& j);

struct CommitPayload {
  fl::UpdateMetadata meta;
  Digest ciphertext_hash;
  Bytes signature;
  fl::SealScheme scheme = fl::SealScheme::plaintext;
};

struct PartialAggPayload {
  std::string hap_id;
  std::vector<ContributionToken> contributors;
  std::vector<double> alphas;
  Digest content_hash;
  double timestamp_s = 0.0;
};

struct GlobalAggPayload {
  std::vector<std::string> hap_ids;
  std::vector<ContributionToken> aggregates;
  std::vector<double> betas;
  Digest content_hash;
  double timestamp_s = 0.0;
};

struct DistributePayload {
  ContributionToken global_token;
  std::string destination;
  std::string uri;
  Digest content_hash;
  double timestamp_s = 0.0;
};

struct KeyRegistrationPayload {
  std::string principal_id;
  crypto::Principal principal;
};

CommitPayload commit_payload(const LedgerEvent& ev);
PartialAggPayload partial_agg_payload(const LedgerEvent& ev);
GlobalAggPayload global_agg_payload(const LedgerEvent& ev);
DistributePayload distribute_payload(const LedgerEvent& ev);
KeyRegistrationPayload key_registration_payload(const LedgerEvent& ev);

/// Commit for a sealed update received by `hap_id`:
/// digest d = H(C | sigma | canonical(meta)), token over H(C).
LedgerEvent make_commit_event(const fl::SealedUpdate& sealed, const std::string& hap_id);
LedgerEvent make_partial_agg_event(const std::string& hap_id, const std::string& hap_vendor,
                                   std::uint64_t round, double timestamp_s,
                                   std::vector<ContributionToken> contributors,
                                   std::vector<double> alphas, const Digest& content_hash);
LedgerEvent make_global_agg_event(const std::string& emitter_id, const std::string& emitter_vendor,
                                  std::uint64_t round, double timestamp_s,
                                  std::vector<std::string> hap_ids,
                                  std::vector<ContributionToken> aggregates,
                                  std::vector<double> betas, const Digest& content_hash);
LedgerEvent make_distribute_event(const std::string& emitter_id, std::uint64_t round,
                                  double timestamp_s, const ContributionToken& global_token,
                                  const std::string& destination, const std::string& uri,
                                  const Digest& content_hash);
LedgerEvent make_key_registration(const std::string& principal_id, const crypto::Principal& p);

using SignatureSet = std::map<std::string, Bytes>;

struct Block {
  std::uint64_t index = 0;
  Digest prev_hash;
  double timestamp_s = 0.0;
  std::string proposer_id;
  std::vector<LedgerEvent> events;
  Digest round_root;
  SignatureSet signatures;

  json to_json(bool with_signatures = true) const;
  /// H(canonical JSON without signatures).
  Digest hash() const;
  std::string to_line() const { return canonical_dump(to_json(true)); }
};

Block block_from_json(const json& j);
Block block_from_line(std::string_view line);

inline constexpr const char* kGenesisProposer = "genesis";
Block make_genesis(std::span<const LedgerEvent> registrations, double timestamp_s = 0.0);

// ---------------------------------------------------------------------------

enum class Reason {
  lineage,
  unknown_proposer,
  duplicate_token,
  unregistered_contributor,
  dangling_reference,
  root_mismatch,
  bad_signature,
  digest_mismatch,
  token_mismatch,
  normalization,
  missing_artifact,
  registry_conflict,
  malformed,
};

const char* to_string(Reason r) noexcept;

struct Rejection {
  Reason reason = Reason::malformed;
  std::int64_t event_index = -1;  // -1: block-level
  std::string detail;
};

struct Verdict {
  std::vector<Rejection> rejections;

  bool accepted() const { return rejections.empty(); }
  bool has(Reason r) const;
  std::string summary() const;
};

using ArtifactResolver = std::function<std::optional<Bytes>(const Digest&)>;

struct ValidationOptions {
  /// Resolves off-chain ciphertexts so Commit signatures and digests can be
  /// checked. Without one those checks are skipped.
  ArtifactResolver artifacts;
};

struct Locator {
  std::size_t block = 0;
  std::size_t event = 0;
  auto operator<=>(const Locator&) const = default;
};

class Chain {
 public:
  explicit Chain(Block genesis);

  const std::vector<Block>& blocks() const { return blocks_; }
  const Block& head() const { return blocks_.back(); }
  Digest head_hash() const { return head_hash_; }
  std::uint64_t height() const { return head().index; }
  const crypto::KeyRegistry& registry() const { return registry_; }

  Verdict validate(const Block& block, const ValidationOptions& opts = {}) const;

  /// Appends after validation and a count of distinct valid validator
  /// signatures >= `quorum_threshold`. Throws finality / provenance errors.
  void append(Block block, std::size_t quorum_threshold, const ValidationOptions& opts = {});
  /// Appends without any checks. Fault-injection harnesses only.
  void append_unchecked(Block block);

  /// Number of signatures in the block that come from registered validators
  /// and verify over its hash.
  std::size_t count_valid_signatures(const Block& block) const;
  bool signature_valid(const Block& block, const std::string& validator_id,
                       std::span<const std::uint8_t> sig) const;

  Digest preview_round_root(std::span<const LedgerEvent> events) const;

  std::vector<Locator> find(const Digest& token) const;
  /// The PartialAgg / GlobalAgg that already cites `token` as an input.
  std::optional<Locator> cited_by(const Digest& token) const;
  const LedgerEvent& event_at(const Locator& loc) const;
  const std::vector<Digest>& tokens_for_round(std::uint64_t round) const;
  const std::vector<Digest>& tokens_for_vendor(const std::string& vendor) const;
  const crypto::MerkleAccumulator* round_accumulator(std::uint64_t round) const;
  const crypto::MerkleAccumulator* vendor_accumulator(const std::string& vendor) const;

  void save(const std::filesystem::path& path) const;

 private:
  void apply(Block block);

  std::vector<Block> blocks_;
  Digest head_hash_;
  crypto::KeyRegistry registry_;
  std::map<std::uint64_t, crypto::MerkleAccumulator> round_acc_;
  std::map<std::string, crypto::MerkleAccumulator, std::less<>> vendor_acc_;
  std::map<Digest, std::vector<Locator>> token_index_;
  std::map<Digest, Locator> cited_;
  std::map<std::uint64_t, std::vector<Digest>> round_index_;
  std::map<std::string, std::vector<Digest>, std::less<>> vendor_index_;
};

Verdict validate_block(const Chain& chain, const Block& block, const crypto::KeyRegistry& registry,
                       const ValidationOptions& opts = {});

void append_line(const std::filesystem::path& path, const Block& block);

struct ChainCheck {
  std::size_t block_index = 0;
  std::string problem;
};

struct ChainVerification {
  bool valid = false;
  std::size_t blocks_read = 0;
  std::optional<Digest> head_hash;
  std::vector<ChainCheck> problems;
  std::optional<Chain> chain;  // replayed prefix up to the first invalid block
};

/// Replays a newline-delimited ledger file from genesis: hash linkage,
/// validator signatures against the genesis registry, event causality and
/// token uniqueness (plus Commit signatures when artifacts resolve).
ChainVerification verify_chain_file(const std::filesystem::path& path,
                                    const ValidationOptions& opts = {},
                                    std::size_t min_signatures = 1);

// ---------------------------------------------------------------------------

class Mempool {
 public:
  /// False when the token is already pending.
  bool add(LedgerEvent ev);
  bool contains(const Digest& token) const { return pending_.count(token) != 0; }
  const LedgerEvent* find(const Digest& token) const;
  std::size_t size() const { return pending_.size(); }
  bool empty() const { return pending_.empty(); }
  /// Pending events in block order: phase rank, then token.
  std::vector<LedgerEvent> ordered() const;
  void remove_included(const Block& block);

 private:
  std::map<Digest, LedgerEvent> pending_;
};

/// Orders events the way a proposer drains them into a block.
void sort_for_block(std::vector<LedgerEvent>& events);

/// Builders that also check references against chain + mempool before admitting.
LedgerEvent emit_commit(Mempool& pool, const Chain& chain, const fl::SealedUpdate& sealed,
                        const std::string& hap_id);
LedgerEvent emit_partial_agg(Mempool& pool, const Chain& chain, LedgerEvent ev);
LedgerEvent emit_global_agg(Mempool& pool, const Chain& chain, LedgerEvent ev);
LedgerEvent emit_distribute(Mempool& pool, const Chain& chain, LedgerEvent ev);

// ---------------------------------------------------------------------------

class ArtifactStore {
 public:
  virtual ~ArtifactStore() = default;
  virtual Digest put(std::span<const std::uint8_t> bytes) = 0;
  virtual std::optional<Bytes> get(const Digest& content_hash) const = 0;
  virtual std::string uri_for(const Digest& content_hash) const = 0;

  ArtifactResolver resolver() const {
    return [this](const Digest& d) { return get(d); };
  }
};

class MemoryArtifactStore final : public ArtifactStore {
 public:
  Digest put(std::span<const std::uint8_t> bytes) override;
  std::optional<Bytes> get(const Digest& content_hash) const override;
  std::string uri_for(const Digest& content_hash) const override;

 private:
  mutable std::mutex mu_;
  std::map<Digest, Bytes> blobs_;
};

/// Files named `<hex content hash>.model` in one directory. URIs are
/// `<dir name>/<hex>.model`, relative to the directory's parent.
class DirectoryArtifactStore final : public ArtifactStore {
 public:
  explicit DirectoryArtifactStore(std::filesystem::path dir);
  Digest put(std::span<const std::uint8_t> bytes) override;
  std::optional<Bytes> get(const Digest& content_hash) const override;
  std::string uri_for(const Digest& content_hash) const override;
  std::filesystem::path path_for(const Digest& content_hash) const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

// ---------------------------------------------------------------------------

struct LineageNode {
  LedgerEvent event;
  Locator where;
  std::vector<LineageNode> children;

  std::size_t count() const;
};

/// GlobalAgg -> PartialAgg -> Commit tree for a global model token.
LineageNode audit_trace(const Chain& chain, const Digest& global_token);

struct AuditViolation {
  std::string token;
  std::string detail;
};

struct GuaranteeResult {
  std::string name;
  bool holds = true;
  std::vector<AuditViolation> violations;
};

struct ArtifactCheck {
  std::string token;
  std::string kind;
  std::string content_hash;
  std::string status;  // ok | missing | hash_mismatch
};

inline constexpr const char* kGuaranteeRegistered = "registered_before_aggregation";
inline constexpr const char* kGuaranteeAuthenticated = "authenticated_vendor";
inline constexpr const char* kGuaranteeExactlyOnce = "contributed_exactly_once";
inline constexpr const char* kArtifactIntegrity = "artifact_integrity";

struct AuditReport {
  std::string global_token;
  std::vector<GuaranteeResult> guarantees;
  std::vector<ArtifactCheck> artifact_checks;

  bool clean() const;
  /// Names of violated guarantees, plus artifact_integrity if any check failed.
  std::vector<std::string> violated() const;
  json to_json() const;
};

AuditReport audit_verify(const Chain& chain, const Digest& global_token,
                         const ArtifactStore& artifacts);

json lineage_to_json(const LineageNode& node);

}  // namespace orbitchain::ledger
