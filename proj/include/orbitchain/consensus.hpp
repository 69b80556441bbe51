#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "orbitchain/common.hpp"
#include "orbitchain/crypto.hpp"
#include "orbitchain/ledger.hpp"

namespace orbitchain::consensus {

using crypto::Digest;

enum class QuorumMode { fixed_q, two_thirds, majority_f };

struct QuorumConfig {
  std::size_t n_validators = 5;
  QuorumMode mode = QuorumMode::two_thirds;
  std::size_t q = 0;  // fixed_q
  std::size_t f = 0;  // majority_f

  static QuorumConfig fixed(std::size_t n, std::size_t q) { return {n, QuorumMode::fixed_q, q, 0}; }
  static QuorumConfig two_thirds_of(std::size_t n) { return {n, QuorumMode::two_thirds, 0, 0}; }
  static QuorumConfig majority(std::size_t n, std::size_t f) { return {n, QuorumMode::majority_f, 0, f}; }

  void validate() const;
  /// e.g. "3-of-5", "two_thirds", "majority_f(1)".
  std::string label() const;
};

std::size_t quorum_threshold(const QuorumConfig& cfg);

QuorumConfig quorum_from_json(const json& j, std::size_t n_validators);
json to_json(const QuorumConfig& cfg);

const std::string& select_proposer(std::uint64_t round_index, std::span<const std::string> validators);

enum class FaultKind { honest, slow, offline, equivocator, invalid_signer };

const char* to_string(FaultKind k) noexcept;
FaultKind fault_kind_from_string(std::string_view s);

struct FaultProfile {
  FaultKind kind = FaultKind::honest;
  double delay_factor = 1.0;  // slow only

  void validate() const;
  bool responsive() const { return kind != FaultKind::offline; }
};

using FaultPlan = std::map<std::string, FaultProfile>;

struct FinalizeDecision {
  bool finalized = false;
  std::size_t valid_signatures = 0;
  std::size_t threshold = 0;
};

/// Counts distinct registered validators whose signature verifies over the
/// block hash; non-verifying signatures are excluded, not errors.
FinalizeDecision finalize(const ledger::SignatureSet& votes, const ledger::Block& proposal,
                          const QuorumConfig& cfg, const crypto::KeyRegistry& registry);

enum class Phase { Idle, Proposed, Collecting, Finalized };

const char* to_string(Phase p) noexcept;

struct VoteReply {
  enum class Status { vote, reject, sync };

  Status status = Status::reject;
  Bytes signature;
  std::string reason;
  std::uint64_t head_index = 0;

  json to_json() const;
  static VoteReply from_json(const json& j);
};

/// Proposer-side signature collection for one proposal.
class Collector {
 public:
  Collector(ledger::Block proposal, std::size_t threshold, const crypto::KeyRegistry& registry);

  /// Adds a verified vote; duplicate or invalid signatures are ignored.
  /// Returns true if this vote made the quorum.
  bool add(const std::string& validator_id, const Bytes& signature);
  bool finalized() const { return votes_.size() >= threshold_; }
  std::size_t signatures() const { return votes_.size(); }
  const ledger::Block& proposal() const { return block_; }
  /// The proposal carrying every collected signature.
  ledger::Block certificate() const;

 private:
  ledger::Block block_;
  Digest hash_;
  std::size_t threshold_;
  const crypto::KeyRegistry& registry_;
  ledger::SignatureSet votes_;
};

/// One committee member: its chain replica, mempool, keys, fault profile and
/// the equivocation guard. Transport drivers feed it messages.
class Validator {
 public:
  Validator(std::string id, crypto::KeyPair keys, const ledger::Block& genesis, QuorumConfig quorum,
            FaultProfile fault = {}, ledger::ValidationOptions opts = {});

  const std::string& id() const { return id_; }
  const FaultProfile& fault() const { return fault_; }
  bool honest() const { return fault_.kind == FaultKind::honest || fault_.kind == FaultKind::slow; }
  const ledger::Chain& chain() const { return chain_; }
  const ledger::Mempool& mempool() const { return mempool_; }
  Phase phase() const { return phase_; }
  const QuorumConfig& quorum() const { return quorum_; }
  std::size_t threshold() const { return threshold_; }

  /// Persist every appended block (genesis first) to this file.
  void set_ledger_file(std::filesystem::path path);

  /// False if the token is pending or already on-chain.
  bool submit(const ledger::LedgerEvent& ev);

  /// Builds a proposal for the next height as the selected proposer. A
  /// validator still holding an unfinalized vote at that height re-proposes
  /// that block. Returns nothing if there is nothing to propose.
  std::optional<ledger::Block> propose(std::span<const std::string> validators, std::uint64_t slot,
                                       double timestamp_s, std::size_t max_events = 0,
                                       bool heartbeat = false);
  /// Equivocator fault: two conflicting proposals for one height.
  std::optional<std::pair<ledger::Block, ledger::Block>> propose_conflicting(
      std::span<const std::string> validators, std::uint64_t slot, double timestamp_s,
      std::size_t max_events = 0);

  Bytes sign(const ledger::Block& block) const;
  VoteReply vote(const ledger::Block& proposal, const std::string& sender_id);

  void begin_collecting() { phase_ = Phase::Collecting; }
  void end_collecting(bool finalized) { phase_ = finalized ? Phase::Finalized : Phase::Idle; }

  /// Appends a certified block (>= threshold valid signatures, valid
  /// contents). Returns false, with a reason, if it cannot be applied.
  bool accept_certificate(const ledger::Block& certified, std::string* reason = nullptr);

  std::vector<ledger::Block> blocks_from(std::uint64_t index) const;

 private:
  ledger::Block build(std::span<const std::string> validators, double timestamp_s,
                      std::size_t max_events, bool allow_empty);

  std::string id_;
  crypto::KeyPair keys_;
  crypto::KeyPair bogus_keys_;
  QuorumConfig quorum_;
  std::size_t threshold_;
  FaultProfile fault_;
  ledger::ValidationOptions opts_;
  ledger::Chain chain_;
  ledger::Mempool mempool_;
  Phase phase_ = Phase::Idle;
  std::map<std::uint64_t, Digest> voted_;  // height -> block hash signed
  std::map<std::uint64_t, ledger::Block> locked_;
  std::optional<std::filesystem::path> ledger_file_;
};

// ---------------------------------------------------------------------------

struct BlockRecord {
  std::uint64_t block_index = 0;
  double proposal_time_s = 0.0;
  std::optional<double> finalize_time_s;
  std::size_t signatures = 0;
  std::string proposer_id;
  std::size_t attempts = 0;
  std::size_t events = 0;
  bool stalled = false;

  bool finalized() const { return finalize_time_s.has_value(); }
  double latency_s() const { return finalize_time_s ? *finalize_time_s - proposal_time_s : 0.0; }
};

struct CommitteeSetup {
  std::vector<std::string> ids;
  std::vector<crypto::KeyPair> keys;
  ledger::Block genesis;
};

struct CommitteeOptions {
  QuorumConfig quorum;
  FaultPlan faults;
  /// Modeled per-message validator processing time (simulated transport).
  double processing_s = 0.001;
  /// 0 selects 50x max(mean link latency, processing_s).
  double timeout_s = 0.0;
  std::size_t max_block_events = 0;  // 0: drain everything pending
  bool heartbeat = false;
  ledger::ValidationOptions validation;
  std::optional<std::filesystem::path> ledger_dir;
  std::uint64_t seed = 0;
};

/// Common interface of the simulated and service committees.
class Committee {
 public:
  virtual ~Committee() = default;

  /// Delivers events to every validator's mempool.
  virtual void submit(std::span<const ledger::LedgerEvent> events) = 0;
  /// Runs proposer slots until one block finalizes, trying each validator as
  /// proposer at most once before recording a stall.
  virtual BlockRecord finalize_next(double timestamp_s) = 0;
  virtual const std::vector<Validator*>& validators() const = 0;
  virtual double now_s() const = 0;
  virtual const QuorumConfig& quorum() const = 0;

  /// Chain of the first honest validator.
  const ledger::Chain& reference_chain() const;
};

void write_trace_csv(const std::filesystem::path& path, std::span<const BlockRecord> rows,
                     const QuorumConfig& quorum);

}  // namespace orbitchain::consensus
