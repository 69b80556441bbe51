#include "orbitchain/consensus.hpp"

#include <fstream>

namespace orbitchain::consensus {

void QuorumConfig::validate() const {
  if (n_validators == 0) fail(ErrorKind::config, "quorum: n_validators must be >= 1");
  switch (mode) {
    case QuorumMode::fixed_q:
      if (q < 1 || q > n_validators)
        fail(ErrorKind::config, "quorum.q must satisfy 1 <= q <= " + std::to_string(n_validators));
      break;
    case QuorumMode::majority_f:
      if (f >= n_validators)
        fail(ErrorKind::config, "quorum.f must satisfy 0 <= f < " + std::to_string(n_validators));
      break;
    case QuorumMode::two_thirds: break;
  }
}

std::string QuorumConfig::label() const {
  switch (mode) {
    case QuorumMode::fixed_q: return std::to_string(q) + "-of-" + std::to_string(n_validators);
    case QuorumMode::two_thirds: return "two_thirds";
    case QuorumMode::majority_f: return "majority_f(" + std::to_string(f) + ")";
  }
  return "?";
}

std::size_t quorum_threshold(const QuorumConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.n_validators;
  switch (cfg.mode) {
    case QuorumMode::fixed_q: return cfg.q;
    case QuorumMode::two_thirds: return (2 * n + 2) / 3;
    case QuorumMode::majority_f: return (n + cfg.f) / 2 + 1;
  }
  return n;
}

QuorumConfig quorum_from_json(const json& j, std::size_t n_validators) {
  QuorumConfig cfg;
  cfg.n_validators = n_validators;
  if (j.is_number_integer()) {
    cfg.mode = QuorumMode::fixed_q;
    cfg.q = j.get<std::size_t>();
  } else if (j.is_object()) {
    if (!j.contains("mode") || !j["mode"].is_string())
      fail(ErrorKind::config, "mode: expected one of fixed_q, two_thirds, majority_f");
    const auto mode = j["mode"].get<std::string>();
    if (mode == "fixed_q") {
      cfg.mode = QuorumMode::fixed_q;
      if (!j.contains("q") || !j["q"].is_number_integer())
        fail(ErrorKind::config, "q: required integer for fixed_q");
      cfg.q = j["q"].get<std::size_t>();
    } else if (mode == "two_thirds") {
      cfg.mode = QuorumMode::two_thirds;
    } else if (mode == "majority_f") {
      cfg.mode = QuorumMode::majority_f;
      if (!j.contains("f") || !j["f"].is_number_integer())
        fail(ErrorKind::config, "f: required integer for majority_f");
      cfg.f = j["f"].get<std::size_t>();
    } else {
      fail(ErrorKind::config, "mode: unknown quorum mode '" + mode + "'");
    }
  } else {
    fail(ErrorKind::config, "expected an integer q or an object with a mode");
  }
  cfg.validate();
  return cfg;
}

json to_json(const QuorumConfig& cfg) {
  switch (cfg.mode) {
    case QuorumMode::fixed_q: return {{"mode", "fixed_q"}, {"q", cfg.q}};
    case QuorumMode::two_thirds: return {{"mode", "two_thirds"}};
    case QuorumMode::majority_f: return {{"mode", "majority_f"}, {"f", cfg.f}};
  }
  return json::object();
}

const std::string& select_proposer(std::uint64_t round_index, std::span<const std::string> validators) {
  if (validators.empty()) fail(ErrorKind::config, "select_proposer: empty validator list");
  return validators[round_index % validators.size()];
}

const char* to_string(FaultKind k) noexcept {
  switch (k) {
    case FaultKind::honest: return "honest";
    case FaultKind::slow: return "slow";
    case FaultKind::offline: return "offline";
    case FaultKind::equivocator: return "equivocator";
    case FaultKind::invalid_signer: return "invalid_signer";
  }
  return "?";
}

FaultKind fault_kind_from_string(std::string_view s) {
  for (auto k : {FaultKind::honest, FaultKind::slow, FaultKind::offline, FaultKind::equivocator,
                 FaultKind::invalid_signer})
    if (s == to_string(k)) return k;
  fail(ErrorKind::config, "unknown fault kind '" + std::string(s) + "'");
}

void FaultProfile::validate() const {
  if (kind == FaultKind::slow && !(delay_factor > 1.0))
    fail(ErrorKind::config, "delay_factor must be > 1 for a slow validator");
}

FinalizeDecision finalize(const ledger::SignatureSet& votes, const ledger::Block& proposal,
                          const QuorumConfig& cfg, const crypto::KeyRegistry& registry) {
  FinalizeDecision d;
  d.threshold = quorum_threshold(cfg);
  const Digest h = proposal.hash();
  for (const auto& [id, sig] : votes) {
    const auto* p = registry.find(id);
    if (p && p->role == crypto::Role::validator && sig.size() == crypto::kSignatureSize &&
        crypto::verify(h.bytes, sig, p->public_key))
      ++d.valid_signatures;
  }
  d.finalized = d.valid_signatures >= d.threshold;
  return d;
}

const char* to_string(Phase p) noexcept {
  switch (p) {
    case Phase::Idle: return "Idle";
    case Phase::Proposed: return "Proposed";
    case Phase::Collecting: return "Collecting";
    case Phase::Finalized: return "Finalized";
  }
  return "?";
}

json VoteReply::to_json() const {
  const char* s = status == Status::vote ? "vote" : status == Status::sync ? "sync" : "reject";
  return {{"status", s}, {"signature", to_hex(signature)}, {"reason", reason}, {"head_index", head_index}};
}

VoteReply VoteReply::from_json(const json& j) {
  try {
    VoteReply r;
    const auto s = j.at("status").get<std::string>();
    if (s == "vote")
      r.status = Status::vote;
    else if (s == "sync")
      r.status = Status::sync;
    else if (s == "reject")
      r.status = Status::reject;
    else
      fail(ErrorKind::format, "unknown vote status '" + s + "'");
    r.signature = from_hex(j.at("signature").get<std::string>());
    r.reason = j.at("reason").get<std::string>();
    r.head_index = j.at("head_index").get<std::uint64_t>();
    return r;
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("malformed vote reply: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

Collector::Collector(ledger::Block proposal, std::size_t threshold, const crypto::KeyRegistry& registry)
    : block_(std::move(proposal)), hash_(block_.hash()), threshold_(threshold), registry_(registry) {
  block_.signatures.clear();
}

bool Collector::add(const std::string& validator_id, const Bytes& signature) {
  if (votes_.count(validator_id)) return false;
  const auto* p = registry_.find(validator_id);
  if (!p || p->role != crypto::Role::validator || signature.size() != crypto::kSignatureSize) return false;
  if (!crypto::verify(hash_.bytes, signature, p->public_key)) return false;
  const bool was = finalized();
  votes_.emplace(validator_id, signature);
  return !was && finalized();
}

ledger::Block Collector::certificate() const {
  ledger::Block b = block_;
  b.signatures = votes_;
  return b;
}

// ---------------------------------------------------------------------------

Validator::Validator(std::string id, crypto::KeyPair keys, const ledger::Block& genesis,
                     QuorumConfig quorum, FaultProfile fault, ledger::ValidationOptions opts)
    : id_(std::move(id)),
      keys_(std::move(keys)),
      bogus_keys_(crypto::keypair_from_seed(crypto::hash("bogus-signer:" + id_).bytes)),
      quorum_(quorum),
      threshold_(quorum_threshold(quorum)),
      fault_(fault),
      opts_(std::move(opts)),
      chain_(genesis) {
  fault_.validate();
}

void Validator::set_ledger_file(std::filesystem::path path) {
  chain_.save(path);
  ledger_file_ = std::move(path);
}

bool Validator::submit(const ledger::LedgerEvent& ev) {
  if (!ev.token || !chain_.find(ev.token->value).empty()) return false;
  return mempool_.add(ev);
}

ledger::Block Validator::build(std::span<const std::string> validators, double timestamp_s,
                               std::size_t max_events, bool allow_empty) {
  (void)validators;
  auto events = mempool_.ordered();
  if (max_events > 0 && events.size() > max_events) events.resize(max_events);
  if (events.empty() && !allow_empty) fail(ErrorKind::precondition, "nothing to propose");
  ledger::Block b;
  b.index = chain_.height() + 1;
  b.prev_hash = chain_.head_hash();
  b.timestamp_s = timestamp_s;
  b.proposer_id = id_;
  b.events = std::move(events);
  b.round_root = chain_.preview_round_root(b.events);
  return b;
}

std::optional<ledger::Block> Validator::propose(std::span<const std::string> validators,
                                                std::uint64_t slot, double timestamp_s,
                                                std::size_t max_events, bool heartbeat) {
  if (select_proposer(slot, validators) != id_)
    fail(ErrorKind::authorization, id_ + " is not the proposer for slot " + std::to_string(slot));
  const std::uint64_t h = chain_.height() + 1;
  auto lock = locked_.find(h);
  ledger::Block b;
  if (lock != locked_.end()) {
    b = lock->second;
  } else {
    if (mempool_.empty() && !heartbeat) return std::nullopt;
    b = build(validators, timestamp_s, max_events, true);
    if (fault_.kind != FaultKind::equivocator) {
      voted_[h] = b.hash();
      locked_[h] = b;
    }
  }
  b.signatures.clear();
  b.signatures[id_] = sign(b);
  phase_ = Phase::Proposed;
  return b;
}

std::optional<std::pair<ledger::Block, ledger::Block>> Validator::propose_conflicting(
    std::span<const std::string> validators, std::uint64_t slot, double timestamp_s,
    std::size_t max_events) {
  if (select_proposer(slot, validators) != id_)
    fail(ErrorKind::authorization, id_ + " is not the proposer for slot " + std::to_string(slot));
  if (mempool_.empty()) return std::nullopt;
  ledger::Block a = build(validators, timestamp_s, max_events, false);
  ledger::Block b = a;
  b.timestamp_s = timestamp_s + 1e-3;
  a.signatures[id_] = sign(a);
  b.signatures[id_] = sign(b);
  phase_ = Phase::Proposed;
  return std::make_pair(std::move(a), std::move(b));
}

Bytes Validator::sign(const ledger::Block& block) const {
  const Digest h = block.hash();
  const auto& key = fault_.kind == FaultKind::invalid_signer ? bogus_keys_ : keys_;
  return crypto::sign(h.bytes, key.secret_key);
}

VoteReply Validator::vote(const ledger::Block& proposal, const std::string& sender_id) {
  VoteReply r;
  const std::uint64_t h = chain_.height();
  r.head_index = h;
  if (proposal.index <= h) {
    r.reason = "stale height " + std::to_string(proposal.index);
    return r;
  }
  if (proposal.index > h + 1) {
    r.status = VoteReply::Status::sync;
    r.reason = "behind: head " + std::to_string(h);
    return r;
  }
  auto sig = proposal.signatures.find(sender_id);
  if (sig == proposal.signatures.end() || !chain_.signature_valid(proposal, sender_id, sig->second)) {
    r.reason = "bad_signature: proposal not signed by sender '" + sender_id + "'";
    return r;
  }
  auto verdict = chain_.validate(proposal, opts_);
  if (!verdict.accepted()) {
    r.reason = verdict.summary();
    return r;
  }
  const Digest hash = proposal.hash();
  if (fault_.kind != FaultKind::equivocator) {
    auto prior = voted_.find(proposal.index);
    if (prior != voted_.end() && prior->second != hash) {
      r.reason = "equivocation: already signed another block at height " +
                 std::to_string(proposal.index);
      return r;
    }
    voted_[proposal.index] = hash;
    ledger::Block unsigned_copy = proposal;
    unsigned_copy.signatures.clear();
    locked_[proposal.index] = std::move(unsigned_copy);
  }
  r.status = VoteReply::Status::vote;
  r.signature = sign(proposal);
  return r;
}

bool Validator::accept_certificate(const ledger::Block& certified, std::string* reason) {
  auto why = [&](std::string s) {
    if (reason) *reason = std::move(s);
    return false;
  };
  const std::uint64_t h = chain_.height();
  if (certified.index <= h) {
    if (chain_.blocks()[certified.index].hash() == certified.hash()) return true;
    return why("conflicts with finalized block " + std::to_string(certified.index));
  }
  if (certified.index > h + 1) return why("gap: head is " + std::to_string(h));
  try {
    chain_.append(certified, threshold_, opts_);
  } catch (const Error& e) {
    return why(e.what());
  }
  mempool_.remove_included(certified);
  locked_.erase(certified.index);
  phase_ = Phase::Idle;
  if (ledger_file_) ledger::append_line(*ledger_file_, chain_.head());
  return true;
}

std::vector<ledger::Block> Validator::blocks_from(std::uint64_t index) const {
  const auto& bs = chain_.blocks();
  if (index >= bs.size()) return {};
  return {bs.begin() + static_cast<std::ptrdiff_t>(index), bs.end()};
}

// ---------------------------------------------------------------------------

const ledger::Chain& Committee::reference_chain() const {
  for (const auto* v : validators())
    if (v->honest()) return v->chain();
  fail(ErrorKind::precondition, "committee has no honest validator");
}

void write_trace_csv(const std::filesystem::path& path, std::span<const BlockRecord> rows,
                     const QuorumConfig& quorum) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << "block_index,proposal_time_s,finalize_time_s,latency_s,signatures,quorum_mode,stalled\n";
  for (const auto& r : rows) {
    out << r.block_index << ',' << fmt_real(r.proposal_time_s) << ',';
    if (r.finalize_time_s) out << fmt_real(*r.finalize_time_s) << ',' << fmt_real(r.latency_s());
    else out << ',';
    out << ',' << r.signatures << ',' << quorum.label() << ',' << (r.stalled ? 1 : 0) << '\n';
  }
}

}  // namespace orbitchain::consensus
