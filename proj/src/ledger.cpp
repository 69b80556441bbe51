#include "orbitchain/ledger.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace orbitchain::ledger {

namespace {

std::vector<std::string> token_hexes(const std::vector<ContributionToken>& tokens) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.hex());
  return out;
}

std::vector<ContributionToken> tokens_from(const json& arr, crypto::TokenKind kind) {
  std::vector<ContributionToken> out;
  for (const auto& h : arr) out.push_back({Digest::from_hex(h.get<std::string>()), kind});
  return out;
}

Digest payload_digest(const json& payload) { return crypto::hash(canonical_dump(payload)); }

bool sums_to_one(const std::vector<double>& w) {
  double s = 0.0;
  for (double x : w) {
    if (!std::isfinite(x) || x < 0.0) return false;
    s += x;
  }
  return std::abs(s - 1.0) <= kNormalizationTolerance;
}

}  // namespace

const char* to_string(EventKind kind) noexcept {
  switch (kind) {
    case EventKind::Commit: return "Commit";
    case EventKind::PartialAgg: return "PartialAgg";
    case EventKind::GlobalAgg: return "GlobalAgg";
    case EventKind::Distribute: return "Distribute";
    case EventKind::KeyRegistration: return "KeyRegistration";
  }
  return "?";
}

EventKind event_kind_from_string(std::string_view s) {
  for (auto k : {EventKind::Commit, EventKind::PartialAgg, EventKind::GlobalAgg,
                 EventKind::Distribute, EventKind::KeyRegistration})
    if (s == to_string(k)) return k;
  fail(ErrorKind::format, "unknown event kind '" + std::string(s) + "'");
}

int phase_rank(EventKind kind) noexcept {
  switch (kind) {
    case EventKind::KeyRegistration: return 0;
    case EventKind::Commit: return 1;
    case EventKind::PartialAgg: return 2;
    case EventKind::GlobalAgg: return 3;
    case EventKind::Distribute: return 4;
  }
  return 5;
}

bool accumulates(EventKind kind) noexcept {
  return kind == EventKind::Commit || kind == EventKind::PartialAgg || kind == EventKind::GlobalAgg;
}

json to_json(const LedgerEvent& ev) {
  json j = {{"kind", to_string(ev.kind)},
            {"round", ev.round},
            {"digest", ev.digest.hex()},
            {"emitter_id", ev.emitter_id},
            {"vendor_id", ev.vendor_id},
            {"payload", ev.payload}};
  if (ev.token) {
    j["token"] = ev.token->hex();
    j["token_kind"] = crypto::to_string(ev.token->kind);
  }
  return j;
}

LedgerEvent event_from_json(const json& j) {
  try {
    LedgerEvent ev;
    ev.kind = event_kind_from_string(j.at("kind").get<std::string>());
    ev.round = j.at("round").get<std::uint64_t>();
    ev.digest = Digest::from_hex(j.at("digest").get<std::string>());
    ev.emitter_id = j.at("emitter_id").get<std::string>();
    ev.vendor_id = j.at("vendor_id").get<std::string>();
    ev.payload = j.at("payload");
    if (j.contains("token"))
      ev.token = ContributionToken{Digest::from_hex(j.at("token").get<std::string>()),
                                   crypto::token_kind_from_string(j.at("token_kind").get<std::string>())};
    return ev;
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("malformed event: ") + e.what());
  }
}

CommitPayload commit_payload(const LedgerEvent& ev) {
  try {
    const auto& p = ev.payload;
    CommitPayload out;
    out.meta = fl::metadata_from_json(p.at("meta"));
    out.ciphertext_hash = Digest::from_hex(p.at("ciphertext_hash").get<std::string>());
    out.signature = from_hex(p.at("signature").get<std::string>());
    out.scheme = fl::seal_scheme_from_string(p.at("scheme").get<std::string>());
    return out;
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("malformed Commit payload: ") + e.what());
  }
}

PartialAggPayload partial_agg_payload(const LedgerEvent& ev) {
  try {
    const auto& p = ev.payload;
    PartialAggPayload out;
    out.hap_id = p.at("hap_id").get<std::string>();
    out.contributors = tokens_from(p.at("contributors"), crypto::TokenKind::LocalUpdate);
    out.alphas = p.at("alphas").get<std::vector<double>>();
    out.content_hash = Digest::from_hex(p.at("content_hash").get<std::string>());
    out.timestamp_s = p.at("timestamp_s").get<double>();
    return out;
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("malformed PartialAgg payload: ") + e.what());
  }
}

GlobalAggPayload global_agg_payload(const LedgerEvent& ev) {
  try {
    const auto& p = ev.payload;
    GlobalAggPayload out;
    out.hap_ids = p.at("hap_ids").get<std::vector<std::string>>();
    out.aggregates = tokens_from(p.at("aggregates"), crypto::TokenKind::PartialAggregate);
    out.betas = p.at("betas").get<std::vector<double>>();
    out.content_hash = Digest::from_hex(p.at("content_hash").get<std::string>());
    out.timestamp_s = p.at("timestamp_s").get<double>();
    return out;
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("malformed GlobalAgg payload: ") + e.what());
  }
}

DistributePayload distribute_payload(const LedgerEvent& ev) {
  try {
    const auto& p = ev.payload;
    DistributePayload out;
    out.global_token = {Digest::from_hex(p.at("global_token").get<std::string>()),
                        crypto::TokenKind::GlobalModel};
    out.destination = p.at("destination").get<std::string>();
    out.uri = p.at("uri").get<std::string>();
    out.content_hash = Digest::from_hex(p.at("content_hash").get<std::string>());
    out.timestamp_s = p.at("timestamp_s").get<double>();
    return out;
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("malformed Distribute payload: ") + e.what());
  }
}

KeyRegistrationPayload key_registration_payload(const LedgerEvent& ev) {
  try {
    const auto& p = ev.payload;
    KeyRegistrationPayload out;
    out.principal_id = p.at("principal_id").get<std::string>();
    out.principal.role = crypto::role_from_string(p.at("role").get<std::string>());
    out.principal.public_key = from_hex(p.at("public_key").get<std::string>());
    out.principal.vendor_id = p.at("vendor_id").get<std::string>();
    return out;
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("malformed KeyRegistration payload: ") + e.what());
  }
}

LedgerEvent make_commit_event(const fl::SealedUpdate& sealed, const std::string& hap_id) {
  const auto& m = sealed.metadata;
  const Digest c_hash = sealed.ciphertext_hash();
  LedgerEvent ev;
  ev.kind = EventKind::Commit;
  ev.round = m.round;
  ev.emitter_id = hap_id;
  ev.vendor_id = m.vendor_id;
  ev.payload = {{"meta", fl::to_json(m)},
                {"ciphertext_hash", c_hash.hex()},
                {"signature", to_hex(sealed.signature)},
                {"scheme", fl::to_string(sealed.scheme)}};
  Bytes pre = sealed.ciphertext;
  append(pre, sealed.signature);
  append(pre, fl::canonical(m));
  ev.digest = crypto::hash(pre);
  ev.token = crypto::compute_token(m.vendor_id, m.sat_id, m.round, m.timestamp_s, c_hash,
                                   crypto::TokenKind::LocalUpdate);
  return ev;
}

LedgerEvent make_partial_agg_event(const std::string& hap_id, const std::string& hap_vendor,
                                   std::uint64_t round, double timestamp_s,
                                   std::vector<ContributionToken> contributors,
                                   std::vector<double> alphas, const Digest& content_hash) {
  LedgerEvent ev;
  ev.kind = EventKind::PartialAgg;
  ev.round = round;
  ev.emitter_id = hap_id;
  ev.vendor_id = hap_vendor;
  ev.payload = {{"hap_id", hap_id},
                {"contributors", token_hexes(contributors)},
                {"alphas", alphas},
                {"content_hash", content_hash.hex()},
                {"timestamp_s", timestamp_s}};
  ev.digest = payload_digest(ev.payload);
  ev.token = crypto::compute_token(hap_vendor, hap_id, round, timestamp_s, content_hash,
                                   crypto::TokenKind::PartialAggregate);
  return ev;
}

LedgerEvent make_global_agg_event(const std::string& emitter_id, const std::string& emitter_vendor,
                                  std::uint64_t round, double timestamp_s,
                                  std::vector<std::string> hap_ids,
                                  std::vector<ContributionToken> aggregates,
                                  std::vector<double> betas, const Digest& content_hash) {
  LedgerEvent ev;
  ev.kind = EventKind::GlobalAgg;
  ev.round = round;
  ev.emitter_id = emitter_id;
  ev.vendor_id = emitter_vendor;
  ev.payload = {{"hap_ids", hap_ids},
                {"aggregates", token_hexes(aggregates)},
                {"betas", betas},
                {"content_hash", content_hash.hex()},
                {"timestamp_s", timestamp_s}};
  ev.digest = payload_digest(ev.payload);
  ev.token = crypto::compute_token(emitter_vendor, emitter_id, round, timestamp_s, content_hash,
                                   crypto::TokenKind::GlobalModel);
  return ev;
}

LedgerEvent make_distribute_event(const std::string& emitter_id, std::uint64_t round,
                                  double timestamp_s, const ContributionToken& global_token,
                                  const std::string& destination, const std::string& uri,
                                  const Digest& content_hash) {
  LedgerEvent ev;
  ev.kind = EventKind::Distribute;
  ev.round = round;
  ev.emitter_id = emitter_id;
  ev.payload = {{"global_token", global_token.hex()},
                {"destination", destination},
                {"uri", uri},
                {"content_hash", content_hash.hex()},
                {"timestamp_s", timestamp_s}};
  ev.digest = payload_digest(ev.payload);
  ev.token = crypto::compute_token(emitter_id, destination, round, timestamp_s, ev.digest,
                                   crypto::TokenKind::Distribution);
  return ev;
}

LedgerEvent make_key_registration(const std::string& principal_id, const crypto::Principal& p) {
  LedgerEvent ev;
  ev.kind = EventKind::KeyRegistration;
  ev.emitter_id = principal_id;
  ev.vendor_id = p.vendor_id;
  ev.payload = {{"principal_id", principal_id},
                {"role", crypto::to_string(p.role)},
                {"public_key", to_hex(p.public_key)},
                {"vendor_id", p.vendor_id}};
  ev.digest = crypto::hash(p.public_key);
  return ev;
}

// ---------------------------------------------------------------------------

json Block::to_json(bool with_signatures) const {
  json evs = json::array();
  for (const auto& e : events) evs.push_back(ledger::to_json(e));
  json j = {{"index", index},
            {"prev_hash", prev_hash.hex()},
            {"timestamp_s", timestamp_s},
            {"proposer_id", proposer_id},
            {"events", evs},
            {"round_root", round_root.hex()}};
  if (with_signatures) {
    json sigs = json::object();
    for (const auto& [id, s] : signatures) sigs[id] = to_hex(s);
    j["signatures"] = sigs;
  }
  return j;
}

Digest Block::hash() const { return crypto::hash(canonical_dump(to_json(false))); }

Block block_from_json(const json& j) {
  try {
    Block b;
    b.index = j.at("index").get<std::uint64_t>();
    b.prev_hash = Digest::from_hex(j.at("prev_hash").get<std::string>());
    b.timestamp_s = j.at("timestamp_s").get<double>();
    b.proposer_id = j.at("proposer_id").get<std::string>();
    for (const auto& e : j.at("events")) b.events.push_back(event_from_json(e));
    b.round_root = Digest::from_hex(j.at("round_root").get<std::string>());
    if (j.contains("signatures"))
      for (const auto& [id, s] : j.at("signatures").items())
        b.signatures[id] = from_hex(s.get<std::string>());
    return b;
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("malformed block: ") + e.what());
  }
}

Block block_from_line(std::string_view line) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded()) fail(ErrorKind::format, "block line is not valid JSON");
  return block_from_json(j);
}

Block make_genesis(std::span<const LedgerEvent> registrations, double timestamp_s) {
  Block g;
  g.index = 0;
  g.timestamp_s = timestamp_s;
  g.proposer_id = kGenesisProposer;
  g.events.assign(registrations.begin(), registrations.end());
  sort_for_block(g.events);
  return g;
}

// ---------------------------------------------------------------------------

const char* to_string(Reason r) noexcept {
  switch (r) {
    case Reason::lineage: return "lineage";
    case Reason::unknown_proposer: return "unknown_proposer";
    case Reason::duplicate_token: return "duplicate_token";
    case Reason::unregistered_contributor: return "unregistered_contributor";
    case Reason::dangling_reference: return "dangling_reference";
    case Reason::root_mismatch: return "root_mismatch";
    case Reason::bad_signature: return "bad_signature";
    case Reason::digest_mismatch: return "digest_mismatch";
    case Reason::token_mismatch: return "token_mismatch";
    case Reason::normalization: return "normalization";
    case Reason::missing_artifact: return "missing_artifact";
    case Reason::registry_conflict: return "registry_conflict";
    case Reason::malformed: return "malformed";
  }
  return "?";
}

bool Verdict::has(Reason r) const {
  return std::any_of(rejections.begin(), rejections.end(),
                     [r](const Rejection& x) { return x.reason == r; });
}

std::string Verdict::summary() const {
  if (accepted()) return "accepted";
  std::ostringstream os;
  for (std::size_t i = 0; i < rejections.size(); ++i) {
    const auto& r = rejections[i];
    if (i) os << "; ";
    os << to_string(r.reason);
    if (r.event_index >= 0) os << " (event " << r.event_index << ")";
    if (!r.detail.empty()) os << ": " << r.detail;
  }
  return os.str();
}

// ---------------------------------------------------------------------------

namespace {

class BlockChecker {
 public:
  BlockChecker(const Chain& chain, const Block& block, const crypto::KeyRegistry& registry,
               const ValidationOptions& opts)
      : chain_(chain), block_(block), registry_(registry), opts_(opts) {}

  Verdict run() {
    check_header();
    for (std::size_t i = 0; i < block_.events.size(); ++i) {
      idx_ = static_cast<std::int64_t>(i);
      try {
        check_event(block_.events[i]);
      } catch (const Error& e) {
        reject(Reason::malformed, e.what());
      }
      if (const auto& t = block_.events[i].token) local_[t->value].push_back(i);
    }
    idx_ = -1;
    if (chain_.preview_round_root(block_.events) != block_.round_root)
      reject(Reason::root_mismatch, "round_root does not match the accumulator");
    return std::move(verdict_);
  }

 private:
  void reject(Reason r, std::string detail) {
    verdict_.rejections.push_back({r, idx_, std::move(detail)});
  }

  void check_header() {
    const auto& head = chain_.head();
    if (block_.index != head.index + 1)
      reject(Reason::lineage, "index " + std::to_string(block_.index) + " does not follow head " +
                                  std::to_string(head.index));
    if (block_.prev_hash != chain_.head_hash())
      reject(Reason::lineage, "prev_hash does not match head hash");
    if (!registry_.has_role(block_.proposer_id, crypto::Role::validator))
      reject(Reason::unknown_proposer, "proposer '" + block_.proposer_id + "' is not a validator");
  }

  /// The event a token names, if it is on-chain or earlier in this block.
  const LedgerEvent* resolve(const Digest& token, EventKind kind) const {
    for (const auto& loc : chain_.find(token)) {
      const auto& ev = chain_.event_at(loc);
      if (ev.kind == kind) return &ev;
    }
    auto it = local_.find(token);
    if (it != local_.end())
      for (std::size_t i : it->second)
        if (block_.events[i].kind == kind) return &block_.events[i];
    return nullptr;
  }

  bool emitter_is_validator(const LedgerEvent& ev) {
    if (registry_.has_role(ev.emitter_id, crypto::Role::validator)) return true;
    reject(Reason::unregistered_contributor, "emitter '" + ev.emitter_id + "' is not a validator");
    return false;
  }

  void check_token(const LedgerEvent& ev, const ContributionToken& expected) {
    if (!ev.token || *ev.token != expected)
      reject(Reason::token_mismatch, "token does not match its recomputation");
  }

  void check_event(const LedgerEvent& ev) {
    if (ev.kind == EventKind::KeyRegistration) {
      if (ev.token) reject(Reason::malformed, "KeyRegistration carries a token");
      auto p = key_registration_payload(ev);
      if (registry_.contains(p.principal_id) || local_principals_.count(p.principal_id))
        reject(Reason::registry_conflict, "principal '" + p.principal_id + "' already registered");
      if (ev.digest != crypto::hash(p.principal.public_key))
        reject(Reason::digest_mismatch, "KeyRegistration digest differs from H(pk)");
      local_principals_.insert(p.principal_id);
      return;
    }
    if (!ev.token) {
      reject(Reason::malformed, "event has no token");
      return;
    }
    const Digest& tok = ev.token->value;
    if (!chain_.find(tok).empty() || local_.count(tok))
      reject(Reason::duplicate_token, "token " + tok.hex() + " already on the ledger");

    switch (ev.kind) {
      case EventKind::Commit: check_commit(ev); break;
      case EventKind::PartialAgg: check_partial(ev); break;
      case EventKind::GlobalAgg: check_global(ev); break;
      case EventKind::Distribute: check_distribute(ev); break;
      case EventKind::KeyRegistration: break;
    }
  }

  void check_commit(const LedgerEvent& ev) {
    auto p = commit_payload(ev);
    const auto& m = p.meta;
    if (m.round != ev.round || m.vendor_id != ev.vendor_id)
      reject(Reason::malformed, "Commit envelope disagrees with its metadata");
    emitter_is_validator(ev);
    const auto* vendor = registry_.find(m.vendor_id);
    const auto* sat = registry_.find(m.sat_id);
    if (!vendor || vendor->role != crypto::Role::vendor)
      reject(Reason::unregistered_contributor, "vendor '" + m.vendor_id + "' is not registered");
    if (!sat || sat->role != crypto::Role::satellite || sat->vendor_id != m.vendor_id)
      reject(Reason::unregistered_contributor,
             "satellite '" + m.sat_id + "' is not registered to vendor '" + m.vendor_id + "'");
    check_token(ev, crypto::compute_token(m.vendor_id, m.sat_id, m.round, m.timestamp_s,
                                          p.ciphertext_hash, crypto::TokenKind::LocalUpdate));
    if (!opts_.artifacts) return;
    auto ciphertext = opts_.artifacts(p.ciphertext_hash);
    if (!ciphertext) {
      reject(Reason::missing_artifact, "ciphertext " + p.ciphertext_hash.hex() + " unavailable");
      return;
    }
    if (crypto::hash(*ciphertext) != p.ciphertext_hash) {
      reject(Reason::digest_mismatch, "ciphertext does not hash to ciphertext_hash");
      return;
    }
    fl::SealedUpdate sealed{*ciphertext, m, p.signature, p.scheme};
    if (!vendor || !fl::verify_sealed(sealed, vendor->public_key))
      reject(Reason::bad_signature, "vendor signature does not verify");
    Bytes pre = *ciphertext;
    append(pre, p.signature);
    append(pre, fl::canonical(m));
    if (crypto::hash(pre) != ev.digest) reject(Reason::digest_mismatch, "Commit digest mismatch");
  }

  /// An input may feed exactly one aggregate chain-wide.
  void check_single_use(const ContributionToken& input) {
    if (chain_.cited_by(input.value) || !cited_.insert(input.value).second)
      reject(Reason::duplicate_token, "input " + input.hex() + " is already aggregated");
  }

  void check_partial(const LedgerEvent& ev) {
    auto p = partial_agg_payload(ev);
    if (p.hap_id != ev.emitter_id) reject(Reason::malformed, "hap_id differs from emitter");
    emitter_is_validator(ev);
    if (p.contributors.empty()) reject(Reason::malformed, "PartialAgg has no contributors");
    for (const auto& c : p.contributors) {
      check_single_use(c);
      const auto* ref = resolve(c.value, EventKind::Commit);
      if (!ref)
        reject(Reason::dangling_reference, "contributor " + c.hex() + " has no Commit");
      else if (ref->round != ev.round)
        reject(Reason::dangling_reference, "contributor " + c.hex() + " is from another round");
    }
    if (p.alphas.size() != p.contributors.size() || !sums_to_one(p.alphas))
      reject(Reason::normalization, "alphas do not sum to 1");
    if (ev.digest != payload_digest(ev.payload)) reject(Reason::digest_mismatch, "payload digest");
    check_token(ev, crypto::compute_token(ev.vendor_id, p.hap_id, ev.round, p.timestamp_s,
                                          p.content_hash, crypto::TokenKind::PartialAggregate));
  }

  void check_global(const LedgerEvent& ev) {
    auto p = global_agg_payload(ev);
    emitter_is_validator(ev);
    if (p.aggregates.empty()) reject(Reason::malformed, "GlobalAgg has no aggregates");
    if (p.hap_ids.size() != p.aggregates.size())
      reject(Reason::malformed, "hap_ids and aggregates differ in length");
    for (std::size_t i = 0; i < p.aggregates.size(); ++i) {
      const auto& a = p.aggregates[i];
      check_single_use(a);
      const auto* ref = resolve(a.value, EventKind::PartialAgg);
      if (!ref)
        reject(Reason::dangling_reference, "aggregate " + a.hex() + " has no PartialAgg");
      else if (ref->round != ev.round)
        reject(Reason::dangling_reference, "aggregate " + a.hex() + " is from another round");
      else if (i < p.hap_ids.size() && ref->emitter_id != p.hap_ids[i])
        reject(Reason::malformed, "hap_ids do not match the referenced aggregates");
    }
    if (p.betas.size() != p.aggregates.size() || !sums_to_one(p.betas))
      reject(Reason::normalization, "betas do not sum to 1");
    if (ev.digest != payload_digest(ev.payload)) reject(Reason::digest_mismatch, "payload digest");
    check_token(ev, crypto::compute_token(ev.vendor_id, ev.emitter_id, ev.round, p.timestamp_s,
                                          p.content_hash, crypto::TokenKind::GlobalModel));
  }

  void check_distribute(const LedgerEvent& ev) {
    auto p = distribute_payload(ev);
    emitter_is_validator(ev);
    const auto* ref = resolve(p.global_token.value, EventKind::GlobalAgg);
    if (!ref) {
      reject(Reason::dangling_reference, "global token " + p.global_token.hex() + " unknown");
    } else if (global_agg_payload(*ref).content_hash != p.content_hash) {
      reject(Reason::digest_mismatch, "content_hash differs from the GlobalAgg");
    }
    if (ev.digest != payload_digest(ev.payload)) reject(Reason::digest_mismatch, "payload digest");
    check_token(ev, crypto::compute_token(ev.emitter_id, p.destination, ev.round, p.timestamp_s,
                                          ev.digest, crypto::TokenKind::Distribution));
  }

  const Chain& chain_;
  const Block& block_;
  const crypto::KeyRegistry& registry_;
  const ValidationOptions& opts_;
  Verdict verdict_;
  std::int64_t idx_ = -1;
  std::map<Digest, std::vector<std::size_t>> local_;
  std::set<Digest> cited_;
  std::set<std::string> local_principals_;
};

const std::vector<Digest> kNoTokens;

}  // namespace

Verdict validate_block(const Chain& chain, const Block& block, const crypto::KeyRegistry& registry,
                       const ValidationOptions& opts) {
  return BlockChecker(chain, block, registry, opts).run();
}

// ---------------------------------------------------------------------------

Chain::Chain(Block genesis) {
  if (genesis.index != 0 || !genesis.prev_hash.is_zero())
    fail(ErrorKind::provenance, "genesis must have index 0 and a zero prev_hash");
  for (const auto& ev : genesis.events)
    if (ev.kind != EventKind::KeyRegistration)
      fail(ErrorKind::provenance, "genesis may only hold KeyRegistration events");
  if (!genesis.round_root.is_zero()) fail(ErrorKind::provenance, "genesis round_root must be zero");
  apply(std::move(genesis));
}

Verdict Chain::validate(const Block& block, const ValidationOptions& opts) const {
  return validate_block(*this, block, registry_, opts);
}

bool Chain::signature_valid(const Block& block, const std::string& validator_id,
                            std::span<const std::uint8_t> sig) const {
  const auto* p = registry_.find(validator_id);
  if (!p || p->role != crypto::Role::validator || sig.size() != crypto::kSignatureSize) return false;
  const Digest h = block.hash();
  return crypto::verify(h.bytes, sig, p->public_key);
}

std::size_t Chain::count_valid_signatures(const Block& block) const {
  const Digest h = block.hash();
  std::size_t n = 0;
  for (const auto& [id, sig] : block.signatures) {
    const auto* p = registry_.find(id);
    if (p && p->role == crypto::Role::validator && sig.size() == crypto::kSignatureSize &&
        crypto::verify(h.bytes, sig, p->public_key))
      ++n;
  }
  return n;
}

void Chain::append(Block block, std::size_t quorum_threshold, const ValidationOptions& opts) {
  auto verdict = validate(block, opts);
  if (!verdict.accepted())
    fail(ErrorKind::provenance, "block " + std::to_string(block.index) + " rejected: " +
                                    verdict.summary());
  const auto valid = count_valid_signatures(block);
  if (valid < quorum_threshold)
    fail(ErrorKind::finality, "block " + std::to_string(block.index) + " has " +
                                  std::to_string(valid) + " valid signatures, needs " +
                                  std::to_string(quorum_threshold));
  apply(std::move(block));
}

void Chain::append_unchecked(Block block) { apply(std::move(block)); }

void Chain::apply(Block block) {
  const std::size_t bi = blocks_.size();
  for (std::size_t ei = 0; ei < block.events.size(); ++ei) {
    const auto& ev = block.events[ei];
    if (ev.kind == EventKind::KeyRegistration) {
      try {
        auto p = key_registration_payload(ev);
        if (!registry_.contains(p.principal_id))
          registry_.register_principal(p.principal_id, p.principal);
      } catch (const Error&) {
        // Only reachable through append_unchecked; the event stays inert.
      }
      continue;
    }
    if (!ev.token) continue;
    const Digest& tok = ev.token->value;
    token_index_[tok].push_back({bi, ei});
    try {
      if (ev.kind == EventKind::PartialAgg)
        for (const auto& c : partial_agg_payload(ev).contributors) cited_.emplace(c.value, Locator{bi, ei});
      if (ev.kind == EventKind::GlobalAgg)
        for (const auto& a : global_agg_payload(ev).aggregates) cited_.emplace(a.value, Locator{bi, ei});
    } catch (const Error&) {
      // Malformed payloads only arrive through append_unchecked.
    }
    round_index_[ev.round].push_back(tok);
    if (!ev.vendor_id.empty()) vendor_index_[ev.vendor_id].push_back(tok);
    if (accumulates(ev.kind)) {
      round_acc_[ev.round].append(tok);
      if (!ev.vendor_id.empty()) vendor_acc_[ev.vendor_id].append(tok);
    }
  }
  head_hash_ = block.hash();
  blocks_.push_back(std::move(block));
}

Digest Chain::preview_round_root(std::span<const LedgerEvent> events) const {
  std::map<std::uint64_t, crypto::MerkleAccumulator> touched;
  std::optional<std::uint64_t> last_round;
  for (const auto& ev : events) {
    if (!accumulates(ev.kind) || !ev.token) continue;
    auto it = touched.find(ev.round);
    if (it == touched.end()) {
      auto base = round_acc_.find(ev.round);
      it = touched.emplace(ev.round, base == round_acc_.end() ? crypto::MerkleAccumulator{}
                                                              : base->second).first;
    }
    it->second.append(ev.token->value);
    last_round = std::max(last_round.value_or(0), ev.round);
  }
  if (!last_round) return Digest{};
  return touched.at(*last_round).root();
}

std::vector<Locator> Chain::find(const Digest& token) const {
  auto it = token_index_.find(token);
  return it == token_index_.end() ? std::vector<Locator>{} : it->second;
}

std::optional<Locator> Chain::cited_by(const Digest& token) const {
  auto it = cited_.find(token);
  if (it == cited_.end()) return std::nullopt;
  return it->second;
}

const LedgerEvent& Chain::event_at(const Locator& loc) const {
  if (loc.block >= blocks_.size() || loc.event >= blocks_[loc.block].events.size())
    fail(ErrorKind::range, "event locator out of range");
  return blocks_[loc.block].events[loc.event];
}

const std::vector<Digest>& Chain::tokens_for_round(std::uint64_t round) const {
  auto it = round_index_.find(round);
  return it == round_index_.end() ? kNoTokens : it->second;
}

const std::vector<Digest>& Chain::tokens_for_vendor(const std::string& vendor) const {
  auto it = vendor_index_.find(vendor);
  return it == vendor_index_.end() ? kNoTokens : it->second;
}

const crypto::MerkleAccumulator* Chain::round_accumulator(std::uint64_t round) const {
  auto it = round_acc_.find(round);
  return it == round_acc_.end() ? nullptr : &it->second;
}

const crypto::MerkleAccumulator* Chain::vendor_accumulator(const std::string& vendor) const {
  auto it = vendor_acc_.find(vendor);
  return it == vendor_acc_.end() ? nullptr : &it->second;
}

void Chain::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write ledger file " + path.string());
  for (const auto& b : blocks_) out << b.to_line() << '\n';
  if (!out) fail(ErrorKind::io, "failed writing ledger file " + path.string());
}

void append_line(const std::filesystem::path& path, const Block& block) {
  std::ofstream out(path, std::ios::app);
  if (!out) fail(ErrorKind::io, "cannot append to ledger file " + path.string());
  out << block.to_line() << '\n';
}

ChainVerification verify_chain_file(const std::filesystem::path& path,
                                    const ValidationOptions& opts, std::size_t min_signatures) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot read ledger file " + path.string());
  ChainVerification out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::size_t at = lineno++;
    out.blocks_read = lineno;
    Block block;
    try {
      block = block_from_line(line);
    } catch (const Error& e) {
      out.problems.push_back({at, std::string("malformed: ") + e.what()});
      continue;
    }
    if (!out.chain) {
      try {
        out.chain.emplace(std::move(block));
      } catch (const Error& e) {
        out.problems.push_back({at, std::string("invalid genesis: ") + e.what()});
        break;
      }
      continue;
    }
    auto& chain = *out.chain;
    auto verdict = chain.validate(block, opts);
    std::vector<std::string> issues;
    if (!verdict.accepted()) issues.push_back(verdict.summary());
    std::size_t valid = 0;
    for (const auto& [id, sig] : block.signatures) {
      if (chain.signature_valid(block, id, sig))
        ++valid;
      else
        issues.push_back("bad_signature: validator '" + id + "'");
    }
    if (valid < min_signatures)
      issues.push_back("finality: " + std::to_string(valid) + " valid signatures, needs " +
                       std::to_string(min_signatures));
    if (issues.empty()) {
      chain.append_unchecked(std::move(block));
      continue;
    }
    std::string joined;
    for (const auto& s : issues) joined += (joined.empty() ? "" : "; ") + s;
    out.problems.push_back({at, joined});
  }
  if (!out.chain && out.problems.empty()) out.problems.push_back({0, "empty ledger file"});
  out.valid = out.problems.empty();
  if (out.chain) out.head_hash = out.chain->head_hash();
  return out;
}

// ---------------------------------------------------------------------------

void sort_for_block(std::vector<LedgerEvent>& events) {
  std::stable_sort(events.begin(), events.end(), [](const LedgerEvent& a, const LedgerEvent& b) {
    const int ra = phase_rank(a.kind), rb = phase_rank(b.kind);
    if (ra != rb) return ra < rb;
    if (a.token && b.token) return a.token->value < b.token->value;
    return a.emitter_id < b.emitter_id;
  });
}

bool Mempool::add(LedgerEvent ev) {
  if (!ev.token) fail(ErrorKind::precondition, "mempool only holds token-bearing events");
  const Digest tok = ev.token->value;
  return pending_.emplace(tok, std::move(ev)).second;
}

const LedgerEvent* Mempool::find(const Digest& token) const {
  auto it = pending_.find(token);
  return it == pending_.end() ? nullptr : &it->second;
}

std::vector<LedgerEvent> Mempool::ordered() const {
  std::vector<LedgerEvent> out;
  out.reserve(pending_.size());
  for (const auto& [_, ev] : pending_) out.push_back(ev);
  sort_for_block(out);
  return out;
}

void Mempool::remove_included(const Block& block) {
  for (const auto& ev : block.events)
    if (ev.token) pending_.erase(ev.token->value);
}

namespace {

bool known(const Mempool& pool, const Chain& chain, const Digest& token, EventKind kind) {
  for (const auto& loc : chain.find(token))
    if (chain.event_at(loc).kind == kind) return true;
  const auto* ev = pool.find(token);
  return ev != nullptr && ev->kind == kind;
}

LedgerEvent admit(Mempool& pool, LedgerEvent ev) {
  if (!pool.add(ev)) fail(ErrorKind::provenance, "token " + ev.token->hex() + " is already pending");
  return ev;
}

}  // namespace

LedgerEvent emit_commit(Mempool& pool, const Chain& chain, const fl::SealedUpdate& sealed,
                        const std::string& hap_id) {
  auto ev = make_commit_event(sealed, hap_id);
  if (!chain.find(ev.token->value).empty())
    fail(ErrorKind::provenance, "token " + ev.token->hex() + " is already on the ledger");
  return admit(pool, std::move(ev));
}

LedgerEvent emit_partial_agg(Mempool& pool, const Chain& chain, LedgerEvent ev) {
  for (const auto& c : partial_agg_payload(ev).contributors)
    if (!known(pool, chain, c.value, EventKind::Commit))
      fail(ErrorKind::provenance, "dangling reference: contributor " + c.hex() + " has no Commit");
  return admit(pool, std::move(ev));
}

LedgerEvent emit_global_agg(Mempool& pool, const Chain& chain, LedgerEvent ev) {
  for (const auto& a : global_agg_payload(ev).aggregates)
    if (!known(pool, chain, a.value, EventKind::PartialAgg))
      fail(ErrorKind::provenance, "dangling reference: aggregate " + a.hex() + " has no PartialAgg");
  return admit(pool, std::move(ev));
}

LedgerEvent emit_distribute(Mempool& pool, const Chain& chain, LedgerEvent ev) {
  const auto g = distribute_payload(ev).global_token;
  if (!known(pool, chain, g.value, EventKind::GlobalAgg))
    fail(ErrorKind::provenance, "dangling reference: global token " + g.hex() + " unknown");
  return admit(pool, std::move(ev));
}

// ---------------------------------------------------------------------------

Digest MemoryArtifactStore::put(std::span<const std::uint8_t> bytes) {
  const Digest h = crypto::hash(bytes);
  std::lock_guard lock(mu_);
  blobs_.emplace(h, Bytes(bytes.begin(), bytes.end()));
  return h;
}

std::optional<Bytes> MemoryArtifactStore::get(const Digest& content_hash) const {
  std::lock_guard lock(mu_);
  auto it = blobs_.find(content_hash);
  if (it == blobs_.end()) return std::nullopt;
  return it->second;
}

std::string MemoryArtifactStore::uri_for(const Digest& content_hash) const {
  return "mem://" + content_hash.hex() + ".model";
}

DirectoryArtifactStore::DirectoryArtifactStore(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) fail(ErrorKind::io, "cannot create artifact directory " + dir_.string());
}

std::filesystem::path DirectoryArtifactStore::path_for(const Digest& content_hash) const {
  return dir_ / (content_hash.hex() + ".model");
}

Digest DirectoryArtifactStore::put(std::span<const std::uint8_t> bytes) {
  const Digest h = crypto::hash(bytes);
  const auto p = path_for(h);
  if (std::filesystem::exists(p)) return h;
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "cannot write artifact " + p.string());
  return h;
}

std::optional<Bytes> DirectoryArtifactStore::get(const Digest& content_hash) const {
  std::ifstream in(path_for(content_hash), std::ios::binary);
  if (!in) return std::nullopt;
  return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string DirectoryArtifactStore::uri_for(const Digest& content_hash) const {
  // Relative to the directory holding the store, so ledgers do not depend on
  // where a run was written.
  return (dir_.filename() / path_for(content_hash).filename()).generic_string();
}

// ---------------------------------------------------------------------------

std::size_t LineageNode::count() const {
  std::size_t n = 1;
  for (const auto& c : children) n += c.count();
  return n;
}

namespace {

std::optional<Locator> first_of_kind(const Chain& chain, const Digest& token, EventKind kind) {
  for (const auto& loc : chain.find(token))
    if (chain.event_at(loc).kind == kind) return loc;
  return std::nullopt;
}

std::vector<Locator> all_of_kind(const Chain& chain, const Digest& token, EventKind kind) {
  std::vector<Locator> out;
  for (const auto& loc : chain.find(token))
    if (chain.event_at(loc).kind == kind) out.push_back(loc);
  return out;
}

}  // namespace

LineageNode audit_trace(const Chain& chain, const Digest& global_token) {
  auto gloc = first_of_kind(chain, global_token, EventKind::GlobalAgg);
  if (!gloc) fail(ErrorKind::not_found, "no GlobalAgg event with token " + global_token.hex());
  LineageNode root{chain.event_at(*gloc), *gloc, {}};
  for (const auto& a : global_agg_payload(root.event).aggregates) {
    for (const auto& ploc : all_of_kind(chain, a.value, EventKind::PartialAgg)) {
      LineageNode pn{chain.event_at(ploc), ploc, {}};
      for (const auto& c : partial_agg_payload(pn.event).contributors)
        for (const auto& cloc : all_of_kind(chain, c.value, EventKind::Commit))
          pn.children.push_back({chain.event_at(cloc), cloc, {}});
      root.children.push_back(std::move(pn));
    }
  }
  return root;
}

json lineage_to_json(const LineageNode& node) {
  json children = json::array();
  for (const auto& c : node.children) children.push_back(lineage_to_json(c));
  return {{"event", to_json(node.event)},
          {"block", node.where.block},
          {"position", node.where.event},
          {"children", children}};
}

bool AuditReport::clean() const { return violated().empty(); }

std::vector<std::string> AuditReport::violated() const {
  std::vector<std::string> out;
  for (const auto& g : guarantees)
    if (!g.holds) out.push_back(g.name);
  if (std::any_of(artifact_checks.begin(), artifact_checks.end(),
                  [](const ArtifactCheck& c) { return c.status != "ok"; }))
    out.push_back(kArtifactIntegrity);
  return out;
}

json AuditReport::to_json() const {
  json gs = json::array();
  for (const auto& g : guarantees) {
    json vs = json::array();
    for (const auto& v : g.violations) vs.push_back({{"token", v.token}, {"detail", v.detail}});
    gs.push_back({{"name", g.name}, {"holds", g.holds}, {"violations", vs}});
  }
  json arts = json::array();
  for (const auto& a : artifact_checks)
    arts.push_back({{"token", a.token},
                    {"kind", a.kind},
                    {"content_hash", a.content_hash},
                    {"status", a.status}});
  return {{"global_token", global_token},
          {"clean", clean()},
          {"violated", violated()},
          {"guarantees", gs},
          {"artifact_checks", arts}};
}

AuditReport audit_verify(const Chain& chain, const Digest& global_token,
                         const ArtifactStore& artifacts) {
  const LineageNode root = audit_trace(chain, global_token);
  AuditReport rep;
  rep.global_token = global_token.hex();
  GuaranteeResult registered{kGuaranteeRegistered, true, {}};
  GuaranteeResult authenticated{kGuaranteeAuthenticated, true, {}};
  GuaranteeResult once{kGuaranteeExactlyOnce, true, {}};
  auto violate = [](GuaranteeResult& g, std::string token, std::string detail) {
    g.holds = false;
    g.violations.push_back({std::move(token), std::move(detail)});
  };

  std::set<std::pair<std::string, std::string>> checked_artifacts;
  auto check_artifact = [&](const std::string& token, const char* kind, const Digest& h) {
    if (!checked_artifacts.insert({kind, h.hex()}).second) return true;
    auto bytes = artifacts.get(h);
    std::string status = "ok";
    if (!bytes)
      status = "missing";
    else if (crypto::hash(*bytes) != h)
      status = "hash_mismatch";
    rep.artifact_checks.push_back({token, kind, h.hex(), status});
    return status == "ok";
  };

  const auto& reg = chain.registry();
  const auto gp = global_agg_payload(root.event);
  check_artifact(root.event.token->hex(), "global_model", gp.content_hash);

  // Every referenced PartialAgg must precede the GlobalAgg in the same round.
  for (const auto& a : gp.aggregates) {
    auto locs = all_of_kind(chain, a.value, EventKind::PartialAgg);
    bool ok = std::any_of(locs.begin(), locs.end(), [&](const Locator& l) {
      return l < root.where && chain.event_at(l).round == root.event.round;
    });
    if (!ok) violate(registered, a.hex(), "aggregate not on-chain before the GlobalAgg");
  }

  std::map<Digest, std::size_t> references;
  for (const auto& pn : root.children) {
    const auto pp = partial_agg_payload(pn.event);
    check_artifact(pn.event.token->hex(), "partial_aggregate", pp.content_hash);
    for (const auto& c : pp.contributors) {
      ++references[c.value];
      auto locs = all_of_kind(chain, c.value, EventKind::Commit);
      bool ok = std::any_of(locs.begin(), locs.end(), [&](const Locator& l) {
        return l < pn.where && chain.event_at(l).round == pn.event.round;
      });
      if (!ok) violate(registered, c.hex(), "contributor not committed before its PartialAgg");
    }
    for (const auto& leaf : pn.children) {
      const auto& ev = leaf.event;
      const std::string tok = ev.token->hex();
      const auto cp = commit_payload(ev);
      const auto& m = cp.meta;
      const auto* vendor = reg.find(m.vendor_id);
      const auto* sat = reg.find(m.sat_id);
      if (!vendor || vendor->role != crypto::Role::vendor) {
        violate(authenticated, tok, "vendor '" + m.vendor_id + "' is not registered");
        continue;
      }
      if (!sat || sat->role != crypto::Role::satellite || sat->vendor_id != m.vendor_id) {
        violate(authenticated, tok, "satellite '" + m.sat_id + "' is not bound to its vendor");
        continue;
      }
      const auto expect = crypto::compute_token(m.vendor_id, m.sat_id, m.round, m.timestamp_s,
                                                cp.ciphertext_hash, crypto::TokenKind::LocalUpdate);
      if (expect != *ev.token) violate(authenticated, tok, "token does not match metadata");
      if (!check_artifact(tok, "ciphertext", cp.ciphertext_hash)) continue;
      auto ciphertext = *artifacts.get(cp.ciphertext_hash);
      fl::SealedUpdate sealed{ciphertext, m, cp.signature, cp.scheme};
      if (!fl::verify_sealed(sealed, vendor->public_key)) {
        violate(authenticated, tok, "vendor signature does not verify");
        continue;
      }
      Bytes pre = ciphertext;
      append(pre, cp.signature);
      append(pre, fl::canonical(m));
      if (crypto::hash(pre) != ev.digest) violate(authenticated, tok, "commit digest mismatch");
    }
  }

  for (const auto& [tok, refs] : references) {
    const auto commits = all_of_kind(chain, tok, EventKind::Commit).size();
    if (refs != 1)
      violate(once, tok.hex(), "referenced " + std::to_string(refs) + " times in the lineage");
    if (commits > 1)
      violate(once, tok.hex(), "committed " + std::to_string(commits) + " times");
  }

  for (const auto& b : chain.blocks())
    for (const auto& ev : b.events)
      if (ev.kind == EventKind::Distribute) {
        const auto dp = distribute_payload(ev);
        if (dp.global_token.value == global_token)
          check_artifact(ev.token->hex(), "distribution", dp.content_hash);
      }

  rep.guarantees = {registered, authenticated, once};
  return rep;
}

}  // namespace orbitchain::ledger
