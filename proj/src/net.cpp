#include "orbitchain/net.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace orbitchain::net {

namespace {

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

void NetworkProfile::validate() const {
  if (!std::isfinite(mean_latency_s) || mean_latency_s < 0.0)
    fail(ErrorKind::config, "network.mean_latency_s must be >= 0");
  if (!std::isfinite(jitter_s) || jitter_s < 0.0 || jitter_s > mean_latency_s)
    fail(ErrorKind::config, "network.jitter_s must satisfy 0 <= jitter_s <= mean_latency_s");
  if (!(drop_probability >= 0.0 && drop_probability < 1.0))
    fail(ErrorKind::config, "network.drop_probability must be in [0, 1)");
}

const char* to_string(MessageKind k) noexcept {
  switch (k) {
    case MessageKind::Propose: return "Propose";
    case MessageKind::Vote: return "Vote";
    case MessageKind::Sync: return "Sync";
    case MessageKind::Submit: return "Submit";
  }
  return "?";
}

WireMessage WireMessage::make(MessageKind kind, std::string sender, std::uint64_t height, json body) {
  WireMessage m;
  m.kind = kind;
  m.sender_id = std::move(sender);
  m.height = height;
  m.body = std::move(body);
  m.body_hash = crypto::hash(canonical_dump(m.body));
  return m;
}

bool WireMessage::hash_ok() const { return crypto::hash(canonical_dump(body)) == body_hash; }

// ---------------------------------------------------------------------------

SimNetwork::SimNetwork(NetworkProfile profile) : profile_(profile), rng_(profile.seed) {
  profile_.validate();
}

void SimNetwork::register_node(const std::string& id, Handler handler) {
  handlers_[id] = std::move(handler);
}

void SimNetwork::set_delay_factor(const std::string& id, double factor) { factor_[id] = factor; }

SimNetwork::Delivery SimNetwork::send(const WireMessage& msg, const std::string& to) {
  auto h = handlers_.find(to);
  if (h == handlers_.end()) fail(ErrorKind::precondition, "send: unknown destination '" + to + "'");
  ++sent_;
  // Both draws happen on every send so the stream stays aligned whatever the outcome.
  const double u_drop = unit(rng_);
  const double u_delay = unit(rng_);
  if (u_drop < profile_.drop_probability) {
    ++dropped_;
    return {true, 0.0};
  }
  double delay = profile_.mean_latency_s + (2.0 * u_delay - 1.0) * profile_.jitter_s;
  double factor = 1.0;
  if (auto f = factor_.find(msg.sender_id); f != factor_.end()) factor = std::max(factor, f->second);
  if (auto f = factor_.find(to); f != factor_.end()) factor = std::max(factor, f->second);
  delay = std::max(0.0, delay * factor);
  auto& last = last_delivery_[{msg.sender_id, to}];
  const double at = std::max(now_ + delay, last);
  last = at;
  Handler& handler = h->second;
  schedule(at, [&handler, msg] { handler(msg); });
  return {false, at};
}

void SimNetwork::schedule(double at, std::function<void()> fn) {
  queue_.push({std::max(at, now_), seq_++, std::move(fn)});
}

void SimNetwork::advance_to(double t) {
  while (!queue_.empty() && queue_.top().at <= t) step();
  now_ = std::max(now_, t);
}

bool SimNetwork::step() {
  if (queue_.empty()) return false;
  Pending p = queue_.top();
  queue_.pop();
  now_ = p.at;
  p.fn();
  return true;
}

void SimNetwork::run() {
  while (step()) {
  }
}

const char* to_string(Transport t) noexcept { return t == Transport::sim ? "sim" : "service"; }

Transport transport_from_string(std::string_view s) {
  if (s == "sim") return Transport::sim;
  if (s == "service") return Transport::service;
  fail(ErrorKind::config, "transport must be 'sim' or 'service', got '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------

consensus::CommitteeSetup make_committee_setup(
    std::vector<std::string> validator_ids, std::uint64_t seed,
    std::span<const std::pair<std::string, crypto::Principal>> extra,
    const std::map<std::string, std::string>& validator_vendor) {
  if (validator_ids.empty()) fail(ErrorKind::config, "committee needs at least one validator");
  consensus::CommitteeSetup s;
  std::vector<ledger::LedgerEvent> regs;
  for (const auto& id : validator_ids) {
    auto kp = crypto::derive_keypair(seed, id);
    crypto::Principal p{crypto::Role::validator, kp.public_key, ""};
    if (auto v = validator_vendor.find(id); v != validator_vendor.end()) p.vendor_id = v->second;
    regs.push_back(ledger::make_key_registration(id, p));
    s.keys.push_back(std::move(kp));
  }
  for (const auto& [id, p] : extra) regs.push_back(ledger::make_key_registration(id, p));
  s.ids = std::move(validator_ids);
  s.genesis = ledger::make_genesis(regs);
  return s;
}

consensus::CommitteeSetup make_committee_setup(
    std::size_t n_validators, std::uint64_t seed,
    std::span<const std::pair<std::string, crypto::Principal>> extra,
    const std::string& validator_vendor) {
  std::vector<std::string> ids;
  std::map<std::string, std::string> vendors;
  for (std::size_t i = 0; i < n_validators; ++i) {
    ids.push_back("validator-" + std::to_string(i));
    if (!validator_vendor.empty()) vendors[ids.back()] = validator_vendor;
  }
  return make_committee_setup(std::move(ids), seed, extra, vendors);
}

// ---------------------------------------------------------------------------

struct SimCommittee::Slot {
  std::uint64_t slot = 0;
  std::size_t proposer = 0;
  std::vector<consensus::Collector> collectors;
  std::map<std::size_t, std::size_t> block_of;  // peer -> collector index
  std::map<std::size_t, ledger::Block> awaiting_sync;
  std::size_t expected = 0;
  std::size_t replies = 0;
  bool open = true;
  std::optional<double> finalize_time;
};

SimCommittee::SimCommittee(const consensus::CommitteeSetup& setup, consensus::CommitteeOptions opts,
                           NetworkProfile profile)
    : opts_(std::move(opts)), net_(profile), ids_(setup.ids) {
  if (setup.ids.size() != setup.keys.size())
    fail(ErrorKind::precondition, "committee setup: ids and keys differ in length");
  opts_.quorum.n_validators = ids_.size();
  opts_.quorum.validate();
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    consensus::FaultProfile fault;
    if (auto f = opts_.faults.find(ids_[i]); f != opts_.faults.end()) fault = f->second;
    nodes_.push_back(std::make_unique<consensus::Validator>(ids_[i], setup.keys[i], setup.genesis,
                                                            opts_.quorum, fault, opts_.validation));
    view_.push_back(nodes_.back().get());
    index_[ids_[i]] = i;
    if (fault.kind == consensus::FaultKind::slow) net_.set_delay_factor(ids_[i], fault.delay_factor);
    net_.register_node(ids_[i], [this, i](const WireMessage& m) { on_message(i, m); });
    if (opts_.ledger_dir)
      nodes_.back()->set_ledger_file(*opts_.ledger_dir / ("ledger_" + ids_[i] + ".jsonl"));
  }
  timeout_ = opts_.timeout_s > 0.0
                 ? opts_.timeout_s
                 : 50.0 * std::max(profile.mean_latency_s, opts_.processing_s);
}

SimCommittee::~SimCommittee() = default;

double SimCommittee::processing(std::size_t node) const {
  const auto& f = nodes_[node]->fault();
  return opts_.processing_s * (f.kind == consensus::FaultKind::slow ? f.delay_factor : 1.0);
}

void SimCommittee::submit(std::span<const ledger::LedgerEvent> events) {
  for (auto& v : nodes_)
    if (v->fault().responsive())
      for (const auto& ev : events) v->submit(ev);
}

void SimCommittee::on_message(std::size_t node, const WireMessage& msg) {
  consensus::Validator& v = *nodes_[node];
  if (!v.fault().responsive()) return;
  const std::string& me = ids_[node];
  const auto sender = index_.find(msg.sender_id);
  if (sender == index_.end() || !msg.hash_ok()) return;
  const std::uint64_t slot = msg.body.value("slot", std::uint64_t{0});

  auto reply_vote = [this, node, slot, &me](const std::string& to, const consensus::VoteReply& r,
                                            std::uint64_t height) {
    net_.send(WireMessage::make(MessageKind::Vote, me, height,
                                {{"slot", slot}, {"reply", r.to_json()}}),
              to);
    (void)node;
  };

  switch (msg.kind) {
    case MessageKind::Propose: {
      ledger::Block block = ledger::block_from_json(msg.body.at("block"));
      const std::string to = msg.sender_id;
      net_.schedule(net_.now() + processing(node), [this, node, block, to, slot, reply_vote, &v] {
        auto r = v.vote(block, to);
        if (r.status == consensus::VoteReply::Status::sync && current_ && current_->slot == slot) {
          current_->awaiting_sync[node] = block;
          net_.send(WireMessage::make(MessageKind::Sync, ids_[node], block.index,
                                      {{"slot", slot}, {"from", r.head_index + 1}}),
                    to);
          return;
        }
        reply_vote(to, r, block.index);
      });
      break;
    }
    case MessageKind::Sync: {
      if (msg.body.contains("from")) {
        const auto from = msg.body.at("from").get<std::uint64_t>();
        const std::string to = msg.sender_id;
        net_.schedule(net_.now() + processing(node), [this, node, from, to, slot, &v] {
          json blocks = json::array();
          for (const auto& b : v.blocks_from(from)) blocks.push_back(b.to_json(true));
          net_.send(WireMessage::make(MessageKind::Sync, ids_[node], from,
                                      {{"slot", slot}, {"blocks", blocks}}),
                    to);
        });
      } else {
        std::vector<ledger::Block> blocks;
        for (const auto& b : msg.body.at("blocks")) blocks.push_back(ledger::block_from_json(b));
        const std::string to = msg.sender_id;
        net_.schedule(net_.now() + processing(node), [this, node, blocks, to, slot, reply_vote, &v] {
          for (const auto& b : blocks) v.accept_certificate(b);
          if (!current_ || current_->slot != slot) return;
          auto it = current_->awaiting_sync.find(node);
          if (it == current_->awaiting_sync.end()) return;
          const ledger::Block block = it->second;
          current_->awaiting_sync.erase(it);
          auto r = v.vote(block, to);
          if (r.status == consensus::VoteReply::Status::sync) {
            r.status = consensus::VoteReply::Status::reject;
            r.reason = "still behind after sync";
          }
          reply_vote(to, r, block.index);
        });
      }
      break;
    }
    case MessageKind::Vote: {
      if (msg.body.contains("certificate")) {
        ledger::Block cert = ledger::block_from_json(msg.body.at("certificate"));
        net_.schedule(net_.now() + processing(node), [cert, &v] { v.accept_certificate(cert); });
        break;
      }
      if (!current_ || current_->slot != slot || !current_->open || current_->proposer != node) break;
      auto r = consensus::VoteReply::from_json(msg.body.at("reply"));
      Slot& s = *current_;
      ++s.replies;
      if (r.status == consensus::VoteReply::Status::vote) {
        auto b = s.block_of.find(sender->second);
        if (b != s.block_of.end() && s.collectors[b->second].add(msg.sender_id, r.signature) &&
            !s.finalize_time)
          s.finalize_time = net_.now();
      }
      if (s.replies >= s.expected) {
        s.open = false;
      }
      break;
    }
    case MessageKind::Submit: {
      if (msg.body.contains("events"))
        for (const auto& e : msg.body.at("events")) v.submit(ledger::event_from_json(e));
      break;
    }
  }
}

bool SimCommittee::run_slot(std::uint64_t slot, double timestamp_s, consensus::BlockRecord& rec) {
  const std::size_t n = ids_.size();
  const std::size_t p = slot % n;
  consensus::Validator& P = *nodes_[p];
  const double t0 = net_.now();
  rec.proposer_id = ids_[p];
  ++rec.attempts;
  rec.proposal_time_s = t0;
  rec.finalize_time_s.reset();
  rec.signatures = 0;

  if (!P.fault().responsive()) {
    net_.advance_to(t0 + timeout_);
    return false;
  }

  std::vector<ledger::Block> proposals;
  if (P.fault().kind == consensus::FaultKind::equivocator) {
    auto pair = P.propose_conflicting(ids_, slot, timestamp_s, opts_.max_block_events);
    if (!pair) return false;
    proposals = {pair->first, pair->second};
  } else {
    auto b = P.propose(ids_, slot, timestamp_s, opts_.max_block_events, opts_.heartbeat);
    if (!b) return false;
    proposals = {*b};
  }

  current_ = std::make_unique<Slot>();
  Slot& s = *current_;
  s.slot = slot;
  s.proposer = p;
  s.expected = n - 1;
  const auto& registry = P.chain().registry();
  for (const auto& b : proposals) {
    s.collectors.emplace_back(b, P.threshold(), registry);
    s.collectors.back().add(ids_[p], b.signatures.at(ids_[p]));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (i == p) continue;
    s.block_of[i] = proposals.size() == 1 ? 0 : static_cast<std::size_t>(net_.rng()() & 1U);
  }
  const double t_prop = t0 + processing(p);
  rec.proposal_time_s = t_prop;
  rec.block_index = proposals.front().index;
  rec.events = proposals.front().events.size();
  P.begin_collecting();
  bool any_final = false;
  for (const auto& c : s.collectors) any_final = any_final || c.finalized();
  if (any_final) s.finalize_time = t_prop;

  net_.schedule(t_prop, [this, &s, proposals, p] {
    for (const auto& [peer, which] : s.block_of)
      net_.send(WireMessage::make(MessageKind::Propose, ids_[p], proposals[which].index,
                                  {{"slot", s.slot}, {"block", proposals[which].to_json(true)}}),
                ids_[peer]);
  });

  // Collect until every peer answered or the liveness bound passes.
  const double deadline = t_prop + timeout_;
  if (s.expected == 0) s.open = false;
  while (s.open) {
    auto t = net_.next_time();
    if (!t || *t > deadline) break;
    net_.step();
  }
  if (s.open) net_.advance_to(deadline);
  s.open = false;

  bool finalized = false;
  for (std::size_t c = 0; c < s.collectors.size(); ++c) {
    if (!s.collectors[c].finalized()) continue;
    finalized = true;
    const ledger::Block cert = s.collectors[c].certificate();
    if (c == 0) P.accept_certificate(cert);
    rec.signatures = std::max(rec.signatures, cert.signatures.size());
    for (const auto& [peer, which] : s.block_of)
      if (which == c)
        net_.send(WireMessage::make(MessageKind::Vote, ids_[p], cert.index,
                                    {{"slot", s.slot}, {"certificate", cert.to_json(true)}}),
                  ids_[peer]);
  }
  P.end_collecting(finalized);
  net_.run();
  if (finalized) rec.finalize_time_s = s.finalize_time.value_or(net_.now());
  current_.reset();
  return finalized;
}

consensus::BlockRecord SimCommittee::finalize_next(double timestamp_s) {
  consensus::BlockRecord rec;
  rec.block_index = reference_chain().height() + 1;
  const std::size_t n = ids_.size();
  for (std::size_t attempt = 0; attempt < n; ++attempt) {
    if (run_slot(slot_++, timestamp_s, rec)) return rec;
  }
  rec.stalled = true;
  return rec;
}

// ---------------------------------------------------------------------------

std::unique_ptr<consensus::Committee> make_committee(Transport transport,
                                                     const consensus::CommitteeSetup& setup,
                                                     consensus::CommitteeOptions opts,
                                                     const NetworkProfile& profile) {
  if (transport == Transport::sim)
    return std::make_unique<SimCommittee>(setup, std::move(opts), profile);
  return std::make_unique<ServiceCommittee>(setup, std::move(opts));
}

CommitteeTrace run_committee(consensus::Committee& committee, const Workload& workload) {
  if (workload.timestamps.size() != workload.batches.size())
    fail(ErrorKind::precondition, "workload: batches and timestamps differ in length");
  CommitteeTrace trace;
  for (std::size_t i = 0; i < workload.batches.size(); ++i) {
    committee.submit(workload.batches[i]);
    auto rec = committee.finalize_next(workload.timestamps[i]);
    if (rec.stalled) ++trace.stalls;
    trace.rows.push_back(std::move(rec));
  }
  for (const auto* v : committee.validators()) trace.chains.push_back(v->chain());
  return trace;
}

// ---------------------------------------------------------------------------

BenchEventSource::BenchEventSource(std::uint64_t seed, std::string emitter_id, std::size_t n_sats)
    : emitter_(std::move(emitter_id)), key_(fl::derive_sealing_key(seed, "bench-vendor")) {
  principals_.push_back(
      {"bench-vendor", crypto::Principal{crypto::Role::vendor, key_.signing.public_key, "bench-vendor"}});
  for (std::size_t i = 0; i < n_sats; ++i) {
    sats_.push_back("bench-vendor-s" + std::to_string(i));
    auto kp = crypto::derive_keypair(seed, sats_.back());
    principals_.push_back(
        {sats_.back(), crypto::Principal{crypto::Role::satellite, kp.public_key, "bench-vendor"}});
  }
}

ledger::LedgerEvent BenchEventSource::next() {
  const std::uint64_t k = counter_++;
  fl::ModelVector model(8);
  for (std::size_t i = 0; i < model.dim(); ++i)
    model.values[i] = static_cast<float>((k * 8 + i) % 1000) * 1e-3f;
  fl::UpdateMetadata meta;
  meta.vendor_id = "bench-vendor";
  meta.sat_id = sats_[k % sats_.size()];
  meta.round = k;
  meta.fetch_round = k;
  meta.data_size = 100;
  meta.timestamp_s = static_cast<double>(k);
  auto sealed = fl::seal_update(model, meta, key_, fl::SealScheme::plaintext);
  return ledger::make_commit_event(sealed, emitter_);
}

std::vector<ledger::LedgerEvent> BenchEventSource::batch(std::size_t n) {
  std::vector<ledger::LedgerEvent> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(next());
  return out;
}

json BenchmarkReport::throughput_json() const {
  return {{"mode", mode},
          {"blocks", blocks},
          {"tx_total", tx_total},
          {"duration_s", duration_s},
          {"tx_per_s", tx_per_s}};
}

BenchmarkReport measure_benchmark(const BenchmarkOptions& opts) {
  if (opts.committee_size == 0) fail(ErrorKind::config, "committee_size must be >= 1");
  if (opts.tx_batch == 0) fail(ErrorKind::config, "tx_batch must be >= 1");
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < opts.committee_size; ++i) ids.push_back("validator-" + std::to_string(i));
  BenchEventSource source(opts.seed, ids.front());
  auto setup = make_committee_setup(ids, opts.seed, source.principals(), {});

  consensus::CommitteeOptions copts;
  copts.quorum = opts.quorum;
  copts.quorum.n_validators = opts.committee_size;
  copts.faults = opts.faults;
  copts.processing_s = opts.processing_s;
  copts.max_block_events = opts.tx_batch;
  copts.ledger_dir = opts.ledger_dir;
  copts.seed = opts.seed;
  auto committee = make_committee(opts.transport, setup, copts, opts.network);

  BenchmarkReport rep;
  rep.mode = copts.quorum.label();
  const double start = committee->now_s();
  for (std::size_t i = 0;; ++i) {
    if (opts.window_s > 0.0) {
      if (committee->now_s() - start >= opts.window_s) break;
    } else if (i >= opts.block_count) {
      break;
    }
    auto batch = source.batch(opts.tx_batch);
    committee->submit(batch);
    auto rec = committee->finalize_next(static_cast<double>(i + 1));
    if (rec.stalled) {
      ++rep.stalls;
    } else if (rec.finalized()) {
      ++rep.blocks;
      rep.tx_total += rec.events;
    }
    rep.rows.push_back(std::move(rec));
  }
  rep.duration_s = committee->now_s() - start;
  rep.tx_per_s = rep.duration_s > 0.0 ? static_cast<double>(rep.tx_total) / rep.duration_s : 0.0;
  double sum = 0.0, sq = 0.0;
  std::size_t k = 0;
  for (const auto& r : rep.rows)
    if (r.finalized()) {
      sum += r.latency_s();
      sq += r.latency_s() * r.latency_s();
      ++k;
    }
  if (k > 0) {
    rep.mean_latency_s = sum / static_cast<double>(k);
    rep.variance_latency_s = std::max(0.0, sq / static_cast<double>(k) - rep.mean_latency_s * rep.mean_latency_s);
  }
  return rep;
}

void write_benchmark_csv(const std::filesystem::path& path, std::span<const BenchmarkReport> reports) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << "block_index,quorum_mode,latency_s,stalled\n";
  for (const auto& rep : reports)
    for (const auto& r : rep.rows) {
      out << r.block_index << ',' << rep.mode << ',';
      if (r.finalized()) out << fmt_real(r.latency_s());
      out << ',' << (r.stalled ? 1 : 0) << '\n';
    }
}

}  // namespace orbitchain::net
