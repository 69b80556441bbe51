#include <httplib.h>

#include <chrono>
#include <mutex>
#include <random>
#include <set>
#include <thread>

#include "orbitchain/net.hpp"

namespace orbitchain::net {

namespace {

constexpr double kDefaultServiceTimeout = 5.0;

void reply_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(canonical_dump(body), "application/json");
}

json parse_body(const httplib::Request& req) {
  json j = json::parse(req.body, nullptr, false);
  if (j.is_discarded()) fail(ErrorKind::format, "body is not valid JSON");
  return j;
}

}  // namespace

struct ServiceCommittee::Impl {
  struct Node {
    std::unique_ptr<consensus::Validator> validator;
    std::mutex mu;
    httplib::Server server;
    std::thread thread;
    int port = -1;
    std::set<Digest> seen_bodies;
  };

  consensus::CommitteeOptions opts;
  std::vector<std::string> ids;
  std::vector<std::unique_ptr<Node>> nodes;
  std::vector<consensus::Validator*> view;
  std::string host;
  double timeout = kDefaultServiceTimeout;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  std::uint64_t slot = 0;
  std::mt19937_64 rng;
  // clients[from][to]; row n is the external driver.
  std::vector<std::vector<std::unique_ptr<httplib::Client>>> clients;

  double now() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  void slow_down(const Node& node) const {
    const auto& f = node.validator->fault();
    if (f.kind == consensus::FaultKind::slow)
      std::this_thread::sleep_for(std::chrono::duration<double>(opts.processing_s * f.delay_factor));
  }

  void install(Node& node) {
    auto& svr = node.server;
    // Every client row keeps one connection alive per node; each holds a worker.
    const std::size_t workers = 2 * ids.size() + 4;
    svr.new_task_queue = [workers] { return new httplib::ThreadPool(workers); };
    svr.set_keep_alive_timeout(1);
    svr.set_tcp_nodelay(true);

    svr.Post("/propose", [this, &node](const httplib::Request& req, httplib::Response& res) {
      try {
        json j = parse_body(req);
        auto block = ledger::block_from_json(j.at("block"));
        const auto sender = j.at("sender").get<std::string>();
        slow_down(node);
        std::lock_guard lock(node.mu);
        reply_json(res, node.validator->vote(block, sender).to_json());
      } catch (const std::exception& e) {
        consensus::VoteReply r;
        r.reason = std::string("malformed proposal: ") + e.what();
        reply_json(res, r.to_json(), 400);
      }
    });

    svr.Post("/vote", [this, &node](const httplib::Request& req, httplib::Response& res) {
      try {
        json j = parse_body(req);
        auto cert = ledger::block_from_json(j.at("certificate"));
        slow_down(node);
        std::lock_guard lock(node.mu);
        std::string reason;
        const bool ok = node.validator->accept_certificate(cert, &reason);
        reply_json(res, {{"appended", ok},
                         {"reason", reason},
                         {"head_index", node.validator->chain().height()}});
      } catch (const std::exception& e) {
        reply_json(res, {{"appended", false}, {"reason", std::string("malformed: ") + e.what()}}, 400);
      }
    });

    svr.Post("/submit", [&node](const httplib::Request& req, httplib::Response& res) {
      try {
        const Digest body_hash = crypto::hash(req.body);
        json j = parse_body(req);
        std::lock_guard lock(node.mu);
        if (!node.seen_bodies.insert(body_hash).second) {
          reply_json(res, {{"status", "duplicate"}, {"added", 0}});
          return;
        }
        std::size_t added = 0;
        if (j.contains("events")) {
          for (const auto& e : j.at("events"))
            added += node.validator->submit(ledger::event_from_json(e)) ? 1 : 0;
        } else {
          added += node.validator->submit(ledger::event_from_json(j)) ? 1 : 0;
        }
        reply_json(res, {{"status", "ok"}, {"added", added}});
      } catch (const std::exception& e) {
        reply_json(res, {{"status", "rejected"}, {"reason", e.what()}}, 400);
      }
    });

    svr.Get("/chain", [&node](const httplib::Request& req, httplib::Response& res) {
      std::uint64_t from = 0;
      try {
        if (req.has_param("from")) from = std::stoull(req.get_param_value("from"));
      } catch (const std::exception&) {
        reply_json(res, {{"error", "from must be a non-negative integer"}}, 400);
        return;
      }
      std::lock_guard lock(node.mu);
      json blocks = json::array();
      for (const auto& b : node.validator->blocks_from(from)) blocks.push_back(b.to_json(true));
      reply_json(res, {{"blocks", blocks}, {"head_index", node.validator->chain().height()}});
    });

    svr.Get("/head", [&node](const httplib::Request&, httplib::Response& res) {
      std::lock_guard lock(node.mu);
      const auto& c = node.validator->chain();
      reply_json(res, {{"height", c.height()}, {"head_hash", c.head_hash().hex()}});
    });
  }

  httplib::Client& client(std::size_t from, std::size_t to) { return *clients[from][to]; }

  std::optional<json> post(std::size_t from, std::size_t to, const std::string& path,
                           const std::string& body) {
    if (nodes[to]->port < 0) return std::nullopt;
    auto res = client(from, to).Post(path, body, "application/json");
    if (!res) return std::nullopt;
    json j = json::parse(res->body, nullptr, false);
    if (j.is_discarded()) return std::nullopt;
    return j;
  }

  bool run_slot(std::uint64_t s, double timestamp_s, consensus::BlockRecord& rec) {
    const std::size_t n = ids.size();
    const std::size_t p = s % n;
    Node& P = *nodes[p];
    consensus::Validator& PV = *P.validator;
    rec.proposer_id = ids[p];
    ++rec.attempts;
    rec.finalize_time_s.reset();
    rec.signatures = 0;
    rec.proposal_time_s = now();
    if (!PV.fault().responsive()) return false;

    std::vector<ledger::Block> proposals;
    {
      std::lock_guard lock(P.mu);
      if (PV.fault().kind == consensus::FaultKind::equivocator) {
        auto pair = PV.propose_conflicting(ids, s, timestamp_s, opts.max_block_events);
        if (!pair) return false;
        proposals = {pair->first, pair->second};
      } else {
        auto b = PV.propose(ids, s, timestamp_s, opts.max_block_events, opts.heartbeat);
        if (!b) return false;
        proposals = {*b};
      }
      PV.begin_collecting();
    }
    std::vector<std::string> bodies;
    for (const auto& b : proposals)
      bodies.push_back(canonical_dump({{"sender", ids[p]}, {"block", b.to_json(true)}}));

    std::mutex cmu;
    std::vector<consensus::Collector> collectors;
    for (const auto& b : proposals) {
      collectors.emplace_back(b, PV.threshold(), PV.chain().registry());
      collectors.back().add(ids[p], b.signatures.at(ids[p]));
    }
    std::optional<double> finalize_time;
    // Latency runs from the start of the slot, so the proposer's own build
    // and signing time counts even when its signature alone is a quorum.
    const double t_prop = now();
    rec.block_index = proposals.front().index;
    rec.events = proposals.front().events.size();
    for (const auto& c : collectors)
      if (c.finalized()) finalize_time = t_prop;

    std::map<std::size_t, std::size_t> block_of;
    for (std::size_t i = 0; i < n; ++i)
      if (i != p) block_of[i] = proposals.size() == 1 ? 0 : static_cast<std::size_t>(rng() & 1U);

    std::vector<std::thread> workers;
    for (const auto& [peer, which] : block_of) {
      workers.emplace_back([&, peer = peer, which = which] {
        auto reply = post(p, peer, "/propose", bodies[which]);
        if (!reply) return;
        auto r = consensus::VoteReply::from_json(*reply);
        if (r.status == consensus::VoteReply::Status::sync) {
          std::vector<ledger::Block> missing;
          {
            std::lock_guard lock(P.mu);
            missing = PV.blocks_from(r.head_index + 1);
          }
          for (const auto& b : missing) {
            if (b.index >= proposals[which].index) break;
            post(p, peer, "/vote", canonical_dump({{"certificate", b.to_json(true)}}));
          }
          reply = post(p, peer, "/propose", bodies[which]);
          if (!reply) return;
          r = consensus::VoteReply::from_json(*reply);
        }
        if (r.status != consensus::VoteReply::Status::vote) return;
        std::lock_guard lock(cmu);
        if (collectors[which].add(ids[peer], r.signature) && !finalize_time) finalize_time = now();
      });
    }
    for (auto& w : workers) w.join();

    bool finalized = false;
    std::vector<std::thread> broadcasts;
    std::vector<std::string> certs(collectors.size());
    for (std::size_t c = 0; c < collectors.size(); ++c) {
      if (!collectors[c].finalized()) continue;
      finalized = true;
      const auto cert = collectors[c].certificate();
      rec.signatures = std::max(rec.signatures, cert.signatures.size());
      if (c == 0) {
        std::lock_guard lock(P.mu);
        PV.accept_certificate(cert);
      }
      certs[c] = canonical_dump({{"certificate", cert.to_json(true)}});
    }
    if (finalized)
      for (const auto& [peer, which] : block_of)
        if (!certs[which].empty())
          broadcasts.emplace_back([&, peer = peer, which = which] {
            post(p, peer, "/vote", certs[which]);
          });
    for (auto& b : broadcasts) b.join();
    {
      std::lock_guard lock(P.mu);
      PV.end_collecting(finalized);
    }
    if (finalized) rec.finalize_time_s = finalize_time.value_or(now());
    return finalized;
  }
};

ServiceCommittee::ServiceCommittee(const consensus::CommitteeSetup& setup,
                                   consensus::CommitteeOptions opts, std::string bind_host,
                                   int base_port)
    : impl_(std::make_unique<Impl>()) {
  if (setup.ids.size() != setup.keys.size())
    fail(ErrorKind::precondition, "committee setup: ids and keys differ in length");
  auto& m = *impl_;
  m.opts = std::move(opts);
  m.ids = setup.ids;
  m.host = std::move(bind_host);
  m.rng.seed(m.opts.seed);
  m.opts.quorum.n_validators = m.ids.size();
  m.opts.quorum.validate();
  if (m.opts.timeout_s > 0.0) m.timeout = m.opts.timeout_s;
  const std::size_t n = m.ids.size();

  for (std::size_t i = 0; i < n; ++i) {
    auto node = std::make_unique<Impl::Node>();
    consensus::FaultProfile fault;
    if (auto f = m.opts.faults.find(m.ids[i]); f != m.opts.faults.end()) fault = f->second;
    node->validator = std::make_unique<consensus::Validator>(m.ids[i], setup.keys[i], setup.genesis,
                                                             m.opts.quorum, fault, m.opts.validation);
    if (m.opts.ledger_dir)
      node->validator->set_ledger_file(*m.opts.ledger_dir / ("ledger_" + m.ids[i] + ".jsonl"));
    m.view.push_back(node->validator.get());
    m.nodes.push_back(std::move(node));
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto& node = *m.nodes[i];
    if (!node.validator->fault().responsive()) continue;
    m.install(node);
    if (base_port > 0) {
      if (!node.server.bind_to_port(m.host, base_port + static_cast<int>(i)))
        fail(ErrorKind::io, "validator " + m.ids[i] + ": cannot bind " + m.host + ":" +
                                std::to_string(base_port + static_cast<int>(i)));
      node.port = base_port + static_cast<int>(i);
    } else {
      node.port = node.server.bind_to_any_port(m.host);
      if (node.port <= 0) fail(ErrorKind::io, "validator " + m.ids[i] + ": cannot bind " + m.host);
    }
    node.thread = std::thread([&node] { node.server.listen_after_bind(); });
    node.server.wait_until_ready();
  }
  m.clients.resize(n + 1);
  for (std::size_t from = 0; from <= n; ++from)
    for (std::size_t to = 0; to < n; ++to) {
      const int port = m.nodes[to]->port > 0 ? m.nodes[to]->port : 1;
      auto c = std::make_unique<httplib::Client>(m.host, port);
      c->set_keep_alive(true);
      c->set_tcp_nodelay(true);
      const auto secs = std::chrono::duration<double>(m.timeout);
      c->set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
      c->set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
      c->set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
      m.clients[from].push_back(std::move(c));
    }
  m.t0 = std::chrono::steady_clock::now();
}

ServiceCommittee::~ServiceCommittee() {
  for (auto& node : impl_->nodes) {
    if (node->port < 0) continue;
    node->server.stop();
    if (node->thread.joinable()) node->thread.join();
  }
}

void ServiceCommittee::submit(std::span<const ledger::LedgerEvent> events) {
  auto& m = *impl_;
  json arr = json::array();
  for (const auto& e : events) arr.push_back(ledger::to_json(e));
  const std::string body = canonical_dump({{"events", arr}});
  const std::size_t n = m.ids.size();
  std::vector<std::thread> ts;
  for (std::size_t i = 0; i < n; ++i)
    ts.emplace_back([&m, &body, i, n] { m.post(n, i, "/submit", body); });
  for (auto& t : ts) t.join();
}

consensus::BlockRecord ServiceCommittee::finalize_next(double timestamp_s) {
  auto& m = *impl_;
  consensus::BlockRecord rec;
  rec.block_index = reference_chain().height() + 1;
  for (std::size_t attempt = 0; attempt < m.ids.size(); ++attempt)
    if (m.run_slot(m.slot++, timestamp_s, rec)) return rec;
  rec.stalled = true;
  return rec;
}

const std::vector<consensus::Validator*>& ServiceCommittee::validators() const { return impl_->view; }

double ServiceCommittee::now_s() const { return impl_->now(); }

const consensus::QuorumConfig& ServiceCommittee::quorum() const { return impl_->opts.quorum; }

std::vector<int> ServiceCommittee::ports() const {
  std::vector<int> out;
  for (const auto& n : impl_->nodes) out.push_back(n->port);
  return out;
}

}  // namespace orbitchain::net
