#include <gtest/gtest.h>
#include <httplib.h>

#include "orbitchain/net.hpp"

using namespace orbitchain;
using consensus::QuorumConfig;

namespace {

json get_json(int port, const std::string& path) {
  httplib::Client c("127.0.0.1", port);
  auto res = c.Get(path);
  if (!res) return json();
  return json::parse(res->body);
}

}  // namespace

TEST(Service, SubmitProposeVoteAdvancesEveryHead) {
  net::BenchEventSource source(21, "validator-0");
  auto setup = net::make_committee_setup(5, 21, source.principals());
  consensus::CommitteeOptions o;
  o.quorum = QuorumConfig::fixed(5, 3);
  net::ServiceCommittee c(setup, o);
  const auto ports = c.ports();
  for (int p : ports) EXPECT_EQ(get_json(p, "/head").at("height"), 0);

  auto ev = source.next();
  c.submit(std::vector<ledger::LedgerEvent>{ev});
  auto rec = c.finalize_next(1.0);
  ASSERT_TRUE(rec.finalized());
  EXPECT_EQ(rec.signatures, 5u);
  std::set<std::string> heads;
  for (int p : ports) {
    auto h = get_json(p, "/head");
    EXPECT_EQ(h.at("height"), 1);
    heads.insert(h.at("head_hash").get<std::string>());
  }
  EXPECT_EQ(heads.size(), 1u);
}

TEST(Service, SubmitIsIdempotentByBody) {
  net::BenchEventSource source(22, "validator-0");
  auto setup = net::make_committee_setup(3, 22, source.principals());
  consensus::CommitteeOptions o;
  o.quorum = QuorumConfig::fixed(3, 2);
  net::ServiceCommittee c(setup, o);
  httplib::Client cl("127.0.0.1", c.ports()[1]);
  const std::string body = canonical_dump({{"events", json::array({ledger::to_json(source.next())})}});
  auto first = json::parse(cl.Post("/submit", body, "application/json")->body);
  auto second = json::parse(cl.Post("/submit", body, "application/json")->body);
  EXPECT_EQ(first.at("status"), "ok");
  EXPECT_EQ(first.at("added"), 1);
  EXPECT_EQ(second.at("status"), "duplicate");
  EXPECT_EQ(c.validators()[1]->mempool().size(), 1u);
}

TEST(Service, MalformedBodiesAreAnsweredWithoutFailure) {
  net::BenchEventSource source(23, "validator-0");
  auto setup = net::make_committee_setup(3, 23, source.principals());
  consensus::CommitteeOptions o;
  o.quorum = QuorumConfig::fixed(3, 2);
  net::ServiceCommittee c(setup, o);
  httplib::Client cl("127.0.0.1", c.ports()[0]);
  const std::vector<std::string> bodies{"", "{", "[]", "{\"block\":7}",
                                        "{\"certificate\":{\"index\":\"x\"}}", std::string(10000, 'z')};
  for (const char* path : {"/propose", "/vote", "/submit"}) {
    for (const auto& body : bodies) {
      auto res = cl.Post(path, body, "application/json");
      ASSERT_TRUE(res) << path;
      EXPECT_EQ(res->status, 400) << path << " " << body.substr(0, 20);
    }
  }
  auto res = cl.Get("/chain?from=abc");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(get_json(c.ports()[0], "/head").at("height"), 0);
}

TEST(Service, ChainRangeVerifiesOffline) {
  net::BenchEventSource source(24, "validator-0");
  auto setup = net::make_committee_setup(5, 24, source.principals());
  consensus::CommitteeOptions o;
  o.quorum = QuorumConfig::fixed(5, 3);
  net::ServiceCommittee c(setup, o);
  for (int i = 0; i < 30; ++i) {
    c.submit(std::vector<ledger::LedgerEvent>{source.next()});
    ASSERT_TRUE(c.finalize_next(i + 1.0).finalized());
  }
  auto j = get_json(c.ports()[3], "/chain?from=0");
  const auto& blocks = j.at("blocks");
  ASSERT_EQ(blocks.size(), 31u);
  ledger::Chain replay(ledger::block_from_json(blocks[0]));
  for (std::size_t i = 1; i < blocks.size(); ++i)
    EXPECT_NO_THROW(replay.append(ledger::block_from_json(blocks[i]), 3));
  EXPECT_EQ(replay.head_hash(), c.reference_chain().head_hash());
}

TEST(Service, TransportsProduceIdenticalChains) {
  auto chain_lines = [](net::Transport t) {
    net::BenchEventSource source(25, "validator-0");
    auto setup = net::make_committee_setup(5, 25, source.principals());
    consensus::CommitteeOptions o;
    o.quorum = QuorumConfig::fixed(5, 3);
    auto c = net::make_committee(t, setup, o, net::NetworkProfile{0.005, 0.002, 0.0, 25});
    net::Workload w;
    for (int i = 0; i < 25; ++i) {
      w.batches.push_back(source.batch(3));
      w.timestamps.push_back(i + 1.0);
    }
    auto trace = net::run_committee(*c, w);
    std::vector<std::string> out;
    for (const auto& ch : trace.chains)
      for (const auto& b : ch.blocks()) out.push_back(b.to_line());
    return out;
  };
  const auto sim = chain_lines(net::Transport::sim);
  const auto svc = chain_lines(net::Transport::service);
  EXPECT_EQ(sim.size(), 5u * 26u);
  EXPECT_EQ(sim, svc);
}
