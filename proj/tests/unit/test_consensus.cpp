#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "orbitchain/consensus.hpp"
#include "orbitchain/net.hpp"

using namespace orbitchain;
using consensus::FaultKind;
using consensus::FaultProfile;
using consensus::QuorumConfig;

namespace {

struct Harness {
  net::BenchEventSource source;
  consensus::CommitteeSetup setup;

  explicit Harness(std::uint64_t seed, std::size_t n = 5)
      : source(seed, "validator-0"), setup(net::make_committee_setup(n, seed, source.principals())) {}
};

consensus::CommitteeOptions options(QuorumConfig q, consensus::FaultPlan faults = {}) {
  consensus::CommitteeOptions o;
  o.quorum = q;
  o.faults = std::move(faults);
  return o;
}

std::vector<std::string> lines(const ledger::Chain& c) {
  std::vector<std::string> out;
  for (const auto& b : c.blocks()) out.push_back(b.to_line());
  return out;
}

}  // namespace

TEST(Quorum, ThresholdPerMode) {
  EXPECT_EQ(consensus::quorum_threshold(QuorumConfig::two_thirds_of(5)), 4u);
  EXPECT_EQ(consensus::quorum_threshold(QuorumConfig::fixed(5, 3)), 3u);
  EXPECT_EQ(consensus::quorum_threshold(QuorumConfig::majority(5, 1)), 4u);
  EXPECT_EQ(consensus::quorum_threshold(QuorumConfig::majority(5, 0)), 3u);
  EXPECT_EQ(consensus::quorum_threshold(QuorumConfig::two_thirds_of(3)), 2u);
  EXPECT_EQ(consensus::quorum_threshold(QuorumConfig::two_thirds_of(6)), 4u);
}

TEST(Quorum, TwoThirdsMatchesCeilingAndMajorityIsSmallestAbove) {
  for (std::size_t n = 1; n <= 40; ++n) {
    const auto t = consensus::quorum_threshold(QuorumConfig::two_thirds_of(n));
    EXPECT_EQ(t, static_cast<std::size_t>(std::ceil(2.0 * static_cast<double>(n) / 3.0))) << n;
    for (std::size_t f = 0; f < n; ++f) {
      const auto m = consensus::quorum_threshold(QuorumConfig::majority(n, f));
      const double half = (static_cast<double>(n) + static_cast<double>(f)) / 2.0;
      EXPECT_GT(static_cast<double>(m), half);
      EXPECT_LE(static_cast<double>(m) - 1.0, half);
    }
  }
}

TEST(Quorum, InvalidConfigsRejected) {
  EXPECT_THROW(consensus::quorum_threshold(QuorumConfig::fixed(5, 0)), Error);
  EXPECT_THROW(consensus::quorum_threshold(QuorumConfig::fixed(5, 6)), Error);
  EXPECT_THROW(consensus::quorum_threshold(QuorumConfig::majority(5, 5)), Error);
  EXPECT_THROW(consensus::quorum_from_json(json{{"mode", "nope"}}, 5), Error);
  EXPECT_EQ(consensus::quorum_from_json(json(3), 5).q, 3u);
}

TEST(Proposer, RoundRobin) {
  std::vector<std::string> v{"a", "b", "c", "d", "e"};
  EXPECT_EQ(consensus::select_proposer(0, v), "a");
  EXPECT_EQ(consensus::select_proposer(5, v), "a");
  EXPECT_EQ(consensus::select_proposer(7, v), "c");
  EXPECT_THROW(consensus::select_proposer(0, std::vector<std::string>{}), Error);
}

TEST(Finalize, CountsOnlyValidDistinctValidatorSignatures) {
  Harness h(1);
  consensus::Validator v0(h.setup.ids[0], h.setup.keys[0], h.setup.genesis, QuorumConfig::fixed(5, 3));
  v0.submit(h.source.next());
  auto block = *v0.propose(h.setup.ids, 0, 1.0);
  ledger::SignatureSet votes;
  for (std::size_t i = 0; i < 4; ++i)
    votes[h.setup.ids[i]] = crypto::sign(block.hash().bytes, h.setup.keys[i].secret_key);
  const auto& reg = v0.chain().registry();
  EXPECT_TRUE(consensus::finalize(votes, block, QuorumConfig::two_thirds_of(5), reg).finalized);
  EXPECT_FALSE(consensus::finalize(votes, block, QuorumConfig::fixed(5, 5), reg).finalized);
  ledger::SignatureSet three(votes.begin(), std::next(votes.begin(), 3));
  EXPECT_TRUE(consensus::finalize(three, block, QuorumConfig::fixed(5, 3), reg).finalized);

  // A corrupted signature and a non-validator signer are excluded.
  auto bad = votes;
  bad[h.setup.ids[1]][0] ^= 1;
  bad["bench-vendor"] = crypto::sign(block.hash().bytes, h.setup.keys[4].secret_key);
  auto d = consensus::finalize(bad, block, QuorumConfig::two_thirds_of(5), reg);
  EXPECT_EQ(d.valid_signatures, 3u);
  EXPECT_FALSE(d.finalized);
}

TEST(Propose, DrainsInTokenOrderAndEnforcesProposer) {
  Harness h(2);
  consensus::Validator v0(h.setup.ids[0], h.setup.keys[0], h.setup.genesis, QuorumConfig::fixed(5, 3));
  consensus::Validator v1(h.setup.ids[1], h.setup.keys[1], h.setup.genesis, QuorumConfig::fixed(5, 3));
  EXPECT_FALSE(v0.propose(h.setup.ids, 0, 1.0).has_value());
  for (int i = 0; i < 3; ++i) v0.submit(h.source.next());
  EXPECT_THROW(v1.propose(h.setup.ids, 0, 1.0), Error);
  auto b = v0.propose(h.setup.ids, 0, 1.0);
  ASSERT_TRUE(b.has_value());
  ASSERT_EQ(b->events.size(), 3u);
  for (std::size_t i = 1; i < 3; ++i) EXPECT_LT(b->events[i - 1].token->value, b->events[i].token->value);
  EXPECT_EQ(v0.phase(), consensus::Phase::Proposed);
  EXPECT_EQ(v1.vote(*b, h.setup.ids[0]).status, consensus::VoteReply::Status::vote);
}

TEST(Propose, InvalidSignerProposalFailsAtPeers) {
  Harness h(3);
  consensus::Validator bad(h.setup.ids[0], h.setup.keys[0], h.setup.genesis, QuorumConfig::fixed(5, 3),
                           FaultProfile{FaultKind::invalid_signer});
  consensus::Validator peer(h.setup.ids[1], h.setup.keys[1], h.setup.genesis, QuorumConfig::fixed(5, 3));
  bad.submit(h.source.next());
  auto b = *bad.propose(h.setup.ids, 0, 1.0);
  auto r = peer.vote(b, h.setup.ids[0]);
  EXPECT_EQ(r.status, consensus::VoteReply::Status::reject);
  EXPECT_NE(r.reason.find("bad_signature"), std::string::npos);
}

TEST(Vote, TamperedEventRejectedWithVerdict) {
  Harness h(4);
  consensus::Validator v0(h.setup.ids[0], h.setup.keys[0], h.setup.genesis, QuorumConfig::fixed(5, 3));
  consensus::Validator v1(h.setup.ids[1], h.setup.keys[1], h.setup.genesis, QuorumConfig::fixed(5, 3));
  v0.submit(h.source.next());
  auto b = *v0.propose(h.setup.ids, 0, 1.0);
  b.events[0].payload["meta"]["timestamp_s"] = 12345.5;
  b.signatures[h.setup.ids[0]] = v0.sign(b);
  auto r = v1.vote(b, h.setup.ids[0]);
  EXPECT_EQ(r.status, consensus::VoteReply::Status::reject);
  EXPECT_NE(r.reason.find("token_mismatch"), std::string::npos);
}

TEST(Vote, HonestValidatorSignsAtMostOneBlockPerHeight) {
  Harness h(5);
  consensus::Validator eq(h.setup.ids[0], h.setup.keys[0], h.setup.genesis, QuorumConfig::fixed(5, 3),
                          FaultProfile{FaultKind::equivocator});
  consensus::Validator honest(h.setup.ids[1], h.setup.keys[1], h.setup.genesis, QuorumConfig::fixed(5, 3));
  consensus::Validator other(h.setup.ids[2], h.setup.keys[2], h.setup.genesis, QuorumConfig::fixed(5, 3),
                             FaultProfile{FaultKind::equivocator});
  eq.submit(h.source.next());
  auto pair = eq.propose_conflicting(h.setup.ids, 0, 1.0);
  ASSERT_TRUE(pair.has_value());
  ASSERT_NE(pair->first.hash(), pair->second.hash());
  EXPECT_EQ(honest.vote(pair->first, h.setup.ids[0]).status, consensus::VoteReply::Status::vote);
  auto second = honest.vote(pair->second, h.setup.ids[0]);
  EXPECT_EQ(second.status, consensus::VoteReply::Status::reject);
  EXPECT_NE(second.reason.find("equivocation"), std::string::npos);
  // Re-delivery of the block it already signed is still answered.
  EXPECT_EQ(honest.vote(pair->first, h.setup.ids[0]).status, consensus::VoteReply::Status::vote);
  // An equivocating voter signs both.
  EXPECT_EQ(other.vote(pair->first, h.setup.ids[0]).status, consensus::VoteReply::Status::vote);
  EXPECT_EQ(other.vote(pair->second, h.setup.ids[0]).status, consensus::VoteReply::Status::vote);
}

TEST(Committee, HonestRunProducesIdenticalChains) {
  Harness h(6);
  net::NetworkProfile prof{0.01, 0.005, 0.0, 6};
  net::SimCommittee c(h.setup, options(QuorumConfig::fixed(5, 3)), prof);
  net::Workload w;
  for (int i = 0; i < 300; ++i) {
    w.batches.push_back({h.source.next()});
    w.timestamps.push_back(i + 1.0);
  }
  auto trace = net::run_committee(c, w);
  EXPECT_EQ(trace.stalls, 0u);
  ASSERT_EQ(trace.rows.size(), 300u);
  for (const auto& r : trace.rows) {
    EXPECT_TRUE(r.finalized());
    EXPECT_EQ(r.signatures, 5u);
  }
  const auto ref = lines(trace.chains[0]);
  EXPECT_EQ(ref.size(), 301u);
  for (const auto& ch : trace.chains) EXPECT_EQ(lines(ch), ref);
}

TEST(Committee, OneOfflineValidator) {
  for (std::size_t q : {3u, 5u}) {
    Harness h(7);
    net::NetworkProfile prof{0.01, 0.005, 0.0, 7};
    net::SimCommittee c(h.setup, options(QuorumConfig::fixed(5, q), {{"validator-2", {FaultKind::offline}}}),
                        prof);
    net::Workload w;
    for (int i = 0; i < 50; ++i) {
      w.batches.push_back({h.source.next()});
      w.timestamps.push_back(i + 1.0);
    }
    auto trace = net::run_committee(c, w);
    if (q == 3) {
      EXPECT_EQ(trace.stalls, 0u);
      EXPECT_EQ(trace.chains[0].height(), 50u);
    } else {
      EXPECT_EQ(trace.stalls, 50u);
      EXPECT_EQ(trace.chains[0].height(), 0u);
    }
  }
}

TEST(Committee, SlowValidatorStillFinalizes) {
  Harness h(8);
  net::NetworkProfile prof{0.01, 0.002, 0.0, 8};
  net::SimCommittee c(h.setup,
                      options(QuorumConfig::fixed(5, 3), {{"validator-1", {FaultKind::slow, 4.0}}}), prof);
  net::Workload w;
  for (int i = 0; i < 20; ++i) {
    w.batches.push_back({h.source.next()});
    w.timestamps.push_back(i + 1.0);
  }
  auto trace = net::run_committee(c, w);
  EXPECT_EQ(trace.stalls, 0u);
  EXPECT_EQ(lines(trace.chains[1]), lines(trace.chains[0]));
}

namespace {

/// Heights at which two honest validators appended different blocks.
std::size_t conflicting_heights(const net::CommitteeTrace& t, const consensus::Committee& c) {
  std::size_t conflicts = 0;
  const auto& vs = c.validators();
  for (std::size_t a = 0; a < vs.size(); ++a)
    for (std::size_t b = a + 1; b < vs.size(); ++b) {
      if (!vs[a]->honest() || !vs[b]->honest()) continue;
      const auto& ca = t.chains[a].blocks();
      const auto& cb = t.chains[b].blocks();
      for (std::size_t i = 0; i < std::min(ca.size(), cb.size()); ++i)
        if (ca[i].hash() != cb[i].hash()) ++conflicts;
    }
  return conflicts;
}

std::size_t adversarial_trial(std::uint64_t seed, QuorumConfig q) {
  std::mt19937_64 rng(seed);
  Harness h(seed);
  const std::string eq = "validator-" + std::to_string(rng() % 5);
  net::NetworkProfile prof{0.01, 0.01, 0.0, seed};
  net::SimCommittee c(h.setup, options(q, {{eq, {FaultKind::equivocator}}}), prof);
  net::Workload w;
  for (int i = 0; i < 10; ++i) {
    w.batches.push_back({h.source.next()});
    w.timestamps.push_back(i + 1.0);
  }
  auto t = net::run_committee(c, w);
  return conflicting_heights(t, c);
}

}  // namespace

TEST(Safety, EquivocatorCannotForkFourOfFive) {
  for (std::uint64_t s = 0; s < 25; ++s) EXPECT_EQ(adversarial_trial(1000 + s, QuorumConfig::fixed(5, 4)), 0u) << s;
}

TEST(Safety, BelowMajorityThresholdTheHarnessObservesForks) {
  std::size_t forks = 0;
  for (std::uint64_t s = 0; s < 25; ++s) forks += adversarial_trial(2000 + s, QuorumConfig::fixed(5, 2));
  EXPECT_GT(forks, 0u);
}

TEST(Latency, MonotoneInQuorumSize) {
  std::vector<double> means;
  for (std::size_t q : {1u, 3u, 5u}) {
    net::BenchmarkOptions o;
    o.quorum = QuorumConfig::fixed(5, q);
    o.block_count = 1000;
    o.network = {0.02, 0.015, 0.0, 99};
    o.seed = 99;
    auto rep = net::measure_benchmark(o);
    EXPECT_EQ(rep.blocks, 1000u);
    means.push_back(rep.mean_latency_s);
  }
  EXPECT_LE(means[0], means[1]);
  EXPECT_LE(means[1], means[2]);
}

TEST(Latency, ZeroLatencyProfileIsPureProcessing) {
  net::BenchmarkOptions o;
  o.quorum = QuorumConfig::fixed(5, 5);
  o.block_count = 50;
  o.processing_s = 0.001;
  auto rep = net::measure_benchmark(o);
  EXPECT_EQ(rep.blocks, 50u);
  EXPECT_NEAR(rep.mean_latency_s, 0.001, 1e-12);
  EXPECT_LT(rep.variance_latency_s, 1e-18);
}

TEST(SimNetwork, DegenerateProfileIsInstantFifo) {
  net::SimNetwork n({0, 0, 0, 1});
  std::vector<std::string> got;
  n.register_node("a", [](const net::WireMessage&) {});
  n.register_node("b", [&](const net::WireMessage& m) { got.push_back(m.body.at("x").get<std::string>()); });
  auto d1 = n.send(net::WireMessage::make(net::MessageKind::Submit, "a", 0, {{"x", "A"}}), "b");
  auto d2 = n.send(net::WireMessage::make(net::MessageKind::Submit, "a", 0, {{"x", "B"}}), "b");
  EXPECT_EQ(d1.deliver_at, 0.0);
  EXPECT_EQ(d2.deliver_at, 0.0);
  n.run();
  EXPECT_EQ(got, (std::vector<std::string>{"A", "B"}));
}

TEST(SimNetwork, FifoPerLinkUnderJitter) {
  net::SimNetwork n({0.05, 0.05, 0, 3});
  std::vector<int> got;
  n.register_node("a", [](const net::WireMessage&) {});
  n.register_node("b", [&](const net::WireMessage& m) { got.push_back(m.body.at("i").get<int>()); });
  for (int i = 0; i < 500; ++i) n.send(net::WireMessage::make(net::MessageKind::Submit, "a", 0, {{"i", i}}), "b");
  n.run();
  ASSERT_EQ(got.size(), 500u);
  for (int i = 0; i < 500; ++i) EXPECT_EQ(got[i], i);
}

TEST(SimNetwork, DropFractionWithinThreeSigma) {
  const double p = 1.0 - 1e-3;
  net::SimNetwork n({0.01, 0.0, p, 11});
  n.register_node("a", [](const net::WireMessage&) {});
  n.register_node("b", [](const net::WireMessage&) {});
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) n.send(net::WireMessage::make(net::MessageKind::Submit, "a", 0, {{"i", i}}), "b");
  const double mean = trials * p;
  const double sigma = std::sqrt(trials * p * (1 - p));
  EXPECT_NEAR(static_cast<double>(n.dropped()), mean, 3 * sigma);
}

TEST(SimNetwork, SeedReproducesTrace) {
  auto run = [](std::uint64_t seed) {
    net::BenchmarkOptions o;
    o.quorum = QuorumConfig::fixed(5, 3);
    o.block_count = 100;
    o.network = {0.02, 0.01, 0.05, seed};
    o.seed = seed;
    std::vector<std::pair<double, std::size_t>> out;
    for (const auto& r : net::measure_benchmark(o).rows) out.emplace_back(r.latency_s(), r.signatures);
    return out;
  };
  EXPECT_EQ(run(5), run(5));
  EXPECT_NE(run(5), run(6));
}
