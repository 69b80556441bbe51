#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "orbitchain/orchestrator.hpp"

using namespace orbitchain;
using namespace orbitchain::orch;

namespace {

json hap(const std::string& id, double lat = 40.0, double lon = 10.0) {
  return {{"id", id}, {"latitude_deg", lat}, {"longitude_deg", lon}};
}

json vendor(const std::string& id, int planes, int spp, const std::vector<std::string>& haps,
            const std::string& scheme = "additive_mask") {
  json hs = json::array();
  for (const auto& h : haps) hs.push_back(hap(h));
  return {{"vendor_id", id},
          {"constellation", {{"planes", planes}, {"sats_per_plane", spp}}},
          {"haps", hs},
          {"ground_stations", json::array({hap("gs-" + id, 45.0, 5.0)})},
          {"seal_scheme", scheme}};
}

/// One vendor, always-visible, small task: the FedAvg reduction regime.
json flat_doc(int sats, const std::string& scheme = "additive_mask") {
  return {{"seed", 11},
          {"rounds", 3},
          {"mode", "single_vendor"},
          {"single_vendor_id", "v1"},
          {"always_visible", true},
          {"task", {{"n_classes", 4}, {"feature_dim", 5}, {"samples_per_satellite", 40}}},
          {"weights", {{"lambda_decay", 0.0}}},
          {"train", {{"learning_rate", 0.2}, {"epochs", 1}, {"batch_size", 10}}},
          {"vendors", json::array({vendor("v1", 1, sats, {"hap-1"}, scheme)})}};
}

/// Two vendors on real orbits.
json orbit_doc() {
  auto v2 = vendor("v2", 2, 3, {"hap-2"});
  v2["constellation"]["inclination_deg"] = 70.0;
  v2["constellation"]["raan_offset_deg"] = 45.0;
  return {{"seed", 3},
          {"rounds", 4},
          {"task", {{"n_classes", 4}, {"feature_dim", 5}, {"samples_per_satellite", 40}}},
          {"vendors", json::array({vendor("v1", 2, 3, {"hap-1"}), v2})}};
}

scenario::ScenarioConfig cfg_of(const json& doc) { return scenario::parse_config(doc); }

fl::ModelVector train_from(const fl::ModelVector& init, const fl::Dataset& d, const scenario::ScenarioConfig& c,
                           const std::string& sat, std::uint64_t round) {
  auto tc = c.train;
  tc.rng_seed = training_seed(c.seed, sat, round);
  return fl::local_train(init, d, tc).updated_model;
}

std::vector<std::string> chain_lines(const ledger::Chain& chain) {
  std::vector<std::string> out;
  for (const auto& b : chain.blocks()) out.push_back(b.to_line());
  return out;
}

std::vector<orbit::SatelliteSpec> sats_named(std::size_t n) {
  std::vector<orbit::SatelliteSpec> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].sat_id = "s" + std::to_string(i);
    out[i].vendor_id = "v";
  }
  return out;
}

}  // namespace

TEST(Partition, IidLabelHistogramIsUniform) {
  scenario::TaskSpec ts{6, 4, 600, 3.0, 1.0};
  const auto task = make_blob_task(ts, 1);
  PartitionSpec p{scenario::PartitionStyle::iid, 0, 6, 600, 4, 99};
  const auto sats = sats_named(10);
  const auto parts = partition_dataset(p, task, sats);
  std::vector<double> hist(6, 0.0);
  for (const auto& [_, d] : parts)
    for (int y : d.labels) hist[static_cast<std::size_t>(y)] += 1.0;
  const double n = 6000.0, expect = n / 6.0, sigma = std::sqrt(n * (1.0 / 6.0) * (5.0 / 6.0));
  for (double h : hist) EXPECT_LE(std::abs(h - expect), 3.0 * sigma);
}

TEST(Partition, LabelSkewCoverage) {
  EXPECT_EQ(skew_classes(0, 2, 6), (std::vector<int>{0, 1}));
  EXPECT_EQ(skew_classes(1, 2, 6), (std::vector<int>{2, 3}));
  EXPECT_EQ(skew_classes(2, 2, 6), (std::vector<int>{4, 5}));
  EXPECT_EQ(skew_classes(3, 2, 6), (std::vector<int>{0, 1}));

  scenario::TaskSpec ts{6, 3, 50, 3.0, 1.0};
  const auto task = make_blob_task(ts, 2);
  PartitionSpec p{scenario::PartitionStyle::label_skew, 2, 6, 50, 3, 5};
  const auto parts = partition_dataset(p, task, sats_named(6));
  std::vector<int> holders(6, 0);
  for (const auto& [_, d] : parts) {
    std::set<int> held(d.labels.begin(), d.labels.end());
    EXPECT_EQ(held.size(), 2u);
    for (int c : held) ++holders[static_cast<std::size_t>(c)];
    // Balanced within a satellite.
    EXPECT_EQ(std::count(d.labels.begin(), d.labels.end(), *held.begin()), 25);
  }
  EXPECT_EQ(holders, std::vector<int>(6, 2));

  try {
    partition_dataset(p, task, sats_named(2));
    ADD_FAILURE() << "infeasible partition accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
}

TEST(Partition, DeterministicPerSeed) {
  scenario::TaskSpec ts{4, 3, 30, 3.0, 1.0};
  const auto task = make_blob_task(ts, 2);
  PartitionSpec p{scenario::PartitionStyle::iid, 0, 4, 30, 3, 5};
  const auto a = partition_dataset(p, task, sats_named(3));
  const auto b = partition_dataset(p, task, sats_named(3));
  for (const auto& [id, d] : a) {
    EXPECT_EQ(d.labels, b.at(id).labels);
    EXPECT_EQ(d.features, b.at(id).features);
  }
  p.seed = 6;
  EXPECT_NE(partition_dataset(p, task, sats_named(3)).at("s0").features, a.at("s0").features);
}

TEST(Evaluate, OracleModels) {
  scenario::TaskSpec ts{4, 3, 10, 3.0, 1.0};
  auto task = make_blob_task(ts, 8);
  for (const auto& m : task.means) {
    double n = 0;
    for (double x : m) n += x * x;
    EXPECT_NEAR(std::sqrt(n), 3.0, 1e-12);
  }

  // Noise-free samples sit on the means; the nearest-mean linear rule is exact.
  auto exact = task;
  exact.cluster_std = 0.0;
  std::vector<int> labels;
  for (int i = 0; i < 40; ++i) labels.push_back(i % 4);
  const auto clean = sample_blobs(exact, labels, 1);
  fl::ModelVector nearest(fl::softmax_dim(3, 4));
  for (std::size_t c = 0; c < 4; ++c) {
    double sq = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      nearest.values[c * 4 + j] = static_cast<float>(task.means[c][j]);
      sq += task.means[c][j] * task.means[c][j];
    }
    nearest.values[c * 4 + 3] = static_cast<float>(-0.5 * sq);
  }
  EXPECT_EQ(evaluate(nearest, clean).accuracy, 1.0);

  const auto holdout = make_holdout(task, 4000, 21);
  const fl::ModelVector zero(fl::softmax_dim(3, 4));
  const auto z = evaluate(zero, holdout);
  const double sigma = std::sqrt(0.25 * 0.75 / 4000.0);
  EXPECT_NEAR(z.accuracy, 0.25, 3.0 * sigma);
  EXPECT_NEAR(z.loss, std::log(4.0), 1e-9);

  auto shuffled = holdout;
  std::vector<std::size_t> perm(holdout.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(4));
  for (std::size_t i = 0; i < perm.size(); ++i) {
    shuffled.labels[i] = holdout.labels[perm[i]];
    for (std::size_t j = 0; j < 3; ++j) shuffled.features[i * 3 + j] = holdout.features[perm[i] * 3 + j];
  }
  const auto a = evaluate(nearest, holdout), b = evaluate(nearest, shuffled);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_NEAR(a.loss, b.loss, 1e-12);
}

TEST(Simulation, DegenerateRunIsTheTrainedModel) {
  auto doc = flat_doc(1, "plaintext");
  doc["rounds"] = 1;
  const auto c = cfg_of(doc);
  Simulation sim(c);
  const auto& sat = sim.datasets().begin()->second;
  const auto expect = train_from(sim.state().global_model, sat, c, sat.sat_id, 1);
  auto rep = sim.run();
  ASSERT_EQ(rep.models.size(), 2u);
  EXPECT_EQ(rep.models[1], expect);
  EXPECT_TRUE(rep.rounds[0].global_token.has_value());

  const auto& blocks = rep.chain->blocks();
  ASSERT_EQ(blocks.size(), 3u);
  std::vector<ledger::EventKind> kinds;
  for (std::size_t i = 1; i < blocks.size(); ++i)
    for (const auto& ev : blocks[i].events) kinds.push_back(ev.kind);
  EXPECT_EQ(kinds, (std::vector<ledger::EventKind>{ledger::EventKind::Commit, ledger::EventKind::PartialAgg,
                                                    ledger::EventKind::GlobalAgg, ledger::EventKind::Distribute}));
}

TEST(Simulation, FedAvgReductionWhenWeightsAreUniform) {
  const auto c = cfg_of(flat_doc(4));
  Simulation sim(c);
  auto rep = sim.run();
  ASSERT_EQ(rep.models.size(), 4u);
  for (std::uint64_t t = 1; t <= 3; ++t) {
    std::vector<double> mean(rep.models[0].dim(), 0.0);
    for (const auto& [id, d] : sim.datasets()) {
      const auto m = train_from(rep.models[t - 1], d, c, id, t);
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += m.values[i] / 4.0;
    }
    for (std::size_t i = 0; i < mean.size(); ++i) EXPECT_NEAR(rep.models[t].values[i], mean[i], 1e-6);
    EXPECT_EQ(rep.rounds[t - 1].committed, 4u);
  }
  for (const auto& f : rep.fusion) EXPECT_EQ(f.beta, 1.0);
  for (const auto& w : rep.weight_audit) EXPECT_NEAR(w.alpha, 0.25, 1e-12);
}

TEST(Simulation, AgesCountRoundsSinceFetch) {
  auto doc = flat_doc(1);
  doc["train_time_s"] = 1500.0;  // 2.5 slack windows
  const auto c = cfg_of(doc);
  auto rep = run_simulation(c);
  EXPECT_TRUE(rep.rounds[0].empty);
  EXPECT_TRUE(rep.rounds[1].empty);
  EXPECT_EQ(rep.models[1], rep.models[0]);
  EXPECT_EQ(rep.models[2], rep.models[0]);
  ASSERT_EQ(rep.weight_audit.size(), 1u);
  EXPECT_EQ(rep.weight_audit[0].round, 3u);
  EXPECT_EQ(rep.weight_audit[0].age, 2u);
  ASSERT_FALSE(rep.uploads.empty());
  EXPECT_DOUBLE_EQ(rep.uploads[0].time_s, 1500.0);
}

TEST(Simulation, OversizeUploadsNeverReachTheLedger) {
  auto doc = flat_doc(3);
  doc["mode"] = "multi_vendor";
  doc.erase("single_vendor_id");
  auto slow = vendor("v2", 1, 3, {"hap-2"});
  slow["bandwidth_bps"] = 5.0;
  doc["vendors"].push_back(slow);
  auto rep = run_simulation(cfg_of(doc));
  std::size_t v2_oversize = 0;
  for (const auto& u : rep.uploads) {
    if (u.sat_id.rfind("v2-", 0) != 0) continue;
    EXPECT_EQ(u.outcome, "oversize");
    EXPECT_GT(u.bytes, u.capacity_bytes);
    ++v2_oversize;
  }
  EXPECT_EQ(v2_oversize, 9u);
  for (const auto& b : rep.chain->blocks())
    for (const auto& ev : b.events)
      if (ev.kind == ledger::EventKind::Commit) EXPECT_EQ(ledger::commit_payload(ev).meta.vendor_id, "v1");
  for (const auto& w : rep.weight_audit) EXPECT_EQ(w.vendor_id, "v1");
  EXPECT_EQ(rep.rounds[0].oversize, 3u);
}

TEST(Simulation, LedgerExplainsEveryGlobalModel) {
  const auto c = cfg_of(orbit_doc());
  Simulation sim(c);
  auto rep = sim.run();
  const auto& chain = *rep.chain;

  std::size_t committed = 0, with_model = 0;
  for (const auto& r : rep.rounds) committed += r.committed;
  EXPECT_GT(committed, 0u);

  for (const auto& r : rep.rounds) {
    if (!r.global_token) continue;
    ++with_model;
    std::set<crypto::Digest> leaves, on_chain;
    const auto tree = audit_trace(chain, r.global_token->value);
    for (const auto& p : tree.children)
      for (const auto& leaf : p.children) leaves.insert(leaf.event.token->value);
    for (const auto& b : chain.blocks())
      for (const auto& ev : b.events)
        if (ev.kind == ledger::EventKind::Commit && ev.round == r.round) on_chain.insert(ev.token->value);
    EXPECT_EQ(leaves, on_chain) << "round " << r.round;
    EXPECT_EQ(leaves.size(), r.committed);
    EXPECT_TRUE(ledger::audit_verify(chain, r.global_token->value, sim.artifacts()).clean());
  }
  EXPECT_GT(with_model, 0u);

  const auto replayed = replay_global_models(chain, sim.artifacts(), sim.unsealer(), c.weights);
  EXPECT_EQ(replayed.size(), with_model);
  for (const auto& [round, model] : replayed) EXPECT_EQ(model, rep.models[round]) << "round " << round;

  // Weight audit rows are a subset of the commits, with alphas normalized per HAP.
  std::set<std::pair<std::uint64_t, std::string>> commits;
  for (const auto& b : chain.blocks())
    for (const auto& ev : b.events)
      if (ev.kind == ledger::EventKind::Commit) commits.insert({ev.round, ledger::commit_payload(ev).meta.sat_id});
  std::map<std::pair<std::uint64_t, std::string>, double> sums;
  for (const auto& w : rep.weight_audit) {
    EXPECT_TRUE(commits.count({w.round, w.sat_id})) << w.sat_id;
    sums[{w.round, w.hap_id}] += w.alpha;
  }
  for (const auto& [_, s] : sums) EXPECT_NEAR(s, 1.0, 1e-9);
}

TEST(Simulation, FaultySatellitesAreRejectedAndPenalized) {
  auto doc = flat_doc(4);
  doc["satellite_faults"] = json::array({{{"sat_id", "v1-p0-s0"}, {"kind", "tampered"}},
                                         {{"sat_id", "v1-p0-s1"}, {"kind", "forged"}},
                                         {{"sat_id", "v1-p0-s2"}, {"kind", "replay"}, {"rounds", {2, 3}}}});
  Simulation sim(cfg_of(doc));
  auto rep = sim.run();
  std::map<std::string, std::set<std::string>> outcomes;
  for (const auto& u : rep.uploads) outcomes[u.sat_id].insert(u.outcome + ":" + u.reason);
  EXPECT_EQ(outcomes["v1-p0-s0"], (std::set<std::string>{"rejected:signature verification failed"}));
  EXPECT_EQ(outcomes["v1-p0-s1"], (std::set<std::string>{"rejected:signature verification failed"}));
  EXPECT_EQ(outcomes["v1-p0-s2"], (std::set<std::string>{"committed:", "rejected:token already on the ledger"}));
  EXPECT_EQ(outcomes["v1-p0-s3"], (std::set<std::string>{"committed:"}));

  const auto& rep_table = sim.state().reputation;
  EXPECT_LT(rep_table.at({"v1", "v1-p0-s0"}), 1.0);
  EXPECT_LT(rep_table.at({"v1", "v1-p0-s1"}), 1.0);
  EXPECT_LT(rep_table.at({"v1", "v1-p0-s2"}), 1.0);
  EXPECT_EQ(rep_table.at({"v1", "v1-p0-s3"}), 1.0);
  for (const auto& w : rep.weight_audit) {
    EXPECT_NE(w.sat_id, "v1-p0-s0");
    EXPECT_NE(w.sat_id, "v1-p0-s1");
  }
  const auto final_token = rep.final_global_token();
  ASSERT_TRUE(final_token);
  EXPECT_TRUE(ledger::audit_verify(*rep.chain, final_token->value, sim.artifacts()).clean());
}

TEST(Simulation, SingleVendorModeKeepsOtherVendorsOut) {
  auto doc = orbit_doc();
  doc["mode"] = "single_vendor";
  doc["single_vendor_id"] = "v1";
  doc["rounds"] = 12;  // v1 first reaches its HAP in round 5
  Simulation sim(cfg_of(doc));
  auto rep = sim.run();
  EXPECT_EQ(rep.mode, "single_vendor:v1");
  EXPECT_EQ(sim.committee().validators().size(), 2u);
  EXPECT_FALSE(rep.uploads.empty());
  EXPECT_FALSE(rep.weight_audit.empty());
  for (const auto& u : rep.uploads) EXPECT_EQ(u.sat_id.rfind("v1-", 0), 0u) << u.sat_id;
  for (const auto& w : rep.weight_audit) EXPECT_EQ(w.hap_id, "hap-1");
  for (const auto& b : rep.chain->blocks())
    for (const auto& ev : b.events) {
      if (ev.kind == ledger::EventKind::Commit) EXPECT_EQ(ev.vendor_id, "v1");
      if (ev.kind == ledger::EventKind::GlobalAgg) EXPECT_EQ(ev.vendor_id, "v1");
    }
}

TEST(Simulation, EmptyRoundsCarryTheModelForward) {
  auto doc = orbit_doc();
  doc["theta_min_deg"] = 89.5;
  doc["rounds"] = 2;
  auto rep = run_simulation(cfg_of(doc));
  std::size_t empty = 0;
  for (const auto& r : rep.rounds) {
    if (!r.empty) continue;
    ++empty;
    EXPECT_EQ(rep.models[r.round], rep.models[r.round - 1]);
    EXPECT_EQ(r.committed, 0u);
    EXPECT_FALSE(r.global_token);
  }
  EXPECT_GT(empty, 0u);
}

TEST(Simulation, StalledConsensusAbortsTheRound) {
  auto doc = flat_doc(2);
  doc["vendors"][0]["haps"].push_back(hap("hap-2"));
  doc["quorum"] = {{"mode", "fixed_q"}, {"q", 2}};
  doc["validator_faults"] = {{"hap-2", {{"kind", "offline"}}}};
  doc["rounds"] = 2;
  auto rep = run_simulation(cfg_of(doc));
  for (const auto& r : rep.rounds) {
    EXPECT_TRUE(r.aborted);
    EXPECT_FALSE(r.global_token);
    EXPECT_EQ(rep.models[r.round], rep.models[0]);
  }
  for (const auto& u : rep.uploads) EXPECT_EQ(u.hap_id, "hap-1");
  EXPECT_EQ(rep.chain->blocks().size(), 1u);
  for (const auto& b : rep.consensus) EXPECT_TRUE(b.stalled);
}

TEST(Simulation, DeterministicAcrossRunsAndTransports) {
  const auto c = cfg_of(orbit_doc());
  const auto a = run_simulation(c);
  const auto b = run_simulation(c);
  EXPECT_EQ(chain_lines(*a.chain), chain_lines(*b.chain));
  EXPECT_EQ(a.models, b.models);

  auto svc = c;
  svc.transport = net::Transport::service;
  const auto s = run_simulation(svc);
  EXPECT_EQ(chain_lines(*s.chain), chain_lines(*a.chain));
  EXPECT_EQ(s.models, a.models);
}
