#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "orbitchain/cli.hpp"
#include "orbitchain/common.hpp"

using namespace orbitchain;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "orbitchain");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("orbitchain_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::vector<std::string> out;
  std::istringstream in(slurp(p));
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary | std::ios::trunc) << text; }

json vendor(const std::string& id) {
  return {{"vendor_id", id},
          {"constellation", {{"planes", 1}, {"sats_per_plane", 3}}},
          {"haps", json::array({{{"id", "hap-" + id}, {"latitude_deg", 40.0}, {"longitude_deg", 10.0}}})},
          {"ground_stations", json::array({{{"id", "gs-" + id}, {"latitude_deg", 45.0}, {"longitude_deg", 5.0}}})}};
}

fs::path write_sim_config(const fs::path& dir) {
  json doc = {{"seed", 4},
              {"rounds", 3},
              {"slack_time_s", 300.0},
              {"always_visible", true},
              {"task", {{"n_classes", 4}, {"feature_dim", 4}, {"samples_per_satellite", 30}}},
              {"vendors", json::array({vendor("v1"), vendor("v2")})}};
  auto p = dir / "scenario_in.json";
  spit(p, doc.dump(2));
  return p;
}

/// A finished simulate run shared by the ledger and audit tests.
fs::path simulated(const std::string& name) {
  auto dir = scratch(name);
  auto r = invoke({"simulate", "--config", write_sim_config(dir).string(), "--out", (dir / "out").string()});
  EXPECT_EQ(r.code, cli::kExitOk) << r.err;
  return dir / "out";
}

fs::path write_bench_config(const fs::path& dir, const json& bench) {
  json doc = {{"mode", "single_vendor"},
              {"single_vendor_id", "v1"},
              {"vendors", json::array({vendor("v1")})},
              {"bench", bench}};
  auto p = dir / "bench.json";
  spit(p, doc.dump(2));
  return p;
}

}  // namespace

TEST(Cli, SimulateWritesTheReportAndHonorsOverrides) {
  auto dir = scratch("simulate");
  auto cfg = write_sim_config(dir);
  auto r = invoke({"simulate", "--config", cfg.string(), "--out", (dir / "a").string(), "--override",
                "slack_time_s=600"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_NE(r.out.find("mode multi_vendor: 3 rounds"), std::string::npos) << r.out;

  const auto conv = lines_of(dir / "a" / "convergence.csv");
  ASSERT_EQ(conv.size(), 4u);
  EXPECT_EQ(conv[0], "round,sim_minutes,mode,accuracy,loss");
  for (std::size_t t = 1; t <= 3; ++t)
    EXPECT_EQ(conv[t].rfind(std::to_string(t) + "," + std::to_string(10 * t) + ".0,multi_vendor,", 0), 0u) << conv[t];

  for (const char* f : {"scenario.json", "ledger_stats.json", "consensus_latency.csv", "weight_audit.csv",
                        "fusion.csv", "uploads.csv", "ledger.jsonl"})
    EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;
  EXPECT_EQ(json::parse(slurp(dir / "a" / "scenario.json"))["slack_time_s"], 600);
  EXPECT_EQ(lines_of(dir / "a" / "ledger.jsonl").size(), 7u);  // genesis + 2 blocks per round

  auto seeded = invoke({"simulate", "--config", cfg.string(), "--out", (dir / "b").string(), "--seed", "9"});
  ASSERT_EQ(seeded.code, cli::kExitOk) << seeded.err;
  EXPECT_NE(slurp(dir / "b" / "ledger.jsonl"), slurp(dir / "a" / "ledger.jsonl"));
}

TEST(Cli, ConfigErrorsExitOne) {
  auto dir = scratch("config");
  auto missing = invoke({"simulate", "--config", (dir / "nope.json").string(), "--out", (dir / "o").string()});
  EXPECT_EQ(missing.code, cli::kExitConfig);
  EXPECT_NE(missing.err.find("does not exist"), std::string::npos);

  auto cfg = write_sim_config(dir);
  auto bad = invoke({"simulate", "--config", cfg.string(), "--out", (dir / "o").string(), "--override",
                  "vendors.1.constellation.planes=0"});
  EXPECT_EQ(bad.code, cli::kExitConfig);
  EXPECT_NE(bad.err.find("vendors[1].constellation.planes"), std::string::npos) << bad.err;

  spit(dir / "garbled.json", "{\"rounds\": ");
  EXPECT_EQ(invoke({"simulate", "--config", (dir / "garbled.json").string(), "--out", (dir / "o").string()}).code,
            cli::kExitConfig);
  EXPECT_EQ(invoke({"simulate", "--config", cfg.string()}).code, cli::kExitConfig);
  EXPECT_EQ(invoke({"frobnicate"}).code, cli::kExitConfig);
  EXPECT_EQ(invoke({"simulate", "--config", cfg.string(), "--out", (dir / "o").string(), "--transport", "x"}).code,
            cli::kExitConfig);
  EXPECT_EQ(invoke({"--help"}).code, cli::kExitOk);
}

TEST(Cli, VerifyChainDetectsMutationAndTruncation) {
  const auto out = simulated("verify");
  const auto ledger = out / "ledger.jsonl";
  auto ok = invoke({"verify-chain", "--ledger", ledger.string(), "--artifacts", (out / "artifacts").string()});
  EXPECT_EQ(ok.code, cli::kExitOk) << ok.err;
  EXPECT_EQ(ok.out.rfind("valid: 7 blocks, head ", 0), 0u) << ok.out;
  for (const auto& v : fs::directory_iterator(out / "validators"))
    EXPECT_EQ(slurp(v.path()), slurp(ledger)) << v.path();

  auto lines = lines_of(ledger);
  auto mutated = lines;
  const auto at = mutated[3].find("\"timestamp_s\":");
  ASSERT_NE(at, std::string::npos);
  mutated[3].insert(at + 14, "1");
  std::string text;
  for (const auto& l : mutated) text += l + "\n";
  spit(out / "mutated.jsonl", text);
  auto m = invoke({"verify-chain", "--ledger", (out / "mutated.jsonl").string()});
  EXPECT_EQ(m.code, cli::kExitViolation);
  EXPECT_NE(m.out.find("first at block 3"), std::string::npos) << m.out;

  text.clear();
  for (std::size_t i = 0; i < 5; ++i) text += lines[i] + "\n";
  text += lines[5].substr(0, lines[5].size() / 2) + "\n";
  spit(out / "truncated.jsonl", text);
  auto t = invoke({"verify-chain", "--ledger", (out / "truncated.jsonl").string()});
  EXPECT_EQ(t.code, cli::kExitViolation);
  EXPECT_NE(t.out.find("first at block 5"), std::string::npos) << t.out;
  EXPECT_NE(t.err.find("block 5:"), std::string::npos) << t.err;

  EXPECT_EQ(invoke({"verify-chain", "--ledger", (out / "absent.jsonl").string()}).code, cli::kExitRuntime);
}

TEST(Cli, AuditCleanTamperedAndUnknown) {
  const auto out = simulated("audit");
  const auto ledger = (out / "ledger.jsonl").string(), artifacts = (out / "artifacts").string();
  auto clean = invoke({"audit", "--ledger", ledger, "--artifacts", artifacts, "--out", (out / "audit.json").string()});
  ASSERT_EQ(clean.code, cli::kExitOk) << clean.out << clean.err;
  EXPECT_NE(clean.out.find("audit clean: 0 violations"), std::string::npos);
  EXPECT_NE(clean.out.find("GlobalAgg "), std::string::npos);
  EXPECT_NE(clean.out.find("authenticated_vendor: holds"), std::string::npos);
  EXPECT_TRUE(json::parse(slurp(out / "audit.json")).contains("lineage"));

  auto unknown = invoke({"audit", "--ledger", ledger, "--artifacts", artifacts, "--token", std::string(64, 'a')});
  EXPECT_EQ(unknown.code, cli::kExitRuntime) << unknown.out << unknown.err;
  EXPECT_EQ(invoke({"audit", "--ledger", ledger, "--artifacts", artifacts, "--token", "zz"}).code, cli::kExitRuntime);

  // Flip one byte of an artifact the audited lineage depends on.
  const auto checks = json::parse(slurp(out / "audit.json"))["artifact_checks"];
  ASSERT_FALSE(checks.empty());
  const auto victim = out / "artifacts" / (checks.back()["content_hash"].get<std::string>() + ".model");
  ASSERT_TRUE(fs::exists(victim));
  auto bytes = slurp(victim);
  bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x40);
  spit(victim, bytes);
  auto tampered = invoke({"audit", "--ledger", ledger, "--artifacts", artifacts});
  EXPECT_EQ(tampered.code, cli::kExitViolation);
  EXPECT_NE(tampered.out.find("hash_mismatch"), std::string::npos) << tampered.out;
  EXPECT_NE(tampered.out.find("audit found violations: artifact_integrity"), std::string::npos) << tampered.out;
}

TEST(Cli, ConsensusBenchIsDeterministicAndReportsStalls) {
  auto dir = scratch("bench");
  auto cfg = write_bench_config(dir, {{"committee_size", 3}, {"blocks", 20}});
  auto a = invoke({"consensus-bench", "--config", cfg.string(), "--out", (dir / "a").string()});
  auto b = invoke({"consensus-bench", "--config", cfg.string(), "--out", (dir / "b").string()});
  ASSERT_EQ(a.code, cli::kExitOk) << a.err;
  ASSERT_EQ(b.code, cli::kExitOk) << b.err;
  EXPECT_EQ(slurp(dir / "a" / "consensus_latency.csv"), slurp(dir / "b" / "consensus_latency.csv"));
  const auto rows = lines_of(dir / "a" / "consensus_latency.csv");
  EXPECT_EQ(rows.size(), 1u + 3u * 20u);  // default modes 1, 2 and 3 of 3
  EXPECT_EQ(rows[0], "block_index,quorum_mode,latency_s,stalled");
  EXPECT_EQ(json::parse(slurp(dir / "a" / "throughput.json")).size(), 3u);

  auto stall_cfg = write_bench_config(dir, {{"committee_size", 3},
                                            {"blocks", 10},
                                            {"modes", {{{"mode", "fixed_q"}, {"q", 3}}}},
                                            {"faults", {{"validator-2", {{"kind", "offline"}}}}}});
  auto s = invoke({"consensus-bench", "--config", stall_cfg.string(), "--out", (dir / "s").string()});
  ASSERT_EQ(s.code, cli::kExitOk) << s.err;
  const auto stalled = lines_of(dir / "s" / "consensus_latency.csv");
  ASSERT_EQ(stalled.size(), 11u);
  for (std::size_t i = 1; i < stalled.size(); ++i) EXPECT_EQ(stalled[i].substr(stalled[i].size() - 2), ",1");
}

TEST(Cli, ReportSummarizesRuns) {
  const auto out = simulated("report");
  auto dir = out.parent_path();
  auto r = invoke({"report", "--input", out.string(), "--out", (dir / "summary").string(), "--target", "0.0"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const auto rows = lines_of(dir / "summary" / "summary.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], "run,mode,rounds,final_accuracy,final_loss,minutes_to_target");
  EXPECT_NE(rows[1].find(",multi_vendor,3,"), std::string::npos) << rows[1];
  EXPECT_EQ(rows[1].substr(rows[1].rfind(',') + 1), "5.0");  // target 0 is met in round 1 (300 s)
  EXPECT_EQ(invoke({"report", "--input", (dir / "nothing").string(), "--out", (dir / "s2").string()}).code,
            cli::kExitRuntime);
}
