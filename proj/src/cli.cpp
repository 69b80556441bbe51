#include "orbitchain/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "orbitchain/ledger.hpp"
#include "orbitchain/net.hpp"
#include "orbitchain/orchestrator.hpp"
#include "orbitchain/scenario.hpp"

namespace orbitchain::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::vector<std::string> overrides;
  std::string transport;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Scenario config (JSON)")->required();
  cmd->add_option("--out", c.out, "Output directory")->required();
  cmd->add_option("--override", c.overrides, "Dotted key=value applied to the config (repeatable)");
  cmd->add_option("--transport", c.transport, "Consensus transport")->check(CLI::IsMember({"sim", "service"}));
  cmd->add_option("--seed", c.seed, "Scenario seed");
}

/// Loads the document, applies overrides and flags, returns (resolved doc, config).
std::pair<json, scenario::ScenarioConfig> load(const Common& c) {
  if (!fs::exists(c.config)) fail(ErrorKind::config, c.config + ": config file does not exist");
  json doc = scenario::load_config_document(c.config);
  for (const auto& o : c.overrides) scenario::apply_override(doc, o);
  if (!c.transport.empty()) doc["transport"] = c.transport;
  if (c.seed) doc["seed"] = *c.seed;
  auto cfg = scenario::parse_config(doc);
  return {doc, cfg};
}

fs::path make_out(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) fail(ErrorKind::config, dir + ": cannot create output directory");
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
}

int simulate(const Common& c, std::ostream& out) {
  auto [doc, cfg] = load(c);
  const auto dir = make_out(c.out);
  write_text(dir / "scenario.json", doc.dump(2) + "\n");
  auto report = orch::run_simulation(cfg, {dir});
  const auto& last = report.rounds.back();
  out << "mode " << report.mode << ": " << report.rounds.size() << " rounds, final accuracy "
      << fmt_real(last.eval.accuracy) << ", loss " << fmt_real(last.eval.loss);
  if (auto m = report.minutes_to_target()) out << ", target reached at " << fmt_real(*m) << " min";
  else out << ", target " << fmt_real(report.target_accuracy) << " not reached";
  out << "\nledger head " << report.chain->head_hash().hex() << " (" << report.chain->blocks().size()
      << " blocks)\n";
  return kExitOk;
}

int bench(const Common& c, std::ostream& out) {
  auto [doc, cfg] = load(c);
  const auto dir = make_out(c.out);
  auto modes = cfg.bench.modes;
  if (modes.empty())
    for (std::size_t q : {std::size_t{1}, (cfg.bench.committee_size + 1) / 2, cfg.bench.committee_size})
      modes.push_back(consensus::QuorumConfig::fixed(cfg.bench.committee_size, q));
  std::vector<net::BenchmarkReport> reports;
  json throughput = json::array();
  for (const auto& q : modes) {
    net::BenchmarkOptions o;
    o.transport = cfg.transport;
    o.committee_size = cfg.bench.committee_size;
    o.quorum = q;
    o.block_count = cfg.bench.blocks;
    o.tx_batch = cfg.bench.tx_batch;
    o.window_s = cfg.bench.window_s;
    o.faults = cfg.bench.faults;
    o.network = cfg.network;
    o.processing_s = cfg.processing_s;
    o.seed = derive_seed(cfg.seed, "bench:" + q.label());
    o.ledger_dir = dir / "ledgers" / q.label();
    fs::create_directories(*o.ledger_dir);
    auto rep = net::measure_benchmark(o);
    out << rep.mode << ": " << rep.blocks << " blocks, " << rep.stalls << " stalls, mean latency "
        << fmt_real(rep.mean_latency_s) << " s, " << fmt_real(rep.tx_per_s) << " tx/s\n";
    throughput.push_back(rep.throughput_json());
    reports.push_back(std::move(rep));
  }
  net::write_benchmark_csv(dir / "consensus_latency.csv", reports);
  write_text(dir / "throughput.json", throughput.dump(2) + "\n");
  return kExitOk;
}

void print_lineage(std::ostream& out, const ledger::LineageNode& n, int depth) {
  out << std::string(static_cast<std::size_t>(depth) * 2, ' ') << ledger::to_string(n.event.kind) << ' '
      << (n.event.token ? n.event.token->hex() : std::string("-")) << " round " << n.event.round << " block "
      << n.where.block << " emitter " << n.event.emitter_id;
  if (n.event.kind == ledger::EventKind::Commit) out << " sat " << ledger::commit_payload(n.event).meta.sat_id;
  out << '\n';
  for (const auto& c : n.children) print_lineage(out, c, depth + 1);
}

void print_problems(std::ostream& err, const ledger::ChainVerification& v) {
  for (const auto& p : v.problems) err << "block " << p.block_index << ": " << p.problem << '\n';
}

int audit(const std::string& ledger_path, const std::string& artifacts, const std::string& token_hex,
          const std::string& out_path, std::ostream& out, std::ostream& err) {
  auto v = ledger::verify_chain_file(ledger_path);
  if (!v.valid) {
    err << "ledger " << ledger_path << " failed verification\n";
    print_problems(err, v);
    return kExitViolation;
  }
  const auto& chain = *v.chain;
  crypto::Digest token;
  if (token_hex.empty()) {
    bool found = false;
    for (const auto& b : chain.blocks())
      for (const auto& ev : b.events)
        if (ev.kind == ledger::EventKind::GlobalAgg) {
          token = ev.token->value;
          found = true;
        }
    if (!found) fail(ErrorKind::not_found, "ledger holds no GlobalAgg event");
  } else {
    token = crypto::Digest::from_hex(token_hex);
  }
  ledger::DirectoryArtifactStore store(artifacts);
  const auto tree = ledger::audit_trace(chain, token);
  const auto rep = ledger::audit_verify(chain, token, store);
  print_lineage(out, tree, 0);
  for (const auto& g : rep.guarantees) {
    out << g.name << ": " << (g.holds ? "holds" : "VIOLATED") << '\n';
    for (const auto& x : g.violations) out << "  " << x.token << ' ' << x.detail << '\n';
  }
  std::size_t ok = 0;
  for (const auto& a : rep.artifact_checks) {
    if (a.status == "ok") ++ok;
    else out << "  artifact " << a.kind << ' ' << a.token << ' ' << a.content_hash << ": " << a.status << '\n';
  }
  out << ledger::kArtifactIntegrity << ": " << ok << "/" << rep.artifact_checks.size() << " artifacts ok\n";
  if (!out_path.empty()) {
    json j = rep.to_json();
    j["lineage"] = ledger::lineage_to_json(tree);
    write_text(out_path, j.dump(2) + "\n");
  }
  const auto bad = rep.violated();
  if (bad.empty()) {
    out << "audit clean: 0 violations\n";
    return kExitOk;
  }
  out << "audit found violations:";
  for (const auto& b : bad) out << ' ' << b;
  out << '\n';
  return kExitViolation;
}

int verify(const std::string& ledger_path, const std::string& artifacts, std::ostream& out, std::ostream& err) {
  ledger::ValidationOptions opts;
  std::optional<ledger::DirectoryArtifactStore> store;
  if (!artifacts.empty()) {
    store.emplace(artifacts);
    opts.artifacts = store->resolver();
  }
  auto v = ledger::verify_chain_file(ledger_path, opts);
  if (!v.valid) {
    out << "invalid: " << v.problems.size() << " problem(s), first at block "
        << (v.problems.empty() ? 0 : v.problems.front().block_index) << '\n';
    print_problems(err, v);
    return kExitViolation;
  }
  out << "valid: " << v.blocks_read << " blocks, head " << v.head_hash->hex() << '\n';
  return kExitOk;
}

struct CsvRow {
  std::uint64_t round;
  double minutes;
  std::string mode;
  double accuracy;
  double loss;
};

std::vector<CsvRow> read_convergence(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "round,sim_minutes,mode,accuracy,loss") fail(ErrorKind::format, path.string() + ": unexpected header");
  std::vector<CsvRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[5];
    for (auto& x : f) std::getline(ss, x, ',');
    try {
      rows.push_back({std::stoull(f[0]), std::stod(f[1]), f[2], std::stod(f[3]), std::stod(f[4])});
    } catch (const std::exception&) {
      fail(ErrorKind::format, path.string() + ": malformed row '" + line + "'");
    }
  }
  return rows;
}

int report(const std::vector<std::string>& inputs, const std::string& out_dir, double target, std::ostream& out) {
  const auto dir = make_out(out_dir);
  std::ostringstream csv;
  csv << "run,mode,rounds,final_accuracy,final_loss,minutes_to_target\n";
  out << "run | mode | rounds | final accuracy | minutes to " << fmt_real(target) << '\n';
  for (const auto& in : inputs) {
    const auto rows = read_convergence(fs::path(in) / "convergence.csv");
    if (rows.empty()) fail(ErrorKind::format, in + ": convergence.csv has no rows");
    std::string minutes;
    for (const auto& r : rows)
      if (r.accuracy >= target) {
        minutes = fmt_real(r.minutes);
        break;
      }
    const auto& last = rows.back();
    csv << in << ',' << last.mode << ',' << rows.size() << ',' << fmt_real(last.accuracy) << ','
        << fmt_real(last.loss) << ',' << minutes << '\n';
    out << in << " | " << last.mode << " | " << rows.size() << " | " << fmt_real(last.accuracy) << " | "
        << (minutes.empty() ? "not reached" : minutes) << '\n';
  }
  write_text(dir / "summary.csv", csv.str());
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Blockchain-anchored multi-vendor federated satellite learning simulator"};
  app.require_subcommand(1);

  Common sim_args, bench_args;
  add_common(app.add_subcommand("simulate", "Run a scenario and write the report files"), sim_args);
  add_common(app.add_subcommand("consensus-bench", "Measure consensus latency and throughput per quorum mode"),
             bench_args);

  std::string ledger_path, artifacts, token, audit_out;
  auto* audit_cmd = app.add_subcommand("audit", "Trace a global model token and check its guarantees");
  audit_cmd->add_option("--ledger", ledger_path, "Ledger file")->required();
  audit_cmd->add_option("--artifacts", artifacts, "Artifact directory")->required();
  audit_cmd->add_option("--token", token, "Global token hex (default: the last GlobalAgg)");
  audit_cmd->add_option("--out", audit_out, "Write the audit report JSON here");

  std::string verify_ledger, verify_artifacts;
  auto* verify_cmd = app.add_subcommand("verify-chain", "Replay a ledger file from genesis");
  verify_cmd->add_option("--ledger", verify_ledger, "Ledger file")->required();
  verify_cmd->add_option("--artifacts", verify_artifacts, "Artifact directory for Commit signature checks");

  std::vector<std::string> inputs;
  std::string report_out;
  double target = 0.85;
  auto* report_cmd = app.add_subcommand("report", "Summarize simulation output directories");
  report_cmd->add_option("--input", inputs, "Simulation output directory (repeatable)")->required();
  report_cmd->add_option("--out", report_out, "Output directory")->required();
  report_cmd->add_option("--target", target, "Target accuracy")->check(CLI::Range(0.0, 1.0));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (app.got_subcommand("simulate")) return simulate(sim_args, out);
    if (app.got_subcommand("consensus-bench")) return bench(bench_args, out);
    if (app.got_subcommand("audit")) return audit(ledger_path, artifacts, token, audit_out, out, err);
    if (app.got_subcommand("verify-chain")) return verify(verify_ledger, verify_artifacts, out, err);
    if (app.got_subcommand("report")) return report(inputs, report_out, target, out);
  } catch (const Error& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return e.kind() == ErrorKind::config ? kExitConfig : kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace orbitchain::cli
