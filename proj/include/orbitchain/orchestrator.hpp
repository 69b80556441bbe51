#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "orbitchain/aggregation.hpp"
#include "orbitchain/consensus.hpp"
#include "orbitchain/fl.hpp"
#include "orbitchain/ledger.hpp"
#include "orbitchain/net.hpp"
#include "orbitchain/orbit.hpp"
#include "orbitchain/scenario.hpp"

namespace orbitchain::orch {

using scenario::PartitionSpec;
using scenario::ScenarioConfig;

/// Fixed class means for the synthetic Gaussian-blob task.
struct BlobTask {
  std::size_t n_classes = 0;
  std::size_t feature_dim = 0;
  std::vector<std::vector<double>> means;
  double cluster_std = 1.0;
};

BlobTask make_blob_task(const scenario::TaskSpec& spec, std::uint64_t seed);

/// `labels` drawn in order, features sampled from the task under `seed`.
fl::Dataset sample_blobs(const BlobTask& task, const std::vector<int>& labels, std::uint64_t seed);

/// Classes held by satellite `index` under label skew: a round-robin run of
/// `classes_per_satellite` classes starting at index * classes_per_satellite.
std::vector<int> skew_classes(std::size_t index, std::size_t classes_per_satellite, std::size_t n_classes);

/// One dataset per satellite, keyed by sat_id and deterministic per `spec.seed`.
std::map<std::string, fl::Dataset> partition_dataset(const PartitionSpec& spec, const BlobTask& task,
                                                     std::span<const orbit::SatelliteSpec> satellites);

/// Held-out set over all classes uniformly.
fl::Dataset make_holdout(const BlobTask& task, std::size_t n_samples, std::uint64_t seed);

struct Evaluation {
  double accuracy = 0.0;
  double loss = 0.0;
};

Evaluation evaluate(const fl::ModelVector& model, const fl::Dataset& holdout);

/// Per-(satellite, fetch round) local training seed.
std::uint64_t training_seed(std::uint64_t scenario_seed, const std::string& sat_id, std::uint64_t fetch_round);

// ---------------------------------------------------------------------------

struct RoundState {
  std::uint64_t round = 1;
  fl::ModelVector global_model;
  std::map<std::string, std::vector<std::string>> visible_sets;  // hap_id -> sat_ids
  std::map<std::string, std::vector<agg::CommittedUpdate>> collected;
  std::vector<agg::HapAggregate> hap_aggregates;
  agg::AgeRecord ages;
  agg::ReputationTable reputation;
};

struct UploadRecord {
  std::uint64_t round = 0;
  std::string sat_id;
  std::string hap_id;
  double time_s = 0.0;
  std::int64_t bytes = 0;
  std::int64_t capacity_bytes = 0;
  std::string outcome;  // committed | oversize | rejected | late
  std::string reason;
};

struct WeightAuditRow {
  std::uint64_t round = 0;
  std::string hap_id;
  std::string vendor_id;
  std::string sat_id;
  std::uint64_t data_size = 0;
  double reputation = 0.0;
  std::uint64_t age = 0;
  double alpha = 0.0;
};

struct FusionRow {
  std::uint64_t round = 0;
  std::string hap_id;
  double mass = 0.0;
  double beta = 0.0;
};

struct RoundRecord {
  std::uint64_t round = 0;
  double sim_minutes = 0.0;
  Evaluation eval;
  std::size_t committed = 0;
  std::size_t rejected = 0;
  std::size_t oversize = 0;
  bool empty = false;
  bool aborted = false;
  std::optional<crypto::ContributionToken> global_token;
};

struct SimulationReport {
  std::string mode;
  double target_accuracy = 0.0;
  std::vector<RoundRecord> rounds;
  std::vector<fl::ModelVector> models;  // models[t] = global model after round t; models[0] initial
  std::vector<consensus::BlockRecord> consensus;
  std::vector<UploadRecord> uploads;
  std::vector<WeightAuditRow> weight_audit;
  std::vector<FusionRow> fusion;
  std::optional<ledger::Chain> chain;
  consensus::QuorumConfig quorum;

  /// Simulated minutes at the first round reaching the target accuracy.
  std::optional<double> minutes_to_target() const;
  std::optional<crypto::ContributionToken> final_global_token() const;
  json ledger_stats() const;
};

struct SimulationOptions {
  /// Artifacts and validator ledgers land here when set; memory otherwise.
  std::optional<std::filesystem::path> out_dir;
};

/// Owns the subsystems for one scenario run: satellites and their data, the
/// contact plan, the artifact store, the unsealer and the consensus committee.
class Simulation {
 public:
  explicit Simulation(ScenarioConfig cfg, SimulationOptions opts = {});
  ~Simulation();

  const RoundState& state() const { return state_; }
  const ScenarioConfig& config() const { return cfg_; }
  const ledger::ArtifactStore& artifacts() const { return *store_; }
  const fl::Unsealer& unsealer() const { return unsealer_; }
  const consensus::Committee& committee() const { return *committee_; }
  const std::map<std::string, fl::Dataset>& datasets() const { return datasets_; }
  const fl::Dataset& holdout() const { return holdout_; }
  /// Contact windows per (sat_id, hap_id) over the whole horizon.
  const std::map<std::pair<std::string, std::string>, std::vector<orbit::ContactWindow>>& contacts() const {
    return contacts_;
  }
  const SimulationReport& report() const { return report_; }

  /// Runs the five stages for the current round and advances to the next.
  const RoundRecord& run_round();
  /// Runs every remaining round and returns the report (ledger snapshot included).
  SimulationReport run();

 private:
  struct Satellite;
  struct Upload;

  void build_contacts();
  std::optional<Upload> find_upload(const Satellite& sat, double ready_s, double t0, double t1) const;
  std::vector<std::pair<std::string, orbit::ContactWindow>> contacts_in(const Satellite& sat, double t0,
                                                                        double t1) const;
  fl::SealedUpdate seal(Satellite& sat, const fl::ModelVector& model, std::uint64_t fetch_round, double time_s);
  bool gate(const Satellite& sat, const fl::SealedUpdate& sealed, std::string& reason) const;

  ScenarioConfig cfg_;
  SimulationOptions opts_;
  BlobTask task_;
  std::vector<std::unique_ptr<Satellite>> sats_;
  std::map<std::string, fl::Dataset> datasets_;
  fl::Dataset holdout_;
  std::vector<std::string> haps_;       // participating, ascending
  std::vector<std::string> sinks_;      // participating ground stations, ascending
  std::map<std::string, const orbit::ObserverSpec*> hap_spec_;
  std::map<std::string, std::string> hap_vendor_;
  std::map<std::pair<std::string, std::string>, std::vector<orbit::ContactWindow>> contacts_;
  std::map<std::string, fl::SealingKey> vendor_keys_;
  std::unique_ptr<ledger::ArtifactStore> store_;
  fl::EscrowUnsealer unsealer_;
  std::unique_ptr<consensus::Committee> committee_;
  RoundState state_;
  SimulationReport report_;
};

SimulationReport run_simulation(const ScenarioConfig& cfg, const SimulationOptions& opts = {});

/// Writes convergence.csv, ledger_stats.json, consensus_latency.csv,
/// weight_audit.csv, fusion.csv, uploads.csv and ledger.jsonl into `dir`.
void write_report(const SimulationReport& report, const std::filesystem::path& dir);

/// Recomputes every round's global model from the ledger alone: PartialAgg
/// contributor sets and alphas over the stored ciphertexts, then GlobalAgg
/// betas. Keyed by round.
std::map<std::uint64_t, fl::ModelVector> replay_global_models(const ledger::Chain& chain,
                                                              const ledger::ArtifactStore& artifacts,
                                                              const fl::Unsealer& unsealer,
                                                              const agg::WeightConfig& weights);

}  // namespace orbitchain::orch
