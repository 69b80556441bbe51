#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "orbitchain/aggregation.hpp"
#include "orbitchain/common.hpp"
#include "orbitchain/consensus.hpp"
#include "orbitchain/fl.hpp"
#include "orbitchain/net.hpp"
#include "orbitchain/orbit.hpp"

namespace orbitchain::scenario {

enum class PartitionStyle { iid, label_skew };

struct PartitionSpec {
  PartitionStyle style = PartitionStyle::iid;
  std::size_t classes_per_satellite = 0;  // label_skew only
  std::size_t n_classes = 0;
  std::size_t samples_per_satellite = 0;
  std::size_t feature_dim = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Gaussian blobs: class c draws x ~ N(mean_c, cluster_std^2 I).
struct TaskSpec {
  std::size_t n_classes = 6;
  std::size_t feature_dim = 8;
  std::size_t samples_per_satellite = 100;
  double separation = 3.0;  // norm of every class mean
  double cluster_std = 1.0;

  void validate() const;
};

struct ConstellationSpec {
  int planes = 3;
  int sats_per_plane = 4;
  double altitude_km = 550.0;
  double inclination_deg = 53.0;
  double raan_offset_deg = 0.0;
  double phase_offset_deg = 0.0;
};

struct VendorSpec {
  std::string vendor_id;
  ConstellationSpec constellation;
  std::vector<orbit::ObserverSpec> haps;
  std::vector<orbit::ObserverSpec> ground_stations;
  PartitionStyle partition = PartitionStyle::iid;
  std::size_t classes_per_satellite = 0;
  double bandwidth_bps = 1e6;
  fl::SealScheme seal_scheme = fl::SealScheme::additive_mask;

  /// Satellites with the plane RAAN and in-plane phase offsets applied.
  std::vector<orbit::SatelliteSpec> satellites() const;
};

enum class SatelliteFaultKind { tampered, forged, replay };

const char* to_string(SatelliteFaultKind k) noexcept;

struct SatelliteFault {
  std::string sat_id;
  SatelliteFaultKind kind = SatelliteFaultKind::tampered;
  std::vector<std::uint64_t> rounds;  // empty: every round

  bool active(std::uint64_t round) const;
};

enum class Mode { single_vendor, multi_vendor };

struct BenchSpec {
  std::vector<consensus::QuorumConfig> modes;
  std::size_t committee_size = 5;
  std::size_t blocks = 1000;
  std::size_t tx_batch = 1;
  double window_s = 0.0;
  consensus::FaultPlan faults;  // keyed validator-<i>
};

struct ScenarioConfig {
  std::uint64_t seed = 1;
  std::uint64_t rounds = 10;
  double slack_time_s = 600.0;
  Mode mode = Mode::multi_vendor;
  std::string single_vendor_id;
  double theta_min_deg = 10.0;
  double step_s = orbit::kDefaultStepS;
  double train_time_s = 120.0;
  bool always_visible = false;
  double target_accuracy = 0.85;
  TaskSpec task;
  std::vector<VendorSpec> vendors;
  json quorum = {{"mode", "two_thirds"}};
  agg::WeightConfig weights;
  fl::TrainConfig train;
  net::Transport transport = net::Transport::sim;
  net::NetworkProfile network{0.005, 0.002, 0.0, 0};
  double processing_s = 0.001;
  double timeout_s = 0.0;
  consensus::FaultPlan validator_faults;
  std::vector<SatelliteFault> satellite_faults;
  BenchSpec bench;

  void validate() const;
  /// "multi_vendor" or "single_vendor:<id>".
  std::string mode_label() const;
  std::vector<std::string> hap_ids() const;
  const VendorSpec& vendor(const std::string& id) const;
  bool participates(const std::string& vendor_id) const;
  consensus::QuorumConfig quorum_config() const;
};

/// Parses and validates; errors are config errors naming the field path.
ScenarioConfig parse_config(const json& doc);
json load_config_document(const std::filesystem::path& path);

/// Applies `a.b.0.c=value` to the document. The value is read as JSON when
/// it parses, otherwise as a string. Intermediate path segments must exist.
void apply_override(json& doc, const std::string& assignment);

}  // namespace orbitchain::scenario
