#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "orbitchain/crypto.hpp"
#include "orbitchain/fl.hpp"

namespace orbitchain::agg {

using SatKey = std::pair<std::string, std::string>;  // (vendor_id, sat_id)

inline constexpr double kDefaultLambda = 0.1;
inline constexpr double kReputationGain = 1.05;
inline constexpr double kReputationPenalty = 0.5;
inline constexpr double kReputationFloor = 1e-3;

struct ReputationTable {
  std::map<SatKey, double> scores;

  double at(const SatKey& key) const;
};

struct AgeRecord {
  std::map<SatKey, std::uint64_t> ages;
};

struct WeightConfig {
  double lambda_decay = kDefaultLambda;
  fl::QuantizerConfig quantizer;

  void validate() const;
};

double decay(std::uint64_t age, double lambda);

/// alpha_k = |D_k| r_k decay(a_k) / sum over the set.
std::vector<double> satellite_weights(std::span<const fl::UpdateMetadata> updates,
                                      const ReputationTable& rep, const AgeRecord& ages,
                                      const WeightConfig& cfg);

/// An update that reached a HAP together with its on-chain token.
struct CommittedUpdate {
  fl::SealedUpdate sealed;
  crypto::ContributionToken token;
};

struct HapAggregate {
  std::string hap_id;
  std::uint64_t round = 0;
  fl::ModelVector model;
  std::vector<crypto::ContributionToken> contributors;
  std::vector<double> alphas;  // aligned with contributors
  double participating_mass = 0.0;
};

using CommitCheck = std::function<bool(const crypto::ContributionToken&)>;

/// theta_h = sum alpha_k Q(unseal(C_k)), summed in ascending token order.
/// `alphas` is aligned with `updates` as given; `is_committed` guards against
/// aggregating anything the ledger has not finalized.
HapAggregate hap_aggregate(const std::string& hap_id, std::uint64_t round,
                           std::span<const CommittedUpdate> updates, std::span<const double> alphas,
                           const fl::Unsealer& unsealer, const WeightConfig& cfg,
                           const CommitCheck& is_committed);

std::vector<double> hap_weights(std::span<const HapAggregate> aggregates);

/// theta = sum beta_h theta_h in ascending hap_id order.
fl::ModelVector global_fuse(std::span<const HapAggregate> aggregates, std::span<const double> betas);

enum class Outcome { accepted, rejected };

struct ValidationOutcome {
  SatKey sat;
  Outcome outcome = Outcome::accepted;
  std::string reason;
};

ReputationTable update_reputation(const ReputationTable& rep,
                                  std::span<const ValidationOutcome> round_events);

}  // namespace orbitchain::agg
