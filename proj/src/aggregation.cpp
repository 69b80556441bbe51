#include "orbitchain/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace orbitchain::agg {

double ReputationTable::at(const SatKey& key) const {
  auto it = scores.find(key);
  if (it == scores.end())
    fail(ErrorKind::registry, "no reputation entry for " + key.first + "/" + key.second);
  return it->second;
}

void WeightConfig::validate() const {
  if (!std::isfinite(lambda_decay) || lambda_decay < 0.0)
    fail(ErrorKind::config, "weights.lambda_decay must be finite and >= 0");
  if (!quantizer.identity() && quantizer.levels < 2)
    fail(ErrorKind::config, "weights.quantizer_levels must be 0 (identity) or >= 2");
}

double decay(std::uint64_t age, double lambda) {
  return std::exp(-lambda * static_cast<double>(age));
}

std::vector<double> satellite_weights(std::span<const fl::UpdateMetadata> updates,
                                      const ReputationTable& rep, const AgeRecord& ages,
                                      const WeightConfig& cfg) {
  if (updates.empty()) fail(ErrorKind::precondition, "satellite_weights needs a non-empty set");
  std::vector<double> mass(updates.size());
  for (std::size_t k = 0; k < updates.size(); ++k) {
    SatKey key{updates[k].vendor_id, updates[k].sat_id};
    auto age = ages.ages.find(key);
    if (age == ages.ages.end())
      fail(ErrorKind::precondition, "no age record for " + key.first + "/" + key.second);
    mass[k] = static_cast<double>(updates[k].data_size) * rep.at(key) *
              decay(age->second, cfg.lambda_decay);
  }
  const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
  if (!(total > 0.0)) fail(ErrorKind::degenerate, "satellite weights have zero total mass");
  for (double& m : mass) m /= total;
  return mass;
}

HapAggregate hap_aggregate(const std::string& hap_id, std::uint64_t round,
                           std::span<const CommittedUpdate> updates, std::span<const double> alphas,
                           const fl::Unsealer& unsealer, const WeightConfig& cfg,
                           const CommitCheck& is_committed) {
  if (updates.empty()) fail(ErrorKind::precondition, "hap_aggregate needs at least one update");
  if (updates.size() != alphas.size())
    fail(ErrorKind::precondition, "hap_aggregate: updates and alphas differ in length");

  std::vector<std::size_t> order(updates.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return updates[a].token.value < updates[b].token.value;
  });

  HapAggregate out;
  out.hap_id = hap_id;
  out.round = round;
  std::vector<double> acc;
  for (std::size_t k : order) {
    const auto& u = updates[k];
    if (is_committed && !is_committed(u.token))
      fail(ErrorKind::provenance, "update " + u.token.hex() + " is not committed on-chain");
    fl::ModelVector plain;
    try {
      plain = unsealer.unseal(u.sealed);
    } catch (const Error& e) {
      fail(ErrorKind::crypto, "unseal failed for token " + u.token.hex() + ": " + e.what());
    }
    plain = fl::quantize(plain, cfg.quantizer);
    if (acc.empty()) acc.assign(plain.dim(), 0.0);
    if (plain.dim() != acc.size())
      fail(ErrorKind::shape, "update " + u.token.hex() + " has mismatched dim");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += alphas[k] * plain.values[i];
    out.contributors.push_back(u.token);
    out.alphas.push_back(alphas[k]);
    out.participating_mass += static_cast<double>(u.sealed.metadata.data_size) *
                              decay(u.sealed.metadata.age(), cfg.lambda_decay);
  }
  out.model = fl::ModelVector(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out.model.values[i] = static_cast<float>(acc[i]);
  return out;
}

std::vector<double> hap_weights(std::span<const HapAggregate> aggregates) {
  if (aggregates.empty()) fail(ErrorKind::precondition, "hap_weights needs at least one aggregate");
  double total = 0.0;
  for (const auto& a : aggregates) {
    if (!(a.participating_mass > 0.0))
      fail(ErrorKind::precondition, "aggregate of " + a.hap_id + " has non-positive mass");
    total += a.participating_mass;
  }
  std::vector<double> beta;
  beta.reserve(aggregates.size());
  for (const auto& a : aggregates) beta.push_back(a.participating_mass / total);
  return beta;
}

fl::ModelVector global_fuse(std::span<const HapAggregate> aggregates, std::span<const double> betas) {
  if (aggregates.empty()) fail(ErrorKind::precondition, "global_fuse needs at least one aggregate");
  if (aggregates.size() != betas.size())
    fail(ErrorKind::precondition, "global_fuse: aggregates and betas differ in length");
  const auto round = aggregates.front().round;
  const auto dim = aggregates.front().model.dim();
  for (const auto& a : aggregates) {
    if (a.round != round)
      fail(ErrorKind::staleness, "aggregate of " + a.hap_id + " is from round " +
                                     std::to_string(a.round) + ", expected " + std::to_string(round));
    if (a.model.dim() != dim) fail(ErrorKind::shape, "aggregate of " + a.hap_id + " has mismatched dim");
  }
  std::vector<std::size_t> order(aggregates.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return aggregates[a].hap_id < aggregates[b].hap_id; });
  std::vector<double> acc(dim, 0.0);
  for (std::size_t h : order)
    for (std::size_t i = 0; i < dim; ++i) acc[i] += betas[h] * aggregates[h].model.values[i];
  fl::ModelVector out(dim);
  for (std::size_t i = 0; i < dim; ++i) out.values[i] = static_cast<float>(acc[i]);
  return out;
}

ReputationTable update_reputation(const ReputationTable& rep,
                                  std::span<const ValidationOutcome> round_events) {
  ReputationTable next = rep;
  for (const auto& ev : round_events) {
    auto it = next.scores.find(ev.sat);
    if (it == next.scores.end())
      fail(ErrorKind::registry, "reputation update for unknown satellite " + ev.sat.first + "/" +
                                    ev.sat.second);
    if (ev.outcome == Outcome::accepted)
      it->second = std::min(1.0, it->second * kReputationGain);
    else
      it->second = std::max(kReputationFloor, it->second * kReputationPenalty);
  }
  return next;
}

}  // namespace orbitchain::agg
