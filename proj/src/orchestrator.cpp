#include "orbitchain/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <random>
#include <set>

namespace orbitchain::orch {

namespace {

template <class T>
T checked(const std::string& context, const std::function<T()>& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.kind(), context + ": " + e.what());
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  return out;
}

}  // namespace

BlobTask make_blob_task(const scenario::TaskSpec& spec, std::uint64_t seed) {
  spec.validate();
  BlobTask t;
  t.n_classes = spec.n_classes;
  t.feature_dim = spec.feature_dim;
  t.cluster_std = spec.cluster_std;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    std::vector<double> mean(spec.feature_dim);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& x : mean) {
        x = n01(rng);
        norm += x * x;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (auto& x : mean) x *= spec.separation / norm;
    t.means.push_back(std::move(mean));
  }
  return t;
}

fl::Dataset sample_blobs(const BlobTask& task, const std::vector<int>& labels, std::uint64_t seed) {
  fl::Dataset d;
  d.n_features = task.feature_dim;
  d.n_classes = task.n_classes;
  d.labels = labels;
  d.features.reserve(labels.size() * task.feature_dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= task.n_classes)
      fail(ErrorKind::precondition, "sample_blobs: label out of range");
    for (std::size_t j = 0; j < task.feature_dim; ++j)
      d.features.push_back(task.means[static_cast<std::size_t>(y)][j] + task.cluster_std * n01(rng));
  }
  return d;
}

std::vector<int> skew_classes(std::size_t index, std::size_t classes_per_satellite, std::size_t n_classes) {
  std::vector<int> out;
  for (std::size_t j = 0; j < classes_per_satellite; ++j)
    out.push_back(static_cast<int>((index * classes_per_satellite + j) % n_classes));
  return out;
}

std::map<std::string, fl::Dataset> partition_dataset(const PartitionSpec& spec, const BlobTask& task,
                                                     std::span<const orbit::SatelliteSpec> satellites) {
  spec.validate();
  if (satellites.empty()) fail(ErrorKind::precondition, "partition_dataset needs at least one satellite");
  if (spec.n_classes != task.n_classes || spec.feature_dim != task.feature_dim)
    fail(ErrorKind::config, "partition: n_classes / feature_dim disagree with the task");
  if (spec.style == scenario::PartitionStyle::label_skew &&
      satellites.size() * spec.classes_per_satellite < spec.n_classes)
    fail(ErrorKind::config, "partition: infeasible class coverage with " + std::to_string(satellites.size()) +
                                " satellites x " + std::to_string(spec.classes_per_satellite) + " classes");
  std::map<std::string, fl::Dataset> out;
  for (std::size_t i = 0; i < satellites.size(); ++i) {
    const auto& sat = satellites[i];
    const auto seed = derive_seed(spec.seed, sat.sat_id);
    std::vector<int> labels(spec.samples_per_satellite);
    if (spec.style == scenario::PartitionStyle::iid) {
      std::mt19937_64 rng(derive_seed(seed, "labels"));
      std::uniform_int_distribution<int> pick(0, static_cast<int>(spec.n_classes) - 1);
      for (auto& y : labels) y = pick(rng);
    } else {
      const auto classes = skew_classes(i, spec.classes_per_satellite, spec.n_classes);
      for (std::size_t k = 0; k < labels.size(); ++k) labels[k] = classes[k % classes.size()];
    }
    auto d = sample_blobs(task, labels, derive_seed(seed, "features"));
    d.vendor_id = sat.vendor_id;
    d.sat_id = sat.sat_id;
    if (!out.emplace(sat.sat_id, std::move(d)).second)
      fail(ErrorKind::config, "partition: duplicate satellite '" + sat.sat_id + "'");
  }
  return out;
}

fl::Dataset make_holdout(const BlobTask& task, std::size_t n_samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(task.n_classes) - 1);
  std::vector<int> labels(n_samples);
  for (auto& y : labels) y = pick(rng);
  return sample_blobs(task, labels, derive_seed(seed, "features"));
}

Evaluation evaluate(const fl::ModelVector& model, const fl::Dataset& holdout) {
  holdout.validate();
  const auto pred = fl::predict(model, holdout);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == holdout.labels[i];
  return {static_cast<double>(hits) / static_cast<double>(holdout.size()), fl::local_loss(model, holdout)};
}

std::uint64_t training_seed(std::uint64_t scenario_seed, const std::string& sat_id, std::uint64_t fetch_round) {
  return derive_seed(scenario_seed, "train:" + sat_id + ":" + std::to_string(fetch_round));
}

// ---------------------------------------------------------------------------

struct Simulation::Satellite {
  struct Pending {
    fl::ModelVector model;
    std::uint64_t fetch_round = 0;
    double ready_s = 0.0;
  };

  orbit::SatelliteSpec spec;
  const scenario::VendorSpec* vendor = nullptr;
  const fl::Dataset* data = nullptr;
  bool participates = false;
  std::optional<Pending> pending;
  std::optional<fl::SealedUpdate> last_committed;
  crypto::KeyPair forger;

  agg::SatKey key() const { return {spec.vendor_id, spec.sat_id}; }
};

struct Simulation::Upload {
  std::string hap_id;
  double time_s = 0.0;
  double contact_end_s = 0.0;
};

Simulation::Simulation(ScenarioConfig cfg, SimulationOptions opts) : cfg_(std::move(cfg)), opts_(std::move(opts)) {
  cfg_.validate();
  task_ = make_blob_task(cfg_.task, derive_seed(cfg_.seed, "task"));
  const auto key_seed = derive_seed(cfg_.seed, "keys");

  std::vector<std::pair<std::string, crypto::Principal>> principals;
  std::map<std::string, std::string> validator_vendor;
  for (const auto& v : cfg_.vendors) {
    const auto sats = v.satellites();
    PartitionSpec p{v.partition, v.classes_per_satellite, cfg_.task.n_classes, cfg_.task.samples_per_satellite,
                    cfg_.task.feature_dim, derive_seed(cfg_.seed, "partition:" + v.vendor_id)};
    auto parts = checked<std::map<std::string, fl::Dataset>>("vendor " + v.vendor_id, [&] {
      return partition_dataset(p, task_, sats);
    });
    datasets_.merge(parts);

    auto key = fl::derive_sealing_key(key_seed, v.vendor_id);
    unsealer_.escrow(v.vendor_id, key.secret_seed);
    principals.push_back({v.vendor_id, {crypto::Role::vendor, key.signing.public_key, v.vendor_id}});
    vendor_keys_.emplace(v.vendor_id, std::move(key));

    const bool on = cfg_.participates(v.vendor_id);
    for (const auto& s : sats) {
      principals.push_back({s.sat_id, {crypto::Role::satellite, crypto::derive_keypair(key_seed, s.sat_id).public_key,
                                       v.vendor_id}});
      auto sat = std::make_unique<Satellite>();
      sat->spec = s;
      sat->vendor = &v;
      sat->participates = on;
      sat->forger = crypto::derive_keypair(derive_seed(key_seed, "forger"), s.sat_id);
      sats_.push_back(std::move(sat));
    }
    for (const auto& h : v.haps) {
      validator_vendor[h.observer_id] = v.vendor_id;
      hap_vendor_[h.observer_id] = v.vendor_id;
      // An offline HAP neither validates nor collects.
      auto fault = cfg_.validator_faults.find(h.observer_id);
      const bool offline = fault != cfg_.validator_faults.end() && !fault->second.responsive();
      if (on && !offline) {
        haps_.push_back(h.observer_id);
        hap_spec_[h.observer_id] = &h;
      }
    }
    if (on)
      for (const auto& g : v.ground_stations) sinks_.push_back(g.observer_id);
  }
  for (auto& s : sats_) s->data = &datasets_.at(s->spec.sat_id);
  std::sort(sats_.begin(), sats_.end(), [](const auto& a, const auto& b) { return a->key() < b->key(); });
  std::sort(haps_.begin(), haps_.end());
  std::sort(sinks_.begin(), sinks_.end());
  holdout_ = make_holdout(task_, 10 * cfg_.task.samples_per_satellite, derive_seed(cfg_.seed, "holdout"));

  if (opts_.out_dir) {
    std::filesystem::create_directories(*opts_.out_dir / "validators");
    store_ = std::make_unique<ledger::DirectoryArtifactStore>(*opts_.out_dir / "artifacts");
  } else {
    store_ = std::make_unique<ledger::MemoryArtifactStore>();
  }

  auto setup = net::make_committee_setup(cfg_.hap_ids(), derive_seed(cfg_.seed, "validators"), principals,
                                         validator_vendor);
  consensus::CommitteeOptions co;
  co.quorum = cfg_.quorum_config();
  co.faults = cfg_.validator_faults;
  co.processing_s = cfg_.processing_s;
  co.timeout_s = cfg_.timeout_s;
  co.validation.artifacts = store_->resolver();
  if (opts_.out_dir) co.ledger_dir = *opts_.out_dir / "validators";
  co.seed = derive_seed(cfg_.seed, "consensus");
  committee_ = net::make_committee(cfg_.transport, setup, co, cfg_.network);

  state_.round = 1;
  state_.global_model = fl::ModelVector(fl::softmax_dim(cfg_.task.feature_dim, cfg_.task.n_classes));
  for (const auto& s : sats_) state_.reputation.scores[s->key()] = 1.0;
  report_.mode = cfg_.mode_label();
  report_.target_accuracy = cfg_.target_accuracy;
  report_.quorum = co.quorum;
  report_.quorum.n_validators = setup.ids.size();
  report_.models.push_back(state_.global_model);
  build_contacts();
}

Simulation::~Simulation() = default;

void Simulation::build_contacts() {
  if (cfg_.always_visible) return;
  const double horizon = static_cast<double>(cfg_.rounds) * cfg_.slack_time_s;
  for (const auto& s : sats_) {
    if (!s->participates) continue;
    for (const auto& h : haps_)
      contacts_[{s->spec.sat_id, h}] = orbit::compute_contact_windows(
          s->spec, *hap_spec_.at(h), 0.0, horizon, cfg_.step_s, cfg_.theta_min_deg, s->vendor->bandwidth_bps);
  }
}

std::vector<std::pair<std::string, orbit::ContactWindow>> Simulation::contacts_in(const Satellite& sat, double t0,
                                                                                  double t1) const {
  std::vector<std::pair<std::string, orbit::ContactWindow>> out;
  for (const auto& h : haps_) {
    if (cfg_.always_visible) {
      out.push_back({h, {sat.spec.sat_id, h, t0, t1, t1 - t0, sat.vendor->bandwidth_bps}});
      continue;
    }
    for (const auto& w : contacts_.at({sat.spec.sat_id, h}))
      if (w.t_start_s < t1 && w.t_end_s >= t0) out.push_back({h, w});
  }
  return out;
}

std::optional<Simulation::Upload> Simulation::find_upload(const Satellite& sat, double ready_s, double t0,
                                                          double t1) const {
  const auto cs = contacts_in(sat, t0, t1);
  std::optional<double> earliest;
  for (const auto& [_, w] : cs) {
    const double u = std::max({w.t_start_s, ready_s, t0});
    if (u <= w.t_end_s && u < t1 && (!earliest || u < *earliest)) earliest = u;
  }
  if (!earliest) return std::nullopt;
  // Several HAPs may see the satellite: take the one with the longest remaining contact.
  std::optional<Upload> best;
  for (const auto& [h, w] : cs) {
    if (w.t_start_s > *earliest || w.t_end_s < *earliest) continue;
    if (!best || w.t_end_s > best->contact_end_s || (w.t_end_s == best->contact_end_s && h < best->hap_id))
      best = Upload{h, *earliest, w.t_end_s};
  }
  return best;
}

fl::SealedUpdate Simulation::seal(Satellite& sat, const fl::ModelVector& model, std::uint64_t fetch_round,
                                  double time_s) {
  fl::UpdateMetadata meta{sat.spec.vendor_id, sat.spec.sat_id, state_.round, sat.data->size(), fetch_round, time_s};
  auto sealed = fl::seal_update(model, meta, vendor_keys_.at(sat.spec.vendor_id), sat.vendor->seal_scheme);
  for (const auto& f : cfg_.satellite_faults) {
    if (f.sat_id != sat.spec.sat_id || !f.active(state_.round)) continue;
    switch (f.kind) {
      case scenario::SatelliteFaultKind::tampered:
        sealed.ciphertext[sealed.ciphertext.size() / 2] ^= 0x01;
        break;
      case scenario::SatelliteFaultKind::forged:
        sealed.signature = crypto::sign(sealed.signed_message(), sat.forger.secret_key);
        break;
      case scenario::SatelliteFaultKind::replay:
        if (sat.last_committed) sealed = *sat.last_committed;
        break;
    }
  }
  return sealed;
}

bool Simulation::gate(const Satellite& sat, const fl::SealedUpdate& sealed, std::string& reason) const {
  const auto& reg = committee_->reference_chain().registry();
  const auto* vendor = reg.find(sealed.metadata.vendor_id);
  const auto* s = reg.find(sealed.metadata.sat_id);
  if (!vendor || !s || s->vendor_id != sealed.metadata.vendor_id || sealed.metadata.sat_id != sat.spec.sat_id) {
    reason = "unregistered sender";
    return false;
  }
  if (!fl::verify_sealed(sealed, vendor->public_key)) {
    reason = "signature verification failed";
    return false;
  }
  const auto token = ledger::make_commit_event(sealed, "").token->value;
  if (!committee_->reference_chain().find(token).empty()) {
    reason = "token already on the ledger";
    return false;
  }
  for (const auto& [_, list] : state_.collected)
    for (const auto& u : list)
      if (u.token.value == token) {
        reason = "token already collected";
        return false;
      }
  return true;
}

const RoundRecord& Simulation::run_round() {
  if (state_.round > cfg_.rounds) fail(ErrorKind::precondition, "all configured rounds have run");
  const std::uint64_t t = state_.round;
  const double S = cfg_.slack_time_s;
  const double t0 = static_cast<double>(t - 1) * S, t1 = static_cast<double>(t) * S;
  RoundRecord rec;
  rec.round = t;
  rec.sim_minutes = t1 / 60.0;
  state_.visible_sets.clear();
  state_.collected.clear();
  state_.hap_aggregates.clear();
  std::vector<agg::ValidationOutcome> outcomes;
  std::vector<ledger::LedgerEvent> commits;
  std::map<crypto::Digest, const Satellite*> by_token;

  // Stage 2/3 upload attempt: capacity, slack window, gate, commit.
  auto attempt = [&](Satellite& sat, const fl::ModelVector& model, std::uint64_t fetch_round, const Upload& up) {
    auto sealed = seal(sat, model, fetch_round, up.time_s);
    UploadRecord u{t, sat.spec.sat_id, up.hap_id, up.time_s, 0, 0, "", ""};
    u.bytes = static_cast<std::int64_t>(sealed.ciphertext.size() + sealed.signature.size() +
                                        fl::canonical(sealed.metadata).size());
    u.capacity_bytes = orbit::capacity_bytes(sat.vendor->bandwidth_bps, up.contact_end_s - up.time_s);
    const double arrival = up.time_s + static_cast<double>(u.bytes) * 8.0 / sat.vendor->bandwidth_bps;
    std::string outcome;
    if (u.bytes > u.capacity_bytes) {
      u.outcome = "oversize";
      ++rec.oversize;
    } else if (arrival > t1) {
      u.outcome = "late";
    } else if (!gate(sat, sealed, u.reason)) {
      u.outcome = "rejected";
      ++rec.rejected;
      outcomes.push_back({sat.key(), agg::Outcome::rejected, u.reason});
    } else {
      u.outcome = "committed";
      store_->put(sealed.ciphertext);
      auto ev = ledger::make_commit_event(sealed, up.hap_id);
      by_token[ev.token->value] = &sat;
      state_.collected[up.hap_id].push_back({sealed, *ev.token});
      commits.push_back(std::move(ev));
      outcomes.push_back({sat.key(), agg::Outcome::accepted, ""});
      sat.last_committed = sealed;
    }
    outcome = u.outcome;
    report_.uploads.push_back(std::move(u));
    return outcome;
  };

  for (auto& sp : sats_) {
    auto& sat = *sp;
    if (!sat.participates) continue;
    const auto cs = contacts_in(sat, t0, t1);
    if (cs.empty()) continue;
    std::set<std::string> seen;
    for (const auto& [h, _] : cs)
      if (seen.insert(h).second) state_.visible_sets[h].push_back(sat.spec.sat_id);

    bool uploaded = false;
    double busy_until = t0;
    if (sat.pending) {
      if (auto up = find_upload(sat, sat.pending->ready_s, t0, t1)) {
        if (attempt(sat, sat.pending->model, sat.pending->fetch_round, *up) != "late") {
          sat.pending.reset();
          uploaded = true;
          busy_until = up->time_s;
        }
      }
    }
    if (sat.pending) continue;

    // Stage 1: fetch the current global model at the next contact.
    std::optional<double> fetch;
    for (const auto& [_, w] : cs) {
      const double f = std::max({w.t_start_s, busy_until, t0});
      if (f <= w.t_end_s && f < t1 && (!fetch || f < *fetch)) fetch = f;
    }
    if (!fetch) continue;
    fl::TrainConfig tc = cfg_.train;
    tc.rng_seed = training_seed(cfg_.seed, sat.spec.sat_id, t);
    auto trained = checked<fl::TrainReport>("round " + std::to_string(t) + " satellite " + sat.spec.sat_id,
                                            [&] { return fl::local_train(state_.global_model, *sat.data, tc); });
    Satellite::Pending next{std::move(trained.updated_model), t, *fetch + cfg_.train_time_s};
    if (!uploaded) {
      if (auto up = find_upload(sat, next.ready_s, t0, t1)) {
        if (attempt(sat, next.model, t, *up) != "late") continue;
      }
    }
    sat.pending = std::move(next);
  }
  rec.committed = commits.size();

  auto finish = [&]() -> const RoundRecord& {
    state_.reputation = agg::update_reputation(state_.reputation, outcomes);
    rec.eval = evaluate(state_.global_model, holdout_);
    report_.models.push_back(state_.global_model);
    report_.rounds.push_back(rec);
    ++state_.round;
    return report_.rounds.back();
  };

  if (commits.empty()) {
    rec.empty = true;
    return finish();
  }

  // Stage 3: the commit block.
  committee_->submit(commits);
  auto cb = committee_->finalize_next(t1);
  report_.consensus.push_back(cb);
  if (!cb.finalized()) {
    rec.aborted = true;
    return finish();
  }
  const auto& chain = committee_->reference_chain();
  auto is_committed = [&](const crypto::ContributionToken& tok) {
    for (const auto& loc : chain.find(tok.value))
      if (chain.event_at(loc).kind == ledger::EventKind::Commit) return true;
    return false;
  };

  // Stage 4: per-HAP weighting and aggregation.
  ledger::Mempool pool;
  std::vector<std::string> hap_ids;
  std::vector<crypto::ContributionToken> partial_tokens;
  std::vector<WeightAuditRow> audit;
  for (const auto& [hap, updates] : state_.collected) {
    std::vector<fl::UpdateMetadata> metas;
    for (const auto& u : updates) {
      metas.push_back(u.sealed.metadata);
      state_.ages.ages[{u.sealed.metadata.vendor_id, u.sealed.metadata.sat_id}] = u.sealed.metadata.age();
    }
    const auto alphas = agg::satellite_weights(metas, state_.reputation, state_.ages, cfg_.weights);
    auto a = agg::hap_aggregate(hap, t, updates, alphas, unsealer_, cfg_.weights, is_committed);
    for (std::size_t i = 0; i < a.contributors.size(); ++i) {
      const auto* sat = by_token.at(a.contributors[i].value);
      const auto age = state_.ages.ages.at(sat->key());
      audit.push_back({t, hap, sat->spec.vendor_id, sat->spec.sat_id, sat->data->size(),
                       state_.reputation.at(sat->key()), age, a.alphas[i]});
    }
    const auto model_hash = store_->put(fl::serialize(a.model));
    auto ev = ledger::emit_partial_agg(pool, chain,
                                       ledger::make_partial_agg_event(hap, hap_vendor_.at(hap), t, t1, a.contributors,
                                                                      a.alphas, model_hash));
    hap_ids.push_back(hap);
    partial_tokens.push_back(*ev.token);
    state_.hap_aggregates.push_back(std::move(a));
  }

  // Stage 5: cross-HAP fusion, then the aggregation block.
  const auto betas = agg::hap_weights(state_.hap_aggregates);
  auto fused = agg::global_fuse(state_.hap_aggregates, betas);
  const auto global_hash = store_->put(fl::serialize(fused));
  const std::string emitter = hap_ids.front();
  const std::string global_vendor = cfg_.mode == scenario::Mode::single_vendor ? cfg_.single_vendor_id : "";
  auto g = ledger::emit_global_agg(pool, chain,
                                   ledger::make_global_agg_event(emitter, global_vendor, t, t1, hap_ids,
                                                                 partial_tokens, betas, global_hash));
  for (const auto& gs : sinks_)
    ledger::emit_distribute(pool, chain,
                            ledger::make_distribute_event(emitter, t, t1, *g.token, gs, store_->uri_for(global_hash),
                                                          global_hash));
  committee_->submit(pool.ordered());
  auto ab = committee_->finalize_next(t1);
  report_.consensus.push_back(ab);
  if (!ab.finalized()) {
    rec.aborted = true;
    return finish();
  }
  state_.global_model = std::move(fused);
  rec.global_token = *g.token;
  report_.weight_audit.insert(report_.weight_audit.end(), audit.begin(), audit.end());
  for (std::size_t i = 0; i < hap_ids.size(); ++i)
    report_.fusion.push_back({t, hap_ids[i], state_.hap_aggregates[i].participating_mass, betas[i]});
  return finish();
}

SimulationReport Simulation::run() {
  while (state_.round <= cfg_.rounds) run_round();
  SimulationReport out = report_;
  out.chain.emplace(committee_->reference_chain());
  return out;
}

SimulationReport run_simulation(const ScenarioConfig& cfg, const SimulationOptions& opts) {
  Simulation sim(cfg, opts);
  auto report = sim.run();
  if (opts.out_dir) write_report(report, *opts.out_dir);
  return report;
}

// ---------------------------------------------------------------------------

std::optional<double> SimulationReport::minutes_to_target() const {
  for (const auto& r : rounds)
    if (r.eval.accuracy >= target_accuracy) return r.sim_minutes;
  return std::nullopt;
}

std::optional<crypto::ContributionToken> SimulationReport::final_global_token() const {
  for (auto it = rounds.rbegin(); it != rounds.rend(); ++it)
    if (it->global_token) return it->global_token;
  return std::nullopt;
}

json SimulationReport::ledger_stats() const {
  json j;
  j["mode"] = mode;
  j["rounds"] = rounds.size();
  std::size_t empty = 0, aborted = 0;
  for (const auto& r : rounds) {
    empty += r.empty;
    aborted += r.aborted;
  }
  j["empty_rounds"] = empty;
  j["aborted_rounds"] = aborted;
  json uploads_by = json::object();
  for (const auto& u : this->uploads) uploads_by[u.outcome] = uploads_by.value(u.outcome, 0) + 1;
  j["uploads"] = uploads_by;
  if (chain) {
    j["blocks"] = chain->blocks().size();
    j["head_hash"] = chain->head_hash().hex();
    json kinds = json::object();
    for (const auto& b : chain->blocks())
      for (const auto& ev : b.events) {
        const std::string k = ledger::to_string(ev.kind);
        kinds[k] = kinds.value(k, 0) + 1;
      }
    j["events"] = kinds;
  }
  std::size_t finalized = 0, stalls = 0;
  double latency = 0.0;
  for (const auto& c : consensus) {
    if (c.finalized()) {
      ++finalized;
      latency += c.latency_s();
    }
    stalls += c.stalled;
  }
  j["consensus"] = {{"quorum", quorum.label()},
                    {"finalized_blocks", finalized},
                    {"stalls", stalls},
                    {"mean_latency_s", finalized ? latency / static_cast<double>(finalized) : 0.0}};
  if (auto tok = final_global_token()) j["final_global_token"] = tok->hex();
  if (auto m = minutes_to_target()) j["minutes_to_target"] = *m;
  j["target_accuracy"] = target_accuracy;
  return j;
}

void write_report(const SimulationReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    auto out = open_out(dir / "convergence.csv");
    out << "round,sim_minutes,mode,accuracy,loss\n";
    for (const auto& r : report.rounds)
      out << r.round << ',' << fmt_real(r.sim_minutes) << ',' << report.mode << ',' << fmt_real(r.eval.accuracy)
          << ',' << fmt_real(r.eval.loss) << '\n';
  }
  {
    auto out = open_out(dir / "ledger_stats.json");
    out << report.ledger_stats().dump(2) << '\n';
  }
  consensus::write_trace_csv(dir / "consensus_latency.csv", report.consensus, report.quorum);
  {
    auto out = open_out(dir / "weight_audit.csv");
    out << "round,hap_id,vendor_id,sat_id,data_size,reputation,age,alpha\n";
    for (const auto& w : report.weight_audit)
      out << w.round << ',' << w.hap_id << ',' << w.vendor_id << ',' << w.sat_id << ',' << w.data_size << ','
          << fmt_real(w.reputation) << ',' << w.age << ',' << fmt_real(w.alpha) << '\n';
  }
  {
    auto out = open_out(dir / "fusion.csv");
    out << "round,hap_id,mass,beta\n";
    for (const auto& f : report.fusion)
      out << f.round << ',' << f.hap_id << ',' << fmt_real(f.mass) << ',' << fmt_real(f.beta) << '\n';
  }
  {
    auto out = open_out(dir / "uploads.csv");
    out << "round,sat_id,hap_id,time_s,bytes,capacity_bytes,outcome,reason\n";
    for (const auto& u : report.uploads)
      out << u.round << ',' << u.sat_id << ',' << u.hap_id << ',' << fmt_real(u.time_s) << ',' << u.bytes << ','
          << u.capacity_bytes << ',' << u.outcome << ',' << u.reason << '\n';
  }
  if (report.chain) report.chain->save(dir / "ledger.jsonl");
}

std::map<std::uint64_t, fl::ModelVector> replay_global_models(const ledger::Chain& chain,
                                                              const ledger::ArtifactStore& artifacts,
                                                              const fl::Unsealer& unsealer,
                                                              const agg::WeightConfig& weights) {
  auto lookup = [&](const crypto::ContributionToken& tok, ledger::EventKind kind) -> const ledger::LedgerEvent& {
    for (const auto& loc : chain.find(tok.value))
      if (chain.event_at(loc).kind == kind) return chain.event_at(loc);
    fail(ErrorKind::not_found, std::string(ledger::to_string(kind)) + " " + tok.hex() + " is not on the ledger");
  };
  std::map<std::uint64_t, fl::ModelVector> out;
  for (const auto& block : chain.blocks())
    for (const auto& ev : block.events) {
      if (ev.kind != ledger::EventKind::GlobalAgg) continue;
      const auto g = ledger::global_agg_payload(ev);
      std::vector<agg::HapAggregate> aggs;
      for (std::size_t h = 0; h < g.aggregates.size(); ++h) {
        const auto p = ledger::partial_agg_payload(lookup(g.aggregates[h], ledger::EventKind::PartialAgg));
        std::vector<agg::CommittedUpdate> updates;
        for (const auto& c : p.contributors) {
          const auto cp = ledger::commit_payload(lookup(c, ledger::EventKind::Commit));
          auto ct = artifacts.get(cp.ciphertext_hash);
          if (!ct) fail(ErrorKind::not_found, "ciphertext " + cp.ciphertext_hash.hex() + " is missing");
          updates.push_back({fl::SealedUpdate{std::move(*ct), cp.meta, cp.signature, cp.scheme}, c});
        }
        aggs.push_back(agg::hap_aggregate(g.hap_ids[h], ev.round, updates, p.alphas, unsealer, weights, nullptr));
      }
      out[ev.round] = agg::global_fuse(aggs, g.betas);
    }
  return out;
}

}  // namespace orbitchain::orch
