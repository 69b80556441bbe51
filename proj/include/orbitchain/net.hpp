#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include "orbitchain/common.hpp"
#include "orbitchain/consensus.hpp"
#include "orbitchain/fl.hpp"
#include "orbitchain/ledger.hpp"

namespace orbitchain::net {

using crypto::Digest;

struct NetworkProfile {
  double mean_latency_s = 0.0;
  double jitter_s = 0.0;  // uniform half-width
  double drop_probability = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class MessageKind { Propose, Vote, Sync, Submit };

const char* to_string(MessageKind k) noexcept;

struct WireMessage {
  MessageKind kind = MessageKind::Submit;
  std::string sender_id;
  std::uint64_t height = 0;
  json body;
  crypto::Digest body_hash;

  static WireMessage make(MessageKind kind, std::string sender, std::uint64_t height, json body);
  bool hash_ok() const;
};

/// Seeded discrete-event network on a logical clock. Per-link delivery is
/// FIFO: a message never overtakes an earlier one on the same link.
class SimNetwork {
 public:
  using Handler = std::function<void(const WireMessage&)>;

  explicit SimNetwork(NetworkProfile profile);

  void register_node(const std::string& id, Handler handler);
  /// Multiplies sampled delays on links touching `id` (slow nodes).
  void set_delay_factor(const std::string& id, double factor);

  struct Delivery {
    bool dropped = false;
    double deliver_at = 0.0;
  };
  Delivery send(const WireMessage& msg, const std::string& to);
  void schedule(double at, std::function<void()> fn);

  double now() const { return now_; }
  std::optional<double> next_time() const {
    return queue_.empty() ? std::nullopt : std::optional<double>(queue_.top().at);
  }
  void advance_to(double t);
  bool step();
  void run();

  std::size_t sent() const { return sent_; }
  std::size_t dropped() const { return dropped_; }
  const NetworkProfile& profile() const { return profile_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  struct Pending {
    double at;
    std::uint64_t seq;
    std::function<void()> fn;
    bool operator>(const Pending& o) const { return at != o.at ? at > o.at : seq > o.seq; }
  };

  NetworkProfile profile_;
  std::mt19937_64 rng_;
  double now_ = 0.0;
  std::uint64_t seq_ = 0;
  std::priority_queue<Pending, std::vector<Pending>, std::greater<>> queue_;
  std::map<std::string, Handler> handlers_;
  std::map<std::string, double> factor_;
  std::map<std::pair<std::string, std::string>, double> last_delivery_;
  std::size_t sent_ = 0;
  std::size_t dropped_ = 0;
};

enum class Transport { sim, service };

const char* to_string(Transport t) noexcept;
Transport transport_from_string(std::string_view s);

/// Builds ids, keys and a genesis registering the validators plus any extra
/// principals (vendors, satellites).
consensus::CommitteeSetup make_committee_setup(
    std::size_t n_validators, std::uint64_t seed,
    std::span<const std::pair<std::string, crypto::Principal>> extra = {},
    const std::string& validator_vendor = "");

consensus::CommitteeSetup make_committee_setup(
    std::vector<std::string> validator_ids, std::uint64_t seed,
    std::span<const std::pair<std::string, crypto::Principal>> extra,
    const std::map<std::string, std::string>& validator_vendor);

/// Deterministic in-process committee over SimNetwork.
class SimCommittee final : public consensus::Committee {
 public:
  SimCommittee(const consensus::CommitteeSetup& setup, consensus::CommitteeOptions opts,
               NetworkProfile profile);
  ~SimCommittee() override;

  void submit(std::span<const ledger::LedgerEvent> events) override;
  consensus::BlockRecord finalize_next(double timestamp_s) override;
  const std::vector<consensus::Validator*>& validators() const override { return view_; }
  double now_s() const override { return net_.now(); }
  const consensus::QuorumConfig& quorum() const override { return opts_.quorum; }

  double timeout_s() const { return timeout_; }
  SimNetwork& network() { return net_; }

 private:
  struct Slot;
  bool run_slot(std::uint64_t slot, double timestamp_s, consensus::BlockRecord& rec);
  void on_message(std::size_t node, const WireMessage& msg);
  double processing(std::size_t node) const;

  consensus::CommitteeOptions opts_;
  SimNetwork net_;
  std::vector<std::string> ids_;
  std::vector<std::unique_ptr<consensus::Validator>> nodes_;
  std::vector<consensus::Validator*> view_;
  std::map<std::string, std::size_t> index_;
  double timeout_ = 0.0;
  std::uint64_t slot_ = 0;
  std::unique_ptr<Slot> current_;
};

/// One HTTP server per validator on 127.0.0.1. The driver calls into the
/// proposer in-process; the proposer reaches peers over the wire.
class ServiceCommittee final : public consensus::Committee {
 public:
  ServiceCommittee(const consensus::CommitteeSetup& setup, consensus::CommitteeOptions opts,
                   std::string bind_host = "127.0.0.1", int base_port = 0);
  ~ServiceCommittee() override;

  void submit(std::span<const ledger::LedgerEvent> events) override;
  consensus::BlockRecord finalize_next(double timestamp_s) override;
  const std::vector<consensus::Validator*>& validators() const override;
  double now_s() const override;
  const consensus::QuorumConfig& quorum() const override;

  /// Port each validator listens on.
  std::vector<int> ports() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::unique_ptr<consensus::Committee> make_committee(Transport transport,
                                                     const consensus::CommitteeSetup& setup,
                                                     consensus::CommitteeOptions opts,
                                                     const NetworkProfile& profile);

// ---------------------------------------------------------------------------

struct Workload {
  std::vector<std::vector<ledger::LedgerEvent>> batches;
  std::vector<double> timestamps;  // logical block timestamp per batch
};

struct CommitteeTrace {
  std::vector<consensus::BlockRecord> rows;
  std::vector<ledger::Chain> chains;  // final chain per validator, committee order
  std::size_t stalls = 0;
};

CommitteeTrace run_committee(consensus::Committee& committee, const Workload& workload);

/// Synthetic signed Commits from a registered bench vendor, generated on
/// demand so long benchmark windows do not hold every event in memory.
class BenchEventSource {
 public:
  BenchEventSource(std::uint64_t seed, std::string emitter_id, std::size_t n_sats = 4);

  const std::vector<std::pair<std::string, crypto::Principal>>& principals() const {
    return principals_;
  }
  ledger::LedgerEvent next();
  std::vector<ledger::LedgerEvent> batch(std::size_t n);

 private:
  std::string emitter_;
  fl::SealingKey key_;
  std::vector<std::string> sats_;
  std::vector<std::pair<std::string, crypto::Principal>> principals_;
  std::uint64_t counter_ = 0;
};

struct BenchmarkReport {
  std::string mode;
  std::vector<consensus::BlockRecord> rows;
  double mean_latency_s = 0.0;
  double variance_latency_s = 0.0;
  std::size_t blocks = 0;
  std::size_t stalls = 0;
  std::size_t tx_total = 0;
  double duration_s = 0.0;
  double tx_per_s = 0.0;

  json throughput_json() const;
};

struct BenchmarkOptions {
  Transport transport = Transport::sim;
  std::size_t committee_size = 5;
  consensus::QuorumConfig quorum;
  std::size_t block_count = 1000;
  std::size_t tx_batch = 1;
  /// When > 0, keep submitting batches until this much committee time has
  /// elapsed instead of stopping at block_count.
  double window_s = 0.0;
  consensus::FaultPlan faults;
  NetworkProfile network;
  double processing_s = 0.001;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> ledger_dir;
};

BenchmarkReport measure_benchmark(const BenchmarkOptions& opts);

void write_benchmark_csv(const std::filesystem::path& path, std::span<const BenchmarkReport> reports);

}  // namespace orbitchain::net
