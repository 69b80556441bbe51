#include "orbitchain/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace orbitchain::scenario {

namespace {

[[noreturn]] void bad(const std::string& path, const std::string& what) {
  fail(ErrorKind::config, path + ": " + what);
}

/// Typed, path-tracking view of one JSON object; unknown keys are errors.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) bad(path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) {
    used_.insert(key);
    return j_.contains(key);
  }
  const json& raw(const std::string& key) {
    if (!has(key)) bad(at(key), "required field is missing");
    return j_.at(key);
  }

  double real(const std::string& key, std::optional<double> def = std::nullopt) {
    if (!has(key)) return def ? *def : (bad(at(key), "required field is missing"), 0.0);
    const auto& v = j_.at(key);
    if (!v.is_number()) bad(at(key), "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) bad(at(key), "must be finite");
    return x;
  }
  std::uint64_t count(const std::string& key, std::optional<std::uint64_t> def = std::nullopt) {
    if (!has(key)) return def ? *def : (bad(at(key), "required field is missing"), 0);
    const auto& v = j_.at(key);
    if (!v.is_number_integer()) bad(at(key), "expected an integer");
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.get<std::int64_t>() < 0) bad(at(key), "must be >= 0");
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  }
  std::string text(const std::string& key, std::optional<std::string> def = std::nullopt) {
    if (!has(key)) return def ? *def : (bad(at(key), "required field is missing"), std::string());
    const auto& v = j_.at(key);
    if (!v.is_string()) bad(at(key), "expected a string");
    return v.get<std::string>();
  }
  bool flag(const std::string& key, bool def) {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_boolean()) bad(at(key), "expected true or false");
    return v.get<bool>();
  }

  void done() const {
    for (const auto& [k, _] : j_.items())
      if (!used_.count(k)) bad(at(k), "unknown field");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

std::string index_path(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

const json& array_at(Fields& f, const std::string& key) {
  const auto& v = f.raw(key);
  if (!v.is_array()) bad(f.at(key), "expected an array");
  return v;
}

/// Re-raises library config errors under the field path they came from.
template <class F>
auto within(const std::string& path, F&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::config) throw;
    bad(path, e.what());
  }
}

orbit::ObserverSpec parse_observer(const json& j, const std::string& path, orbit::ObserverKind kind) {
  Fields f(j, path);
  orbit::ObserverSpec o;
  o.kind = kind;
  o.observer_id = f.text("id");
  if (o.observer_id.empty()) bad(f.at("id"), "must be non-empty");
  o.latitude_deg = f.real("latitude_deg");
  o.longitude_deg = f.real("longitude_deg");
  o.altitude_km = f.real("altitude_km", kind == orbit::ObserverKind::HAP ? 20.0 : 0.0);
  f.done();
  within(path, [&] { orbit::validate(o); });
  return o;
}

PartitionStyle parse_style(const std::string& s, const std::string& path) {
  if (s == "iid") return PartitionStyle::iid;
  if (s == "label_skew") return PartitionStyle::label_skew;
  bad(path, "expected iid or label_skew, got '" + s + "'");
}

VendorSpec parse_vendor(const json& j, const std::string& path) {
  Fields f(j, path);
  VendorSpec v;
  v.vendor_id = f.text("vendor_id");
  if (v.vendor_id.empty()) bad(f.at("vendor_id"), "must be non-empty");
  {
    Fields c(f.raw("constellation"), f.at("constellation"));
    auto& g = v.constellation;
    const auto planes = c.count("planes"), spp = c.count("sats_per_plane");
    if (planes < 1) bad(c.at("planes"), "must be >= 1");
    if (spp < 1) bad(c.at("sats_per_plane"), "must be >= 1");
    g.planes = static_cast<int>(std::min<std::uint64_t>(planes, 10000));
    g.sats_per_plane = static_cast<int>(std::min<std::uint64_t>(spp, 10000));
    g.altitude_km = c.real("altitude_km", 550.0);
    if (!(g.altitude_km > 0.0)) bad(c.at("altitude_km"), "must be > 0");
    g.inclination_deg = c.real("inclination_deg", 53.0);
    if (g.inclination_deg < 0.0 || g.inclination_deg > 180.0) bad(c.at("inclination_deg"), "must be in [0, 180]");
    g.raan_offset_deg = c.real("raan_offset_deg", 0.0);
    g.phase_offset_deg = c.real("phase_offset_deg", 0.0);
    c.done();
  }
  const auto& haps = array_at(f, "haps");
  for (std::size_t i = 0; i < haps.size(); ++i)
    v.haps.push_back(parse_observer(haps[i], index_path(f.at("haps"), i), orbit::ObserverKind::HAP));
  if (v.haps.empty()) bad(f.at("haps"), "a vendor needs at least one HAP");
  if (f.has("ground_stations")) {
    const auto& gss = array_at(f, "ground_stations");
    for (std::size_t i = 0; i < gss.size(); ++i)
      v.ground_stations.push_back(
          parse_observer(gss[i], index_path(f.at("ground_stations"), i), orbit::ObserverKind::GS));
  }
  if (f.has("partition")) {
    Fields p(f.raw("partition"), f.at("partition"));
    v.partition = parse_style(p.text("style", "iid"), p.at("style"));
    v.classes_per_satellite = p.count("classes_per_satellite", 0);
    if (v.partition == PartitionStyle::label_skew && v.classes_per_satellite < 1)
      bad(p.at("classes_per_satellite"), "label_skew needs classes_per_satellite >= 1");
    p.done();
  }
  v.bandwidth_bps = f.real("bandwidth_bps", 1e6);
  if (!(v.bandwidth_bps > 0.0)) bad(f.at("bandwidth_bps"), "must be > 0");
  v.seal_scheme = within(f.at("seal_scheme"), [&] {
    return fl::seal_scheme_from_string(f.text("seal_scheme", "additive_mask"));
  });
  f.done();
  return v;
}

SatelliteFault parse_sat_fault(const json& j, const std::string& path) {
  Fields f(j, path);
  SatelliteFault s;
  s.sat_id = f.text("sat_id");
  const auto kind = f.text("kind");
  if (kind == "tampered") s.kind = SatelliteFaultKind::tampered;
  else if (kind == "forged") s.kind = SatelliteFaultKind::forged;
  else if (kind == "replay") s.kind = SatelliteFaultKind::replay;
  else bad(f.at("kind"), "expected tampered, forged or replay, got '" + kind + "'");
  if (f.has("rounds")) {
    const auto& r = array_at(f, "rounds");
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (!r[i].is_number_integer() || r[i].get<std::int64_t>() < 1)
        bad(index_path(f.at("rounds"), i), "expected a round number >= 1");
      s.rounds.push_back(r[i].get<std::uint64_t>());
    }
  }
  f.done();
  return s;
}

consensus::FaultProfile parse_validator_fault(const json& j, const std::string& path) {
  Fields f(j, path);
  consensus::FaultProfile p;
  p.kind = within(f.at("kind"), [&] { return consensus::fault_kind_from_string(f.text("kind")); });
  p.delay_factor = f.real("delay_factor", 1.0);
  f.done();
  within(path, [&] { p.validate(); });
  return p;
}

}  // namespace

void PartitionSpec::validate() const {
  if (n_classes < 2) fail(ErrorKind::config, "partition: n_classes must be >= 2");
  if (samples_per_satellite < 1) fail(ErrorKind::config, "partition: samples_per_satellite must be >= 1");
  if (feature_dim < 1) fail(ErrorKind::config, "partition: feature_dim must be >= 1");
  if (style == PartitionStyle::label_skew &&
      (classes_per_satellite < 1 || classes_per_satellite > n_classes))
    fail(ErrorKind::config, "partition: classes_per_satellite must be in [1, n_classes]");
}

void TaskSpec::validate() const {
  if (n_classes < 2) fail(ErrorKind::config, "task.n_classes must be >= 2");
  if (feature_dim < 1) fail(ErrorKind::config, "task.feature_dim must be >= 1");
  if (samples_per_satellite < 1) fail(ErrorKind::config, "task.samples_per_satellite must be >= 1");
  if (!(separation >= 0.0) || !std::isfinite(separation)) fail(ErrorKind::config, "task.separation must be >= 0");
  if (!(cluster_std > 0.0) || !std::isfinite(cluster_std)) fail(ErrorKind::config, "task.cluster_std must be > 0");
}

std::vector<orbit::SatelliteSpec> VendorSpec::satellites() const {
  const auto& g = constellation;
  auto sats = orbit::generate_constellation(vendor_id, g.planes, g.sats_per_plane, g.altitude_km, g.inclination_deg);
  auto wrap = [](double deg) {
    double r = std::fmod(deg, 360.0);
    return r < 0.0 ? r + 360.0 : r;
  };
  for (auto& s : sats) {
    s.raan_deg = wrap(s.raan_deg + g.raan_offset_deg);
    s.phase_deg = wrap(s.phase_deg + g.phase_offset_deg);
  }
  return sats;
}

const char* to_string(SatelliteFaultKind k) noexcept {
  switch (k) {
    case SatelliteFaultKind::tampered: return "tampered";
    case SatelliteFaultKind::forged: return "forged";
    case SatelliteFaultKind::replay: return "replay";
  }
  return "?";
}

bool SatelliteFault::active(std::uint64_t round) const {
  return rounds.empty() || std::find(rounds.begin(), rounds.end(), round) != rounds.end();
}

std::string ScenarioConfig::mode_label() const {
  return mode == Mode::multi_vendor ? "multi_vendor" : "single_vendor:" + single_vendor_id;
}

std::vector<std::string> ScenarioConfig::hap_ids() const {
  std::vector<std::string> ids;
  for (const auto& v : vendors)
    for (const auto& h : v.haps) ids.push_back(h.observer_id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

const VendorSpec& ScenarioConfig::vendor(const std::string& id) const {
  for (const auto& v : vendors)
    if (v.vendor_id == id) return v;
  fail(ErrorKind::not_found, "unknown vendor '" + id + "'");
}

bool ScenarioConfig::participates(const std::string& vendor_id) const {
  return mode == Mode::multi_vendor || vendor_id == single_vendor_id;
}

consensus::QuorumConfig ScenarioConfig::quorum_config() const {
  return within("quorum", [&] { return consensus::quorum_from_json(quorum, hap_ids().size()); });
}

void ScenarioConfig::validate() const {
  if (!(slack_time_s > 0.0) || !std::isfinite(slack_time_s)) bad("slack_time_s", "must be > 0");
  if (rounds < 1) bad("rounds", "must be >= 1");
  if (vendors.empty()) bad("vendors", "at least one vendor is required");
  if (mode == Mode::multi_vendor && vendors.size() < 2) bad("mode", "multi_vendor requires >= 2 vendors");
  if (mode == Mode::single_vendor) {
    if (single_vendor_id.empty()) bad("single_vendor_id", "required when mode is single_vendor");
    within("single_vendor_id", [&] {
      try {
        vendor(single_vendor_id);
      } catch (const Error&) {
        fail(ErrorKind::config, "names no configured vendor");
      }
    });
  }
  if (!(theta_min_deg >= 0.0 && theta_min_deg < 90.0)) bad("theta_min_deg", "must be in [0, 90)");
  if (!(step_s > 0.0)) bad("step_s", "must be > 0");
  if (!(train_time_s >= 0.0)) bad("train_time_s", "must be >= 0");
  if (!(target_accuracy > 0.0 && target_accuracy <= 1.0)) bad("target_accuracy", "must be in (0, 1]");
  within("task", [&] { task.validate(); });
  within("weights", [&] { weights.validate(); });
  within("train", [&] { train.validate(); });
  within("network", [&] { network.validate(); });
  if (!(processing_s >= 0.0)) bad("consensus.processing_s", "must be >= 0");
  if (!(timeout_s >= 0.0)) bad("consensus.timeout_s", "must be >= 0");

  std::set<std::string> vendor_ids, principals;
  for (std::size_t i = 0; i < vendors.size(); ++i) {
    const auto& v = vendors[i];
    const auto path = index_path("vendors", i);
    if (!vendor_ids.insert(v.vendor_id).second) bad(path + ".vendor_id", "duplicate vendor '" + v.vendor_id + "'");
    auto unique = [&](const std::string& id, const std::string& field) {
      if (!principals.insert(id).second) bad(path + "." + field, "identifier '" + id + "' is used twice");
    };
    unique(v.vendor_id, "vendor_id");
    for (const auto& h : v.haps) unique(h.observer_id, "haps");
    for (const auto& g : v.ground_stations) unique(g.observer_id, "ground_stations");
    for (const auto& s : v.satellites()) unique(s.sat_id, "constellation");
    if (v.partition == PartitionStyle::label_skew) {
      if (v.classes_per_satellite > task.n_classes)
        bad(path + ".partition.classes_per_satellite", "exceeds task.n_classes");
      const auto n_sats = static_cast<std::size_t>(v.constellation.planes) * v.constellation.sats_per_plane;
      if (n_sats * v.classes_per_satellite < task.n_classes)
        bad(path + ".partition", "infeasible class coverage: " + std::to_string(n_sats) + " satellites x " +
                                     std::to_string(v.classes_per_satellite) + " classes < " +
                                     std::to_string(task.n_classes) + " classes");
    }
  }
  const auto haps = hap_ids();
  for (const auto& [id, _] : validator_faults)
    if (!std::binary_search(haps.begin(), haps.end(), id))
      bad("validator_faults." + id, "names no configured HAP");
  for (std::size_t i = 0; i < satellite_faults.size(); ++i)
    if (!principals.count(satellite_faults[i].sat_id) ||
        std::binary_search(haps.begin(), haps.end(), satellite_faults[i].sat_id))
      bad(index_path("satellite_faults", i) + ".sat_id", "names no configured satellite");
  quorum_config();
  for (std::size_t i = 0; i < bench.modes.size(); ++i)
    within(index_path("bench.modes", i), [&] { bench.modes[i].validate(); });
  if (bench.committee_size < 1) bad("bench.committee_size", "must be >= 1");
  if (bench.blocks < 1 && !(bench.window_s > 0.0)) bad("bench.blocks", "must be >= 1");
  if (bench.tx_batch < 1) bad("bench.tx_batch", "must be >= 1");
  if (!(bench.window_s >= 0.0)) bad("bench.window_s", "must be >= 0");
  for (const auto& [id, _] : bench.faults) {
    bool known = false;
    for (std::size_t i = 0; i < bench.committee_size; ++i) known |= id == "validator-" + std::to_string(i);
    if (!known) bad("bench.faults." + id, "expected validator-<i> with i < bench.committee_size");
  }
}

ScenarioConfig parse_config(const json& doc) {
  Fields f(doc, "");
  ScenarioConfig c;
  c.seed = f.count("seed", 1);
  c.rounds = f.count("rounds", 10);
  c.slack_time_s = f.real("slack_time_s", 600.0);
  const auto mode = f.text("mode", "multi_vendor");
  if (mode == "multi_vendor") c.mode = Mode::multi_vendor;
  else if (mode == "single_vendor") c.mode = Mode::single_vendor;
  else bad("mode", "expected multi_vendor or single_vendor, got '" + mode + "'");
  c.single_vendor_id = f.text("single_vendor_id", "");
  c.theta_min_deg = f.real("theta_min_deg", 10.0);
  c.step_s = f.real("step_s", orbit::kDefaultStepS);
  c.train_time_s = f.real("train_time_s", 120.0);
  c.always_visible = f.flag("always_visible", false);
  c.target_accuracy = f.real("target_accuracy", 0.85);
  c.transport = within("transport", [&] { return net::transport_from_string(f.text("transport", "sim")); });

  if (f.has("task")) {
    Fields t(f.raw("task"), "task");
    c.task.n_classes = t.count("n_classes", c.task.n_classes);
    c.task.feature_dim = t.count("feature_dim", c.task.feature_dim);
    c.task.samples_per_satellite = t.count("samples_per_satellite", c.task.samples_per_satellite);
    c.task.separation = t.real("separation", c.task.separation);
    c.task.cluster_std = t.real("cluster_std", c.task.cluster_std);
    t.done();
  }
  {
    const auto& vs = array_at(f, "vendors");
    for (std::size_t i = 0; i < vs.size(); ++i) c.vendors.push_back(parse_vendor(vs[i], index_path("vendors", i)));
  }
  if (f.has("quorum")) c.quorum = f.raw("quorum");
  if (f.has("weights")) {
    Fields w(f.raw("weights"), "weights");
    c.weights.lambda_decay = w.real("lambda_decay", agg::kDefaultLambda);
    c.weights.quantizer.levels = static_cast<int>(std::min<std::uint64_t>(w.count("quantizer_levels", 0), 1u << 30));
    w.done();
  }
  if (f.has("train")) {
    Fields t(f.raw("train"), "train");
    c.train.learning_rate = t.real("learning_rate", c.train.learning_rate);
    c.train.epochs = static_cast<int>(std::min<std::uint64_t>(t.count("epochs", 1), 1u << 20));
    c.train.batch_size = static_cast<int>(std::min<std::uint64_t>(t.count("batch_size", 32), 1u << 30));
    t.done();
  }
  if (f.has("consensus")) {
    Fields k(f.raw("consensus"), "consensus");
    c.processing_s = k.real("processing_s", c.processing_s);
    c.timeout_s = k.real("timeout_s", 0.0);
    if (k.has("network")) {
      Fields n(k.raw("network"), "consensus.network");
      c.network.mean_latency_s = n.real("mean_latency_s", c.network.mean_latency_s);
      c.network.jitter_s = n.real("jitter_s", c.network.jitter_s);
      c.network.drop_probability = n.real("drop_probability", 0.0);
      n.done();
    }
    k.done();
  }
  if (f.has("validator_faults")) {
    const auto& vf = f.raw("validator_faults");
    if (!vf.is_object()) bad("validator_faults", "expected an object keyed by HAP id");
    for (const auto& [id, p] : vf.items()) c.validator_faults[id] = parse_validator_fault(p, "validator_faults." + id);
  }
  if (f.has("satellite_faults")) {
    const auto& sf = array_at(f, "satellite_faults");
    for (std::size_t i = 0; i < sf.size(); ++i)
      c.satellite_faults.push_back(parse_sat_fault(sf[i], index_path("satellite_faults", i)));
  }
  if (f.has("bench")) {
    Fields b(f.raw("bench"), "bench");
    c.bench.committee_size = b.count("committee_size", 5);
    if (b.has("modes")) {
      const auto& ms = array_at(b, "modes");
      for (std::size_t i = 0; i < ms.size(); ++i)
        c.bench.modes.push_back(within(index_path("bench.modes", i), [&] {
          return consensus::quorum_from_json(ms[i], c.bench.committee_size);
        }));
    }
    c.bench.blocks = b.count("blocks", 1000);
    c.bench.tx_batch = b.count("tx_batch", 1);
    c.bench.window_s = b.real("window_s", 0.0);
    if (b.has("faults")) {
      const auto& bf = b.raw("faults");
      if (!bf.is_object()) bad("bench.faults", "expected an object keyed by validator id");
      for (const auto& [id, p] : bf.items()) c.bench.faults[id] = parse_validator_fault(p, "bench.faults." + id);
    }
    b.done();
  }
  f.done();
  c.network.seed = derive_seed(c.seed, "network");
  c.validate();
  return c;
}

json load_config_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::config, path.string() + ": cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::parse_error& e) {
    fail(ErrorKind::config, path.string() + ": " + e.what());
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    fail(ErrorKind::config, "override '" + assignment + "': expected key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string p; std::getline(ss, p, '.');) {
    if (p.empty()) fail(ErrorKind::config, "override '" + key + "': empty path segment");
    parts.push_back(p);
  }
  json* node = &doc;
  std::string walked;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& p = parts[i];
    const bool last = i + 1 == parts.size();
    walked += (walked.empty() ? "" : ".") + p;
    if (node->is_array()) {
      std::size_t idx = 0;
      const auto* end = p.data() + p.size();
      if (std::from_chars(p.data(), end, idx).ptr != end || idx >= node->size())
        fail(ErrorKind::config, "override '" + key + "': " + walked + " is not a valid array index");
      node = &(*node)[idx];
    } else if (node->is_object()) {
      if (!last && !node->contains(p))
        fail(ErrorKind::config, "override '" + key + "': " + walked + " does not exist");
      node = &(*node)[p];
    } else {
      fail(ErrorKind::config, "override '" + key + "': " + walked + " is not inside an object or array");
    }
  }
  *node = std::move(value);
}

}  // namespace orbitchain::scenario
