#include "orbitchain/fl.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>

namespace orbitchain::fl {

bool ModelVector::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

Bytes serialize(const ModelVector& model) {
  Bytes out;
  out.reserve(4 + 4 * model.dim());
  put_u32(out, static_cast<std::uint32_t>(model.dim()));
  for (float v : model.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

ModelVector deserialize_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) fail(ErrorKind::format, "model bytes shorter than header");
  std::uint32_t dim = get_u32(bytes, 0);
  if (bytes.size() != 4 + 4 * static_cast<std::size_t>(dim))
    fail(ErrorKind::format, "model byte length does not match dim header");
  ModelVector m(dim);
  for (std::size_t i = 0; i < dim; ++i) m.values[i] = std::bit_cast<float>(get_u32(bytes, 4 + 4 * i));
  return m;
}

crypto::Digest content_hash(const ModelVector& model) { return crypto::hash(serialize(model)); }

void Dataset::validate() const {
  if (labels.empty()) fail(ErrorKind::precondition, "dataset must hold at least one sample");
  if (features.size() != labels.size() * n_features)
    fail(ErrorKind::shape, "dataset feature matrix does not match sample count");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= n_classes)
      fail(ErrorKind::precondition, "dataset label out of range");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    fail(ErrorKind::config, "train.learning_rate must be finite and >= 0");
  if (epochs < 1) fail(ErrorKind::config, "train.epochs must be >= 1");
  if (batch_size < 1) fail(ErrorKind::config, "train.batch_size must be >= 1");
}

namespace {

void check_dim(std::size_t dim, const Dataset& data) {
  if (dim != softmax_dim(data.n_features, data.n_classes))
    fail(ErrorKind::shape, "model dim " + std::to_string(dim) + " does not match task dim " +
                               std::to_string(softmax_dim(data.n_features, data.n_classes)));
}

// Log-probabilities of every class for one sample.
void log_softmax(std::span<const double> params, std::span<const double> x, std::size_t n_classes,
                 std::vector<double>& out) {
  const std::size_t stride = x.size() + 1;
  out.resize(n_classes);
  double peak = -INFINITY;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const double* w = params.data() + c * stride;
    double z = w[x.size()];
    for (std::size_t j = 0; j < x.size(); ++j) z += w[j] * x[j];
    out[c] = z;
    peak = std::max(peak, z);
  }
  double sum = 0.0;
  for (double z : out) sum += std::exp(z - peak);
  const double lse = peak + std::log(sum);
  for (double& z : out) z -= lse;
}

double mean_loss(std::span<const double> params, const Dataset& data) {
  std::vector<double> lp;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    log_softmax(params, data.row(i), data.n_classes, lp);
    total -= lp[static_cast<std::size_t>(data.labels[i])];
  }
  return total / static_cast<double>(data.size());
}

void batch_gradient(std::span<const double> params, const Dataset& data,
                    std::span<const std::size_t> idx, std::vector<double>& grad) {
  const std::size_t f = data.n_features;
  const std::size_t stride = f + 1;
  grad.assign(params.size(), 0.0);
  std::vector<double> lp;
  for (std::size_t i : idx) {
    auto x = data.row(i);
    log_softmax(params, x, data.n_classes, lp);
    for (std::size_t c = 0; c < data.n_classes; ++c) {
      double r = std::exp(lp[c]) - (static_cast<std::size_t>(data.labels[i]) == c ? 1.0 : 0.0);
      double* g = grad.data() + c * stride;
      for (std::size_t j = 0; j < f; ++j) g[j] += r * x[j];
      g[f] += r;
    }
  }
  const double inv = 1.0 / static_cast<double>(idx.size());
  for (double& g : grad) g *= inv;
}

std::vector<double> widen(const ModelVector& m) { return {m.values.begin(), m.values.end()}; }

ModelVector narrow(std::span<const double> p) {
  ModelVector m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m.values[i] = static_cast<float>(p[i]);
  return m;
}

}  // namespace

double local_loss(const ModelVector& model, const Dataset& data) {
  data.validate();
  check_dim(model.dim(), data);
  return mean_loss(widen(model), data);
}

double global_loss(const ModelVector& model, std::span<const Dataset> datasets) {
  if (datasets.empty()) fail(ErrorKind::precondition, "global_loss needs at least one dataset");
  double weighted = 0.0;
  double total = 0.0;
  for (const auto& d : datasets) {
    double n = static_cast<double>(d.size());
    weighted += n * local_loss(model, d);
    total += n;
  }
  return weighted / total;
}

std::vector<double> full_gradient(std::span<const double> params, const Dataset& data) {
  data.validate();
  check_dim(params.size(), data);
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<double> g;
  batch_gradient(params, data, idx, g);
  return g;
}

TrainReport local_train(const ModelVector& init, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  check_dim(init.dim(), data);

  std::vector<double> params = widen(init);
  TrainReport report;
  report.mean_gradient = narrow(full_gradient(params, data));

  std::mt19937_64 rng(cfg.rng_seed);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> grad;
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with raw engine output: identical on every standard library.
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      std::size_t end = std::min(order.size(), begin + batch);
      batch_gradient(params, data, std::span(order).subspan(begin, end - begin), grad);
      for (std::size_t k = 0; k < params.size(); ++k) params[k] -= cfg.learning_rate * grad[k];
    }
    double loss = mean_loss(params, data);
    if (!std::isfinite(loss))
      fail(ErrorKind::numeric, "non-finite loss in local training (sat '" + data.sat_id +
                                   "', epoch " + std::to_string(epoch) + ")");
    report.epoch_losses.push_back(loss);
  }
  report.updated_model = narrow(params);
  if (!report.updated_model.all_finite())
    fail(ErrorKind::numeric, "local training produced non-finite parameters (sat '" +
                                 data.sat_id + "')");
  report.final_loss = mean_loss(widen(report.updated_model), data);
  return report;
}

std::vector<int> predict(const ModelVector& model, const Dataset& data) {
  check_dim(model.dim(), data);
  auto params = widen(model);
  std::vector<int> out(data.size());
  std::vector<double> lp;
  for (std::size_t i = 0; i < data.size(); ++i) {
    log_softmax(params, data.row(i), data.n_classes, lp);
    out[i] = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
  }
  return out;
}

ModelVector quantize(const ModelVector& model, const QuantizerConfig& q) {
  if (q.identity() || model.dim() == 0) return model;
  if (q.levels < 2) fail(ErrorKind::config, "quantizer levels must be >= 2");
  auto [lo_it, hi_it] = std::minmax_element(model.values.begin(), model.values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return model;
  const double step = (hi - lo) / (q.levels - 1);
  ModelVector out(model.dim());
  for (std::size_t i = 0; i < model.dim(); ++i) {
    double k = std::nearbyint((model.values[i] - lo) / step);
    k = std::clamp(k, 0.0, static_cast<double>(q.levels - 1));
    out.values[i] = k == q.levels - 1 ? static_cast<float>(hi) : static_cast<float>(lo + k * step);
  }
  return out;
}

// ---------------------------------------------------------------------------

const char* to_string(SealScheme s) noexcept {
  return s == SealScheme::plaintext ? "plaintext" : "additive_mask";
}

SealScheme seal_scheme_from_string(std::string_view s) {
  if (s == "plaintext") return SealScheme::plaintext;
  if (s == "additive_mask") return SealScheme::additive_mask;
  fail(ErrorKind::config, "unknown sealing scheme '" + std::string(s) + "'");
}

void UpdateMetadata::validate() const {
  if (data_size < 1) fail(ErrorKind::precondition, "update metadata data_size must be >= 1");
  if (fetch_round > round) fail(ErrorKind::precondition, "update metadata fetch_round > round");
}

json to_json(const UpdateMetadata& meta) {
  json j = json::object();
  j["vendor_id"] = meta.vendor_id;
  j["sat_id"] = meta.sat_id;
  j["round"] = meta.round;
  j["data_size"] = meta.data_size;
  j["fetch_round"] = meta.fetch_round;
  j["timestamp_s"] = meta.timestamp_s;
  return j;
}

UpdateMetadata metadata_from_json(const json& j) {
  try {
    UpdateMetadata m;
    m.vendor_id = j.at("vendor_id").get<std::string>();
    m.sat_id = j.at("sat_id").get<std::string>();
    m.round = j.at("round").get<std::uint64_t>();
    m.data_size = j.at("data_size").get<std::uint64_t>();
    m.fetch_round = j.at("fetch_round").get<std::uint64_t>();
    m.timestamp_s = j.at("timestamp_s").get<double>();
    return m;
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("malformed update metadata: ") + e.what());
  }
}

std::string canonical(const UpdateMetadata& meta) { return canonical_dump(to_json(meta)); }

SealingKey derive_sealing_key(std::uint64_t seed, const std::string& vendor_id) {
  SealingKey key;
  key.vendor_id = vendor_id;
  Bytes pre = to_bytes("orbitchain.mask-seed.");
  put_u64(pre, seed);
  append(pre, vendor_id);
  auto d = crypto::hash(pre);
  key.secret_seed.assign(d.bytes.begin(), d.bytes.end());
  key.signing = crypto::derive_keypair(seed, vendor_id);
  return key;
}

Bytes SealedUpdate::signed_message() const {
  Bytes msg = ciphertext;
  append(msg, canonical(metadata));
  return msg;
}

MaskWord encode_fixed(float x) {
  if (!std::isfinite(x)) fail(ErrorKind::numeric, "cannot mask a non-finite value");
  if (x == 0.0f) return 0;
  int exp = 0;
  double frac = std::frexp(static_cast<double>(x), &exp);  // |frac| in [0.5, 1)
  if (exp > 31) fail(ErrorKind::numeric, "value too large for the masking fixed-point range");
  const bool neg = frac < 0;
  auto mant = static_cast<MaskWord>(std::ldexp(std::abs(frac), 24));  // exact 24-bit integer
  const int shift = exp - 24 + kMaskFractionBits;
  MaskWord mag = shift >= 0 ? mant << shift : (shift > -128 ? mant >> -shift : 0);
  return neg ? static_cast<MaskWord>(0) - mag : mag;
}

double decode_fixed(MaskWord w) {
  const bool neg = (w >> 127) != 0;
  MaskWord mag = neg ? static_cast<MaskWord>(0) - w : w;
  double hi = static_cast<double>(static_cast<std::uint64_t>(mag >> 64));
  double lo = static_cast<double>(static_cast<std::uint64_t>(mag));
  double v = std::ldexp(hi, 64 - kMaskFractionBits) + std::ldexp(lo, -kMaskFractionBits);
  return neg ? -v : v;
}

namespace {

MaskWord word_from(std::span<const std::uint8_t> b) {
  MaskWord w = 0;
  for (int i = 15; i >= 0; --i) w = (w << 8) | b[static_cast<std::size_t>(i)];
  return w;
}

std::vector<MaskWord> prg_words(const Bytes& prefix, std::size_t dim) {
  std::vector<MaskWord> out;
  out.reserve(dim + 1);
  for (std::uint64_t counter = 0; out.size() < dim; ++counter) {
    Bytes block = prefix;
    put_u64(block, counter);
    auto d = crypto::hash(block);
    out.push_back(word_from(std::span(d.bytes).subspan(0, 16)));
    out.push_back(word_from(std::span(d.bytes).subspan(16, 16)));
  }
  out.resize(dim);
  return out;
}

}  // namespace

std::vector<MaskWord> expand_mask(std::span<const std::uint8_t> secret_seed,
                                  std::string_view sat_id, std::uint64_t round, std::size_t dim) {
  Bytes prefix = to_bytes("orbitchain.mask.");
  put_u32(prefix, static_cast<std::uint32_t>(secret_seed.size()));
  append(prefix, secret_seed);
  put_u32(prefix, static_cast<std::uint32_t>(sat_id.size()));
  append(prefix, sat_id);
  put_u64(prefix, round);
  return prg_words(prefix, dim);
}

std::vector<std::vector<MaskWord>> pairwise_cancelling_masks(std::uint64_t pair_seed,
                                                             std::size_t count, std::size_t dim) {
  if (count < 2) fail(ErrorKind::precondition, "pairwise masks need at least two parties");
  std::vector<std::vector<MaskWord>> masks;
  std::vector<MaskWord> total(dim, 0);
  for (std::size_t k = 0; k + 1 < count; ++k) {
    Bytes prefix = to_bytes("orbitchain.pairmask.");
    put_u64(prefix, pair_seed);
    put_u64(prefix, k);
    masks.push_back(prg_words(prefix, dim));
    for (std::size_t i = 0; i < dim; ++i) total[i] += masks.back()[i];
  }
  for (auto& t : total) t = static_cast<MaskWord>(0) - t;
  masks.push_back(std::move(total));
  return masks;
}

Bytes serialize_masked(const std::vector<MaskWord>& words) {
  Bytes out;
  out.reserve(4 + 16 * words.size());
  put_u32(out, static_cast<std::uint32_t>(words.size()));
  for (MaskWord w : words) {
    put_u64(out, static_cast<std::uint64_t>(w));
    put_u64(out, static_cast<std::uint64_t>(w >> 64));
  }
  return out;
}

std::vector<MaskWord> deserialize_masked(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) fail(ErrorKind::format, "masked ciphertext shorter than header");
  std::uint32_t dim = get_u32(bytes, 0);
  if (bytes.size() != 4 + 16 * static_cast<std::size_t>(dim))
    fail(ErrorKind::format, "masked ciphertext length does not match dim header");
  std::vector<MaskWord> out(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    MaskWord lo = get_u64(bytes, 4 + 16 * i);
    MaskWord hi = get_u64(bytes, 12 + 16 * i);
    out[i] = (hi << 64) | lo;
  }
  return out;
}

std::vector<double> sum_masked(std::span<const SealedUpdate> sealed) {
  if (sealed.empty()) return {};
  std::vector<MaskWord> acc;
  for (const auto& s : sealed) {
    if (s.scheme != SealScheme::additive_mask)
      fail(ErrorKind::crypto, "sum_masked needs additive_mask ciphertexts");
    auto words = deserialize_masked(s.ciphertext);
    if (acc.empty()) acc.assign(words.size(), 0);
    if (words.size() != acc.size()) fail(ErrorKind::shape, "masked ciphertext dims differ");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += words[i];
  }
  std::vector<double> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = decode_fixed(acc[i]);
  return out;
}

namespace {

SealedUpdate sign_sealed(Bytes ciphertext, const UpdateMetadata& meta, const SealingKey& key,
                         SealScheme scheme) {
  SealedUpdate s;
  s.ciphertext = std::move(ciphertext);
  s.metadata = meta;
  s.scheme = scheme;
  s.signature = crypto::sign(s.signed_message(), key.signing.secret_key);
  return s;
}

void check_owner(const UpdateMetadata& meta, const SealingKey& key) {
  if (key.vendor_id != meta.vendor_id)
    fail(ErrorKind::authorization, "sealing key of vendor '" + key.vendor_id +
                                       "' cannot seal an update of vendor '" + meta.vendor_id + "'");
}

}  // namespace

SealedUpdate seal_update(const ModelVector& model, const UpdateMetadata& meta,
                         const SealingKey& key, SealScheme scheme) {
  check_owner(meta, key);
  if (scheme == SealScheme::plaintext) return sign_sealed(serialize(model), meta, key, scheme);
  auto mask = expand_mask(key.secret_seed, meta.sat_id, meta.round, model.dim());
  return seal_with_mask(model, meta, key, mask);
}

SealedUpdate seal_with_mask(const ModelVector& model, const UpdateMetadata& meta,
                            const SealingKey& key, std::span<const MaskWord> mask) {
  check_owner(meta, key);
  if (mask.size() != model.dim()) fail(ErrorKind::shape, "mask length does not match model dim");
  std::vector<MaskWord> words(model.dim());
  for (std::size_t i = 0; i < words.size(); ++i) words[i] = encode_fixed(model.values[i]) + mask[i];
  return sign_sealed(serialize_masked(words), meta, key, SealScheme::additive_mask);
}

bool verify_sealed(const SealedUpdate& sealed, std::span<const std::uint8_t> vendor_public_key) {
  if (sealed.signature.size() != crypto::kSignatureSize) return false;
  return crypto::verify(sealed.signed_message(), sealed.signature, vendor_public_key);
}

void EscrowUnsealer::escrow(const std::string& vendor_id, Bytes secret_seed) {
  seeds_[vendor_id] = std::move(secret_seed);
}

ModelVector EscrowUnsealer::unseal(const SealedUpdate& sealed) const {
  if (sealed.scheme == SealScheme::plaintext) return deserialize_model(sealed.ciphertext);
  auto it = seeds_.find(sealed.metadata.vendor_id);
  if (it == seeds_.end())
    fail(ErrorKind::crypto, "no escrowed mask seed for vendor '" + sealed.metadata.vendor_id + "'");
  auto words = deserialize_masked(sealed.ciphertext);
  auto mask = expand_mask(it->second, sealed.metadata.sat_id, sealed.metadata.round, words.size());
  ModelVector out(words.size());
  for (std::size_t i = 0; i < words.size(); ++i)
    out.values[i] = static_cast<float>(decode_fixed(words[i] - mask[i]));
  return out;
}

}  // namespace orbitchain::fl
