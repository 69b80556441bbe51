#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "orbitchain/common.hpp"
#include "orbitchain/crypto.hpp"

namespace orbitchain::fl {

/// Flat float32 parameter vector. Canonical bytes: u32 LE dim, then LE floats.
struct ModelVector {
  std::vector<float> values;

  ModelVector() = default;
  explicit ModelVector(std::size_t dim, float fill = 0.0f) : values(dim, fill) {}
  explicit ModelVector(std::vector<float> v) : values(std::move(v)) {}

  std::size_t dim() const { return values.size(); }
  bool all_finite() const;
  bool operator==(const ModelVector&) const = default;
};

Bytes serialize(const ModelVector& model);
ModelVector deserialize_model(std::span<const std::uint8_t> bytes);
crypto::Digest content_hash(const ModelVector& model);

/// Softmax regression layout: (n_features + 1) weights per class, bias last.
inline std::size_t softmax_dim(std::size_t n_features, std::size_t n_classes) {
  return (n_features + 1) * n_classes;
}

struct Dataset {
  std::size_t n_features = 0;
  std::size_t n_classes = 0;
  std::vector<double> features;  // row-major n_samples x n_features
  std::vector<int> labels;
  std::string vendor_id;
  std::string sat_id;

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return {features.data() + i * n_features, n_features};
  }
  void validate() const;
};

struct TrainConfig {
  double learning_rate = 0.1;
  int epochs = 1;
  int batch_size = 32;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct TrainReport {
  ModelVector updated_model;
  ModelVector mean_gradient;
  double final_loss = 0.0;
  std::vector<double> epoch_losses;  // full-batch loss after each epoch
};

double local_loss(const ModelVector& model, const Dataset& data);
double global_loss(const ModelVector& model, std::span<const Dataset> datasets);

/// Full-batch mean cross-entropy gradient, in double precision.
std::vector<double> full_gradient(std::span<const double> params, const Dataset& data);

TrainReport local_train(const ModelVector& init, const Dataset& data, const TrainConfig& cfg);

/// Predicted class per sample (argmax of logits, lowest index on ties).
std::vector<int> predict(const ModelVector& model, const Dataset& data);

struct QuantizerConfig {
  int levels = 0;  // 0 = identity

  bool identity() const { return levels == 0; }
};

ModelVector quantize(const ModelVector& model, const QuantizerConfig& q);

// ---------------------------------------------------------------------------
// Sealing

enum class SealScheme { plaintext, additive_mask };

const char* to_string(SealScheme s) noexcept;
SealScheme seal_scheme_from_string(std::string_view s);

struct UpdateMetadata {
  std::string vendor_id;
  std::string sat_id;
  std::uint64_t round = 0;
  std::uint64_t data_size = 0;
  std::uint64_t fetch_round = 0;
  double timestamp_s = 0.0;

  std::uint64_t age() const { return round - fetch_round; }
  void validate() const;
  bool operator==(const UpdateMetadata&) const = default;
};

json to_json(const UpdateMetadata& meta);
UpdateMetadata metadata_from_json(const json& j);
std::string canonical(const UpdateMetadata& meta);

struct SealingKey {
  std::string vendor_id;
  Bytes secret_seed;  // 32 bytes, expands additive masks
  crypto::KeyPair signing;
};

SealingKey derive_sealing_key(std::uint64_t seed, const std::string& vendor_id);

struct SealedUpdate {
  Bytes ciphertext;
  UpdateMetadata metadata;
  Bytes signature;
  SealScheme scheme = SealScheme::plaintext;

  /// ciphertext | canonical(metadata): the signed message.
  Bytes signed_message() const;
  crypto::Digest ciphertext_hash() const { return crypto::hash(ciphertext); }
};

// Additive masking works over Z_2^128 on a fixed-point embedding of each
// coordinate (96 fractional bits). Every float32 with |x| in [2^-73, 2^31)
// (and zero) embeds exactly, so mask removal is bit-exact.
using MaskWord = unsigned __int128;
inline constexpr int kMaskFractionBits = 96;

MaskWord encode_fixed(float x);
double decode_fixed(MaskWord w);

/// Mask stream for (secret_seed, sat_id, round): SHA-256 in counter mode.
std::vector<MaskWord> expand_mask(std::span<const std::uint8_t> secret_seed,
                                  std::string_view sat_id, std::uint64_t round, std::size_t dim);

/// `count` masks of length `dim` whose coordinate-wise sum is zero mod 2^128.
std::vector<std::vector<MaskWord>> pairwise_cancelling_masks(std::uint64_t pair_seed,
                                                             std::size_t count, std::size_t dim);

Bytes serialize_masked(const std::vector<MaskWord>& words);
std::vector<MaskWord> deserialize_masked(std::span<const std::uint8_t> bytes);

/// Sum of masked ciphertexts mod 2^128, decoded to reals.
std::vector<double> sum_masked(std::span<const SealedUpdate> sealed);

SealedUpdate seal_update(const ModelVector& model, const UpdateMetadata& meta,
                         const SealingKey& key, SealScheme scheme);
/// Seal with an explicit mask (used for pairwise-cancelling aggregation).
SealedUpdate seal_with_mask(const ModelVector& model, const UpdateMetadata& meta,
                            const SealingKey& key, std::span<const MaskWord> mask);

bool verify_sealed(const SealedUpdate& sealed, std::span<const std::uint8_t> vendor_public_key);

/// Removes sealing; implementations hold whatever escrow the scheme needs.
class Unsealer {
 public:
  virtual ~Unsealer() = default;
  virtual ModelVector unseal(const SealedUpdate& sealed) const = 0;
};

/// Reference unsealer: plaintext passes through, additive masks are
/// regenerated from vendor seeds escrowed with it.
class EscrowUnsealer final : public Unsealer {
 public:
  void escrow(const std::string& vendor_id, Bytes secret_seed);
  ModelVector unseal(const SealedUpdate& sealed) const override;

 private:
  std::map<std::string, Bytes, std::less<>> seeds_;
};

}  // namespace orbitchain::fl
