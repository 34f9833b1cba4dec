#pragma once

#include "sid/bank.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sid {

inline constexpr double kDefaultProbClip = 1e-7;

/// Linear detector: P(fake | x) = sigmoid(weights . x + bias).
struct LinearProbe {
    std::uint32_t dim = 0;
    std::vector<double> weights;
    double bias = 0.0;
    std::vector<std::string> input_backbones;
    /// Scale each input to unit L2 norm before the affine map.
    bool l2_normalize = false;
    std::string trained_on;
    std::string config_digest;

    static LinearProbe zeros(std::uint32_t dim, std::vector<std::string> input_backbones = {});

    bool operator==(const LinearProbe&) const = default;
};

void validate(const LinearProbe& probe);

struct EarlyStop {
    std::size_t patience = 5;
    double min_delta = 0.0;
};

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t epochs = 100;
    std::size_t batch_size = 256;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double weight_decay = 0.0;
    double prob_clip_epsilon = kDefaultProbClip;
    std::uint64_t seed = 0;
    bool l2_normalize = false;
    std::optional<EarlyStop> early_stop;
};

void validate(const TrainConfig& config);

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::size_t epochs_run = 0;
};

struct TrainResult {
    LinearProbe probe;
    TrainHistory history;
};

struct Gradient {
    std::vector<double> weights;
    double bias = 0.0;
};

/// weights . x + bias (after L2 normalization when the probe asks for it).
double logit(const LinearProbe& probe, std::span<const float> vector);

/// Logistic function, evaluated without overflow for large |z|.
double sigmoid(double z);

/// sigmoid(logit), clipped to [clip, 1 - clip].
double predict(const LinearProbe& probe, std::span<const float> vector, double clip = kDefaultProbClip);

/// Mean binary cross-entropy over the bank: fakes contribute -log p, reals
/// -log(1 - p), with p clipped as in predict().
double bce_loss(const LinearProbe& probe, const EmbeddingBank& bank, double clip = kDefaultProbClip);

/// Gradient of the mean BCE over `batch`: d/dlogit = p - y per record,
/// plus weight_decay * weights on the weight block. Uses the unclipped sigmoid.
Gradient loss_gradient(const LinearProbe& probe, std::span<const EmbeddingRecord> batch, double weight_decay = 0.0);

/// Adam on the mean BCE, starting from the zero probe. Records are visited in
/// a seeded shuffle of id order, so the result does not depend on the bank's
/// record order.
TrainResult train_probe(const EmbeddingBank& train, const std::optional<EmbeddingBank>& val,
                        const TrainConfig& config);

/// Backbone ids a bank was built from: fused banks join them with '+'.
std::vector<std::string> split_backbone_id(const std::string& backbone_id);

// JSON document: { "format": "sidprobe-v1", "dim", "input_backbones",
// "weights", "bias", "trained_on", "config_digest" } plus "l2_normalize"
// when set. Doubles are written in shortest round-trip form.
std::string probe_to_json(const LinearProbe& probe);
LinearProbe probe_from_json(const std::string& text);

void save_probe(const LinearProbe& probe, const std::filesystem::path& path);
LinearProbe load_probe(const std::filesystem::path& path);

}  // namespace sid
