#include "sid/probe.hpp"

#include "sid/config.hpp"
#include "sid/error.hpp"
#include "sid/random.hpp"
#include "text_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sid {

namespace {

// Dense double-precision copy of a bank's vectors with 0/1 targets.
struct Rows {
    std::size_t dim = 0;
    std::vector<double> x;
    std::vector<double> y;

    std::size_t size() const { return y.size(); }
    std::span<const double> row(std::size_t i) const { return {x.data() + i * dim, dim}; }
};

void load_row(std::span<const float> v, bool normalize, double* out) {
    double scale = 1.0;
    if (normalize) {
        double sq = 0.0;
        for (float f : v) sq += static_cast<double>(f) * f;
        scale = sq > 0.0 ? 1.0 / std::sqrt(sq) : 1.0;
    }
    for (std::size_t j = 0; j < v.size(); ++j) out[j] = static_cast<double>(v[j]) * scale;
}

Rows to_rows(std::span<const EmbeddingRecord> records, std::size_t dim, bool normalize) {
    Rows rows;
    rows.dim = dim;
    rows.x.resize(records.size() * dim);
    rows.y.resize(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].vector.size() != dim) {
            throw ValidationError("record '" + records[i].id + "' has length " +
                                  std::to_string(records[i].vector.size()) + ", probe dim is " + std::to_string(dim));
        }
        load_row(records[i].vector, normalize, rows.x.data() + i * dim);
        rows.y[i] = records[i].label == Label::Fake ? 1.0 : 0.0;
    }
    return rows;
}

double affine(std::span<const double> w, double b, std::span<const double> x) {
    double z = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) z += w[j] * x[j];
    return z + b;
}

double clip_prob(double p, double clip) { return std::clamp(p, clip, 1.0 - clip); }

double record_loss(double p, double y) { return y > 0.5 ? -std::log(p) : -std::log(1.0 - p); }

double mean_loss(std::span<const double> w, double b, const Rows& rows, double clip) {
    double total = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        total += record_loss(clip_prob(sigmoid(affine(w, b, rows.row(i))), clip), rows.y[i]);
    }
    return total / static_cast<double>(rows.size());
}

// Mean gradient over rows[indices]; weight decay applied to the weight block.
void batch_gradient(std::span<const double> w, double b, const Rows& rows, std::span<const std::size_t> indices,
                    double weight_decay, Gradient& g) {
    std::fill(g.weights.begin(), g.weights.end(), 0.0);
    g.bias = 0.0;
    for (std::size_t i : indices) {
        const auto x = rows.row(i);
        const double residual = sigmoid(affine(w, b, x)) - rows.y[i];
        for (std::size_t j = 0; j < x.size(); ++j) g.weights[j] += residual * x[j];
        g.bias += residual;
    }
    const double inv = 1.0 / static_cast<double>(indices.size());
    for (std::size_t j = 0; j < g.weights.size(); ++j) g.weights[j] = g.weights[j] * inv + weight_decay * w[j];
    g.bias *= inv;
}

void check_dim(const LinearProbe& probe, std::size_t n) {
    if (n != probe.dim) {
        throw ValidationError("vector has length " + std::to_string(n) + ", probe dim is " + std::to_string(probe.dim));
    }
}

class Adam {
public:
    Adam(std::size_t n, const TrainConfig& cfg) : cfg_(cfg), m_(n + 1, 0.0), v_(n + 1, 0.0) {}

    // Parameters are the weights followed by the bias.
    void step(std::vector<double>& w, double& b, const Gradient& g) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(t_));
        auto update = [&](double& param, double grad, std::size_t k) {
            m_[k] = cfg_.adam_beta1 * m_[k] + (1.0 - cfg_.adam_beta1) * grad;
            v_[k] = cfg_.adam_beta2 * v_[k] + (1.0 - cfg_.adam_beta2) * grad * grad;
            const double m_hat = m_[k] / c1;
            const double v_hat = v_[k] / c2;
            param -= cfg_.learning_rate * m_hat / (std::sqrt(v_hat) + cfg_.adam_epsilon);
        };
        for (std::size_t j = 0; j < w.size(); ++j) update(w[j], g.weights[j], j);
        update(b, g.bias, w.size());
    }

private:
    const TrainConfig& cfg_;
    std::vector<double> m_;
    std::vector<double> v_;
    std::uint64_t t_ = 0;
};

}  // namespace

LinearProbe LinearProbe::zeros(std::uint32_t dim, std::vector<std::string> input_backbones) {
    LinearProbe p;
    p.dim = dim;
    p.weights.assign(dim, 0.0);
    p.input_backbones = std::move(input_backbones);
    return p;
}

void validate(const LinearProbe& probe) {
    if (probe.dim == 0) throw ValidationError("probe dim must be positive");
    if (probe.weights.size() != probe.dim) {
        throw ValidationError("probe has " + std::to_string(probe.weights.size()) + " weights for dim " +
                              std::to_string(probe.dim));
    }
    for (double w : probe.weights) {
        if (!std::isfinite(w)) throw ValidationError("probe has a non-finite weight");
    }
    if (!std::isfinite(probe.bias)) throw ValidationError("probe has a non-finite bias");
}

void validate(const TrainConfig& c) {
    if (!(c.learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
    if (c.batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (!(c.prob_clip_epsilon > 0.0 && c.prob_clip_epsilon < 0.5)) {
        throw ValidationError("prob_clip_epsilon must lie in (0, 0.5)");
    }
    if (!(c.adam_beta1 >= 0.0 && c.adam_beta1 < 1.0) || !(c.adam_beta2 >= 0.0 && c.adam_beta2 < 1.0)) {
        throw ValidationError("adam betas must lie in [0, 1)");
    }
    if (!(c.adam_epsilon > 0.0)) throw ValidationError("adam_epsilon must be > 0");
    if (!(c.weight_decay >= 0.0)) throw ValidationError("weight_decay must be >= 0");
    if (c.early_stop && !(c.early_stop->min_delta >= 0.0)) throw ValidationError("early_stop.min_delta must be >= 0");
}

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double logit(const LinearProbe& probe, std::span<const float> vector) {
    check_dim(probe, vector.size());
    std::vector<double> x(vector.size());
    load_row(vector, probe.l2_normalize, x.data());
    return affine(probe.weights, probe.bias, x);
}

double predict(const LinearProbe& probe, std::span<const float> vector, double clip) {
    return clip_prob(sigmoid(logit(probe, vector)), clip);
}

double bce_loss(const LinearProbe& probe, const EmbeddingBank& bank, double clip) {
    if (bank.empty()) throw ValidationError("bce_loss of an empty bank");
    check_dim(probe, bank.dim);
    const Rows rows = to_rows(bank.records, probe.dim, probe.l2_normalize);
    return mean_loss(probe.weights, probe.bias, rows, clip);
}

Gradient loss_gradient(const LinearProbe& probe, std::span<const EmbeddingRecord> batch, double weight_decay) {
    if (batch.empty()) throw ValidationError("loss_gradient of an empty batch");
    const Rows rows = to_rows(batch, probe.dim, probe.l2_normalize);
    std::vector<std::size_t> all(rows.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    Gradient g{std::vector<double>(probe.dim), 0.0};
    batch_gradient(probe.weights, probe.bias, rows, all, weight_decay, g);
    return g;
}

std::vector<std::string> split_backbone_id(const std::string& backbone_id) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const auto pos = backbone_id.find('+', start);
        parts.push_back(backbone_id.substr(start, pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return parts;
}

TrainResult train_probe(const EmbeddingBank& train, const std::optional<EmbeddingBank>& val,
                        const TrainConfig& config) {
    validate(config);
    validate(train);
    const bool has_real = std::any_of(train.records.begin(), train.records.end(),
                                      [](const auto& r) { return r.label == Label::Real; });
    const bool has_fake = std::any_of(train.records.begin(), train.records.end(),
                                      [](const auto& r) { return r.label == Label::Fake; });
    if (!has_real || !has_fake) {
        throw TrainingError("training bank must contain both real and fake records");
    }
    if (val) {
        if (val->dim != train.dim) {
            throw ValidationError("validation bank dim " + std::to_string(val->dim) + " differs from training dim " +
                                  std::to_string(train.dim));
        }
        if (val->empty()) throw ValidationError("validation bank is empty");
    }

    TrainResult result;
    LinearProbe& probe = result.probe;
    probe = LinearProbe::zeros(train.dim, split_backbone_id(train.backbone_id));
    probe.l2_normalize = config.l2_normalize;
    probe.trained_on = train.backbone_id;
    probe.config_digest = config_digest(config);

    const Rows rows = to_rows(train.records, train.dim, config.l2_normalize);
    std::optional<Rows> val_rows;
    if (val) val_rows = to_rows(val->records, val->dim, config.l2_normalize);

    // Id order makes the visiting sequence independent of the input order.
    std::vector<std::size_t> order(rows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return train.records[a].id < train.records[b].id; });

    Rng rng(config.seed);
    Adam adam(train.dim, config);
    Gradient g{std::vector<double>(train.dim), 0.0};
    double best = std::numeric_limits<double>::infinity();
    std::size_t stale = 0;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(std::span(order));
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t len = std::min(config.batch_size, order.size() - start);
            batch_gradient(probe.weights, probe.bias, rows, std::span(order).subspan(start, len),
                           config.weight_decay, g);
            adam.step(probe.weights, probe.bias, g);
        }

        const double loss = mean_loss(probe.weights, probe.bias, rows, config.prob_clip_epsilon);
        if (!std::isfinite(loss)) {
            throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch + 1));
        }
        result.history.train_loss.push_back(loss);
        double monitored = loss;
        if (val_rows) {
            const double vl = mean_loss(probe.weights, probe.bias, *val_rows, config.prob_clip_epsilon);
            if (!std::isfinite(vl)) {
                throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch + 1));
            }
            result.history.val_loss.push_back(vl);
            monitored = vl;
        }
        result.history.epochs_run = epoch + 1;

        if (config.early_stop) {
            if (monitored < best - config.early_stop->min_delta) {
                best = monitored;
                stale = 0;
            } else if (++stale >= config.early_stop->patience) {
                break;
            }
        }
    }
    return result;
}

std::string probe_to_json(const LinearProbe& probe) {
    validate(probe);
    nlohmann::ordered_json doc;
    doc["format"] = "sidprobe-v1";
    doc["dim"] = probe.dim;
    doc["input_backbones"] = probe.input_backbones;
    doc["weights"] = probe.weights;
    doc["bias"] = probe.bias;
    doc["trained_on"] = probe.trained_on;
    doc["config_digest"] = probe.config_digest;
    if (probe.l2_normalize) doc["l2_normalize"] = true;
    return doc.dump(2) + "\n";
}

LinearProbe probe_from_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(FormatErrorKind::Schema, std::string("probe is not valid JSON: ") + e.what());
    }
    auto require = [&](const char* key, auto check, const char* type) -> const nlohmann::json& {
        if (!doc.is_object() || !doc.contains(key)) {
            throw FormatError(FormatErrorKind::Schema, std::string("probe is missing \"") + key + "\"");
        }
        const auto& v = doc.at(key);
        if (!check(v)) {
            throw FormatError(FormatErrorKind::Schema, std::string("probe field \"") + key + "\" must be " + type);
        }
        return v;
    };
    const auto is_string = [](const nlohmann::json& v) { return v.is_string(); };
    const auto is_number = [](const nlohmann::json& v) { return v.is_number(); };
    const auto is_array = [](const nlohmann::json& v) { return v.is_array(); };

    if (require("format", is_string, "a string").get<std::string>() != "sidprobe-v1") {
        throw FormatError(FormatErrorKind::Schema, "unknown probe format " + doc.at("format").dump());
    }
    const auto& dim = require("dim", [](const auto& v) { return v.is_number_unsigned() && v.template get<std::uint64_t>() > 0 && v.template get<std::uint64_t>() <= UINT32_MAX; },
                              "a positive integer");
    const auto& backbones = require("input_backbones", is_array, "an array of strings");
    const auto& weights = require("weights", is_array, "an array of numbers");
    const auto& bias = require("bias", is_number, "a number");
    const auto& trained_on = require("trained_on", is_string, "a string");
    const auto& digest = require("config_digest", is_string, "a string");

    LinearProbe probe;
    probe.dim = dim.get<std::uint32_t>();
    for (const auto& b : backbones) {
        if (!b.is_string()) throw FormatError(FormatErrorKind::Schema, "input_backbones entries must be strings");
        probe.input_backbones.push_back(b.get<std::string>());
    }
    if (weights.size() != probe.dim) {
        throw FormatError(FormatErrorKind::DimMismatch, "probe declares dim " + std::to_string(probe.dim) + " but has " +
                                                             std::to_string(weights.size()) + " weights");
    }
    for (const auto& w : weights) {
        if (!w.is_number()) throw FormatError(FormatErrorKind::Schema, "weights entries must be numbers");
        probe.weights.push_back(w.get<double>());
    }
    probe.bias = bias.get<double>();
    probe.trained_on = trained_on.get<std::string>();
    probe.config_digest = digest.get<std::string>();
    if (doc.contains("l2_normalize")) {
        if (!doc["l2_normalize"].is_boolean()) throw FormatError(FormatErrorKind::Schema, "l2_normalize must be a boolean");
        probe.l2_normalize = doc["l2_normalize"].get<bool>();
    }
    try {
        validate(probe);
    } catch (const ValidationError& e) {
        throw FormatError(FormatErrorKind::NonFinite, e.what());
    }
    return probe;
}

void save_probe(const LinearProbe& probe, const std::filesystem::path& path) {
    detail::write_text_file(path, probe_to_json(probe));
}

LinearProbe load_probe(const std::filesystem::path& path) { return probe_from_json(detail::read_text_file(path)); }

}  // namespace sid
