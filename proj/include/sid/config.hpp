#pragma once

#include "sid/bank.hpp"
#include "sid/probe.hpp"
#include "sid/projection.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace sid {

/// 64-bit FNV-1a of `text`, as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& text);

/// Canonical JSON of the effective training settings (sorted keys,
/// early_stop null when disabled).
nlohmann::json to_json(const TrainConfig& config);
std::string config_digest(const TrainConfig& config);

/// Effective settings of one run: built-in defaults, then a JSON config file,
/// then `--dotted.key value` overrides.
///
/// Key tree:
///   train.{learning_rate, epochs, batch_size, adam_beta1, adam_beta2,
///          adam_epsilon, weight_decay, prob_clip_epsilon, seed, l2_normalize,
///          early_stop.{enabled, patience, min_delta}}
///   projection.{n_neighbors, min_dist, n_epochs, metric, seed, negative_sample_rate}
///   eval.{threshold, format}
///   sample.{size, seed}
///   paths.{spec, bank, val, probe, out, report}
class RunConfig {
public:
    RunConfig();

    /// Merges a JSON document; unknown keys and type mismatches are errors.
    void merge_json(const nlohmann::json& doc);
    void merge_file(const std::filesystem::path& path);

    /// Sets one leaf from its textual form, parsed by the leaf's type.
    void set(const std::string& dotted_key, const std::string& value);

    /// Every leaf key in dotted form, in tree order.
    std::vector<std::string> leaf_keys() const;

    const nlohmann::json& tree() const { return tree_; }

    TrainConfig train() const;
    ProjectionParams projection() const;
    double threshold() const;
    std::string eval_format() const;
    std::size_t sample_size() const;
    std::uint64_t sample_seed() const;
    std::string path(const std::string& name) const;

    /// Hash of the canonical effective tree.
    std::string digest() const;

private:
    nlohmann::json tree_;
};

/// {"dim", "seed", "backbone_id"?, "clusters": [{"label": "real"|"fake"|0|1,
///  "generator_tag", "mean": [..] or scalar, "stddev", "count"}]}
SynthSpec synth_spec_from_json(const nlohmann::json& doc);
SynthSpec load_synth_spec(const std::filesystem::path& path);

}  // namespace sid
