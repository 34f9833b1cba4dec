#include "sid/config.hpp"

#include "sid/error.hpp"
#include "text_io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

namespace sid {

namespace {

using nlohmann::json;

json defaults_tree() {
    const TrainConfig t;
    const ProjectionParams p;
    const EarlyStop es;
    json tree;
    tree["train"] = {
        {"learning_rate", t.learning_rate},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"adam_beta1", t.adam_beta1},
        {"adam_beta2", t.adam_beta2},
        {"adam_epsilon", t.adam_epsilon},
        {"weight_decay", t.weight_decay},
        {"prob_clip_epsilon", t.prob_clip_epsilon},
        {"seed", t.seed},
        {"l2_normalize", t.l2_normalize},
        {"early_stop", {{"enabled", false}, {"patience", es.patience}, {"min_delta", es.min_delta}}},
    };
    tree["projection"] = {
        {"n_neighbors", p.n_neighbors},
        {"min_dist", p.min_dist},
        {"n_epochs", p.n_epochs},
        {"metric", to_string(p.metric)},
        {"seed", p.seed},
        {"negative_sample_rate", p.negative_sample_rate},
    };
    tree["eval"] = {{"threshold", 0.5}, {"format", "csv"}};
    tree["sample"] = {{"size", 0u}, {"seed", 0u}};
    tree["paths"] = {{"spec", ""}, {"bank", ""}, {"val", ""}, {"probe", ""}, {"out", ""}, {"report", ""}};
    return tree;
}

// Replaces `target` (a default leaf) with `value` when the types agree.
void assign_leaf(json& target, const json& value, const std::string& key) {
    if (target.is_number_unsigned()) {
        if (value.is_number_unsigned() || (value.is_number_integer() && value.get<std::int64_t>() >= 0)) {
            target = value.get<std::uint64_t>();
            return;
        }
        throw ValidationError("config key '" + key + "' must be a non-negative integer");
    }
    if (target.is_number_float()) {
        if (value.is_number() && std::isfinite(value.get<double>())) {
            target = value.get<double>();
            return;
        }
        throw ValidationError("config key '" + key + "' must be a finite number");
    }
    if (target.is_boolean()) {
        if (!value.is_boolean()) throw ValidationError("config key '" + key + "' must be a boolean");
        target = value;
        return;
    }
    if (!value.is_string()) throw ValidationError("config key '" + key + "' must be a string");
    target = value;
}

void merge_into(json& target, const json& source, const std::string& prefix) {
    if (!source.is_object()) throw ValidationError("config section '" + prefix + "' must be an object");
    for (const auto& [key, value] : source.items()) {
        const std::string dotted = prefix.empty() ? key : prefix + "." + key;
        if (!target.contains(key)) throw ValidationError("unknown config key '" + dotted + "'");
        json& slot = target[key];
        if (slot.is_object()) {
            merge_into(slot, value, dotted);
        } else {
            assign_leaf(slot, value, dotted);
        }
    }
}

void collect_leaves(const json& node, const std::string& prefix, std::vector<std::string>& out) {
    for (const auto& [key, value] : node.items()) {
        const std::string dotted = prefix.empty() ? key : prefix + "." + key;
        if (value.is_object()) {
            collect_leaves(value, dotted, out);
        } else {
            out.push_back(dotted);
        }
    }
}

template <typename T>
bool parse_number(const std::string& text, T& out) {
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, out);
    return ec == std::errc() && ptr == end;
}

}  // namespace

std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

json to_json(const TrainConfig& c) {
    json doc = {
        {"learning_rate", c.learning_rate},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"adam_beta1", c.adam_beta1},
        {"adam_beta2", c.adam_beta2},
        {"adam_epsilon", c.adam_epsilon},
        {"weight_decay", c.weight_decay},
        {"prob_clip_epsilon", c.prob_clip_epsilon},
        {"seed", c.seed},
        {"l2_normalize", c.l2_normalize},
    };
    doc["early_stop"] = c.early_stop ? json{{"patience", c.early_stop->patience}, {"min_delta", c.early_stop->min_delta}}
                                     : json(nullptr);
    return doc;
}

std::string config_digest(const TrainConfig& config) { return fnv1a_hex(to_json(config).dump()); }

RunConfig::RunConfig() : tree_(defaults_tree()) {}

void RunConfig::merge_json(const nlohmann::json& doc) { merge_into(tree_, doc, ""); }

void RunConfig::merge_file(const std::filesystem::path& path) {
    const std::string text = detail::read_text_file(path);
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    merge_json(doc);
}

void RunConfig::set(const std::string& dotted_key, const std::string& value) {
    json* node = &tree_;
    std::size_t start = 0;
    while (true) {
        const auto dot = dotted_key.find('.', start);
        const std::string part = dotted_key.substr(start, dot - start);
        if (!node->is_object() || !node->contains(part)) {
            throw ValidationError("unknown config key '" + dotted_key + "'");
        }
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    if (node->is_object()) throw ValidationError("config key '" + dotted_key + "' is a section, not a value");

    json parsed;
    if (node->is_number_unsigned()) {
        std::uint64_t v = 0;
        if (!parse_number(value, v)) throw ValidationError("'" + dotted_key + "' expects a non-negative integer, got '" + value + "'");
        parsed = v;
    } else if (node->is_number_float()) {
        double v = 0.0;
        if (!parse_number(value, v)) throw ValidationError("'" + dotted_key + "' expects a number, got '" + value + "'");
        parsed = v;
    } else if (node->is_boolean()) {
        if (value == "true" || value == "1") {
            parsed = true;
        } else if (value == "false" || value == "0") {
            parsed = false;
        } else {
            throw ValidationError("'" + dotted_key + "' expects true or false, got '" + value + "'");
        }
    } else {
        parsed = value;
    }
    assign_leaf(*node, parsed, dotted_key);
}

std::vector<std::string> RunConfig::leaf_keys() const {
    std::vector<std::string> keys;
    collect_leaves(tree_, "", keys);
    return keys;
}

TrainConfig RunConfig::train() const {
    const json& t = tree_.at("train");
    TrainConfig c;
    c.learning_rate = t.at("learning_rate").get<double>();
    c.epochs = t.at("epochs").get<std::size_t>();
    c.batch_size = t.at("batch_size").get<std::size_t>();
    c.adam_beta1 = t.at("adam_beta1").get<double>();
    c.adam_beta2 = t.at("adam_beta2").get<double>();
    c.adam_epsilon = t.at("adam_epsilon").get<double>();
    c.weight_decay = t.at("weight_decay").get<double>();
    c.prob_clip_epsilon = t.at("prob_clip_epsilon").get<double>();
    c.seed = t.at("seed").get<std::uint64_t>();
    c.l2_normalize = t.at("l2_normalize").get<bool>();
    const json& es = t.at("early_stop");
    if (es.at("enabled").get<bool>()) {
        c.early_stop = EarlyStop{es.at("patience").get<std::size_t>(), es.at("min_delta").get<double>()};
    }
    validate(c);
    return c;
}

ProjectionParams RunConfig::projection() const {
    const json& p = tree_.at("projection");
    ProjectionParams params;
    params.n_neighbors = p.at("n_neighbors").get<std::size_t>();
    params.min_dist = p.at("min_dist").get<double>();
    params.n_epochs = p.at("n_epochs").get<std::size_t>();
    params.metric = metric_from_string(p.at("metric").get<std::string>());
    params.seed = p.at("seed").get<std::uint64_t>();
    params.negative_sample_rate = p.at("negative_sample_rate").get<std::size_t>();
    return params;
}

double RunConfig::threshold() const { return tree_.at("eval").at("threshold").get<double>(); }

std::string RunConfig::eval_format() const { return tree_.at("eval").at("format").get<std::string>(); }

std::size_t RunConfig::sample_size() const { return tree_.at("sample").at("size").get<std::size_t>(); }

std::uint64_t RunConfig::sample_seed() const { return tree_.at("sample").at("seed").get<std::uint64_t>(); }

std::string RunConfig::path(const std::string& name) const { return tree_.at("paths").at(name).get<std::string>(); }

std::string RunConfig::digest() const { return fnv1a_hex(tree_.dump()); }

SynthSpec synth_spec_from_json(const nlohmann::json& doc) {
    try {
        SynthSpec spec;
        spec.dim = doc.at("dim").get<std::uint32_t>();
        spec.seed = doc.value("seed", std::uint64_t{0});
        spec.backbone_id = doc.value("backbone_id", std::string("synthetic"));
        const auto& clusters = doc.at("clusters");
        if (!clusters.is_array()) throw ValidationError("synth spec: clusters must be an array");
        for (std::size_t c = 0; c < clusters.size(); ++c) {
            const auto& cj = clusters[c];
            const std::string name = "synth spec: cluster " + std::to_string(c);
            SynthCluster cl;
            const auto& label = cj.at("label");
            if (label == "real" || label == 0) {
                cl.label = Label::Real;
            } else if (label == "fake" || label == 1) {
                cl.label = Label::Fake;
            } else {
                throw ValidationError(name + " has label " + label.dump() + " (expected real/fake or 0/1)");
            }
            cl.generator_tag = cj.at("generator_tag").get<std::string>();
            const auto& mean = cj.at("mean");
            if (mean.is_number()) {
                cl.mean.assign(spec.dim, mean.get<double>());
            } else {
                cl.mean = mean.get<std::vector<double>>();
            }
            cl.stddev = cj.at("stddev").get<double>();
            const auto& count = cj.at("count");
            if (!count.is_number_integer() || count.get<std::int64_t>() < 0) {
                throw ValidationError(name + " count must be a non-negative integer");
            }
            cl.count = count.get<std::size_t>();
            spec.clusters.push_back(std::move(cl));
        }
        validate(spec);
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("synth spec: ") + e.what());
    }
}

SynthSpec load_synth_spec(const std::filesystem::path& path) {
    const std::string text = detail::read_text_file(path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("synth spec '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return synth_spec_from_json(doc);
}

}  // namespace sid
