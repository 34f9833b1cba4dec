#include "sid/cli.hpp"

#include "sid/bank.hpp"
#include "sid/config.hpp"
#include "sid/error.hpp"
#include "sid/fusion.hpp"
#include "sid/metrics.hpp"
#include "sid/probe.hpp"
#include "sid/projection.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>

namespace sid::cli {

namespace {

class UsageError : public Error {
public:
    using Error::Error;
};

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

// Binds every leaf of the chosen config sections to a `--section.key`
// option. Aliases give the bare key (and its hyphenated spelling) where
// the command has no conflicting use for it.
class ConfigOptions {
public:
    ConfigOptions(CLI::App& app, const std::vector<std::string>& sections,
                  const std::map<std::string, std::vector<std::string>>& aliases) {
        app.add_option("--config", config_path_, "JSON config file; flags override its values");
        const RunConfig defaults;
        for (const auto& key : defaults.leaf_keys()) {
            const auto section = key.substr(0, key.find('.'));
            if (std::find(sections.begin(), sections.end(), section) == sections.end()) continue;
            std::string names = "--" + key;
            if (const auto it = aliases.find(key); it != aliases.end()) {
                for (const auto& alias : it->second) names += ",--" + alias;
            }
            values_[key];
            options_[key] = app.add_option(names, values_[key], "default: " + leaf_text(defaults, key));
        }
    }

    RunConfig resolve() const {
        RunConfig config;
        if (!config_path_.empty()) config.merge_file(config_path_);
        for (const auto& [key, option] : options_) {
            if (option->count() > 0) config.set(key, values_.at(key));
        }
        return config;
    }

private:
    static std::string leaf_text(const RunConfig& config, const std::string& key) {
        const nlohmann::json* node = &config.tree();
        std::size_t start = 0;
        while (true) {
            const auto dot = key.find('.', start);
            node = &node->at(key.substr(start, dot - start));
            if (dot == std::string::npos) break;
            start = dot + 1;
        }
        return node->is_string() ? node->get<std::string>() : node->dump();
    }

    std::string config_path_;
    std::map<std::string, std::string> values_;
    std::map<std::string, CLI::Option*> options_;
};

std::map<std::string, std::vector<std::string>> bare_aliases(const std::vector<std::string>& sections,
                                                             const std::vector<std::string>& skip = {}) {
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& key : RunConfig().leaf_keys()) {
        const auto dot = key.find('.');
        if (std::find(sections.begin(), sections.end(), key.substr(0, dot)) == sections.end()) continue;
        if (std::find(skip.begin(), skip.end(), key) != skip.end()) continue;
        const std::string bare = key.substr(dot + 1);
        auto& names = out[key];
        names.push_back(bare);
        std::string hyphen = bare;
        std::replace(hyphen.begin(), hyphen.end(), '_', '-');
        if (hyphen != bare) names.push_back(hyphen);
    }
    return out;
}

std::string require_path(const RunConfig& config, const std::string& name) {
    const auto p = config.path(name);
    if (p.empty()) throw UsageError("missing required --" + name);
    return p;
}

int cmd_synth(const RunConfig& config, std::ostream& out, std::ostream& err) {
    const auto spec_path = require_path(config, "spec");
    const auto out_path = require_path(config, "out");
    const SynthSpec spec = load_synth_spec(spec_path);
    const EmbeddingBank bank = synth_bank(spec);
    write_bank(bank, out_path);
    err << "synth: wrote " << bank.size() << " records of dim " << bank.dim << " to " << out_path << "\n";
    out << "records=" << bank.size() << " dim=" << bank.dim << "\n";
    return kExitOk;
}

int cmd_train(const RunConfig& config, std::ostream& out, std::ostream& err) {
    const auto bank_path = require_path(config, "bank");
    const auto out_path = require_path(config, "out");
    const TrainConfig train_config = config.train();
    const EmbeddingBank train = read_bank(bank_path);
    std::optional<EmbeddingBank> val;
    if (!config.path("val").empty()) val = read_bank(config.path("val"));

    err << "train: " << train.size() << " records, dim " << train.dim << ", " << train_config.epochs << " epochs\n";
    TrainResult result = train_probe(train, val, train_config);
    result.probe.trained_on = std::filesystem::path(bank_path).filename().string();
    save_probe(result.probe, out_path);

    const auto& h = result.history;
    for (std::size_t e = 0; e < h.epochs_run; ++e) {
        if ((e + 1) % 10 == 0 || e + 1 == h.epochs_run) {
            err << "  epoch " << (e + 1) << " train_loss " << fmt6(h.train_loss[e]);
            if (!h.val_loss.empty()) err << " val_loss " << fmt6(h.val_loss[e]);
            err << "\n";
        }
    }
    out << "epochs_run=" << h.epochs_run;
    if (h.epochs_run > 0) out << " train_loss=" << fmt6(h.train_loss.back());
    if (!h.val_loss.empty()) out << " val_loss=" << fmt6(h.val_loss.back());
    out << "\n";
    return kExitOk;
}

int cmd_eval(const RunConfig& config, std::ostream& out, std::ostream& err) {
    const auto probe_path = require_path(config, "probe");
    const auto bank_path = require_path(config, "bank");
    const std::string format = config.eval_format();
    if (format != "csv" && format != "json") throw UsageError("--format must be csv or json");
    const ReportFormat fmt = format == "csv" ? ReportFormat::Csv : ReportFormat::Json;

    const LinearProbe probe = load_probe(probe_path);
    const EmbeddingBank bank = read_bank(bank_path);
    const EvalReport report = evaluate(probe, bank, config.threshold());
    if (config.path("report").empty()) {
        out << (fmt == ReportFormat::Csv ? report_to_csv(report) : report_to_json(report));
    } else {
        write_report(report, config.path("report"), fmt);
        err << "eval: wrote " << report.generators.size() << " generator rows to " << config.path("report") << "\n";
    }
    out << "mAP=" << fmt6(report.map) << " avg_acc=" << fmt6(report.avg_acc) << "\n";
    return kExitOk;
}

int cmd_fuse(const std::vector<std::string>& banks, const std::string& out_path, bool allow_duplicates, bool l2,
             std::ostream& out, std::ostream& err) {
    if (out_path.empty()) throw UsageError("missing required --out");
    FusionSpec spec;
    spec.allow_duplicate_backbones = allow_duplicates;
    for (const auto& path : banks) spec.sources.push_back({read_bank(path), l2});
    const EmbeddingBank fused = fuse_banks(spec);
    write_bank(fused, out_path);
    err << "fuse: " << banks.size() << " banks -> " << out_path << "\n";
    out << "dim=" << fused.dim << " records=" << fused.size() << " backbone=" << fused.backbone_id << "\n";
    return kExitOk;
}

int cmd_project(const RunConfig& config, std::ostream& out, std::ostream& err) {
    const auto bank_path = require_path(config, "bank");
    const auto out_path = require_path(config, "out");
    const ProjectionParams params = config.projection();
    EmbeddingBank bank = read_bank(bank_path);
    if (config.sample_size() > 0) bank = sample_stratified(bank, config.sample_size(), config.sample_seed());
    err << "project: " << bank.size() << " records, n_neighbors " << params.n_neighbors << ", " << params.n_epochs
        << " epochs, " << to_string(params.metric) << "\n";
    const Projection2D projection = umap_project(bank, params);
    write_projection(projection, out_path);
    out << "points=" << projection.size() << "\n";
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Synthetic-image detection in embedding space", "sidtool"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "Generate a Gaussian-cluster bank from a JSON spec");
    ConfigOptions synth_opts(*synth, {"paths"}, {{"paths.spec", {"spec"}}, {"paths.out", {"out"}}});

    auto* train = app.add_subcommand("train", "Train a linear probe on a bank");
    auto train_aliases = bare_aliases({"train"});
    train_aliases["paths.bank"] = {"bank"};
    train_aliases["paths.val"] = {"val"};
    train_aliases["paths.out"] = {"out"};
    ConfigOptions train_opts(*train, {"train", "paths"}, train_aliases);

    auto* eval = app.add_subcommand("eval", "Evaluate a probe per generator");
    ConfigOptions eval_opts(*eval, {"eval", "paths"},
                            {{"eval.threshold", {"threshold"}},
                             {"eval.format", {"format"}},
                             {"paths.probe", {"probe"}},
                             {"paths.bank", {"bank"}},
                             {"paths.report", {"report"}}});

    auto* fuse = app.add_subcommand("fuse", "Concatenate aligned banks from several backbones");
    std::vector<std::string> fuse_banks_in;
    std::string fuse_out;
    bool allow_duplicates = false, l2_per_bank = false;
    fuse->add_option("--banks", fuse_banks_in, "Input EBANK files, in concatenation order")->expected(1, -1)->required();
    fuse->add_option("--out", fuse_out, "Output EBANK file");
    fuse->add_flag("--allow-duplicate-backbones", allow_duplicates, "Permit repeated backbone ids");
    fuse->add_flag("--l2-per-bank", l2_per_bank, "L2-normalize each source before concatenation");

    auto* project = app.add_subcommand("project", "UMAP projection to a 2-D CSV");
    auto project_aliases = bare_aliases({"projection"}, {"projection.seed"});
    project_aliases["paths.bank"] = {"bank"};
    project_aliases["paths.out"] = {"out"};
    project_aliases["sample.size"] = {"sample"};
    project_aliases["sample.seed"] = {"seed"};
    ConfigOptions project_opts(*project, {"projection", "sample", "paths"}, project_aliases);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_opts.resolve(), out, err);
        if (train->parsed()) return cmd_train(train_opts.resolve(), out, err);
        if (eval->parsed()) return cmd_eval(eval_opts.resolve(), out, err);
        if (fuse->parsed()) return cmd_fuse(fuse_banks_in, fuse_out, allow_duplicates, l2_per_bank, out, err);
        if (project->parsed()) return cmd_project(project_opts.resolve(), out, err);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const IoError& e) {
        err << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kExitDomain;
    }
    return kExitUsage;
}

}  // namespace sid::cli
