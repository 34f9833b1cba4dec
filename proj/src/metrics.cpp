#include "sid/metrics.hpp"

#include "sid/error.hpp"
#include "text_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_map>

namespace sid {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) {
        throw ValidationError("scores and labels differ in length (" + std::to_string(scores.size()) + " vs " +
                              std::to_string(labels.size()) + ")");
    }
    if (scores.empty()) throw ValidationError("no scores");
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) throw ValidationError("score " + std::to_string(i) + " is not finite");
        if (labels[i] != 0 && labels[i] != 1) throw ValidationError("label " + std::to_string(i) + " is not 0 or 1");
    }
}

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

double mean_of(const std::vector<GeneratorMetrics>& rows, double GeneratorMetrics::*field) {
    double sum = 0.0;
    for (const auto& r : rows) sum += r.*field;
    return sum / static_cast<double>(rows.size());
}

}  // namespace

double average_precision(std::span<const double> scores, std::span<const int> labels) {
    check_inputs(scores, labels);
    const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    if (positives == 0) throw ValidationError("average precision needs at least one positive label");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    // Every recall step is 1/positives, so sum the precisions and divide once.
    double precision_sum = 0.0;
    std::size_t tp = 0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        if (labels[order[rank]] != 1) continue;
        ++tp;
        precision_sum += static_cast<double>(tp) / static_cast<double>(rank + 1);
    }
    return precision_sum / static_cast<double>(positives);
}

ClassAccuracy balanced_accuracy(std::span<const double> scores, std::span<const int> labels, double threshold) {
    check_inputs(scores, labels);
    std::size_t n_real = 0, n_fake = 0, real_hit = 0, fake_hit = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted_fake = scores[i] >= threshold;
        if (labels[i] == 1) {
            ++n_fake;
            fake_hit += predicted_fake;
        } else {
            ++n_real;
            real_hit += !predicted_fake;
        }
    }
    if (n_real == 0 || n_fake == 0) throw ValidationError("balanced accuracy needs both real and fake records");
    ClassAccuracy acc;
    acc.real_acc = static_cast<double>(real_hit) / static_cast<double>(n_real);
    acc.fake_acc = static_cast<double>(fake_hit) / static_cast<double>(n_fake);
    acc.balanced = (acc.real_acc + acc.fake_acc) / 2.0;
    return acc;
}

void update_aggregates(EvalReport& report) {
    if (report.generators.empty()) throw ValidationError("report has no generator rows");
    report.map = mean_of(report.generators, &GeneratorMetrics::ap);
    report.avg_acc = mean_of(report.generators, &GeneratorMetrics::balanced_acc);
}

EvalReport evaluate(const LinearProbe& probe, const EmbeddingBank& bank, double threshold) {
    if (bank.dim != probe.dim) {
        throw ValidationError("bank dim " + std::to_string(bank.dim) + " does not match probe dim " +
                              std::to_string(probe.dim));
    }
    if (bank.empty()) throw ValidationError("cannot evaluate on an empty bank");

    struct Group {
        std::vector<double> logits;
        std::vector<double> probs;
        std::vector<int> labels;
    };
    const auto tags = generator_tags(bank);
    std::unordered_map<std::string, Group> groups;
    for (const auto& r : bank.records) {
        auto& g = groups[r.generator_tag];
        const double z = logit(probe, r.vector);
        g.logits.push_back(z);
        g.probs.push_back(std::clamp(sigmoid(z), kDefaultProbClip, 1.0 - kDefaultProbClip));
        g.labels.push_back(to_int(r.label));
    }

    EvalReport report;
    report.backbones = probe.input_backbones;
    report.config_digest = probe.config_digest;
    report.threshold = threshold;
    for (const auto& tag : tags) {
        const auto& g = groups.at(tag);
        GeneratorMetrics m;
        m.generator_tag = tag;
        m.n_fake = static_cast<std::size_t>(std::count(g.labels.begin(), g.labels.end(), 1));
        m.n_real = g.labels.size() - m.n_fake;
        if (m.n_real == 0 || m.n_fake == 0) {
            throw ValidationError("generator '" + tag + "' has " + std::to_string(m.n_real) + " real and " +
                                  std::to_string(m.n_fake) + " fake records; both classes are required");
        }
        // Ranking by logit avoids ties introduced by probability saturation.
        m.ap = average_precision(g.logits, g.labels);
        const auto acc = balanced_accuracy(g.probs, g.labels, threshold);
        m.real_acc = acc.real_acc;
        m.fake_acc = acc.fake_acc;
        m.balanced_acc = acc.balanced;
        report.generators.push_back(std::move(m));
    }
    update_aggregates(report);
    return report;
}

std::string report_to_csv(const EvalReport& report) {
    std::string out = "tag,ap,real_acc,fake_acc,balanced_acc,n_real,n_fake\n";
    std::size_t n_real = 0, n_fake = 0;
    for (const auto& g : report.generators) {
        out += detail::csv_field(g.generator_tag) + "," + fixed6(g.ap) + "," + fixed6(g.real_acc) + "," + fixed6(g.fake_acc) +
               "," + fixed6(g.balanced_acc) + "," + std::to_string(g.n_real) + "," + std::to_string(g.n_fake) + "\n";
        n_real += g.n_real;
        n_fake += g.n_fake;
    }
    out += "TOTAL," + fixed6(report.map) + "," + fixed6(mean_of(report.generators, &GeneratorMetrics::real_acc)) + "," +
           fixed6(mean_of(report.generators, &GeneratorMetrics::fake_acc)) + "," + fixed6(report.avg_acc) + "," +
           std::to_string(n_real) + "," + std::to_string(n_fake) + "\n";
    return out;
}

std::string report_to_json(const EvalReport& report) {
    nlohmann::ordered_json doc;
    doc["backbones"] = report.backbones;
    doc["config_digest"] = report.config_digest;
    doc["threshold"] = report.threshold;
    auto rows = nlohmann::ordered_json::array();
    for (const auto& g : report.generators) {
        nlohmann::ordered_json row;
        row["tag"] = g.generator_tag;
        row["ap"] = g.ap;
        row["real_acc"] = g.real_acc;
        row["fake_acc"] = g.fake_acc;
        row["balanced_acc"] = g.balanced_acc;
        row["n_real"] = g.n_real;
        row["n_fake"] = g.n_fake;
        rows.push_back(std::move(row));
    }
    doc["generators"] = std::move(rows);
    doc["mAP"] = report.map;
    doc["avg_acc"] = report.avg_acc;
    return doc.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
    try {
        const auto doc = nlohmann::json::parse(text);
        EvalReport report;
        report.backbones = doc.at("backbones").get<std::vector<std::string>>();
        report.config_digest = doc.at("config_digest").get<std::string>();
        report.threshold = doc.at("threshold").get<double>();
        for (const auto& row : doc.at("generators")) {
            GeneratorMetrics g;
            g.generator_tag = row.at("tag").get<std::string>();
            g.ap = row.at("ap").get<double>();
            g.real_acc = row.at("real_acc").get<double>();
            g.fake_acc = row.at("fake_acc").get<double>();
            g.balanced_acc = row.at("balanced_acc").get<double>();
            g.n_real = row.at("n_real").get<std::size_t>();
            g.n_fake = row.at("n_fake").get<std::size_t>();
            report.generators.push_back(std::move(g));
        }
        report.map = doc.at("mAP").get<double>();
        report.avg_acc = doc.at("avg_acc").get<double>();
        return report;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatErrorKind::Schema, std::string("report JSON: ") + e.what());
    }
}

void write_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format) {
    const std::string text = format == ReportFormat::Csv ? report_to_csv(report) : report_to_json(report);
    detail::write_text_file(path, text);
}

}  // namespace sid
