#pragma once

#include "sid/bank.hpp"
#include "sid/probe.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace sid {

inline constexpr double kDefaultThreshold = 0.5;

struct GeneratorMetrics {
    std::string generator_tag;
    double ap = 0.0;
    double real_acc = 0.0;
    double fake_acc = 0.0;
    double balanced_acc = 0.0;
    std::size_t n_real = 0;
    std::size_t n_fake = 0;

    bool operator==(const GeneratorMetrics&) const = default;
};

struct EvalReport {
    std::vector<std::string> backbones;
    std::string config_digest;
    double threshold = kDefaultThreshold;
    std::vector<GeneratorMetrics> generators;
    double map = 0.0;
    double avg_acc = 0.0;

    bool operator==(const EvalReport&) const = default;
};

struct ClassAccuracy {
    double real_acc = 0.0;
    double fake_acc = 0.0;
    double balanced = 0.0;
};

/// Non-interpolated AP: sum over positive ranks of (R_k - R_{k-1}) * P_k,
/// ranking by descending score with ties kept in input order.
double average_precision(std::span<const double> scores, std::span<const int> labels);

/// A record is predicted fake iff score >= threshold.
ClassAccuracy balanced_accuracy(std::span<const double> scores, std::span<const int> labels, double threshold);

/// Per-generator AP and class-averaged accuracy plus their unweighted means.
/// Generators appear in order of first appearance in the bank. Every
/// generator group must hold at least one real and one fake record.
EvalReport evaluate(const LinearProbe& probe, const EmbeddingBank& bank, double threshold = kDefaultThreshold);

/// Recomputes map/avg_acc from the generator rows.
void update_aggregates(EvalReport& report);

enum class ReportFormat { Json, Csv };

std::string report_to_csv(const EvalReport& report);
std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
void write_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format);

}  // namespace sid
