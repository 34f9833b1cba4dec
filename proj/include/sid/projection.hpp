#pragma once

#include "sid/bank.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace sid {

enum class Metric { Euclidean, Cosine };

const char* to_string(Metric metric);
Metric metric_from_string(const std::string& name);

struct ProjectionParams {
    std::size_t n_neighbors = 15;
    double min_dist = 0.1;
    std::size_t n_epochs = 200;
    Metric metric = Metric::Cosine;
    std::uint64_t seed = 0;
    std::size_t negative_sample_rate = 5;
};

void validate(const ProjectionParams& params, std::size_t record_count);

struct Neighbor {
    std::uint32_t index = 0;
    double distance = 0.0;

    bool operator==(const Neighbor&) const = default;
};

/// Exact k nearest neighbors of every record (self excluded), sorted by
/// distance with ties broken by lower index.
struct KnnGraph {
    std::size_t k = 0;
    std::vector<Neighbor> entries;  // row-major, size() * k

    std::size_t size() const { return k == 0 ? 0 : entries.size() / k; }
    std::span<const Neighbor> neighbors(std::size_t i) const { return {entries.data() + i * k, k}; }
};

/// Euclidean: ||a - b||. Cosine: 1 - cos(a, b), computed as ||a/|a| - b/|b|||^2 / 2
/// so identical directions give exactly 0.
KnnGraph knn_graph(const EmbeddingBank& bank, std::size_t k, Metric metric);

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    bool operator==(const Point2&) const = default;
};

struct Projection2D {
    std::vector<Point2> points;
    std::vector<std::string> ids;
    std::vector<Label> labels;
    std::vector<std::string> generator_tags;

    std::size_t size() const { return points.size(); }
};

/// Parameters (a, b) of the low-dimensional similarity 1 / (1 + a d^(2b)),
/// least-squares fitted to the min_dist/spread target curve.
std::pair<double, double> fit_curve_params(double min_dist, double spread = 1.0);

/// UMAP layout: exact kNN, smooth-kNN bandwidths, fuzzy union, then a
/// single-stream seeded SGD with negative sampling from a uniform
/// [-10, 10]^2 start.
Projection2D umap_project(const EmbeddingBank& bank, const ProjectionParams& params);

/// Trustworthiness of a 2-D layout at neighborhood size k, in [0, 1].
/// Original-space ranks use `metric`.
double trustworthiness(const EmbeddingBank& bank, const Projection2D& projection, std::size_t k,
                       Metric metric = Metric::Euclidean);

/// CSV with columns id,x,y,label,generator_tag.
std::string projection_to_csv(const Projection2D& projection);
void write_projection(const Projection2D& projection, const std::filesystem::path& path);

}  // namespace sid
