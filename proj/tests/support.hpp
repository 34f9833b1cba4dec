#pragma once

#include "sid/bank.hpp"
#include "sid/probe.hpp"
#include "sid/random.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

namespace sid::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("sid_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline EmbeddingRecord record(std::string id, Label label, std::string tag, std::vector<float> v) {
    return {std::move(id), label, std::move(tag), std::move(v)};
}

// Random valid bank: mixed labels and tags, ids r0..r{n-1}.
inline EmbeddingBank random_bank(Rng& rng, std::size_t n, std::uint32_t dim, std::size_t n_tags = 2) {
    EmbeddingBank bank{"rand_backbone", dim, {}};
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<float> v(dim);
        for (auto& x : v) x = static_cast<float>(rng.normal());
        bank.records.push_back(record("r" + std::to_string(i), rng.below(2) ? Label::Fake : Label::Real,
                                      "tag" + std::to_string(rng.below(n_tags)), std::move(v)));
    }
    return bank;
}

// Two isotropic unit-variance clusters, reals at -half and fakes at +half
// along the all-ones direction (so the centers are 2 * half apart).
inline SynthSpec two_clusters(std::uint32_t dim, double half, std::size_t per_class, std::uint64_t seed,
                              const std::string& tag = "g") {
    SynthSpec spec;
    spec.dim = dim;
    spec.seed = seed;
    const double c = half / std::sqrt(static_cast<double>(dim));
    spec.clusters.push_back({Label::Real, tag, std::vector<double>(dim, -c), 1.0, per_class});
    spec.clusters.push_back({Label::Fake, tag, std::vector<double>(dim, c), 1.0, per_class});
    return spec;
}

// Two aligned backbones over generators g1 and g2. Source A moves only g1's
// fakes (by `shift` along the all-ones direction) and source B only g2's, so
// each source on its own separates one generator. Cluster layout, ids and
// labels are shared; noise differs by seed.
inline std::pair<SynthSpec, SynthSpec> complementary_sources(std::uint32_t dim, std::size_t per_cluster,
                                                             double shift, std::uint64_t seed) {
    const double c = shift / std::sqrt(static_cast<double>(dim));
    auto make = [&](const std::string& backbone, bool moves_g1, std::uint64_t s) {
        SynthSpec spec;
        spec.dim = dim;
        spec.seed = s;
        spec.backbone_id = backbone;
        const std::vector<double> zero(dim, 0.0), moved(dim, c);
        spec.clusters.push_back({Label::Real, "g1", zero, 1.0, per_cluster});
        spec.clusters.push_back({Label::Fake, "g1", moves_g1 ? moved : zero, 1.0, per_cluster});
        spec.clusters.push_back({Label::Real, "g2", zero, 1.0, per_cluster});
        spec.clusters.push_back({Label::Fake, "g2", moves_g1 ? zero : moved, 1.0, per_cluster});
        return spec;
    };
    return {make("srcA", true, seed), make("srcB", false, seed + 1000)};
}

// Precision at each positive, with the rank of item i counted directly:
// 1 + #{j : s_j > s_i, or s_j == s_i and j < i}. No sorting involved.
inline double ap_oracle(const std::vector<double>& s, const std::vector<int>& y) {
    const std::size_t n = s.size();
    auto ahead = [&](std::size_t j, std::size_t i) { return s[j] > s[i] || (s[j] == s[i] && j < i); };
    long double sum = 0.0L;
    int positives = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (y[i] != 1) continue;
        ++positives;
        int rank = 1, tp = 1;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i || !ahead(j, i)) continue;
            ++rank;
            tp += y[j];
        }
        sum += static_cast<long double>(tp) / rank;
    }
    return static_cast<double>(sum / positives);
}

// ||analytic - central difference|| / ||central difference|| over weights and bias.
inline double fd_relative_error(const LinearProbe& probe, const EmbeddingBank& batch, double weight_decay) {
    const double h = 1e-5;
    const auto g = loss_gradient(probe, batch.records, weight_decay);
    auto objective = [&](const LinearProbe& p) {
        double reg = 0.0;
        for (double w : p.weights) reg += w * w;
        return bce_loss(p, batch) + 0.5 * weight_decay * reg;
    };
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j <= probe.dim; ++j) {
        LinearProbe plus = probe, minus = probe;
        double& up = j < probe.dim ? plus.weights[j] : plus.bias;
        double& down = j < probe.dim ? minus.weights[j] : minus.bias;
        up += h;
        down -= h;
        const double fd = (objective(plus) - objective(minus)) / (2.0 * h);
        const double analytic = j < probe.dim ? g.weights[j] : g.bias;
        num += (analytic - fd) * (analytic - fd);
        den += fd * fd;
    }
    return std::sqrt(num / den);
}

}  // namespace sid::test
