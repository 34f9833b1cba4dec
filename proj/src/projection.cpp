#include "sid/projection.hpp"

#include "sid/error.hpp"
#include "sid/random.hpp"
#include "text_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <thread>

namespace sid {

namespace {

// Rows as doubles; unit-normalized for the cosine metric.
struct PointSet {
    std::size_t dim = 0;
    std::vector<double> x;

    std::size_t size() const { return dim == 0 ? 0 : x.size() / dim; }
    const double* row(std::size_t i) const { return x.data() + i * dim; }
};

PointSet prepare(const EmbeddingBank& bank, Metric metric) {
    PointSet ps;
    ps.dim = bank.dim;
    ps.x.resize(bank.size() * bank.dim);
    for (std::size_t i = 0; i < bank.size(); ++i) {
        const auto& v = bank.records[i].vector;
        if (v.size() != bank.dim) throw ValidationError("record '" + bank.records[i].id + "' has the wrong length");
        double scale = 1.0;
        if (metric == Metric::Cosine) {
            double sq = 0.0;
            for (float f : v) sq += static_cast<double>(f) * f;
            if (sq == 0.0) {
                throw ValidationError("record '" + bank.records[i].id + "' is a zero vector; cosine distance is undefined");
            }
            scale = 1.0 / std::sqrt(sq);
        }
        for (std::size_t j = 0; j < bank.dim; ++j) ps.x[i * bank.dim + j] = static_cast<double>(v[j]) * scale;
    }
    return ps;
}

double distance(const PointSet& ps, std::size_t a, std::size_t b, Metric metric) {
    const double* pa = ps.row(a);
    const double* pb = ps.row(b);
    double sq = 0.0;
    for (std::size_t j = 0; j < ps.dim; ++j) {
        const double d = pa[j] - pb[j];
        sq += d * d;
    }
    return metric == Metric::Cosine ? 0.5 * sq : std::sqrt(sq);
}

bool closer(const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
}

// Runs body(i) for i in [0, n), split across hardware threads. Each index
// is handled by exactly one thread, so per-index outputs are deterministic.
template <typename Body>
void parallel_for(std::size_t n, Body body) {
    const std::size_t workers =
        std::min<std::size_t>(std::max(1u, std::thread::hardware_concurrency()), std::max<std::size_t>(1, n / 64));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) body(i);
        });
    }
}

KnnGraph knn_of(const PointSet& ps, std::size_t k, Metric metric) {
    const std::size_t n = ps.size();
    KnnGraph graph;
    graph.k = k;
    graph.entries.resize(n * k);
    parallel_for(n, [&](std::size_t i) {
        std::vector<Neighbor> all;
        all.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) all.push_back({static_cast<std::uint32_t>(j), distance(ps, i, j, metric)});
        }
        std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), closer);
        std::copy_n(all.begin(), k, graph.entries.begin() + static_cast<std::ptrdiff_t>(i * k));
    });
    return graph;
}

struct Edge {
    std::uint32_t head;
    std::uint32_t tail;
    double weight;
};

constexpr int kBandwidthIterations = 64;
constexpr double kBandwidthTolerance = 1e-5;

// Directed membership strengths exp(-(d - rho_i) / sigma_i), with sigma_i
// chosen so each row sums to log2(k).
std::vector<Edge> membership_strengths(const EmbeddingBank& bank, const KnnGraph& knn) {
    const std::size_t n = knn.size();
    const std::size_t k = knn.k;
    const double target = std::log2(static_cast<double>(k));
    std::vector<Edge> edges;
    edges.reserve(n * k);

    for (std::size_t i = 0; i < n; ++i) {
        const auto nbrs = knn.neighbors(i);
        double rho = 0.0;
        for (const auto& nb : nbrs) {
            if (nb.distance > 0.0) {
                rho = nb.distance;
                break;
            }
        }

        double lo = 0.0, hi = std::numeric_limits<double>::infinity(), sigma = 1.0;
        bool converged = false;
        for (int it = 0; it < kBandwidthIterations; ++it) {
            double psum = 0.0;
            for (const auto& nb : nbrs) {
                const double d = nb.distance - rho;
                psum += d > 0.0 ? std::exp(-d / sigma) : 1.0;
            }
            if (std::abs(psum - target) < kBandwidthTolerance) {
                converged = true;
                break;
            }
            if (psum > target) {
                hi = sigma;
                sigma = 0.5 * (lo + hi);
            } else {
                lo = sigma;
                sigma = std::isinf(hi) ? sigma * 2.0 : 0.5 * (lo + hi);
            }
        }
        if (!converged) {
            throw ValidationError("bandwidth search did not converge for record '" + bank.records[i].id +
                                  "' (too many neighbors at the nearest distance)");
        }

        for (const auto& nb : nbrs) {
            const double d = nb.distance - rho;
            const double w = d > 0.0 ? std::exp(-d / sigma) : 1.0;
            edges.push_back({static_cast<std::uint32_t>(i), nb.index, w});
        }
    }
    return edges;
}

// Fuzzy union w + w' - w * w' over both edge directions, sorted by (head, tail).
std::vector<Edge> fuzzy_union(std::vector<Edge> directed) {
    auto by_pair = [](const Edge& a, const Edge& b) { return a.head != b.head ? a.head < b.head : a.tail < b.tail; };
    std::sort(directed.begin(), directed.end(), by_pair);
    auto weight_of = [&](std::uint32_t h, std::uint32_t t) {
        const Edge probe{h, t, 0.0};
        const auto it = std::lower_bound(directed.begin(), directed.end(), probe, by_pair);
        return (it != directed.end() && it->head == h && it->tail == t) ? it->weight : 0.0;
    };

    std::vector<Edge> sym;
    sym.reserve(2 * directed.size());
    for (const auto& e : directed) {
        const double back = weight_of(e.tail, e.head);
        const double w = e.weight + back - e.weight * back;
        sym.push_back({e.head, e.tail, w});
        if (back == 0.0) sym.push_back({e.tail, e.head, w});
    }
    std::sort(sym.begin(), sym.end(), by_pair);
    return sym;
}

double clip4(double v) { return std::clamp(v, -4.0, 4.0); }

}  // namespace

const char* to_string(Metric metric) { return metric == Metric::Cosine ? "cosine" : "euclidean"; }

Metric metric_from_string(const std::string& name) {
    if (name == "cosine") return Metric::Cosine;
    if (name == "euclidean") return Metric::Euclidean;
    throw ValidationError("unknown metric '" + name + "' (expected euclidean or cosine)");
}

void validate(const ProjectionParams& p, std::size_t record_count) {
    if (p.n_neighbors < 2) throw ValidationError("n_neighbors must be >= 2");
    if (p.n_neighbors >= record_count) {
        throw ValidationError("n_neighbors (" + std::to_string(p.n_neighbors) + ") must be below the record count (" +
                              std::to_string(record_count) + ")");
    }
    if (!(p.min_dist > 0.0) || !std::isfinite(p.min_dist)) throw ValidationError("min_dist must be > 0");
    if (p.n_epochs < 1) throw ValidationError("n_epochs must be >= 1");
}

KnnGraph knn_graph(const EmbeddingBank& bank, std::size_t k, Metric metric) {
    if (k == 0 || k >= bank.size()) {
        throw ValidationError("k (" + std::to_string(k) + ") must be in [1, record count) with " +
                              std::to_string(bank.size()) + " records");
    }
    return knn_of(prepare(bank, metric), k, metric);
}

std::pair<double, double> fit_curve_params(double min_dist, double spread) {
    if (!(min_dist > 0.0) || !(spread > 0.0)) throw ValidationError("min_dist and spread must be positive");
    constexpr int kSamples = 300;
    constexpr int kMaxIterations = 300;
    std::vector<double> xs(kSamples), ys(kSamples);
    for (int i = 0; i < kSamples; ++i) {
        xs[i] = 3.0 * spread * i / (kSamples - 1);
        ys[i] = xs[i] < min_dist ? 1.0 : std::exp(-(xs[i] - min_dist) / spread);
    }
    auto sse = [&](double a, double b) {
        double s = 0.0;
        for (int i = 0; i < kSamples; ++i) {
            const double r = 1.0 / (1.0 + a * std::pow(xs[i], 2.0 * b)) - ys[i];
            s += r * r;
        }
        return s;
    };

    // Levenberg-Marquardt from (1, 1).
    double a = 1.0, b = 1.0, lambda = 1e-3;
    double cost = sse(a, b);
    for (int it = 0; it < kMaxIterations; ++it) {
        double jtj00 = 0, jtj01 = 0, jtj11 = 0, jtr0 = 0, jtr1 = 0;
        for (int i = 0; i < kSamples; ++i) {
            if (xs[i] == 0.0) continue;  // f = 1 there for every (a, b)
            const double u = std::pow(xs[i], 2.0 * b);
            const double denom = 1.0 + a * u;
            const double r = 1.0 / denom - ys[i];
            const double da = -u / (denom * denom);
            const double db = -a * u * 2.0 * std::log(xs[i]) / (denom * denom);
            jtj00 += da * da;
            jtj01 += da * db;
            jtj11 += db * db;
            jtr0 += da * r;
            jtr1 += db * r;
        }
        bool accepted = false;
        while (!accepted && lambda < 1e12) {
            const double m00 = jtj00 * (1.0 + lambda), m11 = jtj11 * (1.0 + lambda), m01 = jtj01;
            const double det = m00 * m11 - m01 * m01;
            const double step_a = -(m11 * jtr0 - m01 * jtr1) / det;
            const double step_b = -(m00 * jtr1 - m01 * jtr0) / det;
            const double na = a + step_a, nb = b + step_b;
            const double ncost = na > 0.0 ? sse(na, nb) : std::numeric_limits<double>::infinity();
            if (ncost < cost) {
                const double change = std::abs(step_a) / a + std::abs(step_b) / std::abs(b);
                a = na;
                b = nb;
                const double improvement = cost - ncost;
                cost = ncost;
                lambda = std::max(lambda / 10.0, 1e-12);
                accepted = true;
                if (change < 1e-12 || improvement < 1e-15 * cost) return {a, b};
            } else {
                lambda *= 10.0;
            }
        }
        if (!accepted) break;
    }
    return {a, b};
}

Projection2D umap_project(const EmbeddingBank& bank, const ProjectionParams& params) {
    validate(params, bank.size());
    validate(bank);
    const std::size_t n = bank.size();
    const auto [a, b] = fit_curve_params(params.min_dist);

    const KnnGraph knn = knn_graph(bank, params.n_neighbors, params.metric);
    std::vector<Edge> edges = fuzzy_union(membership_strengths(bank, knn));

    double max_w = 0.0;
    for (const auto& e : edges) max_w = std::max(max_w, e.weight);
    const double n_epochs = static_cast<double>(params.n_epochs);
    std::erase_if(edges, [&](const Edge& e) { return e.weight < max_w / n_epochs; });

    std::vector<double> epochs_per_sample(edges.size());
    for (std::size_t e = 0; e < edges.size(); ++e) epochs_per_sample[e] = max_w / edges[e].weight;
    const double neg_rate = static_cast<double>(params.negative_sample_rate);
    std::vector<double> epochs_per_negative(edges.size());
    for (std::size_t e = 0; e < edges.size(); ++e) {
        epochs_per_negative[e] = neg_rate > 0.0 ? epochs_per_sample[e] / neg_rate : std::numeric_limits<double>::infinity();
    }
    std::vector<double> next_sample = epochs_per_sample;
    std::vector<double> next_negative = epochs_per_negative;

    Rng rng(params.seed);
    std::vector<Point2> y(n);
    for (auto& p : y) {
        p.x = rng.uniform(-10.0, 10.0);
        p.y = rng.uniform(-10.0, 10.0);
    }

    for (std::size_t epoch = 0; epoch < params.n_epochs; ++epoch) {
        const double t = static_cast<double>(epoch);
        const double alpha = 1.0 - t / n_epochs;
        for (std::size_t e = 0; e < edges.size(); ++e) {
            if (next_sample[e] > t) continue;
            Point2& cur = y[edges[e].head];
            Point2& other = y[edges[e].tail];

            double dx = cur.x - other.x, dy = cur.y - other.y;
            double d2 = dx * dx + dy * dy;
            if (d2 > 0.0) {
                const double coeff = -2.0 * a * b * std::pow(d2, b - 1.0) / (a * std::pow(d2, b) + 1.0);
                const double gx = clip4(coeff * dx) * alpha;
                const double gy = clip4(coeff * dy) * alpha;
                cur.x += gx;
                cur.y += gy;
                other.x -= gx;
                other.y -= gy;
            }
            next_sample[e] += epochs_per_sample[e];

            const auto n_neg = static_cast<std::size_t>(std::max(0.0, (t - next_negative[e]) / epochs_per_negative[e]));
            for (std::size_t s = 0; s < n_neg; ++s) {
                const auto k = static_cast<std::size_t>(rng.below(n));
                if (k == edges[e].head) continue;
                const Point2& neg = y[k];
                dx = cur.x - neg.x;
                dy = cur.y - neg.y;
                d2 = dx * dx + dy * dy;
                if (d2 <= 0.0) continue;
                const double coeff = 2.0 * b / ((0.001 + d2) * (a * std::pow(d2, b) + 1.0));
                cur.x += clip4(coeff * dx) * alpha;
                cur.y += clip4(coeff * dy) * alpha;
            }
            next_negative[e] += static_cast<double>(n_neg) * epochs_per_negative[e];
        }
    }

    Projection2D out;
    out.points = std::move(y);
    for (const auto& r : bank.records) {
        out.ids.push_back(r.id);
        out.labels.push_back(r.label);
        out.generator_tags.push_back(r.generator_tag);
    }
    for (const auto& p : out.points) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw ValidationError("layout produced non-finite coordinates");
    }
    return out;
}

double trustworthiness(const EmbeddingBank& bank, const Projection2D& projection, std::size_t k, Metric metric) {
    const std::size_t n = bank.size();
    if (projection.size() != n) {
        throw ValidationError("projection has " + std::to_string(projection.size()) + " points for " +
                              std::to_string(n) + " records");
    }
    if (k == 0 || k >= n) {
        throw ValidationError("k (" + std::to_string(k) + ") must be in [1, record count) with " + std::to_string(n) +
                              " records");
    }
    const PointSet high = prepare(bank, metric);
    PointSet low;
    low.dim = 2;
    for (const auto& p : projection.points) {
        low.x.push_back(p.x);
        low.x.push_back(p.y);
    }
    const KnnGraph low_knn = knn_of(low, k, Metric::Euclidean);

    // rank[j] = 1-based position of j among i's neighbors in the original space.
    std::vector<double> penalty(n, 0.0);
    parallel_for(n, [&](std::size_t i) {
        std::vector<Neighbor> all;
        all.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) all.push_back({static_cast<std::uint32_t>(j), distance(high, i, j, metric)});
        }
        std::sort(all.begin(), all.end(), closer);
        std::vector<std::size_t> rank(n, 0);
        for (std::size_t r = 0; r < all.size(); ++r) rank[all[r].index] = r + 1;
        double sum = 0.0;
        for (const auto& nb : low_knn.neighbors(i)) {
            if (rank[nb.index] > k) sum += static_cast<double>(rank[nb.index] - k);
        }
        penalty[i] = sum;
    });
    const double total = std::accumulate(penalty.begin(), penalty.end(), 0.0);
    if (total == 0.0) return 1.0;

    // Largest attainable penalty per point: the k worst-ranked records, or
    // every record outside the true top k when fewer than k remain.
    const double nn = static_cast<double>(n), kk = static_cast<double>(k);
    const double outside = nn - 1.0 - kk;
    const double worst = outside >= kk ? kk * (2.0 * nn - 3.0 * kk - 1.0) / 2.0 : outside * (outside + 1.0) / 2.0;
    return std::clamp(1.0 - total / (nn * worst), 0.0, 1.0);
}

std::string projection_to_csv(const Projection2D& projection) {
    std::string out = "id,x,y,label,generator_tag\n";
    char buf[64];
    for (std::size_t i = 0; i < projection.size(); ++i) {
        out += detail::csv_field(projection.ids[i]);
        std::snprintf(buf, sizeof buf, ",%.9g,%.9g,", projection.points[i].x, projection.points[i].y);
        out += buf;
        out += std::to_string(to_int(projection.labels[i]));
        out += ",";
        out += detail::csv_field(projection.generator_tags[i]);
        out += "\n";
    }
    return out;
}

void write_projection(const Projection2D& projection, const std::filesystem::path& path) {
    detail::write_text_file(path, projection_to_csv(projection));
}

}  // namespace sid
