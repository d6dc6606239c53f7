#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "embedding.hpp"
#include "rng.hpp"

namespace birdie {

struct KMeansOptions {
    std::size_t max_iters = 50;
    std::optional<std::size_t> minibatch;
    std::uint64_t seed = 0;
    std::size_t restarts = 1;  ///< independent seedings; lowest inertia wins
};

struct KMeansResult {
    std::vector<Embedding> centers;
    /// Member indices per cluster, ascending. Never empty.
    std::vector<std::vector<std::size_t>> clusters;
};

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

/// Nearest center, lowest ordinal on ties.
inline std::size_t nearest_center(std::span<const double> x, const std::vector<Embedding>& centers) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centers.size(); ++c) {
        const double d = sq_dist(x, centers[c]);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

/// Greedy k-means++ seeding over the points selected by `idx`: each step
/// draws 2 + ln(k) D^2-weighted candidates and keeps the one that lowers the
/// potential most. Stops early when every point coincides with a center.
inline std::vector<Embedding> kmeanspp_init(std::span<const Embedding> points, std::span<const std::size_t> idx,
                                            std::size_t k, Rng& rng) {
    std::vector<Embedding> centers;
    centers.push_back(points[idx[rng.below(idx.size())]]);
    std::vector<double> d2(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) d2[i] = sq_dist(points[idx[i]], centers[0]);
    const std::size_t trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(k)));

    auto draw = [&](double total) {
        double target = rng.uniform01() * total;
        std::size_t pick = idx.size() - 1;
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (d2[i] <= 0.0) continue;
            if (target < d2[i]) {
                pick = i;
                break;
            }
            target -= d2[i];
        }
        while (d2[pick] <= 0.0) --pick;  // rounding at the tail
        return pick;
    };

    std::vector<double> trial_d2(idx.size()), best_d2(idx.size());
    while (centers.size() < k) {
        double total = 0.0;
        for (double v : d2) total += v;
        if (!(total > 0.0)) break;
        std::size_t best_pick = 0;
        double best_pot = std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < trials; ++t) {
            const std::size_t pick = draw(total);
            double pot = 0.0;
            for (std::size_t i = 0; i < idx.size(); ++i) {
                trial_d2[i] = std::min(d2[i], sq_dist(points[idx[i]], points[idx[pick]]));
                pot += trial_d2[i];
            }
            if (pot < best_pot) {
                best_pot = pot;
                best_pick = pick;
                best_d2.swap(trial_d2);
            }
        }
        centers.push_back(points[idx[best_pick]]);
        d2.swap(best_d2);
        best_d2.resize(idx.size());
    }
    return centers;
}

inline KMeansResult finalize_clusters(std::span<const Embedding> points, const std::vector<Embedding>& centers) {
    std::vector<std::vector<std::size_t>> members(centers.size());
    for (std::size_t i = 0; i < points.size(); ++i) members[nearest_center(points[i], centers)].push_back(i);

    std::vector<std::size_t> order;
    for (std::size_t c = 0; c < members.size(); ++c)
        if (!members[c].empty()) order.push_back(c);
    // Ordinals follow the first member index of each cluster.
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return members[a].front() < members[b].front(); });

    KMeansResult r;
    for (std::size_t c : order) {
        r.centers.push_back(centers[c]);
        r.clusters.push_back(std::move(members[c]));
    }
    return r;
}

inline double inertia(std::span<const Embedding> points, const KMeansResult& r) {
    double s = 0.0;
    for (std::size_t c = 0; c < r.clusters.size(); ++c)
        for (auto i : r.clusters[c]) s += sq_dist(points[i], r.centers[c]);
    return s;
}

inline KMeansResult lloyd(std::span<const Embedding> points, std::size_t k, const KMeansOptions& opt, Rng& rng) {
    std::vector<std::size_t> all(points.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    auto centers = kmeanspp_init(points, all, k, rng);
    const std::size_t dim = points[0].size();

    std::vector<std::size_t> assign(points.size(), SIZE_MAX);
    for (std::size_t it = 0; it < opt.max_iters; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < points.size(); ++i) {
            const std::size_t c = nearest_center(points[i], centers);
            if (c != assign[i]) {
                assign[i] = c;
                changed = true;
            }
        }
        if (!changed) break;
        std::vector<Embedding> sums(centers.size(), Embedding(dim, 0.0));
        std::vector<std::size_t> counts(centers.size(), 0);
        for (std::size_t i = 0; i < points.size(); ++i) {
            ++counts[assign[i]];
            for (std::size_t d = 0; d < dim; ++d) sums[assign[i]][d] += points[i][d];
        }
        for (std::size_t c = 0; c < centers.size(); ++c) {
            if (counts[c] == 0) continue;  // empty cluster keeps its center
            for (std::size_t d = 0; d < dim; ++d) centers[c][d] = sums[c][d] / static_cast<double>(counts[c]);
        }
    }
    return finalize_clusters(points, centers);
}

/// Mini-batch k-means with per-center learning rate 1/count.
inline KMeansResult minibatch_kmeans(std::span<const Embedding> points, std::size_t k, std::size_t batch,
                                     const KMeansOptions& opt, Rng& rng) {
    std::vector<std::size_t> sample(batch);
    for (auto& s : sample) s = rng.below(points.size());
    auto centers = kmeanspp_init(points, sample, k, rng);
    std::vector<double> counts(centers.size(), 0.0);
    std::vector<std::size_t> nearest(batch);
    for (std::size_t it = 0; it < opt.max_iters; ++it) {
        for (auto& s : sample) s = rng.below(points.size());
        for (std::size_t i = 0; i < batch; ++i) nearest[i] = nearest_center(points[sample[i]], centers);
        for (std::size_t i = 0; i < batch; ++i) {
            auto& c = centers[nearest[i]];
            const double eta = 1.0 / (counts[nearest[i]] += 1.0);
            const auto& x = points[sample[i]];
            for (std::size_t d = 0; d < c.size(); ++d) c[d] = (1.0 - eta) * c[d] + eta * x[d];
        }
    }
    return finalize_clusters(points, centers);
}

}  // namespace detail

/// Partition `points` into at most k non-empty clusters. Empty clusters are
/// dropped and ordinals are dense, ordered by each cluster's lowest member
/// index. Deterministic for a fixed seed.
inline KMeansResult kmeans(std::span<const Embedding> points, std::size_t k, const KMeansOptions& opt = {}) {
    if (points.empty()) throw Error("kmeans on empty point set");
    if (k < 1) throw ConfigError("kmeans requires k >= 1");
    const std::size_t dim = points[0].size();
    for (const auto& p : points)
        if (p.size() != dim) throw DimensionMismatch(dim, p.size());
    Rng rng(opt.seed);
    const bool mini = opt.minibatch && *opt.minibatch > 0 && points.size() > *opt.minibatch;
    KMeansResult best;
    double best_inertia = std::numeric_limits<double>::infinity();
    for (std::size_t run = 0; run < std::max<std::size_t>(1, opt.restarts); ++run) {
        auto r = mini ? detail::minibatch_kmeans(points, k, *opt.minibatch, opt, rng) : detail::lloyd(points, k, opt, rng);
        const double in = detail::inertia(points, r);
        if (in < best_inertia) {
            best_inertia = in;
            best = std::move(r);
        }
    }
    return best;
}

}  // namespace birdie
