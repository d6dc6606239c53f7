#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "memory_hub.hpp"
#include "query_gen.hpp"
#include "rng.hpp"
#include "semantic_tree.hpp"
#include "table.hpp"

namespace birdie {

struct EvalQuery {
    std::string text;
    std::string ground_truth;

    bool operator==(const EvalQuery&) const = default;
};

/// 1 when `truth` is among the first K ids.
inline double precision_at_k(const std::vector<std::string>& ranked, const std::string& truth, std::size_t k) {
    if (k < 1) throw ConfigError("K must be >= 1");
    const std::size_t n = std::min(k, ranked.size());
    for (std::size_t i = 0; i < n; ++i)
        if (ranked[i] == truth) return 1.0;
    return 0.0;
}

inline double mean(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

/// P@K over a pooled test set given per-set precisions and sizes.
inline double ap(const std::vector<double>& precisions, const std::vector<std::size_t>& sizes) {
    if (precisions.size() != sizes.size()) throw Error("ap: precision and size lists differ in length");
    double hits = 0.0;
    std::size_t total = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        hits += precisions[i] * static_cast<double>(sizes[i]);
        total += sizes[i];
    }
    return total ? hits / static_cast<double>(total) : 0.0;
}

/// Lower-triangular P[u][w], w <= u.
class PMatrix {
public:
    PMatrix() = default;
    explicit PMatrix(std::size_t batches) : rows_(batches) {
        for (std::size_t u = 0; u < batches; ++u) rows_[u].assign(u + 1, 0.0);
    }

    std::size_t size() const noexcept { return rows_.size(); }

    double at(std::size_t u, std::size_t w) const {
        check(u, w);
        return rows_[u][w];
    }
    void set(std::size_t u, std::size_t w, double v) {
        check(u, w);
        rows_[u][w] = v;
    }
    const std::vector<std::vector<double>>& rows() const noexcept { return rows_; }

    bool operator==(const PMatrix&) const = default;

private:
    void check(std::size_t u, std::size_t w) const {
        if (u >= rows_.size() || w > u) throw std::out_of_range("PMatrix entry undefined for w > u or u out of range");
    }
    std::vector<std::vector<double>> rows_;
};

/// (1/u) * sum_{w=1..u} P[w][w]
inline double lp(const PMatrix& p, std::size_t u) {
    if (u == 0) throw Error("LP is undefined for u = 0");
    double s = 0.0;
    for (std::size_t w = 1; w <= u; ++w) s += p.at(w, w);
    return s / static_cast<double>(u);
}

/// (1/u) * sum_{w=0..u-1} max_{w'=w..u-1} (P[w'][w] - P[u][w])
inline double ft(const PMatrix& p, std::size_t u) {
    if (u == 0) throw Error("FT is undefined for u = 0");
    double s = 0.0;
    for (std::size_t w = 0; w < u; ++w) {
        double best = p.at(w, w);
        for (std::size_t w2 = w + 1; w2 < u; ++w2) best = std::max(best, p.at(w2, w));
        s += best - p.at(u, w);
    }
    return s / static_cast<double>(u);
}

// ---------------------------------------------------------------------------
// Dynamic scenario
// ---------------------------------------------------------------------------

struct ScenarioConfig {
    std::vector<double> splits{0.7, 0.1, 0.1, 0.1};
    std::uint64_t seed = 0;
    std::vector<std::size_t> ks{1, 5};
    bool prioritize_new = false;
    ExecMode mode = ExecMode::kSerial;
    EmbedderConfig embedder;
    ClusteringConfig clustering;
    QueryGenConfig querygen;
    DecoderConfig decoder;
};

struct ScenarioReport {
    std::vector<std::size_t> batch_sizes;
    std::vector<std::size_t> test_sizes;
    std::map<std::size_t, PMatrix> hub;     ///< K -> P through fan-out and query mapping
    std::map<std::size_t, PMatrix> replay;  ///< K -> P searching each batch's own unit
    std::map<std::string, double> seconds;  ///< phase -> wall time
    std::vector<std::string> warnings;

    double ap_at(std::size_t k, std::size_t u) const {
        std::vector<double> ps;
        std::vector<std::size_t> ns;
        for (std::size_t w = 0; w <= u; ++w) {
            ps.push_back(hub.at(k).at(u, w));
            ns.push_back(test_sizes[w]);
        }
        return ap(ps, ns);
    }
};

/// Batch sizes floor(frac * N) per split.
inline std::vector<std::size_t> split_sizes(std::size_t n, const std::vector<double>& splits) {
    double total = 0.0;
    for (double f : splits) {
        if (!(f >= 0.0)) throw ConfigError("split fractions must be non-negative");
        total += f;
    }
    if (total > 1.0 + 1e-9) throw ConfigError("split fractions sum to more than 1");
    if (splits.empty()) throw ConfigError("at least one split required");
    std::vector<std::size_t> sizes;
    for (double f : splits) sizes.push_back(static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9)));
    if (sizes[0] == 0) throw ConfigError("insufficient tables for the base split");
    return sizes;
}

/// Builds the base index from the first split, applies each later split as
/// an update, and measures P[u][w] after every update. Each table gets B+1
/// synthetic queries; one is held out as its test query and the other B form
/// the training pool.
inline ScenarioReport dynamic_scenario(const Repository& repo, const ScenarioConfig& cfg,
                                       const QueryGenerator& gen) {
    using Clock = std::chrono::steady_clock;
    auto secs = [](Clock::time_point a) { return std::chrono::duration<double>(Clock::now() - a).count(); };

    ScenarioReport rep;
    rep.batch_sizes = split_sizes(repo.size(), cfg.splits);
    const std::size_t nb = rep.batch_sizes.size();

    std::vector<std::size_t> order(repo.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(mix64(cfg.seed ^ 0xd1a5ce9aULL));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    std::vector<Repository> batches(nb);
    std::size_t pos = 0;
    for (std::size_t b = 0; b < nb; ++b) {
        batches[b].batch_id = static_cast<int>(b);
        for (std::size_t i = 0; i < rep.batch_sizes[b]; ++i) batches[b].tables.push_back(repo.tables[order[pos++]]);
    }

    auto t0 = Clock::now();
    QueryGenConfig qcfg = cfg.querygen;
    qcfg.B = cfg.querygen.B + 1;
    qcfg.seed = mix64(cfg.querygen.seed ^ cfg.seed);
    std::vector<QueryPool> pools(nb);
    std::vector<std::vector<EvalQuery>> tests(nb);
    for (std::size_t b = 0; b < nb; ++b) {
        for (const auto& t : batches[b].tables) {
            auto r = tsa(t, gen, qcfg);
            rep.warnings.insert(rep.warnings.end(), r.warnings.begin(), r.warnings.end());
            auto& train = pools[b][t.id];
            if (r.queries.size() >= 2) {
                const std::size_t held = rng.below(r.queries.size());
                tests[b].push_back({r.queries[held].text, t.id});
                r.queries.erase(r.queries.begin() + static_cast<std::ptrdiff_t>(held));
            }
            for (auto& q : r.queries) train.push_back(std::move(q.text));
        }
        rep.test_sizes.push_back(tests[b].size());
    }
    rep.seconds["query_generation"] = secs(t0);

    auto embedder = std::make_shared<const HashingEmbedder>(cfg.embedder);
    HubConfig hcfg;
    hcfg.B = cfg.querygen.B;
    hcfg.prioritize_new = cfg.prioritize_new;
    hcfg.mapping_seed = cfg.seed;
    hcfg.decoder = cfg.decoder;

    t0 = Clock::now();
    std::vector<TwoViewEmbedding> embs;
    for (const auto& t : batches[0].tables) embs.push_back(embed_table(t, *embedder));
    MemoryHub hub(embedder, hcfg, build_tree(batches[0], embs, cfg.clustering), pools[0], 0);
    rep.seconds["build"] = secs(t0);

    std::size_t kmax = 1;
    for (auto k : cfg.ks) kmax = std::max(kmax, k);
    for (auto k : cfg.ks) {
        rep.hub[k] = PMatrix(nb);
        rep.replay[k] = PMatrix(nb);
    }

    auto ids_of = [](const CandidateList& c) {
        std::vector<std::string> ids;
        for (const auto& e : c.entries) ids.push_back(e.table_id);
        return ids;
    };

    for (std::size_t u = 0; u < nb; ++u) {
        if (u > 0) {
            t0 = Clock::now();
            hub.update(batches[u], pools[u]);
            rep.seconds["update_" + std::to_string(u)] = secs(t0);
        }
        t0 = Clock::now();
        for (std::size_t w = 0; w <= u; ++w) {
            std::map<std::size_t, std::vector<double>> hub_hits, replay_hits;
            for (const auto& q : tests[w]) {
                const auto fan = hub.fanout_search(q.text, kmax, cfg.mode);
                const auto chosen = cfg.prioritize_new ? hub.query_mapping_prioritize_new(q.text, fan)
                                                       : hub.query_mapping(q.text, fan);
                const auto hub_ids = ids_of(chosen);
                const auto own_ids = ids_of(fan[w]);
                for (auto k : cfg.ks) {
                    hub_hits[k].push_back(precision_at_k(hub_ids, q.ground_truth, k));
                    replay_hits[k].push_back(precision_at_k(own_ids, q.ground_truth, k));
                }
            }
            for (auto k : cfg.ks) {
                rep.hub[k].set(u, w, mean(hub_hits[k]));
                rep.replay[k].set(u, w, mean(replay_hits[k]));
            }
        }
        rep.seconds["eval_" + std::to_string(u)] = secs(t0);
    }
    return rep;
}

inline nlohmann::json to_json(const ScenarioReport& r) {
    using nlohmann::json;
    json j;
    j["batch_sizes"] = r.batch_sizes;
    j["test_sizes"] = r.test_sizes;
    json metrics = json::object();
    for (const auto& [k, p] : r.hub) {
        json m;
        m["P"] = p.rows();
        m["replay_P"] = r.replay.at(k).rows();
        std::vector<double> aps, fts, lps, replay_fts;
        for (std::size_t u = 0; u < p.size(); ++u) {
            aps.push_back(r.ap_at(k, u));
            if (u > 0) {
                fts.push_back(ft(p, u));
                lps.push_back(lp(p, u));
                replay_fts.push_back(ft(r.replay.at(k), u));
            }
        }
        m["AP"] = aps;
        m["FT"] = fts;
        m["LP"] = lps;
        m["replay_FT"] = replay_fts;
        metrics[std::to_string(k)] = m;
    }
    j["metrics"] = metrics;
    j["seconds"] = r.seconds;
    j["warnings"] = r.warnings.size();
    return j;
}

}  // namespace birdie
