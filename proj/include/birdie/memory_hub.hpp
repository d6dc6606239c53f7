#pragma once

#include <algorithm>
#include <cstdint>
#include <future>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "decoder.hpp"
#include "embedding.hpp"
#include "incremental.hpp"
#include "query_gen.hpp"
#include "semantic_tree.hpp"
#include "trie.hpp"

namespace birdie {

struct HubConfig {
    std::size_t B = 20;  ///< synthetic queries per table; n_q = floor(B / 4)
    bool prioritize_new = false;
    std::uint64_t mapping_seed = 0;
    DecoderConfig decoder;

    std::size_t n_q() const { return std::max<std::size_t>(1, B / 4); }

    bool operator==(const HubConfig&) const = default;
};

enum class ExecMode { kSerial, kParallel };

/// Deletion record. Sealed unit files are never rewritten, so deletions are
/// replayed from these on load.
struct Tombstone {
    std::string table_id;
    TabId tabid;
    std::size_t unit = 0;

    bool operator==(const Tombstone&) const = default;
};

struct Candidate {
    std::string table_id;
    TabId tabid;
    double log_prob = 0.0;

    bool operator==(const Candidate&) const = default;
};

struct CandidateList {
    std::size_t unit = 0;  ///< index into the hub's units
    std::vector<Candidate> entries;

    bool operator==(const CandidateList&) const = default;
};

/// Sealed per-batch sub-index. It owns a frozen copy of the clustering tree
/// taken when it was sealed, so later insertions into the shared tree cannot
/// change its answers.
class MemoryUnit {
public:
    MemoryUnit(int batch_id, std::shared_ptr<const SemanticTree> snapshot, TabIdTrie trie, QueryPool pool,
               std::shared_ptr<const Embedder> embedder, const DecoderConfig& dec)
        : batch_id_(batch_id),
          snapshot_(std::move(snapshot)),
          trie_(std::move(trie)),
          pool_(std::move(pool)),
          embedder_(std::move(embedder)),
          scorer_(std::make_shared<TreeDescentScorer>(snapshot_, embedder_, pool_, dec.tau)),
          beam_(dec.beam) {
        for (const auto& [id, qs] : pool_) {
            auto& v = query_embeddings_[id];
            for (const auto& q : qs) v.push_back(embedder_->embed(q));
        }
    }

    int batch_id() const noexcept { return batch_id_; }
    const SemanticTree& snapshot() const noexcept { return *snapshot_; }
    std::shared_ptr<const SemanticTree> snapshot_ptr() const noexcept { return snapshot_; }
    const TabIdTrie& trie() const noexcept { return trie_; }
    const QueryPool& pool() const noexcept { return pool_; }
    const AutoregressiveScorer& scorer() const noexcept { return *scorer_; }
    std::size_t beam() const noexcept { return beam_; }

    const std::vector<Embedding>& query_embeddings(const std::string& table_id) const {
        static const std::vector<Embedding> kEmpty;
        auto it = query_embeddings_.find(table_id);
        return it == query_embeddings_.end() ? kEmpty : it->second;
    }

    bool owns(const std::string& table_id) const {
        for (const auto& [tabid, id] : trie_.entries())
            if (id == table_id) return true;
        return false;
    }

    CandidateList search(std::string_view query, std::size_t top_k, std::size_t unit_index) const {
        CandidateList out{unit_index, {}};
        for (auto& s : birdie::search(query, trie_, *scorer_, top_k, beam_))
            out.entries.push_back({std::move(s.table_id), std::move(s.tabid), s.log_prob});
        return out;
    }

    /// Drops a tabid from the valid set. The only mutation a sealed unit
    /// accepts.
    bool retire(const TabId& tabid) { return trie_.erase(tabid); }

private:
    int batch_id_;
    std::shared_ptr<const SemanticTree> snapshot_;
    TabIdTrie trie_;
    QueryPool pool_;
    std::shared_ptr<const Embedder> embedder_;
    std::shared_ptr<const TreeDescentScorer> scorer_;
    std::size_t beam_;
    std::map<std::string, std::vector<Embedding>> query_embeddings_;
};

// ---------------------------------------------------------------------------
// Query mapping
// ---------------------------------------------------------------------------

/// Votes per unit among the n_q pool queries nearest to the user query.
/// `pools[i]` holds the synthetic-query embeddings of unit i's candidates.
/// Distance ties go to the lower unit, then to earlier pool entries.
inline std::vector<std::size_t> count_votes(std::span<const double> query,
                                            const std::vector<std::vector<const Embedding*>>& pools,
                                            std::size_t n_q) {
    struct Hit {
        double d;
        std::size_t unit;
        std::size_t pos;
    };
    std::vector<Hit> hits;
    for (std::size_t u = 0; u < pools.size(); ++u)
        for (std::size_t p = 0; p < pools[u].size(); ++p) hits.push_back({dist(query, *pools[u][p]), u, p});
    const std::size_t take = std::min(n_q, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(take), hits.end(),
                      [](const Hit& a, const Hit& b) {
                          if (a.d != b.d) return a.d < b.d;
                          if (a.unit != b.unit) return a.unit < b.unit;
                          return a.pos < b.pos;
                      });
    std::vector<std::size_t> votes(pools.size(), 0);
    for (std::size_t i = 0; i < take; ++i) ++votes[hits[i].unit];
    return votes;
}

/// Uniform pick among the units holding the most votes, excluding `skip`.
/// Returns nullopt when no eligible unit has a vote.
inline std::optional<std::size_t> pick_top(const std::vector<std::size_t>& votes, Rng& rng,
                                           std::optional<std::size_t> skip = std::nullopt) {
    std::size_t best = 0;
    for (std::size_t u = 0; u < votes.size(); ++u)
        if (u != skip && votes[u] > best) best = votes[u];
    if (best == 0) return std::nullopt;
    std::vector<std::size_t> tied;
    for (std::size_t u = 0; u < votes.size(); ++u)
        if (u != skip && votes[u] == best) tied.push_back(u);
    return tied[tied.size() == 1 ? 0 : rng.below(tied.size())];
}

struct MappingResult {
    std::size_t unit = 0;
    std::vector<std::size_t> votes;
    std::optional<std::size_t> runner_up;
    bool fallback = false;     ///< no pool queries; picked by rank-1 log_prob
    bool prioritized = false;  ///< new-batch runner-up replaced an old winner
};

/// Winner by majority vote, seeded random tiebreak. With `new_unit` set, a
/// runner-up from the new batch is preferred over an old winner.
inline MappingResult choose_unit(const std::vector<std::size_t>& votes, Rng& rng,
                                 std::optional<std::size_t> new_unit = std::nullopt) {
    MappingResult r;
    r.votes = votes;
    auto winner = pick_top(votes, rng);
    if (!winner) {
        r.fallback = true;
        return r;
    }
    r.unit = *winner;
    r.runner_up = pick_top(votes, rng, winner);
    if (new_unit && *winner != *new_unit && r.runner_up == new_unit) {
        r.unit = *new_unit;
        r.prioritized = true;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Hub
// ---------------------------------------------------------------------------

/// Base index plus one sealed unit per arrival batch. The clustering tree is
/// shared and only grows through incremental insertion.
class MemoryHub {
public:
    MemoryHub(std::shared_ptr<const Embedder> embedder, HubConfig cfg, SemanticTree tree, QueryPool base_pool,
              int base_batch_id = 0)
        : embedder_(std::move(embedder)), cfg_(std::move(cfg)), tree_(std::move(tree)) {
        seal(base_batch_id, trie_from(tree_.tabid_map), std::move(base_pool));
    }

    /// Restores a hub from persisted parts. `units` hold their tries as
    /// sealed; the tombstones are applied here.
    MemoryHub(std::shared_ptr<const Embedder> embedder, HubConfig cfg, SemanticTree tree,
              std::vector<std::unique_ptr<MemoryUnit>> units, std::vector<Tombstone> tombstones)
        : embedder_(std::move(embedder)),
          cfg_(std::move(cfg)),
          tree_(std::move(tree)),
          units_(std::move(units)),
          tombstones_(std::move(tombstones)) {
        for (const auto& t : tombstones_) units_.at(t.unit)->retire(t.tabid);
        for (std::size_t u = 0; u < units_.size(); ++u)
            for (const auto& [tabid, id] : units_[u]->trie().entries()) owner_[id] = u;
    }

    /// Moves the state; the lock is not shared. Not safe while `o` is in use.
    MemoryHub(MemoryHub&& o) noexcept
        : embedder_(std::move(o.embedder_)),
          cfg_(std::move(o.cfg_)),
          tree_(std::move(o.tree_)),
          units_(std::move(o.units_)),
          owner_(std::move(o.owner_)),
          tombstones_(std::move(o.tombstones_)) {}

    static MemoryHub build(const Repository& repo, std::shared_ptr<const Embedder> embedder,
                           const ClusteringConfig& clus, const QueryGenerator& gen, const QueryGenConfig& qcfg,
                           HubConfig cfg, std::vector<std::string>* warnings = nullptr) {
        std::vector<TwoViewEmbedding> embs;
        embs.reserve(repo.size());
        for (const auto& t : repo.tables) embs.push_back(embed_table(t, *embedder));
        auto tree = build_tree(repo, embs, clus);
        auto pool = build_query_pool(repo, gen, qcfg, warnings);
        return MemoryHub(std::move(embedder), std::move(cfg), std::move(tree), std::move(pool), repo.batch_id);
    }

    /// Indexes a new batch: incremental tabids for every table, then a new
    /// sealed unit. Existing units are not touched.
    const MemoryUnit& update(const Repository& batch, const QueryPool& pool) {
        std::unique_lock lock(mutex_);
        for (const auto& t : batch.tables)
            if (owner_.count(t.id) || tree_.tabid_map.count(t.id)) throw DuplicateIdError(t.id);
        std::map<std::string, TabId> fresh;
        for (const auto& t : batch.tables) {
            auto out = insert_table(tree_, t.id, embed_table(t, *embedder_));
            fresh.emplace(t.id, out.tabid);
        }
        QueryPool unit_pool;
        for (const auto& t : batch.tables) {
            auto it = pool.find(t.id);
            unit_pool[t.id] = it == pool.end() ? std::vector<std::string>{} : it->second;
        }
        seal(batch.batch_id, trie_from(fresh), std::move(unit_pool));
        return *units_.back();
    }

    const MemoryUnit& update(const Repository& batch, const QueryGenerator& gen, const QueryGenConfig& qcfg,
                             std::vector<std::string>* warnings = nullptr) {
        return update(batch, build_query_pool(batch, gen, qcfg, warnings));
    }

    void delete_table(const std::string& table_id) {
        std::unique_lock lock(mutex_);
        auto it = owner_.find(table_id);
        if (it == owner_.end()) throw UnknownIdError(table_id);
        const TabId tabid = tree_.tabid_map.at(table_id);
        TabIdTrie scratch;
        birdie::delete_table(tree_, scratch, table_id);
        units_[it->second]->retire(tabid);
        tombstones_.push_back({table_id, tabid, it->second});
        owner_.erase(it);
    }

    /// One candidate list per unit, in unit order.
    std::vector<CandidateList> fanout_search(std::string_view query, std::size_t top_k,
                                             ExecMode mode = ExecMode::kSerial) const {
        std::shared_lock lock(mutex_);
        std::vector<CandidateList> out(units_.size());
        if (mode == ExecMode::kSerial || units_.size() < 2) {
            for (std::size_t u = 0; u < units_.size(); ++u) out[u] = units_[u]->search(query, top_k, u);
            return out;
        }
        std::vector<std::future<CandidateList>> futs;
        for (std::size_t u = 0; u < units_.size(); ++u)
            futs.push_back(std::async(std::launch::async, [&, u] { return units_[u]->search(query, top_k, u); }));
        for (std::size_t u = 0; u < units_.size(); ++u) out[u] = futs[u].get();
        return out;
    }

    /// Picks one unit's list by voting among the synthetic queries of each
    /// unit's candidates.
    MappingResult map_query(std::string_view query, const std::vector<CandidateList>& candidates,
                            bool prioritize_new) const {
        std::shared_lock lock(mutex_);
        const Embedding q = embedder_->embed(query);
        std::vector<std::vector<const Embedding*>> pools(candidates.size());
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            const auto& unit = *units_.at(candidates[i].unit);
            for (const auto& c : candidates[i].entries)
                for (const auto& e : unit.query_embeddings(c.table_id)) pools[i].push_back(&e);
        }
        Rng rng(mix64(cfg_.mapping_seed ^ fnv1a64(query)));
        std::optional<std::size_t> new_unit;
        if (prioritize_new && !candidates.empty()) new_unit = candidates.size() - 1;
        auto r = choose_unit(count_votes(q, pools, cfg_.n_q()), rng, new_unit);
        if (r.fallback) {
            double best = -std::numeric_limits<double>::infinity();
            bool any = false;
            for (std::size_t i = 0; i < candidates.size(); ++i) {
                if (candidates[i].entries.empty()) continue;
                if (!any || candidates[i].entries.front().log_prob > best) {
                    best = candidates[i].entries.front().log_prob;
                    r.unit = i;
                    any = true;
                }
            }
            std::clog << "birdie: query mapping fell back to rank-1 log-prob (no synthetic queries among candidates)\n";
        }
        return r;
    }

    CandidateList query_mapping(std::string_view query, const std::vector<CandidateList>& candidates) const {
        if (candidates.empty()) return {};
        return candidates[map_query(query, candidates, false).unit];
    }

    CandidateList query_mapping_prioritize_new(std::string_view query,
                                               const std::vector<CandidateList>& candidates) const {
        if (candidates.empty()) return {};
        return candidates[map_query(query, candidates, true).unit];
    }

    CandidateList search(std::string_view query, std::size_t top_k, ExecMode mode = ExecMode::kSerial) const {
        auto cands = fanout_search(query, top_k, mode);
        return cfg_.prioritize_new ? query_mapping_prioritize_new(query, cands) : query_mapping(query, cands);
    }

    const SemanticTree& tree() const noexcept { return tree_; }
    const HubConfig& config() const noexcept { return cfg_; }
    HubConfig& config() noexcept { return cfg_; }
    const Embedder& embedder() const noexcept { return *embedder_; }
    std::shared_ptr<const Embedder> embedder_ptr() const noexcept { return embedder_; }
    std::size_t unit_count() const noexcept { return units_.size(); }
    const MemoryUnit& unit(std::size_t i) const { return *units_.at(i); }

    /// Unit index holding a live table, if any.
    std::optional<std::size_t> owner(const std::string& table_id) const {
        auto it = owner_.find(table_id);
        if (it == owner_.end()) return std::nullopt;
        return it->second;
    }

    std::size_t table_count() const noexcept { return owner_.size(); }
    const std::vector<Tombstone>& tombstones() const noexcept { return tombstones_; }

private:
    void seal(int batch_id, TabIdTrie trie, QueryPool pool) {
        const std::size_t idx = units_.size();
        for (const auto& [tabid, id] : trie.entries()) owner_[id] = idx;
        auto snapshot = std::make_shared<const SemanticTree>(tree_);
        units_.push_back(std::make_unique<MemoryUnit>(batch_id, std::move(snapshot), std::move(trie), std::move(pool),
                                                      embedder_, cfg_.decoder));
    }

    std::shared_ptr<const Embedder> embedder_;
    HubConfig cfg_;
    SemanticTree tree_;
    std::vector<std::unique_ptr<MemoryUnit>> units_;
    std::map<std::string, std::size_t> owner_;
    std::vector<Tombstone> tombstones_;
    mutable std::shared_mutex mutex_;
};

}  // namespace birdie
