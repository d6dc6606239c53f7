#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "embedding.hpp"
#include "query_gen.hpp"
#include "semantic_tree.hpp"
#include "trie.hpp"

namespace birdie {

struct DecoderConfig {
    std::size_t beam = 20;
    double tau = 0.2;  ///< softmax temperature of the tree-descent scorer

    bool operator==(const DecoderConfig&) const = default;
};

/// Next-token model for tabid generation. `next_token_dist` returns one
/// probability per entry of `allowed`, summing to 1.
class AutoregressiveScorer {
public:
    virtual ~AutoregressiveScorer() = default;

    /// Query representation handed back to next_token_dist.
    virtual Embedding encode(std::string_view query) const = 0;

    virtual std::vector<double> next_token_dist(std::span<const double> query, std::span<const std::uint32_t> prefix,
                                                std::span<const std::uint32_t> allowed) const = 0;
};

struct ScoredTabId {
    TabId tabid;
    double log_prob = 0.0;
    std::string table_id;

    bool operator==(const ScoredTabId&) const = default;
};

/// Descending log-probability, then lexicographic tabid.
inline bool better(const ScoredTabId& a, const ScoredTabId& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.tabid < b.tabid;
}

inline std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> p(logits.size());
    if (logits.empty()) return p;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
    for (double& x : p) x /= z;
    return p;
}

/// Length-synchronous beam search restricted to trie paths. Every
/// hypothesis that reaches a terminal joins the finished pool; the best K
/// finished hypotheses are returned.
inline std::vector<ScoredTabId> beam_search(std::span<const double> query, const AutoregressiveScorer& scorer,
                                            const TabIdTrie& trie, std::size_t beam, std::size_t top_k) {
    if (beam < 1) throw ConfigError("beam must be >= 1");
    if (top_k < 1) throw ConfigError("K must be >= 1");

    struct Hyp {
        ScoredTabId s;
        const TabIdTrie::Node* node;
    };
    std::vector<Hyp> active{{ScoredTabId{}, &trie.root()}};
    std::vector<ScoredTabId> finished;

    while (!active.empty()) {
        std::vector<Hyp> next;
        for (const auto& h : active) {
            const auto& children = h.node->children;
            if (children.empty()) continue;
            std::vector<std::uint32_t> allowed;
            allowed.reserve(children.size());
            for (const auto& [tok, _] : children) allowed.push_back(tok);
            const auto probs = scorer.next_token_dist(query, h.s.tabid.tokens, allowed);
            if (probs.size() != allowed.size()) throw Error("scorer returned a distribution of the wrong size");

            std::size_t i = 0;
            for (const auto& [tok, child] : children) {
                Hyp ext{h.s, child.get()};
                ext.s.tabid.tokens.push_back(tok);
                ext.s.log_prob += std::log(probs[i++]);
                if (child->is_terminal()) {
                    ScoredTabId done = ext.s;
                    done.table_id = *child->table_id;
                    finished.push_back(std::move(done));
                }
                if (!child->children.empty()) next.push_back(std::move(ext));
            }
        }
        if (next.size() > beam) {
            std::partial_sort(next.begin(), next.begin() + static_cast<std::ptrdiff_t>(beam), next.end(),
                              [](const Hyp& a, const Hyp& b) { return better(a.s, b.s); });
            next.resize(beam);
        }
        active = std::move(next);
    }

    std::sort(finished.begin(), finished.end(), better);
    if (finished.size() > top_k) finished.resize(top_k);
    return finished;
}

inline std::vector<ScoredTabId> beam_search(std::string_view query, const AutoregressiveScorer& scorer,
                                            const TabIdTrie& trie, std::size_t beam, std::size_t top_k) {
    const Embedding q = scorer.encode(query);
    return beam_search(std::span<const double>(q), scorer, trie, beam, top_k);
}

/// Stand-in for a trained decoder: routes by distance between the query
/// embedding and stored cluster centers, and picks leaf members by distance
/// to the centroid of each table's synthetic-query embeddings.
class TreeDescentScorer final : public AutoregressiveScorer {
public:
    TreeDescentScorer(std::shared_ptr<const SemanticTree> tree, std::shared_ptr<const Embedder> embedder,
                      const QueryPool& pool, double tau)
        : tree_(std::move(tree)), embedder_(std::move(embedder)), tau_(tau) {
        if (!(tau_ > 0.0)) throw ConfigError("tau must be positive");
        for (const auto& [id, queries] : pool) {
            if (queries.empty()) continue;
            std::vector<Embedding> embs;
            embs.reserve(queries.size());
            for (const auto& q : queries) embs.push_back(embedder_->embed(q));
            centroids_.emplace(id, mean_of(embs));
        }
    }

    Embedding encode(std::string_view query) const override { return embedder_->embed(query); }

    std::vector<double> next_token_dist(std::span<const double> query, std::span<const std::uint32_t> prefix,
                                        std::span<const std::uint32_t> allowed) const override {
        const ClusterNode* node = tree_->node_at(prefix);
        if (!node) throw Error("prefix not present in the tree");
        std::vector<double> logits;
        logits.reserve(allowed.size());
        for (auto tok : allowed) {
            std::span<const double> target;
            if (node->is_leaf()) {
                if (tok >= node->members.size()) throw Error("leaf position out of range");
                auto it = centroids_.find(node->members[tok].table_id);
                target = it != centroids_.end() ? std::span<const double>(it->second)
                                                : std::span<const double>(node->center);
            } else {
                if (tok >= node->children.size()) throw Error("branch token out of range");
                target = node->children[tok].center;
            }
            logits.push_back(-dist(query, target) / tau_);
        }
        return softmax(logits);
    }

    double tau() const noexcept { return tau_; }

private:
    std::shared_ptr<const SemanticTree> tree_;
    std::shared_ptr<const Embedder> embedder_;
    double tau_;
    std::map<std::string, Embedding> centroids_;
};

/// Ranked (table_id, log_prob) results for a query.
inline std::vector<ScoredTabId> search(std::string_view query, const TabIdTrie& trie,
                                       const AutoregressiveScorer& scorer, std::size_t top_k, std::size_t beam) {
    if (trie.empty()) return {};
    return beam_search(query, scorer, trie, beam, top_k);
}

}  // namespace birdie
