#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "embedding.hpp"
#include "rng.hpp"
#include "semantic_tree.hpp"
#include "trie.hpp"

namespace birdie {

enum class InsertCase : int {
    kNoUpdate = 1,    ///< d <= cohesion
    kUpdate = 2,      ///< cohesion < d <= radius
    kNewCluster = 3,  ///< d > radius
};

struct LevelTrace {
    InsertCase which;
    std::uint32_t ordinal;  ///< child taken (or created) at this level
    double d;
    double cohesion;  ///< of the closest child, before any update
    double radius;
};

struct InsertionOutcome {
    TabId tabid;
    std::vector<LevelTrace> trace;
};

struct ClosestChild {
    std::size_t index;
    double distance;
};

/// argmin over children of dist(center, h); the lowest ordinal wins ties.
inline ClosestChild closest_child(const ClusterNode& node, std::span<const double> h) {
    if (node.is_leaf()) throw Error("closest_child on a leaf node");
    ClosestChild best{0, std::numeric_limits<double>::infinity()};
    for (std::size_t i = 0; i < node.children.size(); ++i) {
        const double d = dist(node.children[i].center, h);
        if (d < best.distance) best = {i, d};
    }
    return best;
}

struct RadiusBounds {
    double lower;
    double upper;
};

/// After moving the center from c_old to c_new to absorb h_new, the true
/// radius lies in [dist(h_new, c_new), r + dist(c_old, c_new)].
inline RadiusBounds radius_bounds(double r, std::span<const double> c_old, std::span<const double> c_new,
                                  std::span<const double> h_new) {
    return {dist(h_new, c_new), r + dist(c_old, c_new)};
}

inline double estimate_radius(double r, std::span<const double> c_old, std::span<const double> c_new,
                              std::span<const double> h_new, Rng& rng) {
    const auto b = radius_bounds(r, c_old, c_new, h_new);
    if (!(b.upper > b.lower)) return b.lower;
    return std::clamp(rng.uniform(b.lower, b.upper), b.lower, b.upper);
}

struct ClusterUpdate {
    Embedding center;
    double cohesion;
};

/// Running-mean update of center and cohesion. `n` is the member count
/// before the insertion, so the new center is the exact mean.
inline ClusterUpdate updated_center_cohesion(std::size_t n, std::span<const double> c, double cohesion,
                                             std::span<const double> h_new, double d) {
    const double nd = static_cast<double>(n);
    ClusterUpdate u{Embedding(c.size()), (nd * cohesion + d) / (nd + 1.0)};
    for (std::size_t i = 0; i < c.size(); ++i) u.center[i] = (nd * c[i] + h_new[i]) / (nd + 1.0);
    return u;
}

/// Assigns a tabid to a new table without touching any existing one.
/// Descends by closest child, choosing the embedding view the children were
/// clustered in, and applies the no-update / update / new-cluster rule at
/// each level.
inline InsertionOutcome insert_table(SemanticTree& tree, const std::string& table_id, const TwoViewEmbedding& emb) {
    if (tree.tabid_map.count(table_id)) throw DuplicateIdError(table_id);
    if (emb.h1.size() != tree.dim()) throw DimensionMismatch(tree.dim(), emb.h1.size());
    if (emb.h2.size() != tree.dim()) throw DimensionMismatch(tree.dim(), emb.h2.size());

    InsertionOutcome out;
    ClusterNode* node = &tree.root;
    ++node->size;
    while (true) {
        if (node->is_leaf()) {
            out.tabid.tokens.push_back(static_cast<std::uint32_t>(node->members.size()));
            node->members.push_back({table_id, false});
            break;
        }
        const int view = node->children.front().view;
        const Embedding& h = view == 1 ? emb.h1 : emb.h2;
        const auto cc = closest_child(*node, h);
        ClusterNode& child = node->children[cc.index];
        const double d = cc.distance;
        LevelTrace lt{InsertCase::kNoUpdate, static_cast<std::uint32_t>(cc.index), d, child.cohesion, child.radius};

        if (d <= child.cohesion) {
            ++child.size;
        } else if (d <= child.radius) {
            lt.which = InsertCase::kUpdate;
            auto u = updated_center_cohesion(child.size, child.center, child.cohesion, h, d);
            const double r_new = estimate_radius(child.radius, child.center, u.center, h, tree.rng);
            child.center = std::move(u.center);
            child.radius = r_new;
            child.cohesion = std::min(u.cohesion, r_new);
            ++child.size;
        } else {
            lt.which = InsertCase::kNewCluster;
            lt.ordinal = static_cast<std::uint32_t>(node->children.size());
            double r_sum = 0.0, c_sum = 0.0;
            for (const auto& sib : node->children) {
                r_sum += sib.radius;
                c_sum += sib.cohesion;
            }
            const double n_sib = static_cast<double>(node->children.size());
            ClusterNode fresh;
            fresh.center = h;
            fresh.radius = r_sum / n_sib;
            fresh.cohesion = std::min(c_sum / n_sib, fresh.radius);
            fresh.view = view;
            fresh.size = 1;
            fresh.members.push_back({table_id, false});
            node->children.push_back(std::move(fresh));
            out.trace.push_back(lt);
            out.tabid.tokens.push_back(lt.ordinal);
            out.tabid.tokens.push_back(0);
            break;
        }
        out.trace.push_back(lt);
        out.tabid.tokens.push_back(lt.ordinal);
        node = &child;
    }
    tree.tabid_map.emplace(table_id, out.tabid);
    return out;
}

inline InsertionOutcome insert_table(SemanticTree& tree, const Table& t, const Embedder& embedder) {
    return insert_table(tree, t.id, embed_table(t, embedder));
}

/// Retires a table: its tabid leaves the valid set for good. Node
/// statistics are left as they are.
inline void delete_table(SemanticTree& tree, TabIdTrie& trie, const std::string& table_id) {
    auto it = tree.tabid_map.find(table_id);
    if (it == tree.tabid_map.end()) throw UnknownIdError(table_id);
    const TabId tabid = it->second;
    std::span<const std::uint32_t> path(tabid.tokens.data(), tabid.size() - 1);
    if (ClusterNode* leaf = tree.node_at(path); leaf && tabid.tokens.back() < leaf->members.size())
        leaf->members[tabid.tokens.back()].retired = true;
    tree.tabid_map.erase(it);
    trie.erase(tabid);
}

}  // namespace birdie
