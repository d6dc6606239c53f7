#pragma once

#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "embedding.hpp"
#include "kmeans.hpp"
#include "rng.hpp"
#include "table.hpp"

namespace birdie {

/// Prefix-aware table identifier: branch ordinals from the root, then the
/// position inside the leaf.
struct TabId {
    std::vector<std::uint32_t> tokens;

    TabId() = default;
    TabId(std::initializer_list<std::uint32_t> t) : tokens(t) {}
    explicit TabId(std::vector<std::uint32_t> t) : tokens(std::move(t)) {}

    std::size_t size() const noexcept { return tokens.size(); }
    bool empty() const noexcept { return tokens.empty(); }

    std::string str() const {
        std::string s;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (i) s += '-';
            s += std::to_string(tokens[i]);
        }
        return s;
    }

    static TabId parse(const std::string& s) {
        TabId id;
        std::istringstream is(s);
        std::string part;
        while (std::getline(is, part, '-')) id.tokens.push_back(static_cast<std::uint32_t>(std::stoul(part)));
        return id;
    }

    auto operator<=>(const TabId&) const = default;
    bool operator==(const TabId&) const = default;
};

struct ClusteringConfig {
    std::size_t k = 10;  ///< clusters per split
    std::size_t c = 10;  ///< max leaf size
    std::size_t l = 2;   ///< levels clustered on the metadata view
    std::size_t kmeans_iters = 50;
    std::size_t kmeans_restarts = 4;
    std::optional<std::size_t> minibatch;
    std::uint64_t seed = 0;

    void validate() const {
        if (k < 2) throw ConfigError("k must be >= 2");
        if (c < 1) throw ConfigError("c must be >= 1");
        if (l < 1) throw ConfigError("l must be >= 1");
        if (kmeans_iters < 1) throw ConfigError("kmeans_iters must be >= 1");
    }

    bool operator==(const ClusteringConfig&) const = default;
};

/// Open interval (N^(1/(2l+1)), N^(1/(l+1))) in which k balances both views.
inline std::pair<double, double> recommended_k_range(std::size_t n, std::size_t l) {
    const double nd = static_cast<double>(n);
    return {std::pow(nd, 1.0 / static_cast<double>(2 * l + 1)), std::pow(nd, 1.0 / static_cast<double>(l + 1))};
}

inline bool k_in_recommended_range(std::size_t k, std::size_t n, std::size_t l) {
    const auto [lo, hi] = recommended_k_range(n, l);
    const double kd = static_cast<double>(k);
    return kd > lo && kd < hi;
}

struct LeafSlot {
    std::string table_id;
    bool retired = false;  ///< deleted; the position is never reused

    bool operator==(const LeafSlot&) const = default;
};

/// Compressed cluster: only summary statistics are kept, never member
/// embeddings. `view` is the embedding view in which `center` lives.
struct ClusterNode {
    Embedding center;
    double radius = 0.0;
    double cohesion = 0.0;
    int view = 1;
    std::size_t size = 0;
    std::vector<ClusterNode> children;
    std::vector<LeafSlot> members;

    bool is_leaf() const noexcept { return children.empty(); }
    bool operator==(const ClusterNode&) const = default;
};

struct SemanticTree {
    ClusterNode root;
    ClusteringConfig config;
    std::map<std::string, TabId> tabid_map;
    Rng rng;  ///< radius sampling during incremental inserts

    bool operator==(const SemanticTree&) const = default;

    std::size_t dim() const noexcept { return root.center.size(); }

    /// Node reached by following branch tokens from the root; nullptr if the
    /// path leaves the tree.
    const ClusterNode* node_at(std::span<const std::uint32_t> path) const {
        const ClusterNode* n = &root;
        for (auto tok : path) {
            if (tok >= n->children.size()) return nullptr;
            n = &n->children[tok];
        }
        return n;
    }

    ClusterNode* node_at(std::span<const std::uint32_t> path) {
        return const_cast<ClusterNode*>(std::as_const(*this).node_at(path));
    }

    std::size_t node_count() const {
        std::size_t n = 0;
        visit([&](const ClusterNode&, std::size_t) { ++n; });
        return n;
    }

    /// Floats held by the tree: center plus radius and cohesion per node.
    std::size_t stored_floats() const {
        std::size_t n = 0;
        visit([&](const ClusterNode& node, std::size_t) { n += node.center.size() + 2; });
        return n;
    }

    template <class F>
    void visit(F&& f) const {
        visit_impl(root, 0, f);
    }

private:
    template <class F>
    static void visit_impl(const ClusterNode& n, std::size_t depth, F& f) {
        f(n, depth);
        for (const auto& ch : n.children) visit_impl(ch, depth + 1, f);
    }
};

/// Radius (max) and cohesion (mean) of member distances to `center`.
inline std::pair<double, double> node_stats(std::span<const Embedding> members, std::span<const double> center) {
    if (members.empty()) throw Error("node_stats on empty member list");
    double r = 0.0, sum = 0.0;
    for (const auto& m : members) {
        const double d = dist(m, center);
        r = std::max(r, d);
        sum += d;
    }
    double cohesion = sum / static_cast<double>(members.size());
    // mean <= max holds exactly in reals; keep it under rounding too
    return {r, std::min(cohesion, r)};
}

inline Embedding mean_of(std::span<const Embedding> pts) {
    Embedding m(pts.front().size(), 0.0);
    for (const auto& p : pts)
        for (std::size_t d = 0; d < m.size(); ++d) m[d] += p[d];
    for (double& x : m) x /= static_cast<double>(pts.size());
    return m;
}

/// Walks the finished tree: branch ordinals are child indices, leaf
/// positions are slot indices. Retired slots get no tabid.
inline std::map<std::string, TabId> assign_tabids(const ClusterNode& root) {
    std::map<std::string, TabId> out;
    std::vector<std::uint32_t> path;
    auto rec = [&](auto& self, const ClusterNode& n) -> void {
        if (n.is_leaf()) {
            for (std::size_t p = 0; p < n.members.size(); ++p) {
                if (n.members[p].retired) continue;
                auto tokens = path;
                tokens.push_back(static_cast<std::uint32_t>(p));
                if (!out.emplace(n.members[p].table_id, TabId(std::move(tokens))).second)
                    throw DuplicateIdError(n.members[p].table_id);
            }
            return;
        }
        for (std::size_t i = 0; i < n.children.size(); ++i) {
            path.push_back(static_cast<std::uint32_t>(i));
            self(self, n.children[i]);
            path.pop_back();
        }
    };
    rec(rec, root);
    return out;
}

namespace detail {

constexpr std::size_t kMaxTreeDepth = 64;

struct TreeBuilder {
    const std::vector<std::string>& ids;
    std::span<const TwoViewEmbedding> emb;
    const ClusteringConfig& cfg;

    static int view_for_level(std::size_t level, std::size_t l) { return level >= l ? 2 : 1; }

    std::vector<Embedding> gather(const std::vector<std::size_t>& idx, int view) const {
        std::vector<Embedding> pts;
        pts.reserve(idx.size());
        for (auto i : idx) pts.push_back(view == 1 ? emb[i].h1 : emb[i].h2);
        return pts;
    }

    void split(ClusterNode& node, const std::vector<std::size_t>& idx, std::size_t level, std::uint64_t path_hash) {
        const int view = view_for_level(level, cfg.l);
        const auto pts = gather(idx, view);
        KMeansOptions opt{cfg.kmeans_iters, cfg.minibatch, mix64(cfg.seed ^ path_hash), cfg.kmeans_restarts};
        auto km = kmeans(pts, cfg.k, opt);

        node.children.reserve(km.clusters.size());
        for (std::size_t o = 0; o < km.clusters.size(); ++o) {
            std::vector<std::size_t> sub;
            std::vector<Embedding> sub_pts;
            for (auto local : km.clusters[o]) {
                sub.push_back(idx[local]);
                sub_pts.push_back(pts[local]);
            }
            ClusterNode child;
            child.view = view;
            child.size = sub.size();
            child.center = mean_of(sub_pts);
            std::tie(child.radius, child.cohesion) = node_stats(sub_pts, child.center);

            // Recurse while the split makes progress, or when the next level
            // switches view and may separate what this view could not.
            const bool progress = sub.size() < idx.size() || view_for_level(level + 1, cfg.l) != view;
            if (sub.size() > cfg.c && progress && level + 1 < kMaxTreeDepth) {
                split(child, sub, level + 1, mix64(path_hash ^ (o + 1)));
            } else {
                for (auto i : sub) child.members.push_back({ids[i], false});
            }
            node.children.push_back(std::move(child));
        }
    }
};

}  // namespace detail

/// Two-view hierarchical clustering. Levels [0, l) split on metadata
/// embeddings, deeper levels on instance embeddings. A root split always
/// happens, so every tabid has at least two tokens.
inline SemanticTree build_tree(const std::vector<std::string>& ids, std::span<const TwoViewEmbedding> embeddings,
                               const ClusteringConfig& cfg) {
    cfg.validate();
    if (ids.empty()) throw Error("cannot build a tree over an empty repository");
    if (ids.size() != embeddings.size()) throw Error("table/embedding count mismatch");
    {
        std::map<std::string, int> seen;
        for (const auto& id : ids)
            if (!seen.emplace(id, 0).second) throw DuplicateIdError(id);
    }
    const std::size_t dim = embeddings[0].h1.size();
    for (const auto& e : embeddings) {
        if (e.h1.size() != dim) throw DimensionMismatch(dim, e.h1.size());
        if (e.h2.size() != dim) throw DimensionMismatch(dim, e.h2.size());
    }

    SemanticTree tree;
    tree.config = cfg;
    tree.rng = Rng(mix64(cfg.seed ^ 0x5eedf12ad1ULL));

    std::vector<std::size_t> all(ids.size());
    std::vector<Embedding> h1;
    for (std::size_t i = 0; i < all.size(); ++i) {
        all[i] = i;
        h1.push_back(embeddings[i].h1);
    }
    tree.root.view = 1;
    tree.root.size = ids.size();
    tree.root.center = mean_of(h1);
    std::tie(tree.root.radius, tree.root.cohesion) = node_stats(h1, tree.root.center);

    detail::TreeBuilder builder{ids, embeddings, cfg};
    builder.split(tree.root, all, 0, 0);
    tree.tabid_map = assign_tabids(tree.root);
    return tree;
}

inline SemanticTree build_tree(const Repository& repo, std::span<const TwoViewEmbedding> embeddings,
                               const ClusteringConfig& cfg) {
    std::vector<std::string> ids;
    ids.reserve(repo.size());
    for (const auto& t : repo.tables) ids.push_back(t.id);
    return build_tree(ids, embeddings, cfg);
}

}  // namespace birdie
