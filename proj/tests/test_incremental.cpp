#include <catch_amalgamated.hpp>

#include <birdie/incremental.hpp>
#include <birdie/synthetic.hpp>

#include "oracles.hpp"

using namespace birdie;

namespace {

ClusterNode leaf(Embedding c, double r, double coh, std::vector<std::string> ids) {
    ClusterNode n;
    n.center = std::move(c);
    n.radius = r;
    n.cohesion = coh;
    n.view = 1;
    n.size = ids.size();
    for (auto& id : ids) n.members.push_back({std::move(id), false});
    return n;
}

// Root with two leaves: one at (1,0) with radius 4 and cohesion 1 holding
// three tables, one far away at (100,100).
SemanticTree two_leaf_tree() {
    SemanticTree t;
    t.root.center = {50, 50};
    t.root.view = 1;
    t.root.children.push_back(leaf({1, 0}, 4, 1, {"a", "b", "c"}));
    t.root.children.push_back(leaf({100, 100}, 2, 1, {"d"}));
    t.root.size = 4;
    t.tabid_map = assign_tabids(t.root);
    t.rng = Rng(5);
    return t;
}

TwoViewEmbedding same(Embedding h) { return {h, h}; }

}  // namespace

TEST_CASE("closest_child") {
    ClusterNode p;
    p.children.push_back(leaf({0, 0}, 1, 1, {"x"}));
    SECTION("single child") {
        auto cc = closest_child(p, Embedding{7, 7});
        CHECK(cc.index == 0);
    }
    p.children.push_back(leaf({10, 0}, 1, 1, {"y"}));
    SECTION("nearest") {
        auto cc = closest_child(p, Embedding{1, 0});
        CHECK(cc.index == 0);
        CHECK(cc.distance == 1.0);
    }
    SECTION("tie goes to the lower ordinal") { CHECK(closest_child(p, Embedding{5, 0}).index == 0); }
    SECTION("leaf input") { CHECK_THROWS_AS(closest_child(p.children[0], Embedding{0, 0}), Error); }
}

TEST_CASE("running-mean update and radius bounds, worked numbers") {
    const Embedding c{1, 0}, h{5, 0};
    const double d = dist(c, h);
    REQUIRE(d == 4.0);
    auto u = updated_center_cohesion(3, c, 1.0, h, d);
    CHECK(u.center == Embedding{2, 0});
    CHECK(u.cohesion == 1.75);
    auto b = radius_bounds(4.0, c, u.center, h);
    CHECK(b.lower == 3.0);
    CHECK(b.upper == 5.0);

    Rng rng(99);
    double sum = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double r = estimate_radius(4.0, c, u.center, h, rng);
        REQUIRE(r >= 3.0);
        REQUIRE(r <= 5.0);
        sum += r;
    }
    CHECK(sum / 10000.0 >= 3.9);
    CHECK(sum / 10000.0 <= 4.1);
}

TEST_CASE("degenerate radius interval") {
    Rng rng(1);
    const Embedding c{0, 0}, h{3, 4};
    CHECK(estimate_radius(5.0, c, c, h, rng) == 5.0);
}

TEST_CASE("case II insertion through the tree") {
    auto t = two_leaf_tree();
    auto out = insert_table(t, "e", same({5, 0}));
    REQUIRE(out.trace.size() == 1);
    CHECK(out.trace[0].which == InsertCase::kUpdate);
    CHECK(out.tabid == TabId{0, 3});
    const auto& ch = t.root.children[0];
    CHECK(ch.center == Embedding{2, 0});
    CHECK(ch.radius >= 3.0);
    CHECK(ch.radius <= 5.0);
    CHECK(ch.cohesion == std::min(1.75, ch.radius));
    CHECK(ch.size == 4);
    CHECK(t.root.size == 5);
    CHECK(out.trace.size() == out.tabid.size() - 1);
}

TEST_CASE("case I leaves statistics bit-identical") {
    SemanticTree t;
    t.root.center = {0, 0};
    t.root.children.push_back(leaf({0, 0}, 2, 1, {"a", "b"}));
    t.root.size = 2;
    t.tabid_map = assign_tabids(t.root);
    const auto before = t.root.children[0];
    auto out = insert_table(t, "n", same({0.5, 0}));
    CHECK(out.trace[0].which == InsertCase::kNoUpdate);
    const auto& after = t.root.children[0];
    CHECK(after.center == before.center);
    CHECK(after.radius == before.radius);
    CHECK(after.cohesion == before.cohesion);
    CHECK(after.size == before.size + 1);
    CHECK(out.tabid == TabId{0, 2});
}

TEST_CASE("case boundaries: d = cohesion is case I, d = radius is case II") {
    SemanticTree t;
    t.root.center = {0, 0};
    t.root.children.push_back(leaf({0, 0}, 2, 1, {"a"}));
    t.root.size = 1;
    t.tabid_map = assign_tabids(t.root);
    CHECK(insert_table(t, "p", same({1, 0})).trace[0].which == InsertCase::kNoUpdate);
    const double r = t.root.children[0].radius;
    CHECK(insert_table(t, "q", same({0, r})).trace[0].which == InsertCase::kUpdate);
}

TEST_CASE("case III creates a sibling with averaged statistics") {
    auto t = two_leaf_tree();
    auto out = insert_table(t, "z", same({-500, 0}));
    REQUIRE(out.trace.size() == 1);
    CHECK(out.trace[0].which == InsertCase::kNewCluster);
    CHECK(out.tabid == TabId{2, 0});
    REQUIRE(t.root.children.size() == 3);
    const auto& fresh = t.root.children[2];
    CHECK(fresh.center == Embedding{-500, 0});
    CHECK(fresh.radius == 3.0);
    CHECK(fresh.cohesion == 1.0);
    CHECK(fresh.size == 1);
    CHECK(fresh.members.size() == 1);
    CHECK(out.trace.size() == out.tabid.size() - 1);
}

TEST_CASE("insertion errors") {
    auto t = two_leaf_tree();
    CHECK_THROWS_AS(insert_table(t, "a", same({1, 0})), DuplicateIdError);
    CHECK_THROWS_AS(insert_table(t, "new", same({1, 0, 0})), DimensionMismatch);
}

TEST_CASE("deletion") {
    auto t = two_leaf_tree();
    auto trie = trie_from(t.tabid_map);
    const auto old = t.tabid_map.at("b");
    const auto stats_before = t.root;
    delete_table(t, trie, "b");
    CHECK_FALSE(t.tabid_map.count("b"));
    CHECK_FALSE(trie.contains(old));
    CHECK(t.root.children[0].members[1].retired);
    CHECK(t.root.children[0].center == stats_before.children[0].center);
    CHECK(t.root.children[0].size == stats_before.children[0].size);
    CHECK_THROWS_AS(delete_table(t, trie, "b"), UnknownIdError);

    // Same content, new id: a fresh position, the retired slot stays retired.
    auto out = insert_table(t, "b2", same({1, 0}));
    CHECK(out.tabid != old);
    CHECK(out.tabid == TabId{0, 3});
    CHECK(t.root.children[0].members[1].retired);
}

TEST_CASE("randomized radius bound containment") {
    Rng rng(2024);
    for (int i = 0; i < 300; ++i) {
        auto tr = oracle::radius_bound_trial(rng);
        CHECK(tr.exact >= tr.lower - 1e-9);
        CHECK(tr.exact <= tr.upper + 1e-9);
    }
}

TEST_CASE("existing tabids survive insertions, sizes grow along the path") {
    SyntheticConfig sc;
    sc.tables = 200;
    sc.groups = 5;
    auto syn = make_synthetic_repository(sc);
    EmbedderConfig ec;
    Repository base;
    base.tables.assign(syn.repo.tables.begin(), syn.repo.tables.begin() + 150);
    std::vector<TwoViewEmbedding> embs;
    for (const auto& tb : base.tables) embs.push_back(embed_table(tb, ec));
    ClusteringConfig cfg;
    cfg.k = cfg.c = 5;
    auto tree = build_tree(base, embs, cfg);

    for (std::size_t i = 150; i < 200; ++i) {
        const auto snapshot = tree.tabid_map;
        std::vector<std::size_t> sizes_before;
        const ClusterNode* n = &tree.root;
        sizes_before.push_back(n->size);
        const auto& tb = syn.repo.tables[i];
        auto out = insert_table(tree, tb, HashingEmbedder(ec));
        CHECK(out.trace.size() == out.tabid.size() - 1);
        for (const auto& [id, tabid] : snapshot) CHECK(tree.tabid_map.at(id) == tabid);
        CHECK(tree.tabid_map.at(tb.id) == out.tabid);
        CHECK(tree.root.size == sizes_before[0] + 1);
        // Every node on the path has cohesion <= radius.
        const ClusterNode* cur = &tree.root;
        for (std::size_t k = 0; k + 1 < out.tabid.size(); ++k) {
            cur = &cur->children.at(out.tabid.tokens[k]);
            CHECK(cur->cohesion <= cur->radius + 1e-12);
        }
        REQUIRE(cur->is_leaf());
        CHECK(cur->members.at(out.tabid.tokens.back()).table_id == tb.id);
    }
}

TEST_CASE("insertion is deterministic") {
    auto a = two_leaf_tree(), b = two_leaf_tree();
    for (int i = 0; i < 20; ++i) {
        const Embedding h{static_cast<double>(i % 5), static_cast<double>(i % 3)};
        insert_table(a, "n" + std::to_string(i), same(h));
        insert_table(b, "n" + std::to_string(i), same(h));
    }
    CHECK(a == b);
}
