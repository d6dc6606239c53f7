#include <catch_amalgamated.hpp>

#include <set>

#include <birdie/semantic_tree.hpp>
#include <birdie/synthetic.hpp>

using namespace birdie;

namespace {

std::vector<std::string> ids_for(std::size_t n) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back("T" + std::to_string(i + 1));
    return ids;
}

// Eight tables in two dimensions. View 1 separates {T3,T4,T7} from the
// rest and then T1 from {T2,T5,T6,T8}; view 2 separates T6, then T8.
SemanticTree worked_tree() {
    std::vector<TwoViewEmbedding> e{
        {{0, 10}, {0, 0}},     // T1
        {{0, 0}, {0, 0}},      // T2
        {{100, 0}, {200, 0}},  // T3
        {{100, 0}, {200, 10}}, // T4
        {{0, 0}, {0, 0}},      // T5
        {{0, 0}, {50, 0}},     // T6
        {{100, 0}, {300, 0}},  // T7
        {{0, 0}, {0, 5}},      // T8
    };
    ClusteringConfig cfg;
    cfg.k = cfg.c = cfg.l = 2;
    return build_tree(ids_for(8), e, cfg);
}

void check_node(const ClusterNode& n) {
    CHECK(n.cohesion <= n.radius + 1e-12);
    if (n.is_leaf()) {
        CHECK(n.size == n.members.size());
    } else {
        std::size_t s = 0;
        for (const auto& c : n.children) {
            s += c.size;
            check_node(c);
        }
        CHECK(n.size == s);
    }
}

}  // namespace

TEST_CASE("TabId string form") {
    TabId t{0, 1, 0, 0, 0};
    CHECK(t.str() == "0-1-0-0-0");
    CHECK(TabId::parse("0-1-0-0-0") == t);
    CHECK(TabId{0, 1} < TabId{0, 1, 0});
    CHECK(TabId{0, 2} > TabId{0, 1, 5});
}

TEST_CASE("config validation and recommended k range") {
    ClusteringConfig c;
    CHECK(c.k == c.c);
    CHECK(c.l == 2);
    CHECK(c.kmeans_iters == 50);
    c.k = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    auto [lo, hi] = recommended_k_range(1000, 2);
    CHECK(lo == Catch::Approx(std::pow(1000.0, 0.2)));
    CHECK(hi == Catch::Approx(10.0));
    CHECK(k_in_recommended_range(8, 1000, 2));
    CHECK_FALSE(k_in_recommended_range(20, 1000, 2));
    CHECK_FALSE(k_in_recommended_range(2, 1000, 2));
}

TEST_CASE("worked 8-table tree, k=c=l=2") {
    auto tree = worked_tree();
    CHECK(tree.tabid_map.at("T2") == TabId{0, 1, 0, 0, 0});
    CHECK(tree.tabid_map.at("T5") == TabId{0, 1, 0, 0, 1});
    CHECK(tree.tabid_map.at("T8") == TabId{0, 1, 0, 1, 0});
    CHECK(tree.tabid_map.at("T6") == TabId{0, 1, 1, 0});
    CHECK(tree.tabid_map.at("T1") == TabId{0, 0, 0});
    // Depth-3 and deeper nodes under 0-1 were clustered on view 2.
    CHECK(tree.node_at(std::vector<std::uint32_t>{0})->view == 1);
    CHECK(tree.node_at(std::vector<std::uint32_t>{0, 1})->view == 1);
    CHECK(tree.node_at(std::vector<std::uint32_t>{0, 1, 0})->view == 2);
    CHECK(tree.node_at(std::vector<std::uint32_t>{0, 1, 0, 0})->view == 2);
    check_node(tree.root);
    CHECK(tree.tabid_map.size() == 8);
}

TEST_CASE("single table gets tabid 0-0") {
    std::vector<TwoViewEmbedding> e{{{1, 0}, {0, 1}}};
    auto tree = build_tree(ids_for(1), e, ClusteringConfig{});
    CHECK(tree.tabid_map.at("T1") == TabId{0, 0});
}

TEST_CASE("single leaf with three members enumerates positions") {
    std::vector<TwoViewEmbedding> e(3, TwoViewEmbedding{{1, 0}, {0, 1}});
    auto tree = build_tree(ids_for(3), e, ClusteringConfig{});
    CHECK(tree.tabid_map.at("T1") == TabId{0, 0});
    CHECK(tree.tabid_map.at("T2") == TabId{0, 1});
    CHECK(tree.tabid_map.at("T3") == TabId{0, 2});
}

TEST_CASE("build errors") {
    std::vector<TwoViewEmbedding> none;
    CHECK_THROWS_AS(build_tree(std::vector<std::string>{}, none, ClusteringConfig{}), Error);
    std::vector<TwoViewEmbedding> two(2, TwoViewEmbedding{{1, 0}, {0, 1}});
    CHECK_THROWS_AS(build_tree(std::vector<std::string>{"a", "a"}, two, ClusteringConfig{}), DuplicateIdError);
    std::vector<TwoViewEmbedding> ragged{{{1, 0}, {0, 1}}, {{1, 0, 0}, {0, 1, 0}}};
    CHECK_THROWS_AS(build_tree(std::vector<std::string>{"a", "b"}, ragged, ClusteringConfig{}), DimensionMismatch);
}

TEST_CASE("planted Gaussians share the first token") {
    Rng rng(21);
    std::vector<TwoViewEmbedding> e;
    std::vector<std::size_t> label;
    for (std::size_t i = 0; i < 100; ++i) {
        const std::size_t g = i % 4;
        Embedding h(6, 0.0);
        h[g] = 20.0;
        for (double& x : h) x += rng.normal();
        e.push_back({h, h});
        label.push_back(g);
    }
    ClusteringConfig cfg;
    cfg.k = 4;
    cfg.c = 30;
    cfg.l = 1;
    auto tree = build_tree(ids_for(100), e, cfg);
    std::map<std::size_t, std::set<std::uint32_t>> firsts;
    for (std::size_t i = 0; i < 100; ++i) firsts[label[i]].insert(tree.tabid_map.at("T" + std::to_string(i + 1)).tokens[0]);
    for (const auto& [g, s] : firsts) CHECK(s.size() == 1);
}

TEST_CASE("node_stats") {
    std::vector<Embedding> one{{2, 3}};
    auto [r0, c0] = node_stats(one, Embedding{2, 3});
    CHECK(r0 == 0.0);
    CHECK(c0 == 0.0);
    std::vector<Embedding> pair{{1, 0}, {-1, 0}};
    auto [r1, c1] = node_stats(pair, Embedding{0, 0});
    CHECK(r1 == 1.0);
    CHECK(c1 == 1.0);
    std::vector<Embedding> none;
    CHECK_THROWS_AS(node_stats(none, Embedding{0, 0}), Error);
    Rng rng(2);
    for (int t = 0; t < 100; ++t) {
        std::vector<Embedding> pts(50, Embedding(5));
        for (auto& p : pts)
            for (double& x : p) x = rng.normal();
        auto [r, c] = node_stats(pts, mean_of(pts));
        CHECK(c <= r);
    }
}

TEST_CASE("synthetic repository: tree invariants") {
    SyntheticConfig sc;
    sc.tables = 300;
    sc.groups = 10;
    auto syn = make_synthetic_repository(sc);
    EmbedderConfig ec;
    ec.dim = 128;
    std::vector<TwoViewEmbedding> embs;
    for (const auto& t : syn.repo.tables) embs.push_back(embed_table(t, ec));
    ClusteringConfig cfg;
    cfg.k = 10;
    cfg.c = 10;
    auto tree = build_tree(syn.repo, embs, cfg);

    SECTION("bijection between tables and tabids") {
        CHECK(tree.tabid_map.size() == syn.repo.size());
        std::set<TabId> distinct;
        for (const auto& [id, t] : tree.tabid_map) {
            distinct.insert(t);
            CHECK(t.size() >= 2);
            const auto* leaf = tree.node_at(std::span<const std::uint32_t>(t.tokens.data(), t.size() - 1));
            REQUIRE(leaf);
            REQUIRE(leaf->is_leaf());
            CHECK(leaf->members.at(t.tokens.back()).table_id == id);
        }
        CHECK(distinct.size() == syn.repo.size());
    }
    SECTION("statistics and bookkeeping") { check_node(tree.root); }
    SECTION("compression") { CHECK(tree.stored_floats() == tree.node_count() * (ec.dim + 2)); }
    SECTION("views by depth") {
        tree.visit([&](const ClusterNode& n, std::size_t depth) {
            if (depth <= cfg.l) CHECK(n.view == 1);
            else CHECK(n.view == 2);
        });
    }
    SECTION("token ranges at build time") {
        for (const auto& [id, t] : tree.tabid_map) {
            for (std::size_t i = 0; i + 1 < t.size(); ++i) CHECK(t.tokens[i] < cfg.k);
            CHECK(t.tokens.back() < cfg.c);
        }
    }
    SECTION("prefix semantics") {
        double same = 0, diff = 0;
        std::size_t ns = 0, nd = 0;
        for (std::size_t i = 0; i < embs.size(); ++i)
            for (std::size_t j = i + 1; j < embs.size(); ++j) {
                const double d = dist(embs[i].h1, embs[j].h1);
                if (tree.tabid_map.at(syn.repo.tables[i].id).tokens[0] == tree.tabid_map.at(syn.repo.tables[j].id).tokens[0]) {
                    same += d;
                    ++ns;
                } else {
                    diff += d;
                    ++nd;
                }
            }
        REQUIRE(ns > 0);
        REQUIRE(nd > 0);
        CHECK(same / static_cast<double>(ns) < diff / static_cast<double>(nd));
    }
    SECTION("determinism") {
        auto again = build_tree(syn.repo, embs, cfg);
        CHECK(again.tabid_map == tree.tabid_map);
        CHECK(again.root == tree.root);
    }
}
