#include <catch_amalgamated.hpp>

#include <set>

#include <birdie/memory_hub.hpp>
#include <birdie/synthetic.hpp>

using namespace birdie;

namespace {

struct Fixture {
    SyntheticRepository syn;
    std::vector<Repository> batches;
    std::shared_ptr<const HashingEmbedder> embedder;
    ClusteringConfig clus;
    QueryGenConfig qcfg;
    TemplateQueryGenerator gen{4};
    HubConfig hcfg;

    Fixture() {
        SyntheticConfig sc;
        sc.tables = 240;
        sc.groups = 6;
        sc.seed = 8;
        syn = make_synthetic_repository(sc);
        const std::size_t cuts[] = {0, 150, 180, 210, 240};
        for (int b = 0; b < 4; ++b) {
            Repository r;
            r.batch_id = b;
            r.tables.assign(syn.repo.tables.begin() + cuts[b], syn.repo.tables.begin() + cuts[b + 1]);
            batches.push_back(r);
        }
        EmbedderConfig ec;
        ec.dim = 128;
        embedder = std::make_shared<const HashingEmbedder>(ec);
        clus.k = clus.c = 6;
        hcfg.decoder.tau = 0.05;
    }

    MemoryHub base() const { return MemoryHub::build(batches[0], embedder, clus, gen, qcfg, hcfg); }

    std::vector<std::string> queries(std::size_t n) const {
        std::vector<std::string> q;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& t = syn.repo.tables[(i * 37) % syn.repo.size()];
            q.push_back("What is the " + t.columns[1] + " of " + t.rows[0][0] + "?");
        }
        return q;
    }
};

}  // namespace

TEST_CASE("n_q is a quarter of B") {
    HubConfig c;
    CHECK(c.n_q() == 5);
    c.B = 7;
    CHECK(c.n_q() == 1);
}

TEST_CASE("update: units partition the tables and old units stay unchanged") {
    Fixture f;
    auto hub = f.base();
    const auto qs = f.queries(40);
    std::vector<CandidateList> before;
    for (const auto& q : qs) before.push_back(hub.unit(0).search(q, 5, 0));

    for (int b = 1; b < 4; ++b) hub.update(f.batches[b], f.gen, f.qcfg);
    REQUIRE(hub.unit_count() == 4);

    for (std::size_t i = 0; i < qs.size(); ++i) CHECK(hub.unit(0).search(qs[i], 5, 0) == before[i]);

    std::set<std::string> all;
    std::size_t total = 0;
    for (std::size_t u = 0; u < 4; ++u) {
        const auto& unit = hub.unit(u);
        CHECK(unit.batch_id() == static_cast<int>(u));
        for (const auto& [tabid, id] : unit.trie().entries()) {
            all.insert(id);
            ++total;
            CHECK(hub.owner(id) == u);
            CHECK(hub.tree().tabid_map.at(id) == tabid);
        }
    }
    CHECK(total == f.syn.repo.size());
    CHECK(all.size() == f.syn.repo.size());
    CHECK(hub.table_count() == f.syn.repo.size());
}

TEST_CASE("update keeps every earlier tabid") {
    Fixture f;
    auto hub = f.base();
    const auto before = hub.tree().tabid_map;
    hub.update(f.batches[1], f.gen, f.qcfg);
    for (const auto& [id, t] : before) CHECK(hub.tree().tabid_map.at(id) == t);
}

TEST_CASE("update with an empty batch gives an empty unit") {
    Fixture f;
    auto hub = f.base();
    Repository empty;
    empty.batch_id = 1;
    const auto& u = hub.update(empty, f.gen, f.qcfg);
    CHECK(u.trie().empty());
    CHECK(u.search("anything", 5, 1).entries.empty());
    auto fan = hub.fanout_search("anything", 5);
    REQUIRE(fan.size() == 2);
    CHECK(fan[1].entries.empty());
    CHECK(hub.query_mapping("anything", fan).unit == 0);
}

TEST_CASE("update rejects ids already indexed") {
    Fixture f;
    auto hub = f.base();
    CHECK_THROWS_AS(hub.update(f.batches[0], f.gen, f.qcfg), DuplicateIdError);
    CHECK(hub.unit_count() == 1);
}

TEST_CASE("single unit fan-out equals plain search") {
    Fixture f;
    auto hub = f.base();
    for (const auto& q : f.queries(10)) {
        auto fan = hub.fanout_search(q, 5);
        REQUIRE(fan.size() == 1);
        auto plain = search(q, hub.unit(0).trie(), hub.unit(0).scorer(), 5, hub.unit(0).beam());
        REQUIRE(fan[0].entries.size() == plain.size());
        for (std::size_t i = 0; i < plain.size(); ++i) {
            CHECK(fan[0].entries[i].table_id == plain[i].table_id);
            CHECK(fan[0].entries[i].log_prob == plain[i].log_prob);
        }
        CHECK(hub.search(q, 5).entries == fan[0].entries);
    }
}

TEST_CASE("serial and parallel fan-out agree; mapping picks one of the lists") {
    Fixture f;
    auto hub = f.base();
    for (int b = 1; b < 4; ++b) hub.update(f.batches[b], f.gen, f.qcfg);
    for (const auto& q : f.queries(100)) {
        auto s = hub.fanout_search(q, 5, ExecMode::kSerial);
        auto p = hub.fanout_search(q, 5, ExecMode::kParallel);
        REQUIRE(s == p);
        for (std::size_t u = 0; u < s.size(); ++u) CHECK(s[u].unit == u);
        auto chosen = hub.query_mapping(q, s);
        CHECK(std::find(s.begin(), s.end(), chosen) != s.end());
        auto pri = hub.query_mapping_prioritize_new(q, s);
        CHECK(std::find(s.begin(), s.end(), pri) != s.end());
    }
}

TEST_CASE("vote counting") {
    const Embedding q{0, 0};
    std::vector<Embedding> near{{0.1, 0}, {0.2, 0}, {0.3, 0}, {0.4, 0}, {0.5, 0}}, far{{9, 9}};
    // unit 0 holds the 2nd and 4th closest, unit 1 the 1st, 3rd and 5th.
    std::vector<std::vector<const Embedding*>> pools{{&near[1], &near[3], &far[0]}, {&near[0], &near[2], &near[4]}};
    auto v = count_votes(q, pools, 5);
    CHECK(v == std::vector<std::size_t>{2, 3});
    Rng rng(0);
    CHECK(choose_unit(v, rng).unit == 1);
    CHECK(count_votes(q, pools, 1) == std::vector<std::size_t>{0, 1});
    CHECK(count_votes(q, {{}, {}}, 5) == std::vector<std::size_t>{0, 0});
}

TEST_CASE("2/2 tie with one stray: each tied unit wins about half the time") {
    const std::vector<std::size_t> votes{2, 1, 2};
    std::size_t first = 0, stray = 0;
    const std::size_t n = 10000;
    for (std::uint64_t seed = 0; seed < n; ++seed) {
        Rng rng(mix64(seed));
        const auto r = choose_unit(votes, rng);
        first += r.unit == 0;
        stray += r.unit == 1;
    }
    CHECK(stray == 0);
    const double frac = static_cast<double>(first) / static_cast<double>(n);
    CHECK(frac >= 0.48);
    CHECK(frac <= 0.52);
}

TEST_CASE("new-batch preference") {
    Rng rng(1);
    SECTION("old winner, new runner-up") {
        auto r = choose_unit({3, 0, 2}, rng, 2);
        CHECK(r.unit == 2);
        CHECK(r.prioritized);
    }
    SECTION("winner already new") {
        auto r = choose_unit({1, 0, 3}, rng, 2);
        CHECK(r.unit == 2);
        CHECK_FALSE(r.prioritized);
    }
    SECTION("runner-up is old") {
        auto r = choose_unit({3, 2, 0}, rng, 2);
        CHECK(r.unit == 0);
    }
    SECTION("flag off") {
        for (std::uint64_t s = 0; s < 100; ++s) {
            Rng a(s), b(s);
            CHECK(choose_unit({3, 1, 2}, a).unit == choose_unit({3, 1, 2}, b, std::nullopt).unit);
        }
        auto r = choose_unit({3, 0, 2}, rng);
        CHECK(r.unit == 0);
    }
    SECTION("no votes") { CHECK(choose_unit({0, 0}, rng).fallback); }
}

TEST_CASE("prioritize flag off matches plain mapping on the hub") {
    Fixture f;
    auto hub = f.base();
    for (int b = 1; b < 4; ++b) hub.update(f.batches[b], f.gen, f.qcfg);
    for (const auto& q : f.queries(50)) {
        auto fan = hub.fanout_search(q, 5);
        CHECK(hub.search(q, 5) == hub.query_mapping(q, fan));
    }
}

TEST_CASE("fallback picks the best rank-1 score when no pool queries exist") {
    Fixture f;
    Repository base = f.batches[0];
    std::vector<TwoViewEmbedding> embs;
    for (const auto& t : base.tables) embs.push_back(embed_table(t, *f.embedder));
    MemoryHub hub(f.embedder, f.hcfg, build_tree(base, embs, f.clus), QueryPool{});
    hub.update(f.batches[1], QueryPool{});
    const std::string q = "What is the value in " + *f.batches[1].tables[0].caption + "?";
    auto fan = hub.fanout_search(q, 3);
    auto r = hub.map_query(q, fan, false);
    CHECK(r.fallback);
    const std::size_t best = fan[0].entries.front().log_prob >= fan[1].entries.front().log_prob ? 0 : 1;
    CHECK(r.unit == best);
}

TEST_CASE("delete removes a table from every later search") {
    Fixture f;
    auto hub = f.base();
    hub.update(f.batches[1], f.gen, f.qcfg);
    const std::string victim = f.batches[1].tables[0].id;
    const std::string q = "What is the " + f.batches[1].tables[0].columns[1] + " in " + *f.batches[1].tables[0].caption + "?";
    hub.delete_table(victim);
    CHECK_FALSE(hub.owner(victim));
    CHECK(hub.tombstones().size() == 1);
    for (const auto& l : hub.fanout_search(q, 500))
        for (const auto& e : l.entries) CHECK(e.table_id != victim);
    CHECK_THROWS_AS(hub.delete_table(victim), UnknownIdError);
    CHECK_THROWS_AS(hub.delete_table("never-there"), UnknownIdError);
}
