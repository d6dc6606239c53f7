#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "decoder.hpp"
#include "embedding.hpp"
#include "error.hpp"
#include "memory_hub.hpp"
#include "query_gen.hpp"
#include "semantic_tree.hpp"
#include "trie.hpp"

namespace birdie {

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kTreeFile = "tree.json";

using nlohmann::json;

// --- configs ---------------------------------------------------------------

inline void to_json(json& j, const ClusteringConfig& c) {
    j = {{"k", c.k}, {"c", c.c}, {"l", c.l}, {"kmeans_iters", c.kmeans_iters},
         {"kmeans_restarts", c.kmeans_restarts}, {"seed", c.seed}};
    j["minibatch"] = c.minibatch ? json(*c.minibatch) : json(nullptr);
}

inline void from_json(const json& j, ClusteringConfig& c) {
    ClusteringConfig d;
    c.k = j.value("k", d.k);
    c.c = j.value("c", d.c);
    c.l = j.value("l", d.l);
    c.kmeans_iters = j.value("kmeans_iters", d.kmeans_iters);
    c.kmeans_restarts = j.value("kmeans_restarts", d.kmeans_restarts);
    c.seed = j.value("seed", d.seed);
    c.minibatch.reset();
    if (j.contains("minibatch") && !j["minibatch"].is_null()) c.minibatch = j["minibatch"].get<std::size_t>();
    c.validate();
}

inline void to_json(json& j, const QueryGenConfig& c) {
    j = {{"B", c.B}, {"b", c.b}, {"seed", c.seed}, {"max_attempts", c.max_attempts}};
}

inline void from_json(const json& j, QueryGenConfig& c) {
    QueryGenConfig d;
    c.B = j.value("B", d.B);
    c.b = j.value("b", d.b);
    c.seed = j.value("seed", d.seed);
    c.max_attempts = j.value("max_attempts", d.max_attempts);
    c.validate();
}

inline void to_json(json& j, const DecoderConfig& c) { j = {{"beam", c.beam}, {"tau", c.tau}}; }

inline void from_json(const json& j, DecoderConfig& c) {
    DecoderConfig d;
    c.beam = j.value("beam", d.beam);
    c.tau = j.value("tau", d.tau);
    if (c.beam < 1) throw ConfigError("beam must be >= 1");
    if (!(c.tau > 0.0)) throw ConfigError("tau must be positive");
}

inline void to_json(json& j, const HubConfig& c) {
    j = {{"B", c.B}, {"prioritize_new", c.prioritize_new}, {"mapping_seed", c.mapping_seed}, {"decoder", c.decoder}};
}

inline void from_json(const json& j, HubConfig& c) {
    HubConfig d;
    c.B = j.value("B", d.B);
    c.prioritize_new = j.value("prioritize_new", d.prioritize_new);
    c.mapping_seed = j.value("mapping_seed", d.mapping_seed);
    c.decoder = j.contains("decoder") ? j["decoder"].get<DecoderConfig>() : d.decoder;
}

// --- tree ------------------------------------------------------------------

inline void to_json(json& j, const TabId& t) { j = t.tokens; }
inline void from_json(const json& j, TabId& t) { t.tokens = j.get<std::vector<std::uint32_t>>(); }

inline void to_json(json& j, const ClusterNode& n) {
    j = {{"center", n.center}, {"radius", n.radius}, {"cohesion", n.cohesion}, {"view", n.view}, {"size", n.size}};
    json kids = json::array();
    for (const auto& c : n.children) kids.push_back(c);
    j["children"] = std::move(kids);
    json mem = json::array();
    for (const auto& m : n.members) mem.push_back({{"id", m.table_id}, {"retired", m.retired}});
    j["members"] = std::move(mem);
}

inline void from_json(const json& j, ClusterNode& n) {
    n.center = j.at("center").get<Embedding>();
    n.radius = j.at("radius").get<double>();
    n.cohesion = j.at("cohesion").get<double>();
    n.view = j.at("view").get<int>();
    n.size = j.at("size").get<std::size_t>();
    n.children.clear();
    for (const auto& c : j.at("children")) n.children.push_back(c.get<ClusterNode>());
    n.members.clear();
    for (const auto& m : j.at("members")) n.members.push_back({m.at("id").get<std::string>(), m.at("retired").get<bool>()});
}

inline void to_json(json& j, const SemanticTree& t) {
    j = {{"config", t.config}, {"rng", t.rng.state()}, {"root", t.root}};
    json ids = json::object();
    for (const auto& [id, tabid] : t.tabid_map) ids[id] = tabid;
    j["tabids"] = std::move(ids);
}

inline void from_json(const json& j, SemanticTree& t) {
    t.config = j.at("config").get<ClusteringConfig>();
    t.rng.set_state(j.at("rng").get<std::string>());
    t.root = j.at("root").get<ClusterNode>();
    t.tabid_map.clear();
    for (const auto& [id, tabid] : j.at("tabids").items()) t.tabid_map.emplace(id, tabid.get<TabId>());
}

// --- query pools -----------------------------------------------------------

/// One `{"table_id": ..., "queries": [...]}` record per line.
inline void write_pool(std::ostream& out, const QueryPool& pool) {
    for (const auto& [id, qs] : pool) out << json{{"table_id", id}, {"queries", qs}}.dump() << '\n';
}

inline QueryPool read_pool(std::istream& in) {
    QueryPool pool;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto j = json::parse(line);
            pool[j.at("table_id").get<std::string>()] = j.at("queries").get<std::vector<std::string>>();
        } catch (const json::exception& e) {
            throw ParseError(lineno, e.what());
        }
    }
    return pool;
}

// --- files -----------------------------------------------------------------

namespace detail {

inline json read_json_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw Error("cannot open " + p.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error("malformed " + p.string() + ": " + e.what());
    }
}

/// Write to a sibling temp file and rename, so readers never see a partial
/// file.
inline void write_atomic(const std::filesystem::path& p, const std::string& bytes) {
    auto tmp = p;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out << bytes;
        if (!out) throw Error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, p);
}

inline std::string unit_stem(std::size_t i) {
    std::ostringstream os;
    os << "unit-" << std::setw(4) << std::setfill('0') << i;
    return os.str();
}

}  // namespace detail

/// Everything needed to reopen an index directory.
struct IndexManifest {
    int format_version = kFormatVersion;
    EmbedderConfig embedder;
    ClusteringConfig clustering;
    QueryGenConfig querygen;
    HubConfig hub;
    std::vector<int> unit_batches;
    std::vector<Tombstone> tombstones;
};

inline void to_json(json& j, const IndexManifest& m) {
    j = {{"format_version", m.format_version}, {"embedder", m.embedder}, {"clustering", m.clustering},
         {"querygen", m.querygen}, {"hub", m.hub}};
    json units = json::array();
    for (std::size_t i = 0; i < m.unit_batches.size(); ++i) {
        const auto stem = detail::unit_stem(i);
        units.push_back({{"batch_id", m.unit_batches[i]}, {"file", stem + ".json"}, {"pool", stem + ".pool.jsonl"}});
    }
    j["units"] = std::move(units);
    json tomb = json::array();
    for (const auto& t : m.tombstones) tomb.push_back({{"table_id", t.table_id}, {"tabid", t.tabid}, {"unit", t.unit}});
    j["tombstones"] = std::move(tomb);
}

inline void from_json(const json& j, IndexManifest& m) {
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kFormatVersion)
        throw Error("unsupported index format version " + std::to_string(m.format_version));
    m.embedder = j.at("embedder").get<EmbedderConfig>();
    m.clustering = j.at("clustering").get<ClusteringConfig>();
    m.querygen = j.at("querygen").get<QueryGenConfig>();
    m.hub = j.at("hub").get<HubConfig>();
    m.unit_batches.clear();
    for (const auto& u : j.at("units")) m.unit_batches.push_back(u.at("batch_id").get<int>());
    m.tombstones.clear();
    for (const auto& t : j.at("tombstones"))
        m.tombstones.push_back(
            {t.at("table_id").get<std::string>(), t.at("tabid").get<TabId>(), t.at("unit").get<std::size_t>()});
}

inline json unit_to_json(const MemoryUnit& u, const std::map<std::string, TabId>& sealed) {
    json ids = json::object();
    for (const auto& [id, tabid] : sealed) ids[id] = tabid;
    return {{"batch_id", u.batch_id()}, {"tree", u.snapshot()}, {"tabids", std::move(ids)}};
}

/// Writes the hub into `dir`. Unit files that already exist are left alone;
/// the manifest and the live tree are replaced atomically.
inline void save_index(const std::filesystem::path& dir, const MemoryHub& hub, const IndexManifest& base) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    IndexManifest m = base;
    m.hub = hub.config();
    m.unit_batches.clear();
    m.tombstones = hub.tombstones();

    for (std::size_t i = 0; i < hub.unit_count(); ++i) {
        const auto& u = hub.unit(i);
        m.unit_batches.push_back(u.batch_id());
        const auto stem = detail::unit_stem(i);
        const fs::path file = dir / (stem + ".json");
        if (fs::exists(file)) continue;
        std::map<std::string, TabId> sealed;
        for (const auto& [tabid, id] : u.trie().entries()) sealed.emplace(id, tabid);
        for (const auto& t : hub.tombstones())
            if (t.unit == i) sealed.emplace(t.table_id, t.tabid);
        std::ostringstream pool;
        write_pool(pool, u.pool());
        detail::write_atomic(dir / (stem + ".pool.jsonl"), pool.str());
        detail::write_atomic(file, unit_to_json(u, sealed).dump());
    }
    detail::write_atomic(dir / kTreeFile, json(hub.tree()).dump());
    detail::write_atomic(dir / kManifestFile, json(m).dump(2) + "\n");
}

struct LoadedIndex {
    IndexManifest manifest;
    std::unique_ptr<MemoryHub> hub;
};

inline LoadedIndex load_index(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::exists(dir / kManifestFile)) throw Error("no index at " + dir.string());
    LoadedIndex out;
    out.manifest = detail::read_json_file(dir / kManifestFile).get<IndexManifest>();
    const auto& m = out.manifest;
    auto embedder = std::make_shared<const HashingEmbedder>(m.embedder);
    auto tree = detail::read_json_file(dir / kTreeFile).get<SemanticTree>();

    std::vector<std::unique_ptr<MemoryUnit>> units;
    for (std::size_t i = 0; i < m.unit_batches.size(); ++i) {
        const auto stem = detail::unit_stem(i);
        const json uj = detail::read_json_file(dir / (stem + ".json"));
        auto snapshot = std::make_shared<const SemanticTree>(uj.at("tree").get<SemanticTree>());
        TabIdTrie trie;
        for (const auto& [id, tabid] : uj.at("tabids").items()) trie.insert(tabid.get<TabId>(), id);
        std::ifstream pin(dir / (stem + ".pool.jsonl"));
        if (!pin) throw Error("cannot open pool file for " + stem);
        units.push_back(std::make_unique<MemoryUnit>(uj.at("batch_id").get<int>(), std::move(snapshot), std::move(trie),
                                                     read_pool(pin), embedder, m.hub.decoder));
    }
    out.hub = std::make_unique<MemoryHub>(embedder, m.hub, std::move(tree), std::move(units), m.tombstones);
    return out;
}

}  // namespace birdie
