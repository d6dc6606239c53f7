// birdie: build, query and maintain generative table-discovery indexes.
//
// Results go to stdout as JSON lines; diagnostics go to stderr.
// Exit codes: 0 ok, 1 error, 2 missing input file or index, 3 unknown table id.

#include <sys/file.h>
#include <fcntl.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <birdie/birdie.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace birdie;

namespace {

struct MissingInput : Error {
    using Error::Error;
};

constexpr int kExitError = 1;
constexpr int kExitMissing = 2;
constexpr int kExitUnknownId = 3;

void log(const std::string& msg) { std::cerr << "birdie: " << msg << '\n'; }

/// Exclusive advisory lock on `<dir>/.lock`, released on destruction.
class DirLock {
public:
    explicit DirLock(const fs::path& dir) {
        const auto path = dir / ".lock";
        fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
        if (fd_ < 0) throw Error("cannot open lock file " + path.string());
        if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            ::close(fd_);
            throw Error("index " + dir.string() + " is locked by another process");
        }
    }
    ~DirLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    int fd_ = -1;
};

Repository read_repo(const std::string& path, int batch_id) {
    if (!fs::exists(path)) throw MissingInput("repository file not found: " + path);
    return ingest_repository(path, batch_id);
}

/// Overlays a partial JSON block on the defaults of T.
template <class T>
void overlay(T& target, const json& cfg, const char* key) {
    if (!cfg.contains(key)) return;
    json base = target;
    base.merge_patch(cfg.at(key));
    target = base.get<T>();
}

struct Settings {
    std::string config_file;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> k, c, l, minibatch, dim, B, b, beam;
    std::optional<double> tau;
    bool prioritize_new = false;

    IndexManifest manifest() const {
        IndexManifest m;
        if (!config_file.empty()) {
            if (!fs::exists(config_file)) throw MissingInput("config file not found: " + config_file);
            std::ifstream in(config_file);
            json cfg;
            try {
                cfg = json::parse(in);
            } catch (const json::exception& e) {
                throw ConfigError(config_file + ": " + e.what());
            }
            overlay(m.embedder, cfg, "embedder");
            overlay(m.clustering, cfg, "clustering");
            overlay(m.querygen, cfg, "querygen");
            overlay(m.hub, cfg, "hub");
        }
        std::optional<std::uint64_t> s = seed;
        if (!s) {
            if (const char* env = std::getenv("BIRDIE_SEED")) {
                try {
                    s = std::stoull(env);
                } catch (const std::exception&) {
                    throw ConfigError(std::string("BIRDIE_SEED is not an unsigned integer: ") + env);
                }
            }
        }
        if (s) {
            m.clustering.seed = *s;
            m.querygen.seed = *s;
            m.hub.mapping_seed = *s;
        }
        if (k) m.clustering.k = *k;
        if (c) m.clustering.c = *c;
        if (l) m.clustering.l = *l;
        if (minibatch) m.clustering.minibatch = *minibatch;
        if (dim) m.embedder.dim = *dim;
        if (B) m.querygen.B = *B;
        if (b) m.querygen.b = *b;
        if (beam) m.hub.decoder.beam = *beam;
        if (tau) m.hub.decoder.tau = *tau;
        if (prioritize_new) m.hub.prioritize_new = true;
        m.hub.B = m.querygen.B;
        m.embedder.validate();
        m.clustering.validate();
        m.querygen.validate();
        m.hub.decoder = json(m.hub.decoder).get<DecoderConfig>();
        return m;
    }
};

void add_config_flags(CLI::App* cmd, Settings& s) {
    cmd->add_option("--config", s.config_file, "JSON file with embedder/clustering/querygen/hub blocks");
    cmd->add_option("--seed", s.seed, "Seed for clustering, query generation and mapping (default: $BIRDIE_SEED or 0)");
    cmd->add_option("--k", s.k, "Clusters per split");
    cmd->add_option("--c", s.c, "Maximum leaf size");
    cmd->add_option("--l", s.l, "Levels clustered on the metadata view");
    cmd->add_option("--minibatch", s.minibatch, "Mini-batch size for k-means");
    cmd->add_option("--dim", s.dim, "Embedding dimension");
    cmd->add_option("--B", s.B, "Synthetic queries per table");
    cmd->add_option("--b", s.b, "Queries per generator call");
    cmd->add_option("--beam", s.beam, "Beam width");
    cmd->add_option("--tau", s.tau, "Decoder temperature");
}

void print_warnings(const std::vector<std::string>& ws) {
    for (const auto& w : ws) log("warning: " + w);
}

void warn_k_range(const IndexManifest& m, std::size_t n) {
    if (k_in_recommended_range(m.clustering.k, n, m.clustering.l)) return;
    const auto [lo, hi] = recommended_k_range(n, m.clustering.l);
    std::ostringstream os;
    os << "warning: k=" << m.clustering.k << " is outside the recommended range (" << lo << ", " << hi
       << ") for N=" << n << ", l=" << m.clustering.l << "; building anyway";
    log(os.str());
}

// --- commands --------------------------------------------------------------

int cmd_ingest_check(const std::string& path) {
    const auto repo = read_repo(path, 0);
    std::size_t rows = 0, cells = 0, captions = 0;
    for (const auto& t : repo.tables) {
        rows += t.rows.size();
        cells += t.rows.size() * t.columns.size();
        captions += t.caption.has_value();
    }
    std::cout << json{{"tables", repo.size()}, {"rows", rows}, {"cells", cells}, {"with_caption", captions}}.dump()
              << '\n';
    return 0;
}

int cmd_build(const std::string& repo_path, const fs::path& out, bool force, const Settings& s) {
    const auto m = s.manifest();
    const auto repo = read_repo(repo_path, 0);
    if (fs::exists(out) && !fs::is_directory(out)) throw Error(out.string() + " exists and is not a directory");
    if (fs::exists(out)) {
        bool empty = true;
        for (const auto& e : fs::directory_iterator(out))
            if (e.path().filename() != ".lock") empty = false;
        if (!empty && !force) throw Error(out.string() + " is not empty; pass --force to overwrite");
    }
    fs::create_directories(out);
    DirLock lock(out);
    if (force)
        for (const auto& e : fs::directory_iterator(out))
            if (e.path().filename() != ".lock") fs::remove_all(e.path());

    warn_k_range(m, repo.size());
    std::vector<std::string> warnings;
    TemplateQueryGenerator gen(m.querygen.seed);
    auto hub = MemoryHub::build(repo, std::make_shared<const HashingEmbedder>(m.embedder), m.clustering, gen,
                                m.querygen, m.hub, &warnings);
    print_warnings(warnings);
    save_index(out, hub, m);
    std::cout << json{{"index", out.string()}, {"tables", hub.table_count()}, {"units", hub.unit_count()}}.dump()
              << '\n';
    return 0;
}

int cmd_genq(const std::string& repo_path, const std::string& out_path, const Settings& s) {
    const auto m = s.manifest();
    const auto repo = read_repo(repo_path, 0);
    std::vector<std::string> warnings;
    const auto pool = build_query_pool(repo, TemplateQueryGenerator(m.querygen.seed), m.querygen, &warnings);
    print_warnings(warnings);
    if (out_path.empty()) {
        write_pool(std::cout, pool);
    } else {
        std::ostringstream os;
        write_pool(os, pool);
        detail::write_atomic(out_path, os.str());
    }
    return 0;
}

int cmd_search(const fs::path& dir, const std::string& q, std::size_t topk, std::optional<std::size_t> beam,
               std::optional<bool> prioritize_new, bool parallel) {
    if (topk < 1) throw ConfigError("--topk must be >= 1");
    if (!fs::exists(dir / kManifestFile)) throw MissingInput("no index at " + dir.string());
    DirLock lock(dir);
    auto idx = load_index(dir);
    if (beam) {
        // The decoder configuration is fixed per unit at load time, so reload with the override.
        if (*beam < 1) throw ConfigError("--beam must be >= 1");
        HubConfig hc = idx.manifest.hub;
        hc.decoder.beam = *beam;
        auto embedder = std::make_shared<const HashingEmbedder>(idx.manifest.embedder);
        std::vector<std::unique_ptr<MemoryUnit>> units;
        for (std::size_t i = 0; i < idx.hub->unit_count(); ++i) {
            const auto& u = idx.hub->unit(i);
            units.push_back(std::make_unique<MemoryUnit>(u.batch_id(), std::make_shared<const SemanticTree>(u.snapshot()), u.trie(), u.pool(), embedder,
                                                         hc.decoder));
        }
        idx.hub = std::make_unique<MemoryHub>(embedder, hc, idx.hub->tree(), std::move(units),
                                              idx.hub->tombstones());
    }
    const auto mode = parallel ? ExecMode::kParallel : ExecMode::kSerial;
    const auto fan = idx.hub->fanout_search(q, topk, mode);
    const bool pn = prioritize_new.value_or(idx.manifest.hub.prioritize_new);
    const auto chosen = pn ? idx.hub->query_mapping_prioritize_new(q, fan) : idx.hub->query_mapping(q, fan);
    if (chosen.entries.empty()) {
        std::cout << "[]\n";
        return 0;
    }
    for (std::size_t i = 0; i < chosen.entries.size(); ++i) {
        const auto& e = chosen.entries[i];
        std::cout << json{{"rank", i + 1}, {"table_id", e.table_id}, {"log_prob", e.log_prob}}.dump() << '\n';
    }
    return 0;
}

int cmd_update(const fs::path& dir, const std::string& batch_path, std::optional<int> batch_id) {
    if (!fs::exists(batch_path)) throw MissingInput("batch file not found: " + batch_path);
    if (!fs::exists(dir / kManifestFile)) throw MissingInput("no index at " + dir.string());
    DirLock lock(dir);
    auto idx = load_index(dir);
    int id = 0;
    for (std::size_t i = 0; i < idx.hub->unit_count(); ++i) id = std::max(id, idx.hub->unit(i).batch_id() + 1);
    const auto batch = ingest_repository(batch_path, batch_id.value_or(id));
    std::vector<std::string> warnings;
    TemplateQueryGenerator gen(idx.manifest.querygen.seed);
    const auto& unit = idx.hub->update(batch, gen, idx.manifest.querygen, &warnings);
    print_warnings(warnings);
    save_index(dir, *idx.hub, idx.manifest);
    std::cout << json{{"unit", idx.hub->unit_count() - 1}, {"batch_id", unit.batch_id()},
                      {"tables", batch.size()}, {"total_tables", idx.hub->table_count()}}
                     .dump()
              << '\n';
    return 0;
}

int cmd_delete(const fs::path& dir, const std::vector<std::string>& ids) {
    if (!fs::exists(dir / kManifestFile)) throw MissingInput("no index at " + dir.string());
    DirLock lock(dir);
    auto idx = load_index(dir);
    for (const auto& id : ids)
        if (!idx.hub->owner(id)) throw UnknownIdError(id);
    for (const auto& id : ids) {
        const auto unit = *idx.hub->owner(id);
        idx.hub->delete_table(id);
        std::cout << json{{"deleted", id}, {"unit", unit}}.dump() << '\n';
    }
    save_index(dir, *idx.hub, idx.manifest);
    return 0;
}

int cmd_eval(const std::string& repo_path, const std::vector<double>& splits, const std::vector<std::size_t>& ks,
             bool parallel, const Settings& s) {
    const auto m = s.manifest();
    const auto repo = read_repo(repo_path, 0);
    ScenarioConfig cfg;
    cfg.splits = splits;
    cfg.ks = ks;
    cfg.seed = m.hub.mapping_seed;
    cfg.prioritize_new = m.hub.prioritize_new;
    cfg.mode = parallel ? ExecMode::kParallel : ExecMode::kSerial;
    cfg.embedder = m.embedder;
    cfg.clustering = m.clustering;
    cfg.querygen = m.querygen;
    cfg.decoder = m.hub.decoder;
    const auto sizes = split_sizes(repo.size(), splits);
    warn_k_range(m, sizes[0]);
    const auto rep = dynamic_scenario(repo, cfg, TemplateQueryGenerator(m.querygen.seed));
    if (!rep.warnings.empty()) log(std::to_string(rep.warnings.size()) + " query generation warnings");
    std::cout << to_json(rep).dump() << '\n';
    return 0;
}

int cmd_synth(std::size_t tables, std::size_t groups, std::uint64_t seed) {
    SyntheticConfig sc;
    sc.tables = tables;
    sc.groups = groups;
    sc.seed = seed;
    write_repository(std::cout, make_synthetic_repository(sc).repo);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Generative table-discovery index"};
    app.require_subcommand(1);

    Settings settings;
    std::string repo, out, query, batch, pool_out;
    std::vector<std::string> ids;
    bool force = false, parallel = false, pn_flag = false;
    std::size_t topk = 10;
    std::optional<std::size_t> beam;
    std::optional<int> batch_id;
    std::vector<double> splits{0.7, 0.1, 0.1, 0.1};
    std::vector<std::size_t> ks{1, 5};
    std::size_t synth_tables = 1000, synth_groups = 20;
    std::uint64_t synth_seed = 0;

    auto* ingest = app.add_subcommand("ingest-check", "Validate a repository JSONL file and print a summary");
    ingest->add_option("repo", repo, "Repository JSONL")->required();

    auto* build = app.add_subcommand("build", "Index a repository into a new directory");
    build->add_option("--repo", repo, "Repository JSONL")->required();
    build->add_option("--out", out, "Index directory")->required();
    build->add_flag("--force", force, "Replace the contents of a non-empty directory");
    build->add_flag("--prioritize-new", settings.prioritize_new, "Record prioritize-new as the default mapping rule");
    add_config_flags(build, settings);

    auto* genq = app.add_subcommand("genq", "Generate the synthetic query pool for a repository");
    genq->add_option("--repo", repo, "Repository JSONL")->required();
    genq->add_option("--out", pool_out, "Pool JSONL (default: stdout)");
    add_config_flags(genq, settings);

    auto* search = app.add_subcommand("search", "Search an index");
    search->add_option("--index", out, "Index directory")->required();
    search->add_option("--q", query, "Query text")->required();
    search->add_option("--topk", topk, "Results to return")->capture_default_str();
    search->add_option("--beam", beam, "Beam width override");
    search->add_flag("--prioritize-new", pn_flag, "Prefer the latest unit when it is the runner-up");
    search->add_flag("--parallel", parallel, "Search units concurrently");

    auto* update = app.add_subcommand("update", "Index a new batch as a new memory unit");
    update->add_option("--index", out, "Index directory")->required();
    update->add_option("--batch", batch, "Batch JSONL")->required();
    update->add_option("--batch-id", batch_id, "Batch id (default: next after the latest unit)");

    auto* del = app.add_subcommand("delete", "Remove tables from an index");
    del->add_option("--index", out, "Index directory")->required();
    del->add_option("--id", ids, "Table id (repeatable)")->required();

    auto* eval = app.add_subcommand("eval", "Run the incremental-update scenario and print metrics");
    eval->add_option("--repo", repo, "Repository JSONL")->required();
    eval->add_option("--splits", splits, "Batch fractions")->capture_default_str();
    eval->add_option("--ks", ks, "Cutoffs for precision")->capture_default_str();
    eval->add_flag("--prioritize-new", settings.prioritize_new, "Use the prioritize-new mapping rule");
    eval->add_flag("--parallel", parallel, "Search units concurrently");
    add_config_flags(eval, settings);

    auto* synth = app.add_subcommand("synth", "Write a synthetic planted-topic repository to stdout");
    synth->add_option("--tables", synth_tables, "Number of tables")->capture_default_str();
    synth->add_option("--groups", synth_groups, "Number of planted topics")->capture_default_str();
    synth->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*ingest) return cmd_ingest_check(repo);
        if (*build) return cmd_build(repo, out, force, settings);
        if (*genq) return cmd_genq(repo, pool_out, settings);
        if (*search) return cmd_search(out, query, topk, beam, pn_flag ? std::optional<bool>(true) : std::nullopt, parallel);
        if (*update) return cmd_update(out, batch, batch_id);
        if (*del) return cmd_delete(out, ids);
        if (*eval) return cmd_eval(repo, splits, ks, parallel, settings);
        if (*synth) return cmd_synth(synth_tables, synth_groups, synth_seed);
    } catch (const MissingInput& e) {
        log(e.what());
        return kExitMissing;
    } catch (const UnknownIdError& e) {
        log(e.what());
        return kExitUnknownId;
    } catch (const std::exception& e) {
        log(e.what());
        return kExitError;
    }
    return kExitError;
}
