#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "rng.hpp"
#include "table.hpp"

namespace birdie {

struct QueryGenConfig {
    std::size_t B = 20;  ///< queries required per table
    std::size_t b = 5;   ///< queries requested per generator call
    std::uint64_t seed = 0;
    std::size_t max_attempts = 0;  ///< 0 selects 4 * ceil(B / b)

    void validate() const {
        if (b < 1) throw ConfigError("b must be >= 1");
        if (B < b) throw ConfigError("B must be >= b");
    }

    std::size_t invocations() const { return (B + b - 1) / b; }
    std::size_t attempt_cap() const { return max_attempts ? max_attempts : 4 * invocations(); }

    bool operator==(const QueryGenConfig&) const = default;
};

struct SyntheticQuery {
    std::string text;
    std::string table_id;

    bool operator==(const SyntheticQuery&) const = default;
};

/// table id -> stored query texts (prefix already stripped)
using QueryPool = std::map<std::string, std::vector<std::string>>;

/// Produces raw candidate lines for a table prompt. Lines that do not follow
/// the "Question: ..." wire format are discarded by the caller.
class QueryGenerator {
public:
    virtual ~QueryGenerator() = default;
    /// `nonce` distinguishes repeated calls on the same prompt.
    virtual std::vector<std::string> generate(std::string_view prompt, std::size_t b, std::uint64_t nonce) const = 0;
};

inline constexpr std::string_view kQuestionPrefix = "Question: ";
inline constexpr std::string_view kCaptionPrefix = "Caption: ";

/// Generator input: optional caption line followed by the markdown table.
inline std::string make_prompt(const Table& t, const std::vector<std::size_t>& rows) {
    std::string p;
    if (t.caption && !t.caption->empty()) {
        p += kCaptionPrefix;
        p += *t.caption;
        p += '\n';
    }
    p += render_markdown(t, rows);
    return p;
}

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_markdown_row(std::string_view line) {
    std::vector<std::string> cells;
    std::string cur;
    bool started = false;
    for (char ch : line) {
        if (ch == '|') {
            if (started) cells.push_back(trim(cur));
            cur.clear();
            started = true;
        } else {
            cur += ch;
        }
    }
    return cells;
}

struct ParsedPrompt {
    std::string caption;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
};

inline ParsedPrompt parse_prompt(std::string_view prompt) {
    ParsedPrompt p;
    std::istringstream is{std::string(prompt)};
    std::string line;
    int table_line = 0;
    while (std::getline(is, line)) {
        if (table_line == 0 && line.rfind(kCaptionPrefix, 0) == 0) {
            p.caption = trim(std::string_view(line).substr(kCaptionPrefix.size()));
            continue;
        }
        if (line.empty() || line.front() != '|') continue;
        if (table_line == 0) {
            p.columns = split_markdown_row(line);
        } else if (table_line > 1) {
            p.rows.push_back(split_markdown_row(line));
        }
        ++table_line;
    }
    return p;
}

}  // namespace detail

/// Deterministic template generator used in place of a trained LLM. Every
/// question names the caption when one exists; about one in five is an
/// aggregation question.
class TemplateQueryGenerator final : public QueryGenerator {
public:
    explicit TemplateQueryGenerator(std::uint64_t seed = 0) : seed_(seed) {}

    std::vector<std::string> generate(std::string_view prompt, std::size_t b, std::uint64_t nonce) const override {
        const auto p = detail::parse_prompt(prompt);
        Rng rng(mix64(seed_ ^ fnv1a64(prompt)) ^ mix64(nonce + 0x51ed));
        const std::string in_caption = p.caption.empty() ? std::string() : " in " + p.caption;
        std::vector<std::string> out;
        if (p.columns.empty()) return out;
        for (std::size_t i = 0; i < b; ++i) {
            std::string q;
            const std::size_t n = p.columns.size();
            if (p.rows.empty()) {
                const auto& attr = p.columns[rng.below(n)];
                q = "What are the " + attr + " values" + in_caption + "?";
            } else {
                const auto& row = p.rows[rng.below(p.rows.size())];
                const std::size_t j = n > 1 ? 1 + rng.below(n - 1) : 0;
                const std::string& key = row.empty() ? std::string() : row[0];
                const std::string& cell = j < row.size() ? row[j] : key;
                const double u = rng.uniform01();
                if (u < 0.2) {
                    q = "How many rows" + in_caption + " have " + p.columns[j] + " equal to " + cell + "?";
                } else if (u < 0.6) {
                    q = "Which " + p.columns[0] + in_caption + " has " + p.columns[j] + " " + cell + "?";
                } else {
                    q = "What is the " + p.columns[j] + " of " + key + in_caption + "?";
                }
            }
            out.push_back(std::string(kQuestionPrefix) + q);
        }
        return out;
    }

private:
    std::uint64_t seed_;
};

/// Keeps well-formed "Question: <text>" lines, strips the prefix and drops
/// duplicates against `existing` and within the batch.
inline std::vector<std::string> filter(const std::vector<std::string>& raw, const std::set<std::string>& existing) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& line : raw) {
        if (line.rfind(kQuestionPrefix, 0) != 0) continue;
        std::string q = detail::trim(std::string_view(line).substr(kQuestionPrefix.size()));
        if (q.empty()) continue;
        if (existing.count(q) || !seen.insert(q).second) continue;
        out.push_back(std::move(q));
    }
    return out;
}

struct TsaResult {
    std::vector<SyntheticQuery> queries;
    std::vector<std::vector<std::size_t>> samples;  ///< rows sent on each call
    std::size_t invocations = 0;
    std::vector<std::string> warnings;
};

/// Table sampling: split the rows into ceil(B/b) samples of
/// r_s = max(1, floor(m / n_v)) rows drawn without replacement, refilling the
/// pool when it runs low, and call the generator once per sample until B
/// distinct well-formed queries exist or the attempt cap is hit.
inline TsaResult tsa(const Table& t, const QueryGenerator& gen, const QueryGenConfig& cfg) {
    cfg.validate();
    const std::size_t m = t.rows.size();
    const std::size_t n_v = cfg.invocations();
    const std::size_t r_s = std::max<std::size_t>(1, m / n_v);
    const std::uint64_t table_seed = mix64(cfg.seed ^ fnv1a64(t.id));
    Rng rng(table_seed);

    TsaResult res;
    std::vector<std::size_t> pool;
    std::set<std::string> have;
    auto refill = [&] {
        pool.resize(m);
        for (std::size_t i = 0; i < m; ++i) pool[i] = i;
    };
    refill();

    while (have.size() < cfg.B && res.invocations < cfg.attempt_cap()) {
        if (pool.size() < r_s) refill();
        std::vector<std::size_t> sample;
        for (std::size_t s = 0; s < r_s && !pool.empty(); ++s) {
            const std::size_t pick = rng.below(pool.size());
            sample.push_back(pool[pick]);
            pool[pick] = pool.back();
            pool.pop_back();
        }
        std::sort(sample.begin(), sample.end());
        res.samples.push_back(sample);
        ++res.invocations;

        std::vector<std::string> raw;
        try {
            raw = gen.generate(make_prompt(t, sample), cfg.b, mix64(table_seed + res.invocations));
        } catch (const std::exception& e) {
            res.warnings.push_back("table '" + t.id + "': generator call " + std::to_string(res.invocations) +
                                   " failed: " + e.what());
            continue;
        }
        if (raw.size() > cfg.b) raw.resize(cfg.b);
        for (auto& q : filter(raw, have)) {
            have.insert(q);
            res.queries.push_back({std::move(q), t.id});
        }
    }
    if (res.queries.size() > cfg.B) res.queries.resize(cfg.B);
    if (res.queries.size() < cfg.B)
        res.warnings.push_back("table '" + t.id + "': only " + std::to_string(res.queries.size()) + " of " +
                               std::to_string(cfg.B) + " queries after " + std::to_string(res.invocations) +
                               " calls");
    return res;
}

inline QueryPool build_query_pool(const Repository& repo, const QueryGenerator& gen, const QueryGenConfig& cfg,
                                  std::vector<std::string>* warnings = nullptr) {
    QueryPool pool;
    for (const auto& t : repo.tables) {
        auto r = tsa(t, gen, cfg);
        auto& qs = pool[t.id];
        for (auto& q : r.queries) qs.push_back(std::move(q.text));
        if (warnings) warnings->insert(warnings->end(), r.warnings.begin(), r.warnings.end());
    }
    return pool;
}

}  // namespace birdie
