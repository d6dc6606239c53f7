#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "rng.hpp"
#include "table.hpp"

namespace birdie {

/// Planted-topic repository generator for tests, benchmarks and demos.
/// Tables are dealt round-robin into `groups` topics; tables of one topic
/// share a schema and a topic word in the caption. Inside a topic each table
/// draws its cell values from one of a few subtopic vocabularies, so the
/// metadata view separates topics and the instance view separates
/// subtopics.
struct SyntheticConfig {
    std::size_t tables = 1000;
    std::size_t groups = 20;
    std::size_t columns = 4;
    std::size_t min_rows = 5;
    std::size_t max_rows = 12;
    std::size_t subtopics = 5;  ///< content clusters inside each topic
    std::uint64_t seed = 0;
};

struct SyntheticRepository {
    Repository repo;
    std::vector<std::size_t> group_of;  ///< planted topic per table, same order as repo.tables
};

class WordFactory {
public:
    explicit WordFactory(std::uint64_t seed) : rng_(seed) {}

    /// Fresh pronounceable word, never returned before by this factory.
    std::string fresh(std::size_t min_syll = 2, std::size_t max_syll = 3) {
        static constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s",
                                                  "t", "v", "z", "br", "dr", "kl", "st", "tr", "sh"};
        static constexpr const char* kVowels[] = {"a", "e", "i", "o", "u", "ai", "ou", "ei"};
        while (true) {
            std::string w;
            const std::size_t n = min_syll + rng_.below(max_syll - min_syll + 1);
            for (std::size_t s = 0; s < n; ++s) {
                w += kOnsets[rng_.below(std::size(kOnsets))];
                w += kVowels[rng_.below(std::size(kVowels))];
            }
            if (rng_.below(3) == 0) w += "n";
            if (used_.insert(w).second) return w;
        }
    }

    Rng& rng() { return rng_; }

private:
    Rng rng_;
    std::set<std::string> used_;
};

inline SyntheticRepository make_synthetic_repository(const SyntheticConfig& cfg) {
    WordFactory words(mix64(cfg.seed ^ 0x7ab1e5ULL));
    Rng& rng = words.rng();

    struct Topic {
        std::string word;
        std::vector<std::string> columns;
        std::vector<std::string> shared_values;
        std::vector<std::vector<std::string>> sub_values;
        std::vector<std::string> sub_names;
    };
    std::vector<Topic> topics(cfg.groups);
    for (auto& tp : topics) {
        tp.word = words.fresh(3, 3);
        tp.columns.push_back(words.fresh(2, 2) + " name");
        for (std::size_t j = 1; j < cfg.columns; ++j) tp.columns.push_back(words.fresh(2, 3));
        for (int v = 0; v < 6; ++v) tp.shared_values.push_back(words.fresh(2, 2));
        for (std::size_t sub = 0; sub < std::max<std::size_t>(1, cfg.subtopics); ++sub) {
            tp.sub_names.push_back(words.fresh(2, 3));
            tp.sub_values.emplace_back();
            for (int v = 0; v < 6; ++v) tp.sub_values.back().push_back(words.fresh(2, 2));
        }
    }

    SyntheticRepository out;
    for (std::size_t i = 0; i < cfg.tables; ++i) {
        const std::size_t g = i % cfg.groups;
        const Topic& tp = topics[g];
        Table t;
        t.id = "t" + std::to_string(i);
        t.caption = words.fresh() + " " + words.fresh() + " " + tp.word;
        t.columns = tp.columns;
        const std::size_t m = cfg.min_rows + rng.below(cfg.max_rows - cfg.min_rows + 1);
        const std::size_t sub = rng.below(tp.sub_names.size());
        const auto& values = tp.sub_values[sub];
        for (std::size_t r = 0; r < m; ++r) {
            std::vector<std::string> row;
            row.push_back(words.fresh() + " " + tp.sub_names[sub]);
            for (std::size_t j = 1; j < cfg.columns; ++j) {
                if (rng.below(3) == 0)
                    row.push_back(tp.shared_values[rng.below(tp.shared_values.size())]);
                else
                    row.push_back(values[rng.below(values.size())]);
            }
            t.rows.push_back(std::move(row));
        }
        out.repo.tables.push_back(std::move(t));
        out.group_of.push_back(g);
    }
    return out;
}

}  // namespace birdie
