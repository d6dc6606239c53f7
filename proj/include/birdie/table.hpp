#pragma once

#include <cstddef>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"

namespace birdie {

struct Table {
    std::string id;
    std::optional<std::string> caption;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    std::size_t num_columns() const noexcept { return columns.size(); }
    std::size_t num_rows() const noexcept { return rows.size(); }

    bool operator==(const Table&) const = default;
};

/// One arrival batch of tables (D^0, D^1, ...).
struct Repository {
    std::vector<Table> tables;
    int batch_id = 0;

    std::size_t size() const noexcept { return tables.size(); }
    bool empty() const noexcept { return tables.empty(); }
};

struct SerializedView {
    int view_index = 1;
    std::string text;

    bool operator==(const SerializedView&) const = default;
};

namespace detail {

inline void append_item(std::string& out, const std::string& item) {
    if (item.empty()) return;
    if (!out.empty()) out += ", ";
    out += item;
}

}  // namespace detail

/// Metadata view: caption followed by attribute names.
inline SerializedView serialize_view1(const Table& t) {
    SerializedView v{1, {}};
    if (t.caption) detail::append_item(v.text, *t.caption);
    for (const auto& a : t.columns) detail::append_item(v.text, a);
    return v;
}

/// Instance view: row-major "attribute: cell" pairs. Empty cells are skipped.
inline SerializedView serialize_view2(const Table& t) {
    SerializedView v{2, {}};
    for (const auto& row : t.rows) {
        for (std::size_t j = 0; j < row.size() && j < t.columns.size(); ++j) {
            if (row[j].empty()) continue;
            detail::append_item(v.text, t.columns[j] + ": " + row[j]);
        }
    }
    return v;
}

namespace detail {

inline void markdown_row(std::string& out, std::span<const std::string> cells) {
    out += '|';
    for (const auto& c : cells) {
        out += ' ';
        out += c;
        out += " |";
    }
}

}  // namespace detail

/// Pipe-delimited markdown. With no subset, every row is rendered.
inline std::string render_markdown(const Table& t,
                                   const std::optional<std::vector<std::size_t>>& row_subset = std::nullopt) {
    std::string out;
    detail::markdown_row(out, t.columns);
    out += "\n|";
    for (std::size_t j = 0; j < t.columns.size(); ++j) out += " --- |";
    auto emit = [&](std::size_t i) {
        if (i >= t.rows.size())
            throw std::out_of_range("row index " + std::to_string(i) + " out of range for table '" + t.id + "'");
        out += '\n';
        detail::markdown_row(out, t.rows[i]);
    };
    if (row_subset) {
        for (std::size_t i : *row_subset) emit(i);
    } else {
        for (std::size_t i = 0; i < t.rows.size(); ++i) emit(i);
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSONL repository format
// ---------------------------------------------------------------------------

inline Table table_from_json(const nlohmann::json& j, std::size_t line) {
    if (!j.is_object()) throw ParseError(line, "record is not a JSON object");
    Table t;
    try {
        t.id = j.at("id").get<std::string>();
        if (j.contains("caption") && !j.at("caption").is_null()) t.caption = j.at("caption").get<std::string>();
        t.columns = j.at("columns").get<std::vector<std::string>>();
        t.rows = j.value("rows", std::vector<std::vector<std::string>>{});
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(line, e.what());
    }
    if (t.columns.empty()) throw ParseError(line, "table '" + t.id + "' has no columns");
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        if (t.rows[i].size() != t.columns.size()) {
            throw ArityError("line " + std::to_string(line) + ": table '" + t.id + "' row " + std::to_string(i) +
                             " has " + std::to_string(t.rows[i].size()) + " cells, expected " +
                             std::to_string(t.columns.size()));
        }
    }
    return t;
}

inline nlohmann::json table_to_json(const Table& t) {
    nlohmann::json j;
    j["id"] = t.id;
    j["caption"] = t.caption ? nlohmann::json(*t.caption) : nlohmann::json(nullptr);
    j["columns"] = t.columns;
    j["rows"] = t.rows;
    return j;
}

inline Repository read_repository(std::istream& in, int batch_id = 0) {
    Repository repo;
    repo.batch_id = batch_id;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(lineno, e.what());
        }
        Table t = table_from_json(j, lineno);
        if (!seen.insert(t.id).second) throw DuplicateIdError(t.id);
        repo.tables.push_back(std::move(t));
    }
    return repo;
}

inline Repository ingest_repository(const std::string& path, int batch_id = 0) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open repository file '" + path + "'");
    return read_repository(in, batch_id);
}

inline void write_repository(std::ostream& out, const Repository& repo) {
    for (const auto& t : repo.tables) out << table_to_json(t).dump() << '\n';
}

}  // namespace birdie
