#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "semantic_tree.hpp"

namespace birdie {

/// The set of currently valid tabids, stored as a token trie. Decoding is
/// restricted to paths that exist here.
class TabIdTrie {
public:
    struct Node {
        std::map<std::uint32_t, std::unique_ptr<Node>> children;
        std::optional<std::string> table_id;  ///< set on terminals

        bool is_terminal() const noexcept { return table_id.has_value(); }
    };

    TabIdTrie() : root_(std::make_unique<Node>()) {}

    TabIdTrie(const TabIdTrie& o) : root_(std::make_unique<Node>()) {
        for (const auto& [tabid, id] : o.entries_) insert(tabid, id);
    }

    TabIdTrie& operator=(const TabIdTrie& o) {
        if (this != &o) {
            TabIdTrie tmp(o);
            *this = std::move(tmp);
        }
        return *this;
    }

    TabIdTrie(TabIdTrie&&) noexcept = default;
    TabIdTrie& operator=(TabIdTrie&&) noexcept = default;

    static TabIdTrie from_map(const std::map<std::string, TabId>& tabid_map) {
        TabIdTrie t;
        for (const auto& [id, tabid] : tabid_map) t.insert(tabid, id);
        return t;
    }

    void insert(const TabId& tabid, const std::string& table_id) {
        if (tabid.empty()) throw Error("cannot insert an empty tabid");
        Node* n = root_.get();
        for (auto tok : tabid.tokens) {
            auto& slot = n->children[tok];
            if (!slot) slot = std::make_unique<Node>();
            n = slot.get();
        }
        if (n->is_terminal()) throw Error("duplicate tabid " + tabid.str());
        n->table_id = table_id;
        entries_.emplace(tabid, table_id);
    }

    /// Removes the terminal and prunes branches left without terminals.
    bool erase(const TabId& tabid) {
        if (!entries_.erase(tabid)) return false;
        erase_rec(*root_, tabid.tokens, 0);
        return true;
    }

    const Node* find(std::span<const std::uint32_t> prefix) const {
        const Node* n = root_.get();
        for (auto tok : prefix) {
            auto it = n->children.find(tok);
            if (it == n->children.end()) return nullptr;
            n = it->second.get();
        }
        return n;
    }

    std::vector<std::uint32_t> allowed(std::span<const std::uint32_t> prefix) const {
        std::vector<std::uint32_t> out;
        if (const Node* n = find(prefix))
            for (const auto& [tok, _] : n->children) out.push_back(tok);
        return out;
    }

    bool contains(const TabId& tabid) const { return entries_.count(tabid) != 0; }
    std::optional<std::string> lookup(const TabId& tabid) const {
        auto it = entries_.find(tabid);
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    const Node& root() const noexcept { return *root_; }
    const std::map<TabId, std::string>& entries() const noexcept { return entries_; }

    /// Number of trie nodes, root included.
    std::size_t node_count() const { return count_rec(*root_); }

    bool operator==(const TabIdTrie& o) const { return entries_ == o.entries_ && node_count() == o.node_count(); }

private:
    static bool erase_rec(Node& n, const std::vector<std::uint32_t>& toks, std::size_t i) {
        if (i == toks.size()) {
            n.table_id.reset();
            return n.children.empty();
        }
        auto it = n.children.find(toks[i]);
        if (it == n.children.end()) return false;
        if (erase_rec(*it->second, toks, i + 1)) n.children.erase(it);
        return n.children.empty() && !n.is_terminal();
    }

    static std::size_t count_rec(const Node& n) {
        std::size_t c = 1;
        for (const auto& [_, ch] : n.children) c += count_rec(*ch);
        return c;
    }

    std::unique_ptr<Node> root_;
    std::map<TabId, std::string> entries_;
};

inline TabIdTrie trie_from(const std::map<std::string, TabId>& tabid_map) { return TabIdTrie::from_map(tabid_map); }

}  // namespace birdie
