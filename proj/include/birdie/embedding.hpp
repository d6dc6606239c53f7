#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "rng.hpp"
#include "table.hpp"

namespace birdie {

using Embedding = std::vector<double>;

struct TwoViewEmbedding {
    Embedding h1;
    Embedding h2;

    bool operator==(const TwoViewEmbedding&) const = default;
};

struct EmbedderConfig {
    std::size_t dim = 64;
    std::size_t max_tokens = 512;
    std::uint64_t seed = 0;

    void validate() const {
        if (dim < 2) throw ConfigError("embedder dim must be >= 2");
        if (max_tokens < 1) throw ConfigError("embedder max_tokens must be >= 1");
    }

    bool operator==(const EmbedderConfig&) const = default;
};

inline double dist(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionMismatch(a.size(), b.size());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

inline double norm(std::span<const double> a) {
    double s = 0.0;
    for (double x : a) s += x * x;
    return std::sqrt(s);
}

inline void normalize_in_place(Embedding& v) {
    const double n = norm(v);
    if (n > 0.0)
        for (double& x : v) x /= n;
}

/// Lowercased alphanumeric runs. Bytes >= 0x80 count as word characters so
/// UTF-8 text is kept intact.
inline std::vector<std::string> tokenize(std::string_view text, std::size_t max_tokens = SIZE_MAX) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    };
    for (unsigned char ch : text) {
        if (out.size() >= max_tokens) break;
        if (ch >= 0x80 || std::isalnum(ch)) {
            cur += static_cast<char>(std::tolower(ch));
        } else {
            flush();
        }
    }
    if (out.size() < max_tokens) flush();
    return out;
}

/// Text encoder contract: deterministic, fixed dimension, finite output.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual Embedding embed(std::string_view text) const = 0;
    virtual std::size_t dim() const = 0;
};

/// Reference encoder: hashed bag of tokens, L2-normalized.
class HashingEmbedder final : public Embedder {
public:
    explicit HashingEmbedder(EmbedderConfig cfg = {}) : cfg_(cfg) {
        cfg_.validate();
        salt_ = mix64(cfg_.seed);
    }

    Embedding embed(std::string_view text) const override {
        Embedding v(cfg_.dim, 0.0);
        for (const auto& tok : tokenize(text, cfg_.max_tokens)) v[bucket(tok)] += 1.0;
        normalize_in_place(v);
        return v;
    }

    std::size_t dim() const override { return cfg_.dim; }
    const EmbedderConfig& config() const noexcept { return cfg_; }

    std::size_t bucket(std::string_view token) const { return mix64(fnv1a64(token) ^ salt_) % cfg_.dim; }

private:
    EmbedderConfig cfg_;
    std::uint64_t salt_ = 0;
};

/// Hashed bag followed by a fixed Gaussian random projection. Exists to check
/// that downstream code depends only on the Embedder contract.
class ProjectionEmbedder final : public Embedder {
public:
    ProjectionEmbedder(EmbedderConfig cfg, std::size_t out_dim, std::uint64_t seed)
        : inner_(cfg), out_dim_(out_dim), weights_(out_dim * cfg.dim) {
        if (out_dim < 2) throw ConfigError("projection dim must be >= 2");
        Rng rng(seed);
        for (double& w : weights_) w = rng.normal();
    }

    Embedding embed(std::string_view text) const override {
        const Embedding x = inner_.embed(text);
        Embedding y(out_dim_, 0.0);
        for (std::size_t i = 0; i < out_dim_; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < x.size(); ++j) s += weights_[i * x.size() + j] * x[j];
            y[i] = s;
        }
        normalize_in_place(y);
        return y;
    }

    std::size_t dim() const override { return out_dim_; }

private:
    HashingEmbedder inner_;
    std::size_t out_dim_;
    std::vector<double> weights_;
};

inline Embedding embed(std::string_view text, const EmbedderConfig& cfg) { return HashingEmbedder(cfg).embed(text); }

inline TwoViewEmbedding embed_table(const Table& t, const Embedder& e) {
    return {e.embed(serialize_view1(t).text), e.embed(serialize_view2(t).text)};
}

inline TwoViewEmbedding embed_table(const Table& t, const EmbedderConfig& cfg) {
    return embed_table(t, HashingEmbedder(cfg));
}

inline void to_json(nlohmann::json& j, const EmbedderConfig& c) {
    j = {{"dim", c.dim}, {"max_tokens", c.max_tokens}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, EmbedderConfig& c) {
    c.dim = j.at("dim").get<std::size_t>();
    c.max_tokens = j.at("max_tokens").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
}

}  // namespace birdie
