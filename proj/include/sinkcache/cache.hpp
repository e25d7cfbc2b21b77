// Copyright 2026 The sinkcache Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sinkcache/matrix.hpp"
#include "sinkcache/rope.hpp"

namespace sinkcache {

/// One cached token. `key` holds every head of the owning cache back to back,
/// already rotated to `effective_frame`; `value` is never modified.
struct TokenRecord {
    std::vector<float> key;
    std::vector<float> value;
    TokenPosition original_pos;
    std::int64_t effective_frame = 0;
    // Insertion identity; equal across layers and heads for the same generated token.
    std::uint64_t id = 0;
};

/// Half-open token-index interval.
struct TokenRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    [[nodiscard]] constexpr std::size_t size() const noexcept { return end - begin; }
    [[nodiscard]] constexpr bool empty() const noexcept { return end == begin; }
    bool operator==(const TokenRange&) const = default;
};

struct Partition {
    TokenRange sink;
    TokenRange candidates;
    TokenRange recent;
};

enum class PolicyKind { fifo, shallow_sink, longlive_sink, rollingforcing_sink, random_topc, deep_forcing };
enum class QueryMode { past_only, denoising_only, both };
enum class ScoreMode { raw_logit, softmax };
enum class HeadGranularity { per_head, shared };
// literal: sink's last frame lands on the tail's first frame; adjacent: one frame before it.
enum class SinkAlignment { literal, adjacent };

[[nodiscard]] inline std::string_view to_string(PolicyKind k) noexcept;
[[nodiscard]] inline std::string_view to_string(QueryMode m) noexcept;
[[nodiscard]] inline std::string_view to_string(ScoreMode m) noexcept;
[[nodiscard]] inline std::string_view to_string(HeadGranularity g) noexcept;
[[nodiscard]] inline std::string_view to_string(SinkAlignment a) noexcept;

inline constexpr PolicyKind kAllPolicies[] = {PolicyKind::fifo,          PolicyKind::shallow_sink,
                                              PolicyKind::longlive_sink, PolicyKind::rollingforcing_sink,
                                              PolicyKind::random_topc,   PolicyKind::deep_forcing};

[[nodiscard]] inline std::optional<PolicyKind> parse_policy(std::string_view s) noexcept;
[[nodiscard]] inline std::optional<QueryMode> parse_query_mode(std::string_view s) noexcept;
[[nodiscard]] inline std::optional<ScoreMode> parse_score_mode(std::string_view s) noexcept;
[[nodiscard]] inline std::optional<HeadGranularity> parse_head_granularity(std::string_view s) noexcept;
[[nodiscard]] inline std::optional<SinkAlignment> parse_sink_alignment(std::string_view s) noexcept;

[[nodiscard]] inline std::string valid_policy_names();

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Frame budgets are in frames; token counts follow by multiplying with tokens_per_frame.
struct CachePolicyConfig {
    std::size_t sink_frames = 10;        // S
    std::size_t budget_frames = 16;      // N
    std::size_t recent_frames = 4;       // R
    std::size_t max_window_frames = 21;  // M
    std::size_t tokens_per_frame = 1560; // F
    std::size_t chunk_frames = 3;
    PolicyKind policy = PolicyKind::deep_forcing;
    QueryMode query_mode = QueryMode::both;
    ScoreMode score_mode = ScoreMode::raw_logit;
    HeadGranularity head_granularity = HeadGranularity::per_head;
    SinkAlignment sink_alignment = SinkAlignment::literal;

    /// Top-C capacity in tokens, (N - S - R) * F.
    [[nodiscard]] std::size_t topc_tokens() const noexcept {
        return (budget_frames - sink_frames - recent_frames) * tokens_per_frame;
    }

    /// Throws ConfigError naming the first violated constraint.
    void validate() const;
};

inline void CachePolicyConfig::validate() const {
    if (tokens_per_frame == 0) throw ConfigError("tokens_per_frame must be >= 1");
    if (chunk_frames == 0) throw ConfigError("chunk_frames must be >= 1");
    if (sink_frames + recent_frames > budget_frames) {
        throw ConfigError("sink_frames + recent_frames (" + std::to_string(sink_frames + recent_frames) +
                          ") exceeds budget_frames (" + std::to_string(budget_frames) + ")");
    }
    if (budget_frames > max_window_frames) {
        throw ConfigError("budget_frames (" + std::to_string(budget_frames) + ") exceeds max_window_frames (" +
                          std::to_string(max_window_frames) + ")");
    }
}

/// Ordered token store for one attention layer (or one head of it).
class LayerCache {
public:
    LayerCache() = default;
    LayerCache(std::size_t tokens_per_frame, std::size_t num_heads, std::size_t head_dim)
        : tokens_per_frame_(tokens_per_frame), num_heads_(num_heads), head_dim_(head_dim) {
        if (tokens_per_frame == 0 || num_heads == 0 || head_dim == 0) {
            throw std::invalid_argument("LayerCache: tokens_per_frame, num_heads and head_dim must be positive");
        }
    }

    [[nodiscard]] std::size_t tokens_per_frame() const noexcept { return tokens_per_frame_; }
    [[nodiscard]] std::size_t num_heads() const noexcept { return num_heads_; }
    [[nodiscard]] std::size_t head_dim() const noexcept { return head_dim_; }
    [[nodiscard]] std::size_t row_width() const noexcept { return num_heads_ * head_dim_; }

    [[nodiscard]] std::size_t size() const noexcept { return tokens_.size(); }
    [[nodiscard]] bool empty() const noexcept { return tokens_.empty(); }

    /// Cached frames in whole-frame equivalents (token count / F, rounded up).
    [[nodiscard]] std::size_t frame_count() const noexcept {
        return (tokens_.size() + tokens_per_frame_ - 1) / tokens_per_frame_;
    }

    [[nodiscard]] const std::vector<TokenRecord>& tokens() const noexcept { return tokens_; }
    [[nodiscard]] const TokenRecord& operator[](std::size_t i) const { return tokens_.at(i); }
    [[nodiscard]] TokenRecord& mutable_token(std::size_t i) { return tokens_.at(i); }

    /// Next frame index that append_chunk will accept, if any chunk was appended before.
    [[nodiscard]] std::optional<std::int64_t> next_frame() const noexcept { return next_frame_; }

    /// Offset of the first token of each original frame still present.
    [[nodiscard]] std::map<std::int64_t, std::size_t> frame_starts() const {
        std::map<std::int64_t, std::size_t> starts;
        for (std::size_t i = 0; i < tokens_.size(); ++i) starts.try_emplace(tokens_[i].original_pos.frame, i);
        return starts;
    }

    /// Appends whole frames. Rows of `keys`/`values` are post-RoPE keys and raw values,
    /// one per token, `positions` gives their grid coordinates. Tokens are numbered
    /// consecutively from `first_id`, or from the running insertion count.
    void append_chunk(const Matrix<float>& keys, const Matrix<float>& values,
                      std::span<const TokenPosition> positions,
                      std::optional<std::uint64_t> first_id = std::nullopt);

    /// Drops the first frames * F tokens.
    void evict_fifo(std::size_t frames);

    /// Keeps tokens with keep[i] set, preserving order.
    void keep_only(const std::vector<bool>& keep) {
        if (keep.size() != tokens_.size()) throw std::invalid_argument("keep_only: mask length mismatch");
        std::size_t out = 0;
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            if (!keep[i]) continue;
            if (out != i) tokens_[out] = std::move(tokens_[i]);
            ++out;
        }
        tokens_.resize(out);
    }

    void erase(TokenRange range) {
        if (range.end > tokens_.size() || range.begin > range.end) throw std::out_of_range("erase: bad range");
        tokens_.erase(tokens_.begin() + static_cast<std::ptrdiff_t>(range.begin),
                      tokens_.begin() + static_cast<std::ptrdiff_t>(range.end));
    }

    /// Replaces the stored sequence. The caller guarantees ordering invariants.
    void replace_tokens(std::vector<TokenRecord> tokens) {
        tokens_ = std::move(tokens);
        next_frame_.reset();
        inserted_ = 0;
        for (const auto& t : tokens_) {
            next_frame_ = std::max(next_frame_.value_or(0), t.original_pos.frame + 1);
            inserted_ = std::max(inserted_, t.id + 1);
        }
    }

    /// Keys of tokens in `range`, one row per token.
    [[nodiscard]] Matrix<float> keys(TokenRange range) const;
    [[nodiscard]] Matrix<float> keys() const { return keys({0, tokens_.size()}); }

private:
    std::size_t tokens_per_frame_ = 1;
    std::size_t num_heads_ = 1;
    std::size_t head_dim_ = 1;
    std::vector<TokenRecord> tokens_;
    std::optional<std::int64_t> next_frame_;
    std::uint64_t inserted_ = 0;
};

inline void LayerCache::append_chunk(const Matrix<float>& keys, const Matrix<float>& values,
                                     std::span<const TokenPosition> positions,
                                     std::optional<std::uint64_t> first_id) {
    const std::size_t n = positions.size();
    if (keys.rows() != n || values.rows() != n) {
        throw std::invalid_argument("append_chunk: keys/values/positions disagree on token count");
    }
    if (n == 0) return;
    if (n % tokens_per_frame_ != 0) {
        throw std::invalid_argument("append_chunk: " + std::to_string(n) + " tokens is not a multiple of F=" +
                                    std::to_string(tokens_per_frame_));
    }
    if (keys.cols() != row_width() || values.cols() != row_width()) {
        throw std::invalid_argument("append_chunk: row width must be num_heads * head_dim");
    }
    std::int64_t expected = next_frame_.value_or(positions.front().frame);
    for (std::size_t f = 0; f < n / tokens_per_frame_; ++f) {
        for (std::size_t t = 0; t < tokens_per_frame_; ++t) {
            const auto& p = positions[f * tokens_per_frame_ + t];
            if (p.frame != expected) {
                throw std::invalid_argument("append_chunk: expected frame " + std::to_string(expected) +
                                            " but got frame " + std::to_string(p.frame));
            }
            if (p.frame < 0 || p.h < 0 || p.w < 0) throw std::invalid_argument("append_chunk: negative position");
        }
        ++expected;
    }
    const std::uint64_t id0 = first_id.value_or(inserted_);
    tokens_.reserve(tokens_.size() + n);
    for (std::size_t i = 0; i < n; ++i) {
        auto k = keys.row(i);
        auto v = values.row(i);
        tokens_.push_back(TokenRecord{{k.begin(), k.end()}, {v.begin(), v.end()}, positions[i],
                                      positions[i].frame, id0 + i});
    }
    next_frame_ = expected;
    inserted_ = id0 + n;
}

inline void LayerCache::evict_fifo(std::size_t frames) {
    const std::size_t n = frames * tokens_per_frame_;
    if (n > tokens_.size()) {
        throw std::out_of_range("evict_fifo: cannot evict " + std::to_string(frames) + " frames from " +
                                std::to_string(frame_count()));
    }
    tokens_.erase(tokens_.begin(), tokens_.begin() + static_cast<std::ptrdiff_t>(n));
}

inline Matrix<float> LayerCache::keys(TokenRange range) const {
    if (range.end > tokens_.size() || range.begin > range.end) throw std::out_of_range("LayerCache::keys: bad range");
    Matrix<float> out(range.size(), row_width());
    for (std::size_t i = 0; i < range.size(); ++i) {
        const auto& k = tokens_[range.begin + i].key;
        std::copy(k.begin(), k.end(), out.row(i).begin());
    }
    return out;
}

/// Sink = first S frames, recent = last R frames, candidates in between.
[[nodiscard]] inline Partition partition(const LayerCache& cache, const CachePolicyConfig& cfg) {
    const std::size_t f = cache.tokens_per_frame();
    const std::size_t sink = cfg.sink_frames * f;
    const std::size_t recent = cfg.recent_frames * f;
    if (sink + recent > cache.size()) {
        throw std::invalid_argument("partition: cache holds " + std::to_string(cache.size()) + " tokens, needs " +
                                    std::to_string(sink + recent) + " for sink + recent");
    }
    const std::size_t n = cache.size();
    return {{0, sink}, {sink, n - recent}, {n - recent, n}};
}

/// One policy config mapped over every layer. In per-head mode each head owns
/// a single-head LayerCache so selections can differ between heads.
class KvCacheStack {
public:
    KvCacheStack(std::size_t num_layers, std::size_t num_heads, std::size_t head_dim, std::size_t tokens_per_frame,
                 HeadGranularity granularity)
        : num_heads_(num_heads), head_dim_(head_dim), granularity_(granularity) {
        const std::size_t groups = granularity == HeadGranularity::per_head ? num_heads : 1;
        const std::size_t heads_per_group = granularity == HeadGranularity::per_head ? 1 : num_heads;
        layers_.assign(num_layers, std::vector<LayerCache>(groups, LayerCache(tokens_per_frame, heads_per_group, head_dim)));
    }

    [[nodiscard]] std::size_t num_layers() const noexcept { return layers_.size(); }
    [[nodiscard]] std::size_t groups_per_layer() const noexcept { return layers_.empty() ? 0 : layers_[0].size(); }
    [[nodiscard]] std::size_t heads_per_group() const noexcept { return num_heads_ / groups_per_layer(); }
    [[nodiscard]] HeadGranularity granularity() const noexcept { return granularity_; }

    [[nodiscard]] LayerCache& group(std::size_t layer, std::size_t g) { return layers_.at(layer).at(g); }
    [[nodiscard]] const LayerCache& group(std::size_t layer, std::size_t g) const { return layers_.at(layer).at(g); }

    /// Group index and first head for `head` of a layer.
    [[nodiscard]] std::size_t group_of_head(std::size_t head) const noexcept {
        return granularity_ == HeadGranularity::per_head ? head : 0;
    }

    /// Columns of a full-width (num_heads * head_dim) row block that belong to group g.
    [[nodiscard]] Matrix<float> group_columns(const Matrix<float>& m, std::size_t g) const {
        const std::size_t width = heads_per_group() * head_dim_;
        if (width == m.cols()) return m;
        return column_slice(m, g * width, width);
    }

    void append_chunk(std::size_t layer, const Matrix<float>& keys, const Matrix<float>& values,
                      std::span<const TokenPosition> positions, std::uint64_t first_id) {
        auto& groups = layers_.at(layer);
        for (std::size_t g = 0; g < groups.size(); ++g) {
            groups[g].append_chunk(group_columns(keys, g), group_columns(values, g), positions, first_id);
        }
    }

    /// All groups share frame counts; returns layer 0 group 0's.
    [[nodiscard]] std::size_t frame_count() const noexcept {
        return layers_.empty() ? 0 : layers_[0][0].frame_count();
    }
    [[nodiscard]] std::size_t token_count() const noexcept { return layers_.empty() ? 0 : layers_[0][0].size(); }

private:
    std::size_t num_heads_;
    std::size_t head_dim_;
    HeadGranularity granularity_;
    std::vector<std::vector<LayerCache>> layers_;
};

// ---- enum names -----------------------------------------------------------

inline std::string_view to_string(PolicyKind k) noexcept {
    switch (k) {
        case PolicyKind::fifo: return "fifo";
        case PolicyKind::shallow_sink: return "shallow_sink";
        case PolicyKind::longlive_sink: return "longlive_sink";
        case PolicyKind::rollingforcing_sink: return "rollingforcing_sink";
        case PolicyKind::random_topc: return "random_topc";
        case PolicyKind::deep_forcing: return "deep_forcing";
    }
    return "?";
}

inline std::string_view to_string(QueryMode m) noexcept {
    switch (m) {
        case QueryMode::past_only: return "past_only";
        case QueryMode::denoising_only: return "denoising_only";
        case QueryMode::both: return "both";
    }
    return "?";
}

inline std::string_view to_string(ScoreMode m) noexcept {
    return m == ScoreMode::raw_logit ? "raw_logit" : "softmax";
}

inline std::string_view to_string(HeadGranularity g) noexcept {
    return g == HeadGranularity::per_head ? "per_head" : "shared";
}

inline std::string_view to_string(SinkAlignment a) noexcept {
    return a == SinkAlignment::literal ? "literal" : "adjacent";
}

inline std::optional<PolicyKind> parse_policy(std::string_view s) noexcept {
    for (auto k : kAllPolicies) {
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

inline std::optional<QueryMode> parse_query_mode(std::string_view s) noexcept {
    for (auto m : {QueryMode::past_only, QueryMode::denoising_only, QueryMode::both}) {
        if (to_string(m) == s) return m;
    }
    return std::nullopt;
}

inline std::optional<ScoreMode> parse_score_mode(std::string_view s) noexcept {
    if (s == "raw_logit") return ScoreMode::raw_logit;
    if (s == "softmax") return ScoreMode::softmax;
    return std::nullopt;
}

inline std::optional<HeadGranularity> parse_head_granularity(std::string_view s) noexcept {
    if (s == "per_head") return HeadGranularity::per_head;
    if (s == "shared") return HeadGranularity::shared;
    return std::nullopt;
}

inline std::optional<SinkAlignment> parse_sink_alignment(std::string_view s) noexcept {
    if (s == "literal") return SinkAlignment::literal;
    if (s == "adjacent") return SinkAlignment::adjacent;
    return std::nullopt;
}

inline std::string valid_policy_names() {
    std::string out;
    for (auto k : kAllPolicies) {
        if (!out.empty()) out += ", ";
        out += to_string(k);
    }
    return out;
}

}  // namespace sinkcache
