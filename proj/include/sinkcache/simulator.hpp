// Copyright 2026 The sinkcache Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Synthetic chunk-wise autoregressive rollout.
//
// A seeded surrogate stands in for the video generator: it emits post-RoPE
// queries and keys plus raw values for each chunk. Every chunk walks the
// denoising schedule {1000, 750, 500, 250}; the cache policy may fire only at
// the first step, and the chunk's clean keys/values are appended after the
// last step. A shadow cache that never evicts is the reference for the
// retained-attention-mass metric.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <boost/random/normal_distribution.hpp>

#include "sinkcache/attention.hpp"
#include "sinkcache/cache.hpp"
#include "sinkcache/matrix.hpp"
#include "sinkcache/policy.hpp"
#include "sinkcache/rope.hpp"

namespace sinkcache {

inline constexpr std::array<int, 4> kDenoisingSchedule = {1000, 750, 500, 250};
/// Timestep of the clean pass whose keys and values enter the cache.
inline constexpr int kCleanTimestep = 0;

enum class StreamKind { gaussian, clustered, drifting };

[[nodiscard]] inline std::string_view to_string(StreamKind k) noexcept {
    switch (k) {
        case StreamKind::gaussian: return "gaussian";
        case StreamKind::clustered: return "clustered";
        case StreamKind::drifting: return "drifting";
    }
    return "?";
}

[[nodiscard]] inline std::optional<StreamKind> parse_stream_kind(std::string_view s) noexcept {
    for (auto k : {StreamKind::gaussian, StreamKind::clustered, StreamKind::drifting}) {
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

/// Surrogate generator parameters.
///
/// clustered: `anchor_count` tokens of frame `anchor_frame` carry a key
/// component that every later query shares, raising their scaled logit by
/// `anchor_gain` on average. drifting: every key carries a per-frame direction
/// that rotates by `drift_rate` radians per frame, with the same gain.
struct StreamModel {
    StreamKind kind = StreamKind::clustered;
    std::uint64_t seed = 0;
    std::size_t tokens_per_frame = 64;
    std::size_t head_dim = 64;
    std::size_t num_heads = 4;
    std::size_t num_layers = 2;
    std::size_t anchor_count = 16;
    double anchor_gain = 10.0;
    std::int64_t anchor_frame = 12;
    double drift_rate = 0.05;
    // Query noise std at timestep 1000; scales linearly down to 0 at the clean pass.
    double jitter_scale = 1.0;
    double rope_base = 10000.0;
    std::optional<DimSplit> dim_split;

    void validate() const {
        if (tokens_per_frame == 0 || head_dim == 0 || num_heads == 0 || num_layers == 0) {
            throw ConfigError("model: tokens_per_frame, head_dim, num_heads and num_layers must be positive");
        }
        if (head_dim % 2) throw ConfigError("model: head_dim must be even");
        if (!(anchor_gain >= 0.0) || !std::isfinite(anchor_gain)) throw ConfigError("model: anchor_gain must be >= 0");
        if (anchor_count > tokens_per_frame) throw ConfigError("model: anchor_count exceeds tokens_per_frame");
        if (anchor_frame < 0) throw ConfigError("model: anchor_frame must be >= 0");
        if (!(jitter_scale >= 0.0)) throw ConfigError("model: jitter_scale must be >= 0");
        try {
            (void)frequencies();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("model: ") + e.what());
        }
    }

    [[nodiscard]] RopeFrequencies frequencies() const {
        return build_frequencies(head_dim, dim_split.value_or(default_split(head_dim)), rope_base);
    }

    /// Spatial grid (rows, cols) with rows the largest divisor of F not above sqrt(F).
    [[nodiscard]] std::pair<std::int64_t, std::int64_t> grid() const noexcept {
        std::size_t rows = 1;
        for (std::size_t r = 1; r * r <= tokens_per_frame; ++r) {
            if (tokens_per_frame % r == 0) rows = r;
        }
        return {static_cast<std::int64_t>(rows), static_cast<std::int64_t>(tokens_per_frame / rows)};
    }
};

/// One chunk's surrogate activations. Matrices are per layer, one row per
/// token, heads back to back.
struct ChunkBlocks {
    std::int64_t chunk_index = 0;
    int timestep = 0;
    std::vector<Matrix<float>> queries;
    std::vector<Matrix<float>> keys;
    std::vector<Matrix<float>> values;
    std::vector<TokenPosition> positions;
    std::vector<std::size_t> anchor_offsets;  // token offsets inside the chunk
};

namespace detail {

inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
    std::vector<std::uint32_t> words;
    for (auto p : parts) {
        words.push_back(static_cast<std::uint32_t>(p));
        words.push_back(static_cast<std::uint32_t>(p >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

inline bool valid_timestep(int t) {
    return t == kCleanTimestep || std::find(kDenoisingSchedule.begin(), kDenoisingSchedule.end(), t) !=
                                      kDenoisingSchedule.end();
}

/// Coordinates of the lowest-frequency pair of each non-empty axis block. Signal
/// placed there survives rotation over long temporal and spatial offsets.
inline std::vector<std::size_t> signal_coords(const DimSplit& s) {
    std::vector<std::size_t> c;
    if (s.temporal) c.push_back(s.temporal - 2);
    if (s.height) c.push_back(s.temporal + s.height - 2);
    if (s.width) c.push_back(s.total() - 2);
    return c;
}

inline std::vector<std::size_t> anchor_offsets(const StreamModel& m) {
    std::vector<std::size_t> slots(m.tokens_per_frame);
    std::iota(slots.begin(), slots.end(), std::size_t{0});
    std::mt19937_64 rng(mix_seed({m.seed, 0xA5C0}));
    std::shuffle(slots.begin(), slots.end(), rng);
    slots.resize(m.anchor_count);
    std::sort(slots.begin(), slots.end());
    return slots;
}

}  // namespace detail

/// Deterministic surrogate activations for (seed, chunk, timestep). Keys and
/// values do not depend on the timestep; queries get noise whose std is
/// jitter_scale * timestep / 1000.
[[nodiscard]] inline ChunkBlocks generate_chunk(const StreamModel& model, std::size_t chunk_frames,
                                                std::int64_t chunk_index, int timestep) {
    if (!detail::valid_timestep(timestep)) {
        throw std::invalid_argument("generate_chunk: timestep " + std::to_string(timestep) + " not in schedule");
    }
    if (chunk_index < 0) throw std::invalid_argument("generate_chunk: negative chunk index");
    const auto freqs = model.frequencies();
    const auto [gh, gw] = model.grid();
    const RopeTable table(freqs, gh, gw);
    const std::size_t f = model.tokens_per_frame;
    const std::size_t d = model.head_dim;
    const std::size_t heads = model.num_heads;
    const std::size_t n = chunk_frames * f;
    const std::size_t width = heads * d;
    const std::int64_t first_frame = chunk_index * static_cast<std::int64_t>(chunk_frames);

    ChunkBlocks out;
    out.chunk_index = chunk_index;
    out.timestep = timestep;
    out.positions.reserve(n);
    for (std::size_t t = 0; t < n; ++t) {
        const auto local = static_cast<std::int64_t>(t % f);
        out.positions.push_back({first_frame + static_cast<std::int64_t>(t / f), local / gw, local % gw});
    }

    std::vector<bool> is_anchor(n, false);
    if (model.kind == StreamKind::clustered && model.anchor_count > 0 && model.anchor_frame >= first_frame &&
        model.anchor_frame < first_frame + static_cast<std::int64_t>(chunk_frames)) {
        const auto base = static_cast<std::size_t>(model.anchor_frame - first_frame) * f;
        for (auto s : detail::anchor_offsets(model)) {
            out.anchor_offsets.push_back(base + s);
            is_anchor[base + s] = true;
        }
    }

    const auto coords = detail::signal_coords(freqs.split);
    // Query and key signal amplitudes are equal, so gain = amp^2 / sqrt(d).
    const double amp = std::sqrt(model.anchor_gain * std::sqrt(static_cast<double>(d)));
    const double jitter = model.jitter_scale * static_cast<double>(timestep) / 1000.0;

    std::vector<std::vector<double>> temporal(chunk_frames);
    for (std::size_t fr = 0; fr < chunk_frames; ++fr) {
        temporal[fr] = table.temporal_table(first_frame + static_cast<std::int64_t>(fr));
    }

    for (std::size_t layer = 0; layer < model.num_layers; ++layer) {
        std::mt19937_64 rng(detail::mix_seed({model.seed, static_cast<std::uint64_t>(chunk_index), layer, 0xC0FFEE}));
        boost::random::normal_distribution<float> normal(0.f, 1.f);
        Matrix<float> q(n, width), k(n, width), v(n, width);
        for (auto& x : q.flat()) x = normal(rng);
        for (auto& x : k.flat()) x = normal(rng);
        for (auto& x : v.flat()) x = normal(rng);

        // Per-head unit signal direction over the low-frequency coordinates.
        std::mt19937_64 dir_rng(detail::mix_seed({model.seed, layer, 0xD1EC7}));
        std::vector<std::vector<double>> dir(heads, std::vector<double>(coords.size()));
        for (auto& hd : dir) {
            for (auto& c : hd) c = (dir_rng() & 1u ? 1.0 : -1.0) / std::sqrt(static_cast<double>(coords.size()));
        }

        if (model.kind == StreamKind::clustered && amp > 0.0) {
            for (std::size_t t = 0; t < n; ++t) {
                for (std::size_t h = 0; h < heads; ++h) {
                    for (std::size_t c = 0; c < coords.size(); ++c) {
                        q(t, h * d + coords[c]) += static_cast<float>(amp * dir[h][c]);
                        if (is_anchor[t]) k(t, h * d + coords[c]) += static_cast<float>(amp * dir[h][c]);
                    }
                }
            }
        } else if (model.kind == StreamKind::drifting && amp > 0.0 && coords.size() >= 2) {
            for (std::size_t t = 0; t < n; ++t) {
                const double theta = model.drift_rate * static_cast<double>(out.positions[t].frame);
                const double a = amp * std::cos(theta), b = amp * std::sin(theta);
                for (std::size_t h = 0; h < heads; ++h) {
                    q(t, h * d + coords[0]) += static_cast<float>(a);
                    q(t, h * d + coords[1]) += static_cast<float>(b);
                    k(t, h * d + coords[0]) += static_cast<float>(a);
                    k(t, h * d + coords[1]) += static_cast<float>(b);
                }
            }
        }

        for (std::size_t t = 0; t < n; ++t) {
            const auto& tt = temporal[t / f];
            table.apply(q.row(t), out.positions[t], tt);
            table.apply(k.row(t), out.positions[t], tt);
        }

        if (jitter > 0.0) {
            std::mt19937_64 jrng(detail::mix_seed(
                {model.seed, static_cast<std::uint64_t>(chunk_index), layer, static_cast<std::uint64_t>(timestep), 0x7177}));
            boost::random::normal_distribution<float> noise(0.f, static_cast<float>(jitter));
            for (auto& x : q.flat()) x += noise(jrng);
        }
        out.queries.push_back(std::move(q));
        out.keys.push_back(std::move(k));
        out.values.push_back(std::move(v));
    }
    return out;
}

/// Queries of `clean` (the timestep-0 blocks) with the jitter of `timestep` added.
/// Matches generate_chunk(model, ..., timestep).queries without regenerating keys.
[[nodiscard]] inline std::vector<Matrix<float>> jittered_queries(const StreamModel& model, const ChunkBlocks& clean,
                                                                 int timestep) {
    if (!detail::valid_timestep(timestep)) throw std::invalid_argument("jittered_queries: timestep not in schedule");
    auto qs = clean.queries;
    const double jitter = model.jitter_scale * static_cast<double>(timestep) / 1000.0;
    if (jitter <= 0.0) return qs;
    for (std::size_t layer = 0; layer < qs.size(); ++layer) {
        std::mt19937_64 jrng(detail::mix_seed({model.seed, static_cast<std::uint64_t>(clean.chunk_index), layer,
                                               static_cast<std::uint64_t>(timestep), 0x7177}));
        boost::random::normal_distribution<float> noise(0.f, static_cast<float>(jitter));
        for (auto& x : qs[layer].flat()) x += noise(jrng);
    }
    return qs;
}

// ---- rollout --------------------------------------------------------------

struct StepRecord {
    std::uint64_t seed = 0;
    std::size_t chunk = 0;
    int timestep = 0;
    std::size_t cache_frames = 0;  // before the policy step
    std::size_t cache_tokens = 0;
    bool event = false;            // policy fired at this step
    std::size_t post_frames = 0;
    std::size_t post_tokens = 0;
    std::optional<double> retained_mass;
    std::vector<std::vector<CompressionReport>> reports;  // [layer][group]
    std::vector<std::size_t> anchor_slots;  // planted anchors' cache indices before the event (layer 0, group 0)
    std::size_t anchors_before = 0;         // summed over every layer and group
    std::size_t anchors_after = 0;
};

struct RolloutTrace {
    StreamModel model;
    CachePolicyConfig cfg;
    std::size_t chunks = 0;
    std::size_t metric_queries = 0;
    std::vector<StepRecord> steps;

    [[nodiscard]] std::size_t event_count() const noexcept {
        return static_cast<std::size_t>(std::count_if(steps.begin(), steps.end(), [](const auto& s) { return s.event; }));
    }
};

struct RolloutOptions {
    // Clean queries per (layer, head) used for the retained-mass metric; 0 disables it.
    std::size_t metric_queries = 8;
    // Leave the final chunk out of the returned cache (the state it was generated against).
    bool skip_final_append = false;
};

/// Final cache state of a rollout alongside its trace.
struct RolloutResult {
    RolloutTrace trace;
    KvCacheStack caches;
    ChunkBlocks last_chunk;  // clean blocks of the final chunk
    std::vector<std::uint64_t> anchor_ids;
};

namespace detail {

inline std::size_t anchors_in(const LayerCache& cache, const std::unordered_set<std::uint64_t>& anchors,
                              std::vector<std::size_t>* slots = nullptr) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < cache.size(); ++i) {
        if (anchors.count(cache[i].id)) {
            ++n;
            if (slots) slots->push_back(i);
        }
    }
    return n;
}

/// Last `rows` rows of the stacked history (oldest first).
inline Matrix<float> tail_rows(const std::vector<Matrix<float>>& history, std::size_t rows, std::size_t width) {
    Matrix<float> out(0, width);
    std::size_t have = 0;
    for (const auto& m : history) have += m.rows();
    std::size_t skip = have > rows ? have - rows : 0;
    out.reserve_rows(std::min(rows, have));
    for (const auto& m : history) {
        for (std::size_t r = 0; r < m.rows(); ++r) {
            if (skip) {
                --skip;
                continue;
            }
            out.append_row(m.row(r));
        }
    }
    return out;
}

}  // namespace detail

/// Runs `chunks` chunks through the configured policy. Keeps the final state.
[[nodiscard]] inline RolloutResult rollout_with_state(const StreamModel& model, const CachePolicyConfig& cfg,
                                                      std::size_t chunks, const RolloutOptions& opts = {}) {
    model.validate();
    cfg.validate();
    if (cfg.tokens_per_frame != model.tokens_per_frame) {
        throw ConfigError("policy tokens_per_frame (" + std::to_string(cfg.tokens_per_frame) +
                          ") differs from model tokens_per_frame (" + std::to_string(model.tokens_per_frame) + ")");
    }
    if (chunks == 0) throw ConfigError("chunks must be >= 1");

    const auto freqs = model.frequencies();
    const std::size_t f = model.tokens_per_frame;
    const std::size_t d = model.head_dim;
    const std::size_t heads = model.num_heads;
    const std::size_t width = heads * d;
    const double scale = default_scale(d);
    const bool metric = opts.metric_queries > 0;
    const bool need_denoise = cfg.policy == PolicyKind::deep_forcing && cfg.query_mode != QueryMode::past_only;
    const bool need_past = cfg.policy == PolicyKind::deep_forcing && cfg.query_mode != QueryMode::denoising_only;

    RolloutResult res{RolloutTrace{model, cfg, chunks, opts.metric_queries, {}},
                      KvCacheStack(model.num_layers, heads, d, f, cfg.head_granularity), {}, {}};
    auto& caches = res.caches;
    auto& trace = res.trace;
    trace.steps.reserve(chunks * kDenoisingSchedule.size());

    // Shadow cache: every key ever appended, per layer and head, at its original position.
    std::vector<std::vector<Matrix<float>>> shadow(model.num_layers, std::vector<Matrix<float>>(heads, Matrix<float>(0, d)));
    if (metric) {
        for (auto& layer : shadow) {
            for (auto& sh : layer) sh.reserve_rows(chunks * cfg.chunk_frames * f);
        }
    }
    std::vector<std::vector<Matrix<float>>> past_queries(model.num_layers);
    std::unordered_set<std::uint64_t> anchor_ids;
    std::uint64_t next_id = 0;
    const std::size_t past_rows = cfg.recent_frames * f;

    for (std::size_t c = 0; c < chunks; ++c) {
        ChunkBlocks clean = generate_chunk(model, cfg.chunk_frames, static_cast<std::int64_t>(c), kCleanTimestep);

        for (std::size_t ti = 0; ti < kDenoisingSchedule.size(); ++ti) {
            StepRecord rec;
            rec.seed = model.seed;
            rec.chunk = c;
            rec.timestep = kDenoisingSchedule[ti];
            rec.cache_frames = caches.frame_count();
            rec.cache_tokens = caches.token_count();

            if (ti == 0 && caches.frame_count() >= cfg.max_window_frames) {
                rec.event = true;
                std::vector<Matrix<float>> denoise;
                if (need_denoise) denoise = jittered_queries(model, clean, rec.timestep);
                for (std::size_t l = 0; l < caches.num_layers(); ++l) {
                    Matrix<float> recent_q = need_past ? detail::tail_rows(past_queries[l], past_rows, width)
                                                       : Matrix<float>(0, width);
                    const Matrix<float> empty(0, width);
                    const Matrix<float>& denoise_q = need_denoise ? denoise[l] : empty;
                    std::vector<CompressionReport> layer_reports;
                    for (std::size_t g = 0; g < caches.groups_per_layer(); ++g) {
                        auto& cache = caches.group(l, g);
                        if (!anchor_ids.empty()) {
                            rec.anchors_before += detail::anchors_in(
                                cache, anchor_ids, l == 0 && g == 0 ? &rec.anchor_slots : nullptr);
                        }
                        const std::uint64_t step_seed = detail::mix_seed({model.seed, c, l, g, 0x5E1EC7});
                        layer_reports.push_back(policy_step(cache, caches.group_columns(recent_q, g),
                                                            caches.group_columns(denoise_q, g), cfg, freqs, step_seed,
                                                            rec.timestep));
                        if (!anchor_ids.empty()) rec.anchors_after += detail::anchors_in(cache, anchor_ids);
                    }
                    rec.reports.push_back(std::move(layer_reports));
                }
            }

            if (ti == 0 && metric && caches.token_count() > 0) {
                double total = 0.0;
                std::size_t terms = 0;
                const std::size_t stride = std::max<std::size_t>(1, clean.positions.size() / opts.metric_queries);
                for (std::size_t l = 0; l < caches.num_layers(); ++l) {
                    Matrix<float> sampled(0, width);
                    for (std::size_t r = 0; r < clean.positions.size() && sampled.rows() < opts.metric_queries;
                         r += stride) {
                        sampled.append_row(clean.queries[l].row(r));
                    }
                    for (std::size_t h = 0; h < heads; ++h) {
                        const auto& cache = caches.group(l, caches.group_of_head(h));
                        std::vector<std::size_t> kept;
                        kept.reserve(cache.size());
                        for (const auto& tok : cache.tokens()) kept.push_back(static_cast<std::size_t>(tok.id));
                        total += retained_mass(column_slice(sampled, h * d, d), shadow[l][h], kept, scale);
                        ++terms;
                    }
                }
                rec.retained_mass = total / static_cast<double>(terms);
            }
            rec.post_frames = caches.frame_count();
            rec.post_tokens = caches.token_count();
            trace.steps.push_back(std::move(rec));
        }

        if (opts.skip_final_append && c + 1 == chunks) {
            res.last_chunk = std::move(clean);
            break;
        }
        for (auto off : clean.anchor_offsets) anchor_ids.insert(next_id + off);
        for (std::size_t l = 0; l < caches.num_layers(); ++l) {
            caches.append_chunk(l, clean.keys[l], clean.values[l], clean.positions, next_id);
            if (metric) {
                for (std::size_t h = 0; h < heads; ++h) {
                    auto& sh = shadow[l][h];
                    for (std::size_t r = 0; r < clean.positions.size(); ++r) sh.append_row(clean.keys[l].row(r).subspan(h * d, d));
                }
            }
            if (need_past) {
                past_queries[l].push_back(clean.queries[l]);
                std::size_t rows = 0;
                for (const auto& m : past_queries[l]) rows += m.rows();
                while (!past_queries[l].empty() && rows - past_queries[l].front().rows() >= past_rows) {
                    rows -= past_queries[l].front().rows();
                    past_queries[l].erase(past_queries[l].begin());
                }
            }
        }
        next_id += clean.positions.size();
        if (c + 1 == chunks) res.last_chunk = std::move(clean);
    }
    res.anchor_ids.assign(anchor_ids.begin(), anchor_ids.end());
    std::sort(res.anchor_ids.begin(), res.anchor_ids.end());
    return res;
}

[[nodiscard]] inline RolloutTrace rollout(const StreamModel& model, const CachePolicyConfig& cfg, std::size_t chunks,
                                          const RolloutOptions& opts = {}) {
    return rollout_with_state(model, cfg, chunks, opts).trace;
}

// ---- analysis -------------------------------------------------------------

struct SelectionHeatmap {
    std::vector<std::uint64_t> counts;  // per pre-compression cache slot
    std::size_t sink_boundary = 0;      // S * F
    std::size_t candidate_end = 0;      // (M - R) * F
    std::size_t events = 0;
};

/// Top-C selection counts per cache slot over every policy event, summed over
/// layers and head groups.
[[nodiscard]] inline SelectionHeatmap selection_heatmap(const RolloutTrace& trace) {
    if (trace.steps.empty()) throw std::invalid_argument("selection_heatmap: empty trace");
    const auto& cfg = trace.cfg;
    SelectionHeatmap hm;
    hm.sink_boundary = cfg.sink_frames * cfg.tokens_per_frame;
    hm.candidate_end = (cfg.max_window_frames - cfg.recent_frames) * cfg.tokens_per_frame;
    std::size_t slots = cfg.max_window_frames * cfg.tokens_per_frame;
    for (const auto& s : trace.steps) {
        for (const auto& layer : s.reports) {
            for (const auto& r : layer) slots = std::max(slots, r.pre_size);
        }
    }
    hm.counts.assign(slots, 0);
    for (const auto& s : trace.steps) {
        if (!s.event) continue;
        ++hm.events;
        for (const auto& layer : s.reports) {
            for (const auto& r : layer) {
                for (auto i : r.selected_token_indices) ++hm.counts[i];
            }
        }
    }
    return hm;
}

struct RunSummary {
    std::string policy;
    std::uint64_t seed = 0;
    std::size_t chunks = 0;
    std::size_t events = 0;
    std::uint64_t evicted_tokens = 0;  // layer 0, group 0
    double mean_retained_mass = 0.0;
    std::size_t final_cache_frames = 0;
    std::size_t final_cache_tokens = 0;
};

[[nodiscard]] inline RunSummary summarize(const RolloutTrace& trace) {
    RunSummary s;
    s.policy = std::string(to_string(trace.cfg.policy));
    s.seed = trace.model.seed;
    s.chunks = trace.chunks;
    double mass = 0.0;
    std::size_t n = 0;
    for (const auto& st : trace.steps) {
        if (st.event) {
            ++s.events;
            if (!st.reports.empty() && !st.reports[0].empty()) s.evicted_tokens += st.reports[0][0].evicted_token_indices.size();
        }
        if (st.retained_mass) {
            mass += *st.retained_mass;
            ++n;
        }
    }
    s.mean_retained_mass = n ? mass / static_cast<double>(n) : 1.0;
    if (!trace.steps.empty()) {
        // Frames after the final append: last recorded state plus one chunk.
        s.final_cache_tokens = trace.steps.back().post_tokens + trace.cfg.chunk_frames * trace.cfg.tokens_per_frame;
        s.final_cache_frames = (s.final_cache_tokens + trace.cfg.tokens_per_frame - 1) / trace.cfg.tokens_per_frame;
    }
    return s;
}

struct PolicySummary {
    std::string policy;
    std::size_t seeds = 0;
    double mean_retained_mass = 0.0;
    double mean_events = 0.0;
    double mean_evicted_tokens = 0.0;
    double mean_final_cache_tokens = 0.0;
};

/// Paired comparison: every policy sees the same model and seeds.
[[nodiscard]] inline std::vector<PolicySummary> compare_policies(const StreamModel& model,
                                                                 const std::vector<CachePolicyConfig>& cfgs,
                                                                 std::size_t chunks,
                                                                 const std::vector<std::uint64_t>& seeds,
                                                                 const RolloutOptions& opts = {}) {
    if (seeds.empty()) throw ConfigError("compare_policies: no seeds");
    for (const auto& cfg : cfgs) {
        if (cfg.tokens_per_frame != model.tokens_per_frame) {
            throw ConfigError("compare_policies: policy " + std::string(to_string(cfg.policy)) +
                              " has tokens_per_frame " + std::to_string(cfg.tokens_per_frame) + ", model has " +
                              std::to_string(model.tokens_per_frame));
        }
    }
    std::vector<PolicySummary> out;
    for (const auto& cfg : cfgs) {
        PolicySummary p;
        p.policy = std::string(to_string(cfg.policy));
        p.seeds = seeds.size();
        for (auto seed : seeds) {
            StreamModel m = model;
            m.seed = seed;
            const auto s = summarize(rollout(m, cfg, chunks, opts));
            p.mean_retained_mass += s.mean_retained_mass;
            p.mean_events += static_cast<double>(s.events);
            p.mean_evicted_tokens += static_cast<double>(s.evicted_tokens);
            p.mean_final_cache_tokens += static_cast<double>(s.final_cache_tokens);
        }
        const double k = static_cast<double>(seeds.size());
        p.mean_retained_mass /= k;
        p.mean_events /= k;
        p.mean_evicted_tokens /= k;
        p.mean_final_cache_tokens /= k;
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace sinkcache
