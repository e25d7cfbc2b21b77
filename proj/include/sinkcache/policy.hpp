// Copyright 2026 The sinkcache Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Eviction and temporal re-alignment policies.
//
// deep_forcing keeps [sink | top-C | recent]. The top-C block is packed so that
// its last frame sits right before the recent region, and the sink is rotated so
// that its last frame lands on the first frame of that tail. The result is an
// effective timeline with no holes between regions, anchored to the present.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sinkcache/cache.hpp"
#include "sinkcache/matrix.hpp"
#include "sinkcache/rope.hpp"

namespace sinkcache {

/// Highest-noise step of the denoising schedule; compression only runs here.
inline constexpr int kFirstTimestep = 1000;

/// Frames kept by the fixed three-frame sink baselines.
inline constexpr std::size_t kShallowSinkFrames = 3;

struct ImportanceVector {
    std::vector<double> scores;
    std::vector<std::size_t> candidate_index_map;  // cache index of each score

    [[nodiscard]] std::size_t size() const noexcept { return scores.size(); }
};

struct CompressionReport {
    PolicyKind policy = PolicyKind::deep_forcing;
    // Indices refer to the cache as it was before the step.
    std::vector<std::size_t> selected_token_indices;
    std::vector<std::size_t> evicted_token_indices;
    std::int64_t delta_sink = 0;
    std::vector<std::int64_t> delta_top;  // parallel to selected_token_indices
    std::size_t pre_size = 0;
    std::size_t post_size = 0;
    std::size_t candidate_count = 0;
};

[[nodiscard]] inline std::int64_t compute_delta_sink(std::int64_t s_tail, std::int64_t s_sink) {
    if (s_tail < s_sink) {
        throw std::invalid_argument("compute_delta_sink: tail frame " + std::to_string(s_tail) +
                                    " precedes sink frame " + std::to_string(s_sink));
    }
    return s_tail - s_sink;
}

/// Rotates the sink keys so the sink's last frame sits on (or, in adjacent mode,
/// just before) the first tail frame. Returns the applied shift in frames.
inline std::int64_t deep_sink_realign(LayerCache& cache, const CachePolicyConfig& cfg, const RopeFrequencies& freqs) {
    const std::size_t sink_tokens = cfg.sink_frames * cache.tokens_per_frame();
    if (sink_tokens == 0 || sink_tokens >= cache.size()) return 0;
    const std::int64_t s_sink = cache[sink_tokens - 1].effective_frame;
    const std::int64_t s_tail = cache[sink_tokens].effective_frame;
    std::int64_t delta = compute_delta_sink(s_tail, s_sink);
    if (cfg.sink_alignment == SinkAlignment::adjacent) delta -= 1;
    if (delta == 0) return 0;
    const TemporalRotation rot(delta, freqs);
    for (std::size_t i = 0; i < sink_tokens; ++i) {
        auto& tok = cache.mutable_token(i);
        rot.apply(std::span<float>(tok.key));
        tok.effective_frame += delta;
    }
    return delta;
}

/// Aggregated query-key scores of the candidate tokens of `cache_keys`.
///
/// raw_logit sums q.k over every contributing query (the sum over heads is the
/// full-row dot product). softmax normalises each query's scaled logits over
/// the whole cache per head and sums the probability mass each candidate gets.
[[nodiscard]] inline ImportanceVector importance_scores(const Matrix<float>& recent_queries,
                                                        const Matrix<float>& denoising_queries,
                                                        const Matrix<float>& cache_keys, TokenRange candidates,
                                                        QueryMode mode, ScoreMode score_mode = ScoreMode::raw_logit,
                                                        std::size_t num_heads = 1, double scale = 0.0) {
    if (candidates.end > cache_keys.rows() || candidates.begin > candidates.end) {
        throw std::out_of_range("importance_scores: candidate range outside key block");
    }
    std::vector<const Matrix<float>*> sources;
    if (mode != QueryMode::denoising_only && !recent_queries.empty()) sources.push_back(&recent_queries);
    if (mode != QueryMode::past_only && !denoising_queries.empty()) sources.push_back(&denoising_queries);
    if (sources.empty()) throw std::invalid_argument("importance_scores: no contributing queries for this mode");
    const std::size_t width = cache_keys.cols();
    for (const auto* q : sources) {
        if (q->cols() != width) {
            throw std::invalid_argument("importance_scores: query width " + std::to_string(q->cols()) +
                                        " != key width " + std::to_string(width));
        }
    }

    ImportanceVector out;
    out.scores.assign(candidates.size(), 0.0);
    out.candidate_index_map.resize(candidates.size());
    std::iota(out.candidate_index_map.begin(), out.candidate_index_map.end(), candidates.begin);

    if (score_mode == ScoreMode::raw_logit) {
        // Linear in the queries: sum them once, then one dot per key.
        std::vector<double> qsum(width, 0.0);
        for (const auto* q : sources) {
            for (std::size_t r = 0; r < q->rows(); ++r) {
                auto row = q->row(r);
                for (std::size_t c = 0; c < width; ++c) qsum[c] += row[c];
            }
        }
        for (std::size_t j = 0; j < candidates.size(); ++j) {
            auto k = cache_keys.row(candidates.begin + j);
            double acc = 0.0;
            for (std::size_t c = 0; c < width; ++c) acc += qsum[c] * static_cast<double>(k[c]);
            out.scores[j] = acc;
        }
        return out;
    }

    if (num_heads == 0 || width % num_heads != 0) throw std::invalid_argument("importance_scores: bad num_heads");
    const std::size_t d = width / num_heads;
    const double s = scale > 0.0 ? scale : 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> logits(cache_keys.rows());
    for (const auto* q : sources) {
        for (std::size_t r = 0; r < q->rows(); ++r) {
            auto qrow = q->row(r);
            for (std::size_t h = 0; h < num_heads; ++h) {
                auto qh = qrow.subspan(h * d, d);
                double mx = -INFINITY;
                for (std::size_t j = 0; j < cache_keys.rows(); ++j) {
                    logits[j] = s * dot<float>(qh, cache_keys.row(j).subspan(h * d, d));
                    mx = std::max(mx, logits[j]);
                }
                double z = 0.0;
                for (auto& l : logits) z += (l = std::exp(l - mx));
                for (std::size_t j = 0; j < candidates.size(); ++j) out.scores[j] += logits[candidates.begin + j] / z;
            }
        }
    }
    return out;
}

/// Raw-logit scores of a bare key block (every row is a candidate).
[[nodiscard]] inline ImportanceVector importance_scores(const Matrix<float>& recent_queries,
                                                        const Matrix<float>& denoising_queries,
                                                        const Matrix<float>& candidate_keys, QueryMode mode) {
    return importance_scores(recent_queries, denoising_queries, candidate_keys, {0, candidate_keys.rows()}, mode);
}

/// Positions of the c highest scores, earlier position winning ties, returned in
/// ascending position order.
[[nodiscard]] inline std::vector<std::size_t> top_c_positions(std::span<const double> scores, std::size_t c) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (c >= idx.size()) return idx;
    auto better = [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
    };
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(c), idx.end(), better);
    idx.resize(c);
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Cache indices of the top-c candidates, in cache order.
[[nodiscard]] inline std::vector<std::size_t> top_c_select(const ImportanceVector& phi, std::size_t c) {
    auto pos = top_c_positions(phi.scores, c);
    for (auto& p : pos) p = phi.candidate_index_map[p];
    return pos;
}

/// Moves the selected keys onto consecutive effective frames starting at
/// `first_target`: the k-th distinct original frame among them goes to
/// first_target + k. Returns the per-token shift.
inline std::vector<std::int64_t> unify_topc_rope(LayerCache& cache, std::span<const std::size_t> selected,
                                                 const RopeFrequencies& freqs, std::int64_t first_target) {
    std::vector<std::int64_t> deltas;
    deltas.reserve(selected.size());
    std::int64_t slot = first_target - 1;
    std::int64_t current_frame = 0;
    std::optional<TemporalRotation> rot;
    for (std::size_t n = 0; n < selected.size(); ++n) {
        auto& tok = cache.mutable_token(selected[n]);
        if (n == 0 || tok.original_pos.frame != current_frame) {
            current_frame = tok.original_pos.frame;
            ++slot;
        }
        const std::int64_t delta = slot - tok.effective_frame;
        if (!rot || rot->delta() != delta) rot.emplace(delta, freqs);
        rot->apply(std::span<float>(tok.key));
        tok.effective_frame = slot;
        deltas.push_back(delta);
    }
    return deltas;
}

/// Same, targeting the frame right after the sink (or the first selected
/// token's current frame when there is no sink).
inline std::vector<std::int64_t> unify_topc_rope(LayerCache& cache, std::span<const std::size_t> selected,
                                                 const RopeFrequencies& freqs, const CachePolicyConfig& cfg) {
    if (selected.empty()) return {};
    const std::size_t sink_tokens = cfg.sink_frames * cache.tokens_per_frame();
    const std::int64_t first = sink_tokens > 0 && sink_tokens <= cache.size()
                                   ? cache[sink_tokens - 1].effective_frame + 1
                                   : cache[selected.front()].effective_frame;
    return unify_topc_rope(cache, selected, freqs, first);
}

namespace detail {

inline std::size_t distinct_frames(const LayerCache& cache, std::span<const std::size_t> idx) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (i == 0 || cache[idx[i]].original_pos.frame != cache[idx[i - 1]].original_pos.frame) ++n;
    }
    return n;
}

/// Rebuilds the cache as [sink | selected | recent], re-aligns top-C and sink.
inline CompressionReport assemble_topc(LayerCache& cache, const CachePolicyConfig& cfg, const RopeFrequencies& freqs,
                                       const Partition& part, std::vector<std::size_t> selected, PolicyKind kind) {
    CompressionReport rep;
    rep.policy = kind;
    rep.pre_size = cache.size();
    rep.candidate_count = part.candidates.size();

    std::vector<bool> keep(cache.size(), true);
    for (std::size_t i = part.candidates.begin; i < part.candidates.end; ++i) keep[i] = false;
    for (auto i : selected) keep[i] = true;
    for (std::size_t i = part.candidates.begin; i < part.candidates.end; ++i) {
        if (!keep[i]) rep.evicted_token_indices.push_back(i);
    }

    // The packed top-C block ends right before the recent region (or the next
    // frame to be generated when there is no recent region).
    std::int64_t tail_end = 0;
    if (!part.recent.empty()) {
        tail_end = cache[part.recent.begin].effective_frame;
    } else if (!cache.empty()) {
        tail_end = cache[cache.size() - 1].effective_frame + 1;
    }
    const auto d = static_cast<std::int64_t>(distinct_frames(cache, selected));
    const std::int64_t first_target = tail_end - d;

    if (!rep.evicted_token_indices.empty()) cache.keep_only(keep);

    std::vector<std::size_t> moved(selected.size());
    std::iota(moved.begin(), moved.end(), part.sink.end);
    rep.delta_top = unify_topc_rope(cache, moved, freqs, first_target);
    rep.delta_sink = deep_sink_realign(cache, cfg, freqs);
    rep.selected_token_indices = std::move(selected);
    rep.post_size = cache.size();
    return rep;
}

inline void require_trigger(const LayerCache& cache, const CachePolicyConfig& cfg, int timestep, const char* who) {
    if (timestep != kFirstTimestep) {
        throw std::logic_error(std::string(who) + ": invoked at timestep " + std::to_string(timestep) +
                               ", compression only runs at the first denoising step");
    }
    if (cache.frame_count() < cfg.max_window_frames) {
        throw std::logic_error(std::string(who) + ": window not full (" + std::to_string(cache.frame_count()) + " < " +
                               std::to_string(cfg.max_window_frames) + " frames)");
    }
}

}  // namespace detail

/// Sink + top-C + recent compression with temporal re-alignment. Queries use the
/// same column layout as the cache keys.
inline CompressionReport participative_compress(LayerCache& cache, const Matrix<float>& recent_queries,
                                                const Matrix<float>& denoising_queries, const CachePolicyConfig& cfg,
                                                const RopeFrequencies& freqs, int timestep = kFirstTimestep) {
    detail::require_trigger(cache, cfg, timestep, "participative_compress");
    const Partition part = partition(cache, cfg);
    const std::size_t c_tok = cfg.topc_tokens();
    std::vector<std::size_t> selected;
    if (!part.candidates.empty() && c_tok > 0) {
        // Only the candidate rows are needed for raw logits; softmax needs the whole cache.
        ImportanceVector phi;
        if (cfg.score_mode == ScoreMode::raw_logit) {
            phi = importance_scores(recent_queries, denoising_queries, cache.keys(part.candidates),
                                    {0, part.candidates.size()}, cfg.query_mode);
            for (auto& i : phi.candidate_index_map) i += part.candidates.begin;
        } else {
            phi = importance_scores(recent_queries, denoising_queries, cache.keys(), part.candidates, cfg.query_mode,
                                    ScoreMode::softmax, cache.num_heads());
        }
        selected = top_c_select(phi, c_tok);
    }
    return detail::assemble_topc(cache, cfg, freqs, part, std::move(selected), PolicyKind::deep_forcing);
}

/// Baseline variants. `seed` drives random_topc only.
inline CompressionReport baseline_step(LayerCache& cache, const CachePolicyConfig& cfg, const RopeFrequencies& freqs,
                                       std::uint64_t seed, int timestep = kFirstTimestep) {
    const PolicyKind kind = cfg.policy;
    if (kind == PolicyKind::deep_forcing) {
        throw std::invalid_argument("baseline_step: deep_forcing is not a baseline; valid variants are fifo, "
                                    "shallow_sink, longlive_sink, rollingforcing_sink, random_topc");
    }
    detail::require_trigger(cache, cfg, timestep, "baseline_step");

    if (kind == PolicyKind::random_topc) {
        const Partition part = partition(cache, cfg);
        const std::size_t c_tok = cfg.topc_tokens();
        std::vector<std::size_t> selected;
        if (!part.candidates.empty() && c_tok > 0) {
            std::mt19937_64 rng(seed);
            std::normal_distribution<double> normal(0.0, 1.0);
            ImportanceVector phi;
            phi.scores.resize(part.candidates.size());
            phi.candidate_index_map.resize(part.candidates.size());
            for (std::size_t j = 0; j < phi.scores.size(); ++j) {
                phi.scores[j] = normal(rng);
                phi.candidate_index_map[j] = part.candidates.begin + j;
            }
            selected = top_c_select(phi, c_tok);
        }
        return detail::assemble_topc(cache, cfg, freqs, part, std::move(selected), kind);
    }

    // Rolling variants: evict the oldest non-sink frames so that the incoming
    // chunk brings the window back to exactly M frames.
    const std::size_t f = cache.tokens_per_frame();
    const std::size_t frames = cache.frame_count();
    std::size_t sink_frames = 0;
    if (kind == PolicyKind::shallow_sink) sink_frames = cfg.sink_frames;
    if (kind == PolicyKind::longlive_sink || kind == PolicyKind::rollingforcing_sink) sink_frames = kShallowSinkFrames;
    sink_frames = std::min(sink_frames, frames);
    const std::size_t keep_frames = cfg.max_window_frames > cfg.chunk_frames ? cfg.max_window_frames - cfg.chunk_frames : 0;
    const std::size_t evict_frames = std::min(frames - std::min(frames, keep_frames), frames - sink_frames);

    CompressionReport rep;
    rep.policy = kind;
    rep.pre_size = cache.size();
    const std::size_t first = sink_frames * f;
    const std::size_t last = std::min(cache.size(), first + evict_frames * f);
    rep.candidate_count = last - first;
    for (std::size_t i = first; i < last; ++i) rep.evicted_token_indices.push_back(i);

    if (first == 0) {
        cache.evict_fifo(evict_frames);
    } else {
        cache.erase({first, last});
    }

    if (kind == PolicyKind::rollingforcing_sink) {
        // Re-embedding every cached key at contiguous window positions is, in
        // relative terms, the sink moved to sit right before the tail.
        CachePolicyConfig sink_cfg = cfg;
        sink_cfg.sink_frames = sink_frames;
        sink_cfg.sink_alignment = SinkAlignment::adjacent;
        rep.delta_sink = deep_sink_realign(cache, sink_cfg, freqs);
    }
    rep.post_size = cache.size();
    return rep;
}

/// Dispatches the configured policy for one layer cache.
inline CompressionReport policy_step(LayerCache& cache, const Matrix<float>& recent_queries,
                                     const Matrix<float>& denoising_queries, const CachePolicyConfig& cfg,
                                     const RopeFrequencies& freqs, std::uint64_t seed,
                                     int timestep = kFirstTimestep) {
    if (cfg.policy == PolicyKind::deep_forcing) {
        return participative_compress(cache, recent_queries, denoising_queries, cfg, freqs, timestep);
    }
    return baseline_step(cache, cfg, freqs, seed, timestep);
}

}  // namespace sinkcache
