// Copyright 2026 The sinkcache Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "sinkcache/sinkcache.hpp"

namespace testutil {

using namespace sinkcache;

inline Matrix<float> random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::normal_distribution<float> n(0.f, 1.f);
    Matrix<float> m(rows, cols);
    for (auto& x : m.flat()) x = n(rng);
    return m;
}

/// Positions for `frames` frames starting at `first_frame`, F tokens each on a 1 x F grid.
inline std::vector<TokenPosition> frame_positions(std::int64_t first_frame, std::size_t frames, std::size_t f) {
    std::vector<TokenPosition> p;
    for (std::size_t fr = 0; fr < frames; ++fr) {
        for (std::size_t t = 0; t < f; ++t) p.push_back({first_frame + static_cast<std::int64_t>(fr), 0, static_cast<std::int64_t>(t)});
    }
    return p;
}

/// Cache filled with `frames` frames of post-RoPE random keys and random values.
inline LayerCache random_cache(std::size_t frames, std::size_t f, std::size_t heads, std::size_t d,
                               const RopeFrequencies& freqs, std::mt19937_64& rng, std::int64_t first_frame = 0) {
    LayerCache cache(f, heads, d);
    auto pos = frame_positions(first_frame, frames, f);
    auto keys = random_matrix(pos.size(), heads * d, rng);
    auto values = random_matrix(pos.size(), heads * d, rng);
    for (std::size_t i = 0; i < pos.size(); ++i) apply_rope_heads(keys.row(i), pos[i], freqs);
    cache.append_chunk(keys, values, pos);
    return cache;
}

/// Exhaustive reference: stable sort by descending score, take c, sort by position.
inline std::vector<std::size_t> stable_sort_topc(const std::vector<double>& s, std::size_t c) {
    std::vector<std::size_t> idx(s.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    idx.resize(std::min(c, idx.size()));
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Effective frames are non-decreasing and never skip a frame.
inline bool timeline_ok(const LayerCache& cache) {
    for (std::size_t i = 1; i < cache.size(); ++i) {
        const auto step = cache[i].effective_frame - cache[i - 1].effective_frame;
        if (step < 0 || step > 1) return false;
    }
    return true;
}

inline double max_rel_err(std::span<const float> a, std::span<const float> b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num = std::max(num, std::abs(double(a[i]) - double(b[i])));
        den = std::max(den, std::abs(double(b[i])));
    }
    return den > 0 ? num / den : num;
}

}  // namespace testutil
