// Copyright 2026 The sinkcache Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Three-axis rotary position embedding (time, height, width).
//
// A head vector of width d is split into three contiguous blocks
// [temporal | height | width] of widths (d_t, d_h, d_w). Inside each block,
// adjacent elements (2i, 2i+1) form a pair that is rotated by
// pos_axis * freq_axis[i]. Pairs are interleaved, not half-split.
//
// Keys are stored post-rotation. Moving a stored key to a different temporal
// index is a second rotation of the temporal block only, which is exact
// because planar rotations compose additively.

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sinkcache {

struct DimSplit {
    std::size_t temporal = 0;
    std::size_t height = 0;
    std::size_t width = 0;

    [[nodiscard]] constexpr std::size_t total() const noexcept { return temporal + height + width; }
    bool operator==(const DimSplit&) const = default;
};

struct TokenPosition {
    std::int64_t frame = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;

    bool operator==(const TokenPosition&) const = default;
};

struct RopeFrequencies {
    std::vector<double> temporal;
    std::vector<double> height;
    std::vector<double> width;
    DimSplit split;
    double base = 10000.0;

    [[nodiscard]] std::size_t head_dim() const noexcept { return split.total(); }
};

/// Spatial axes get the largest even width <= d/3 each; time takes the rest.
[[nodiscard]] inline DimSplit default_split(std::size_t head_dim) {
    if (head_dim % 2 != 0) throw std::invalid_argument("default_split: head_dim must be even");
    std::size_t spatial = head_dim / 3;
    spatial -= spatial % 2;
    return {head_dim - 2 * spatial, spatial, spatial};
}

namespace detail {

inline std::vector<double> axis_frequencies(std::size_t width, double base) {
    std::vector<double> freqs(width / 2);
    for (std::size_t i = 0; i < freqs.size(); ++i) {
        freqs[i] = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(width));
    }
    return freqs;
}

template <std::floating_point T>
void rotate_pairs(std::span<T> block, std::span<const double> freqs, double position) {
    for (std::size_t i = 0; i < freqs.size(); ++i) {
        const double angle = position * freqs[i];
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        const double x = block[2 * i];
        const double y = block[2 * i + 1];
        block[2 * i] = static_cast<T>(x * c - y * s);
        block[2 * i + 1] = static_cast<T>(x * s + y * c);
    }
}

}  // namespace detail

[[nodiscard]] inline RopeFrequencies build_frequencies(std::size_t head_dim, DimSplit split,
                                                       double base = 10000.0) {
    if (split.temporal % 2 || split.height % 2 || split.width % 2) {
        throw std::invalid_argument("build_frequencies: every axis width must be even");
    }
    if (split.total() != head_dim) {
        throw std::invalid_argument("build_frequencies: split sums to " + std::to_string(split.total()) +
                                    " but head_dim is " + std::to_string(head_dim));
    }
    if (!(base > 0.0) || !std::isfinite(base)) {
        throw std::invalid_argument("build_frequencies: base must be positive and finite");
    }
    return RopeFrequencies{detail::axis_frequencies(split.temporal, base),
                           detail::axis_frequencies(split.height, base),
                           detail::axis_frequencies(split.width, base), split, base};
}

[[nodiscard]] inline RopeFrequencies build_frequencies(std::size_t head_dim, double base = 10000.0) {
    return build_frequencies(head_dim, default_split(head_dim), base);
}

/// Rotates one head vector in place to position `pos`.
template <std::floating_point T>
void apply_rope_inplace(std::span<T> vec, const TokenPosition& pos, const RopeFrequencies& freqs) {
    if (vec.size() != freqs.head_dim()) {
        throw std::invalid_argument("apply_rope: vector length " + std::to_string(vec.size()) +
                                    " != head_dim " + std::to_string(freqs.head_dim()));
    }
    const auto& s = freqs.split;
    detail::rotate_pairs(vec.subspan(0, s.temporal), std::span<const double>(freqs.temporal),
                         static_cast<double>(pos.frame));
    detail::rotate_pairs(vec.subspan(s.temporal, s.height), std::span<const double>(freqs.height),
                         static_cast<double>(pos.h));
    detail::rotate_pairs(vec.subspan(s.temporal + s.height, s.width), std::span<const double>(freqs.width),
                         static_cast<double>(pos.w));
}

template <std::floating_point T>
[[nodiscard]] std::vector<T> apply_rope(std::span<const T> vec, const TokenPosition& pos,
                                        const RopeFrequencies& freqs) {
    std::vector<T> out(vec.begin(), vec.end());
    apply_rope_inplace(std::span<T>(out), pos, freqs);
    return out;
}

/// Applies the rotation to every head of a multi-head row (heads laid out back to back).
template <std::floating_point T>
void apply_rope_heads(std::span<T> row, const TokenPosition& pos, const RopeFrequencies& freqs) {
    const std::size_t d = freqs.head_dim();
    if (d == 0 || row.size() % d != 0) throw std::invalid_argument("apply_rope_heads: row not a multiple of head_dim");
    for (std::size_t off = 0; off < row.size(); off += d) apply_rope_inplace(row.subspan(off, d), pos, freqs);
}

/// Cached (cos, sin) tables for a bounded spatial grid; temporal tables are built
/// per frame on request. Produces the same rotation as apply_rope_inplace.
class RopeTable {
public:
    RopeTable(const RopeFrequencies& freqs, std::int64_t grid_h, std::int64_t grid_w) : freqs_(&freqs) {
        height_ = axis_table(freqs.height, grid_h);
        width_ = axis_table(freqs.width, grid_w);
    }

    /// Rotates every head of `row` to `pos`; `temporal` must come from temporal_table(pos.frame).
    template <std::floating_point T>
    void apply(std::span<T> row, const TokenPosition& pos, std::span<const double> temporal) const {
        const auto& s = freqs_->split;
        const std::size_t d = s.total();
        const auto hh = std::span<const double>(height_).subspan(static_cast<std::size_t>(pos.h) * s.height, s.height);
        const auto ww = std::span<const double>(width_).subspan(static_cast<std::size_t>(pos.w) * s.width, s.width);
        for (std::size_t off = 0; off < row.size(); off += d) {
            rotate(row.subspan(off, s.temporal), temporal);
            rotate(row.subspan(off + s.temporal, s.height), hh);
            rotate(row.subspan(off + s.temporal + s.height, s.width), ww);
        }
    }

    /// Interleaved (cos, sin) per temporal pair at `frame`.
    [[nodiscard]] std::vector<double> temporal_table(std::int64_t frame) const {
        return axis_table(freqs_->temporal, 1, frame);
    }

private:
    static std::vector<double> axis_table(const std::vector<double>& f, std::int64_t count, std::int64_t first = 0) {
        std::vector<double> t;
        t.reserve(static_cast<std::size_t>(count) * f.size() * 2);
        for (std::int64_t p = first; p < first + count; ++p) {
            for (double w : f) {
                t.push_back(std::cos(static_cast<double>(p) * w));
                t.push_back(std::sin(static_cast<double>(p) * w));
            }
        }
        return t;
    }

    template <std::floating_point T>
    static void rotate(std::span<T> block, std::span<const double> cs) {
        for (std::size_t i = 0; i + 1 < block.size(); i += 2) {
            const double x = block[i];
            const double y = block[i + 1];
            block[i] = static_cast<T>(x * cs[i] - y * cs[i + 1]);
            block[i + 1] = static_cast<T>(x * cs[i + 1] + y * cs[i]);
        }
    }

    const RopeFrequencies* freqs_;
    std::vector<double> height_;
    std::vector<double> width_;
};

/// Precomputed (cos, sin) for one temporal shift, reusable across many keys.
class TemporalRotation {
public:
    TemporalRotation(std::int64_t delta, const RopeFrequencies& freqs)
        : delta_(delta), head_dim_(freqs.head_dim()), cos_(freqs.temporal.size()), sin_(freqs.temporal.size()) {
        for (std::size_t i = 0; i < freqs.temporal.size(); ++i) {
            const double angle = static_cast<double>(delta) * freqs.temporal[i];
            cos_[i] = std::cos(angle);
            sin_[i] = std::sin(angle);
        }
    }

    [[nodiscard]] std::int64_t delta() const noexcept { return delta_; }

    /// Rotates the temporal block of every head in `row`; spatial blocks are not touched.
    template <std::floating_point T>
    void apply(std::span<T> row) const {
        if (delta_ == 0) return;
        if (row.size() % head_dim_ != 0) throw std::invalid_argument("rotate_temporal: row not a multiple of head_dim");
        for (std::size_t off = 0; off < row.size(); off += head_dim_) {
            for (std::size_t i = 0; i < cos_.size(); ++i) {
                const double x = row[off + 2 * i];
                const double y = row[off + 2 * i + 1];
                row[off + 2 * i] = static_cast<T>(x * cos_[i] - y * sin_[i]);
                row[off + 2 * i + 1] = static_cast<T>(x * sin_[i] + y * cos_[i]);
            }
        }
    }

private:
    std::int64_t delta_;
    std::size_t head_dim_;
    std::vector<double> cos_;
    std::vector<double> sin_;
};

/// Shifts the temporal phase of one (multi-head) key row by `delta` frames.
template <std::floating_point T>
void rotate_temporal(std::span<T> row, std::int64_t delta, const RopeFrequencies& freqs) {
    TemporalRotation(delta, freqs).apply(row);
}

/// Block form: every row of `keys` is shifted by the same `delta`.
template <class Rows>
void rotate_temporal_block(Rows& keys, std::int64_t delta, const RopeFrequencies& freqs) {
    if (delta == 0) return;
    const TemporalRotation rot(delta, freqs);
    for (std::size_t r = 0; r < keys.rows(); ++r) rot.apply(keys.row(r));
}

}  // namespace sinkcache
