// Copyright 2026 The sinkcache Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sinkcache/cache.hpp"
#include "sinkcache/matrix.hpp"

namespace sinkcache {

[[nodiscard]] inline double default_scale(std::size_t head_dim) {
    return 1.0 / std::sqrt(static_cast<double>(head_dim));
}

/// Numerically stable softmax in place; returns the normaliser (after max shift).
template <std::floating_point T>
double softmax_inplace(std::span<T> x) {
    if (x.empty()) return 0.0;
    const T mx = *std::max_element(x.begin(), x.end());
    double z = 0.0;
    for (auto& v : x) {
        v = static_cast<T>(std::exp(static_cast<double>(v - mx)));
        z += v;
    }
    for (auto& v : x) v = static_cast<T>(v / z);
    return z;
}

/// softmax(q k^T * scale) v for a single head. Each row of q attends to every row of k.
template <std::floating_point T>
[[nodiscard]] Matrix<T> attend(const Matrix<T>& queries, const Matrix<T>& keys, const Matrix<T>& values, double scale) {
    if (queries.cols() != keys.cols()) throw std::invalid_argument("attend: query/key width mismatch");
    if (keys.rows() != values.rows()) throw std::invalid_argument("attend: key/value count mismatch");
    if (!(scale > 0.0)) throw std::invalid_argument("attend: scale must be positive");
    if (keys.rows() == 0) throw std::invalid_argument("attend: empty key set");
    Matrix<T> out(queries.rows(), values.cols());
    std::vector<double> w(keys.rows());
    for (std::size_t i = 0; i < queries.rows(); ++i) {
        for (std::size_t j = 0; j < keys.rows(); ++j) w[j] = scale * dot<T>(queries.row(i), keys.row(j));
        softmax_inplace(std::span<double>(w));
        auto o = out.row(i);
        for (std::size_t j = 0; j < keys.rows(); ++j) {
            auto v = values.row(j);
            for (std::size_t c = 0; c < v.size(); ++c) o[c] = static_cast<T>(o[c] + w[j] * v[c]);
        }
    }
    return out;
}

struct AttentionProfile {
    std::map<std::int64_t, double> per_frame_weight;  // effective frame -> mean softmax mass
    std::size_t layer = 0;
    std::size_t head = 0;

    [[nodiscard]] double total() const {
        double s = 0.0;
        for (const auto& [_, w] : per_frame_weight) s += w;
        return s;
    }
};

/// Query-averaged softmax mass received by each effective frame of the cache for
/// one head. `query_chunk` rows use the cache's column layout (heads back to back).
[[nodiscard]] inline AttentionProfile frame_attention_profile(const Matrix<float>& query_chunk, const LayerCache& cache,
                                                              std::size_t head, double scale = 0.0) {
    if (cache.empty()) throw std::invalid_argument("frame_attention_profile: empty cache");
    if (head >= cache.num_heads()) throw std::out_of_range("frame_attention_profile: head out of range");
    if (query_chunk.cols() != cache.row_width()) throw std::invalid_argument("frame_attention_profile: width mismatch");
    if (query_chunk.rows() == 0) throw std::invalid_argument("frame_attention_profile: empty query chunk");
    const std::size_t d = cache.head_dim();
    const double s = scale > 0.0 ? scale : default_scale(d);
    std::vector<double> mass(cache.size(), 0.0);
    std::vector<double> w(cache.size());
    for (std::size_t i = 0; i < query_chunk.rows(); ++i) {
        auto q = query_chunk.row(i).subspan(head * d, d);
        for (std::size_t j = 0; j < cache.size(); ++j) {
            w[j] = s * dot<float>(q, std::span<const float>(cache[j].key).subspan(head * d, d));
        }
        softmax_inplace(std::span<double>(w));
        for (std::size_t j = 0; j < w.size(); ++j) mass[j] += w[j];
    }
    AttentionProfile prof;
    prof.head = head;
    const double inv = 1.0 / static_cast<double>(query_chunk.rows());
    for (std::size_t j = 0; j < cache.size(); ++j) prof.per_frame_weight[cache[j].effective_frame] += mass[j] * inv;
    return prof;
}

/// CSV with header `frame,weight`, one row per frame in ascending order.
inline void write_profile_csv(std::ostream& os, const AttentionProfile& prof) {
    os << "frame,weight\n";
    os.precision(17);
    for (const auto& [frame, weight] : prof.per_frame_weight) os << frame << ',' << weight << '\n';
}

/// Mean over queries of the softmax mass (normalised over all of `full_keys`)
/// that falls on `retained` rows.
template <std::floating_point T>
[[nodiscard]] double retained_mass(const Matrix<T>& queries, const Matrix<T>& full_keys,
                                   std::span<const std::size_t> retained, double scale) {
    if (queries.cols() != full_keys.cols()) throw std::invalid_argument("retained_mass: width mismatch");
    if (queries.rows() == 0 || full_keys.rows() == 0) return 0.0;
    using Rows = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Col = Eigen::Array<T, Eigen::Dynamic, 1>;
    Col keep = Col::Zero(static_cast<Eigen::Index>(full_keys.rows()));
    for (auto i : retained) {
        if (i >= full_keys.rows()) {
            throw std::out_of_range("retained_mass: index " + std::to_string(i) + " outside " +
                                    std::to_string(full_keys.rows()) + " keys");
        }
        keep[static_cast<Eigen::Index>(i)] = T(1);
    }
    const Eigen::Map<const Rows> q(queries.flat().data(), static_cast<Eigen::Index>(queries.rows()),
                                   static_cast<Eigen::Index>(queries.cols()));
    const Eigen::Index nq = q.rows();
    // Streams over key blocks with a running max, one GEMM per block.
    constexpr Eigen::Index kBlock = 1024;
    std::vector<double> mx(static_cast<std::size_t>(nq), -INFINITY), z(mx.size(), 0.0), kept(mx.size(), 0.0);
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> logits;
    Col e;
    const auto n = static_cast<Eigen::Index>(full_keys.rows());
    for (Eigen::Index start = 0; start < n; start += kBlock) {
        const Eigen::Index len = std::min(kBlock, n - start);
        const Eigen::Map<const Rows> k(full_keys.row(static_cast<std::size_t>(start)).data(), len,
                                       static_cast<Eigen::Index>(full_keys.cols()));
        logits.noalias() = (k * q.transpose()) * static_cast<T>(scale);
        const auto mask = keep.segment(start, len);
        for (Eigen::Index c = 0; c < nq; ++c) {
            auto& m = mx[static_cast<std::size_t>(c)];
            const double bm = static_cast<double>(logits.col(c).maxCoeff());
            if (bm > m) {
                const double r = std::exp(m - bm);
                z[static_cast<std::size_t>(c)] *= r;
                kept[static_cast<std::size_t>(c)] *= r;
                m = bm;
            }
            e = (logits.col(c).array() - static_cast<T>(m)).exp();
            z[static_cast<std::size_t>(c)] += static_cast<double>(e.sum());
            kept[static_cast<std::size_t>(c)] += static_cast<double>((e * mask).sum());
        }
    }
    double acc = 0.0;
    for (std::size_t c = 0; c < mx.size(); ++c) acc += kept[c] / z[c];
    return acc / static_cast<double>(queries.rows());
}

}  // namespace sinkcache
