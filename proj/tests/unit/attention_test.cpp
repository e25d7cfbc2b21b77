// Copyright 2026 The sinkcache Authors
// SPDX-License-Identifier: Apache-2.0

#include <sstream>

#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace sinkcache;
using namespace testutil;

TEST(Attend, SingleKeyReturnsItsValue) {
    std::mt19937_64 rng(1);
    auto q = random_matrix(3, 8, rng), k = random_matrix(1, 8, rng), v = random_matrix(1, 5, rng);
    auto out = attend(q, k, v, 0.7);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(out(i, c), v(0, c), 1e-6);
    }
}

TEST(Attend, EqualLogitsAverageValues) {
    Matrix<float> q(1, 2, {1, 0});
    Matrix<float> k(2, 2, {0, 1, 0, -1});
    Matrix<float> v(2, 3, {1, 2, 3, 3, 4, 5});
    auto out = attend(q, k, v, 1.0);
    EXPECT_NEAR(out(0, 0), 2.0, 1e-6);
    EXPECT_NEAR(out(0, 1), 3.0, 1e-6);
    EXPECT_NEAR(out(0, 2), 4.0, 1e-6);
}

TEST(Attend, MatchesNaiveDoubleLoop) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        auto q = random_matrix(8, 16, rng), k = random_matrix(8, 16, rng), v = random_matrix(8, 16, rng);
        const double s = 0.25;
        auto out = attend(q, k, v, s);
        for (std::size_t i = 0; i < 8; ++i) {
            std::vector<double> w(8);
            double z = 0;
            for (std::size_t j = 0; j < 8; ++j) {
                double l = 0;
                for (std::size_t c = 0; c < 16; ++c) l += double(q(i, c)) * k(j, c);
                w[j] = std::exp(s * l);
                z += w[j];
            }
            for (std::size_t c = 0; c < 16; ++c) {
                double ref = 0;
                for (std::size_t j = 0; j < 8; ++j) ref += w[j] / z * v(j, c);
                EXPECT_NEAR(out(i, c), ref, 1e-5);
            }
        }
    }
}

TEST(Attend, Errors) {
    Matrix<float> q(1, 2), k(1, 3), v(1, 3), k2(2, 2), e(0, 2);
    EXPECT_THROW((void)attend(q, k, v, 1.0), std::invalid_argument);
    EXPECT_THROW((void)attend(q, k2, v, 1.0), std::invalid_argument);
    EXPECT_THROW((void)attend(q, e, Matrix<float>(0, 2), 1.0), std::invalid_argument);
    EXPECT_THROW((void)attend(q, k2, Matrix<float>(2, 2), 0.0), std::invalid_argument);
}

TEST(FrameProfile, UniformLogitsSplitEvenly) {
    LayerCache c(2, 1, 4);
    Matrix<float> k(8, 4), v(8, 4);
    c.append_chunk(k, v, frame_positions(0, 4, 2));
    Matrix<float> q(3, 4, std::vector<float>(12, 1.0f));
    auto prof = frame_attention_profile(q, c, 0);
    ASSERT_EQ(prof.per_frame_weight.size(), 4u);
    for (const auto& [fr, w] : prof.per_frame_weight) EXPECT_NEAR(w, 0.25, 1e-12);
    EXPECT_NEAR(prof.total(), 1.0, 1e-12);
}

TEST(FrameProfile, DominantKeySaturates) {
    LayerCache c(1, 1, 2);
    // Scale 1/sqrt(2); key 2 has a logit gap of 20 after scaling.
    const float big = static_cast<float>(20.0 * std::sqrt(2.0));
    Matrix<float> k(3, 2, {0, 0, 0, 0, big, 0}), v(3, 2);
    c.append_chunk(k, v, frame_positions(0, 3, 1));
    Matrix<float> q(1, 2, {1, 0});
    auto prof = frame_attention_profile(q, c, 0);
    EXPECT_GT(prof.per_frame_weight.at(2), 0.99);
}

TEST(FrameProfile, RandomProfilesSumToOneAndGroupByEffectiveFrame) {
    std::mt19937_64 rng(3);
    auto f = build_frequencies(16);
    auto c = random_cache(6, 3, 2, 16, f, rng);
    c.mutable_token(0).effective_frame = 1;
    c.mutable_token(1).effective_frame = 1;
    c.mutable_token(2).effective_frame = 1;
    auto q = random_matrix(5, 32, rng);
    for (std::size_t h = 0; h < 2; ++h) {
        auto prof = frame_attention_profile(q, c, h);
        EXPECT_NEAR(prof.total(), 1.0, 1e-6);
        EXPECT_EQ(prof.per_frame_weight.size(), 5u);
        for (const auto& [_, w] : prof.per_frame_weight) EXPECT_GE(w, 0.0);
    }
    EXPECT_THROW((void)frame_attention_profile(q, c, 2), std::out_of_range);
}

TEST(FrameProfile, CsvHeader) {
    AttentionProfile p;
    p.per_frame_weight = {{3, 0.5}, {1, 0.5}};
    std::ostringstream os;
    write_profile_csv(os, p);
    EXPECT_EQ(os.str(), "frame,weight\n1,0.5\n3,0.5\n");
}

TEST(RetainedMass, Bounds) {
    std::mt19937_64 rng(4);
    auto q = random_matrix(4, 8, rng), k = random_matrix(10, 8, rng);
    std::vector<std::size_t> all(10);
    std::iota(all.begin(), all.end(), 0);
    EXPECT_NEAR(retained_mass(q, k, std::span<const std::size_t>(all), 0.35), 1.0, 1e-12);
    EXPECT_EQ(retained_mass(q, k, std::span<const std::size_t>{}, 0.35), 0.0);
    const std::vector<std::size_t> bad{10};
    EXPECT_THROW((void)retained_mass(q, k, std::span<const std::size_t>(bad), 0.35), std::out_of_range);
}

TEST(RetainedMass, UniformHalf) {
    Matrix<float> q(2, 2, {1, 0, 0, 1});
    Matrix<float> k(4, 2);
    const std::vector<std::size_t> keep{0, 3};
    EXPECT_NEAR(retained_mass(q, k, std::span<const std::size_t>(keep), 1.0), 0.5, 1e-12);
}

TEST(RetainedMass, MonotoneInRetainedSet) {
    std::mt19937_64 rng(5);
    auto q = random_matrix(3, 8, rng), k = random_matrix(16, 8, rng);
    std::vector<std::size_t> order(16);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double prev = 0.0;
    std::vector<std::size_t> kept;
    for (auto i : order) {
        kept.push_back(i);
        const double m = retained_mass(q, k, std::span<const std::size_t>(kept), 0.35);
        EXPECT_GE(m, prev - 1e-12);
        prev = m;
    }
}

TEST(RetainedMass, TopCByRawLogitIsOptimalForOneQuery) {
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<std::size_t> nd(2, 12);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = nd(rng);
        const std::size_t c = std::min<std::size_t>(n, 1 + trial % 4);
        auto q = random_matrix(1, 8, rng), k = random_matrix(n, 8, rng);
        auto phi = importance_scores(q, {}, k, QueryMode::past_only);
        const auto sel = top_c_select(phi, c);
        const double got = retained_mass(q, k, std::span<const std::size_t>(sel), 0.35);
        double best = 0.0;
        for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
            if (static_cast<std::size_t>(std::popcount(mask)) != c) continue;
            std::vector<std::size_t> s;
            for (std::size_t i = 0; i < n; ++i) {
                if (mask >> i & 1u) s.push_back(i);
            }
            best = std::max(best, retained_mass(q, k, std::span<const std::size_t>(s), 0.35));
        }
        EXPECT_NEAR(got, best, 1e-9) << "n=" << n << " c=" << c;
    }
}
