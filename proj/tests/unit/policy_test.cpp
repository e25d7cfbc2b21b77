// Copyright 2026 The sinkcache Authors
// SPDX-License-Identifier: Apache-2.0

#include <set>

#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace sinkcache;
using namespace testutil;

namespace {

CachePolicyConfig small_cfg(std::size_t f = 2) {
    CachePolicyConfig cfg;
    cfg.tokens_per_frame = f;
    return cfg;  // S/N/R/M = 10/16/4/21
}

Matrix<float> rows(std::initializer_list<std::initializer_list<float>> r) {
    Matrix<float> m(0, r.begin()->size());
    for (const auto& row : r) m.append_row(std::vector<float>(row));
    return m;
}

}  // namespace

TEST(DeltaSink, Arithmetic) {
    EXPECT_EQ(compute_delta_sink(50, 9), 41);
    EXPECT_EQ(compute_delta_sink(10, 9), 1);
    EXPECT_EQ(compute_delta_sink(9, 9), 0);
    EXPECT_THROW((void)compute_delta_sink(8, 9), std::invalid_argument);
}

TEST(DeepSinkRealign, ZeroPendingIsNoOp) {
    std::mt19937_64 rng(1);
    auto f = build_frequencies(16);
    auto cache = random_cache(12, 2, 1, 16, f, rng);
    auto cfg = small_cfg();
    // Literal mode: pending delta is tail(10) - sink_last(9) = 1. Adjacent mode: 0.
    cfg.sink_alignment = SinkAlignment::adjacent;
    const auto before = cache.tokens();
    EXPECT_EQ(deep_sink_realign(cache, cfg, f), 0);
    for (std::size_t i = 0; i < cache.size(); ++i) EXPECT_EQ(cache[i].key, before[i].key);
}

TEST(DeepSinkRealign, ShiftsSinkOntoTail) {
    std::mt19937_64 rng(2);
    auto f = build_frequencies(16);
    auto cfg = small_cfg();
    // Sink frames 0..9 followed by frames 50..53.
    LayerCache cache(2, 1, 16);
    auto sink = random_cache(10, 2, 1, 16, f, rng);
    auto tail = random_cache(4, 2, 1, 16, f, rng, 50);
    auto toks = sink.tokens();
    for (std::size_t i = 0; i < tail.size(); ++i) {
        auto t = tail[i];
        t.id += 1000;
        toks.push_back(t);
    }
    cache.replace_tokens(toks);
    const auto before = cache.tokens();

    EXPECT_EQ(deep_sink_realign(cache, cfg, f), 41);
    EXPECT_EQ(cache[19].effective_frame, 50);
    EXPECT_EQ(cache[0].effective_frame, 41);
    for (std::size_t i = 0; i < cache.size(); ++i) {
        EXPECT_EQ(cache[i].value, before[i].value);
        // Spatial blocks untouched everywhere, tail keys untouched entirely.
        for (std::size_t c = f.split.temporal; c < 16; ++c) EXPECT_EQ(cache[i].key[c], before[i].key[c]);
        if (i >= 20) { EXPECT_EQ(cache[i].key, before[i].key); }
    }
    // Same keys as embedding the raw sink directly at frame + 41.
    for (std::size_t i = 0; i < 20; ++i) {
        auto expect = before[i].key;
        rotate_temporal(std::span<float>(expect), 41, f);
        EXPECT_LT(max_rel_err(cache[i].key, expect), 1e-6);
    }
}

TEST(DeepSinkRealign, Idempotent) {
    std::mt19937_64 rng(3);
    auto f = build_frequencies(16);
    auto cfg = small_cfg();
    auto cache = random_cache(15, 2, 1, 16, f, rng);
    cache.erase({20, 26});  // tail now starts at frame 13
    (void)deep_sink_realign(cache, cfg, f);
    const auto once = cache.tokens();
    EXPECT_EQ(deep_sink_realign(cache, cfg, f), 0);
    for (std::size_t i = 0; i < cache.size(); ++i) EXPECT_EQ(cache[i].key, once[i].key);
}

TEST(DeepSinkRealign, AdjacentModeStopsOneShort) {
    std::mt19937_64 rng(4);
    auto f = build_frequencies(16);
    auto cfg = small_cfg();
    cfg.sink_alignment = SinkAlignment::adjacent;
    auto cache = random_cache(15, 2, 1, 16, f, rng);
    cache.erase({20, 26});
    EXPECT_EQ(deep_sink_realign(cache, cfg, f), 3);
    EXPECT_EQ(cache[19].effective_frame + 1, cache[20].effective_frame);
}

TEST(ImportanceScores, OrthonormalDotProducts) {
    auto q = rows({{1, 0}});
    auto k = rows({{1, 0}, {0, 1}, {-1, 0}});
    auto phi = importance_scores(q, Matrix<float>(0, 2), k, QueryMode::past_only);
    EXPECT_EQ(phi.scores, (std::vector<double>{1, 0, -1}));
    EXPECT_EQ(phi.candidate_index_map, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(ImportanceScores, DuplicateQueriesDouble) {
    std::mt19937_64 rng(5);
    auto k = random_matrix(20, 8, rng);
    auto q = random_matrix(1, 8, rng);
    auto qq = q;
    qq.append_row(q.row(0));
    auto one = importance_scores(q, {}, k, QueryMode::past_only);
    auto two = importance_scores(qq, {}, k, QueryMode::past_only);
    for (std::size_t j = 0; j < 20; ++j) EXPECT_NEAR(two.scores[j], 2 * one.scores[j], 1e-9);
    EXPECT_EQ(top_c_select(one, 5), top_c_select(two, 5));
}

TEST(ImportanceScores, BothIsSumOfParts) {
    std::mt19937_64 rng(6);
    auto k = random_matrix(30, 16, rng);
    auto past = random_matrix(5, 16, rng);
    auto noisy = random_matrix(7, 16, rng);
    auto a = importance_scores(past, noisy, k, QueryMode::past_only);
    auto b = importance_scores(past, noisy, k, QueryMode::denoising_only);
    auto both = importance_scores(past, noisy, k, QueryMode::both);
    for (std::size_t j = 0; j < 30; ++j) EXPECT_NEAR(both.scores[j], a.scores[j] + b.scores[j], 1e-9);
}

TEST(ImportanceScores, MatchesPerQueryLoop) {
    std::mt19937_64 rng(7);
    auto k = random_matrix(40, 12, rng);
    auto q = random_matrix(9, 12, rng);
    auto phi = importance_scores(q, {}, k, {10, 30}, QueryMode::past_only);
    ASSERT_EQ(phi.size(), 20u);
    for (std::size_t j = 0; j < 20; ++j) {
        double ref = 0;
        for (std::size_t r = 0; r < 9; ++r) ref += dot<float>(q.row(r), k.row(10 + j));
        EXPECT_NEAR(phi.scores[j], ref, 1e-4);
        EXPECT_EQ(phi.candidate_index_map[j], 10 + j);
    }
}

TEST(ImportanceScores, SoftmaxModeIsNormalisedMass) {
    std::mt19937_64 rng(8);
    auto k = random_matrix(10, 4, rng);
    auto q = random_matrix(3, 4, rng);
    auto phi = importance_scores(q, {}, k, {0, 10}, QueryMode::past_only, ScoreMode::softmax);
    double total = 0;
    for (double s : phi.scores) total += s;
    EXPECT_NEAR(total, 3.0, 1e-9);  // one unit of mass per query
}

TEST(ImportanceScores, Errors) {
    auto k = rows({{1, 0}});
    EXPECT_THROW((void)importance_scores(Matrix<float>(0, 2), Matrix<float>(0, 2), k, QueryMode::both),
                 std::invalid_argument);
    EXPECT_THROW((void)importance_scores(rows({{1, 0, 0}}), {}, k, QueryMode::past_only), std::invalid_argument);
    // Denoising-only mode ignores past queries even if present.
    EXPECT_THROW((void)importance_scores(rows({{1, 0}}), Matrix<float>(0, 2), k, QueryMode::denoising_only),
                 std::invalid_argument);
}

TEST(TopC, SpecExamples) {
    ImportanceVector phi{{0.1, 0.9, 0.5}, {0, 1, 2}};
    EXPECT_EQ(top_c_select(phi, 2), (std::vector<std::size_t>{1, 2}));
    EXPECT_EQ(top_c_select(phi, 3), (std::vector<std::size_t>{0, 1, 2}));
    EXPECT_EQ(top_c_select(phi, 10), (std::vector<std::size_t>{0, 1, 2}));
    EXPECT_TRUE(top_c_select(phi, 0).empty());
    ImportanceVector tie{{0.5, 0.5}, {0, 1}};
    EXPECT_EQ(top_c_select(tie, 1), (std::vector<std::size_t>{0}));
}

TEST(TopC, MapsThroughCandidateIndices) {
    ImportanceVector phi{{3, 1, 2}, {40, 41, 42}};
    EXPECT_EQ(top_c_select(phi, 2), (std::vector<std::size_t>{40, 42}));
}

TEST(TopC, MatchesStableSortOracleWithTies) {
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<int> len(0, 200), levels(1, 6);
    for (int trial = 0; trial < 300; ++trial) {
        const auto n = static_cast<std::size_t>(len(rng));
        std::uniform_int_distribution<int> val(0, levels(rng));  // few levels => many ties
        std::vector<double> s(n);
        for (auto& x : s) x = val(rng);
        std::uniform_int_distribution<std::size_t> cd(0, n + 2);
        const std::size_t c = cd(rng);
        EXPECT_EQ(top_c_positions(s, c), stable_sort_topc(s, c));
    }
}

TEST(TopC, ScaleEquivariantSelection) {
    std::mt19937_64 rng(10);
    auto k = random_matrix(64, 16, rng);
    auto q = random_matrix(4, 16, rng);
    auto q3 = q;
    for (auto& x : q3.flat()) x *= 3.0f;
    auto a = importance_scores(q, {}, k, QueryMode::past_only);
    auto b = importance_scores(q3, {}, k, QueryMode::past_only);
    EXPECT_EQ(top_c_select(a, 10), top_c_select(b, 10));
}

TEST(UnifyTopc, AlreadyContiguousHasZeroDeltas) {
    std::mt19937_64 rng(11);
    auto f = build_frequencies(16);
    auto cfg = small_cfg();
    auto cache = random_cache(14, 2, 1, 16, f, rng);
    const std::vector<std::size_t> sel{20, 21, 22};  // frames 10, 10, 11 right after the sink
    EXPECT_EQ(unify_topc_rope(cache, sel, f, cfg), (std::vector<std::int64_t>{0, 0, 0}));
}

TEST(UnifyTopc, CompactsDistinctFramesAfterSink) {
    std::mt19937_64 rng(12);
    auto f = build_frequencies(16);
    auto cfg = small_cfg(1);
    // Sink frames 0..10 in effective terms: use S=11 so the sink ends at 10.
    cfg.sink_frames = 11;
    cfg.budget_frames = 16;
    auto cache = random_cache(20, 1, 1, 16, f, rng);
    const std::vector<std::size_t> sel{12, 15};
    const auto before = cache.tokens();
    EXPECT_EQ(unify_topc_rope(cache, sel, f, cfg), (std::vector<std::int64_t>{-1, -3}));
    EXPECT_EQ(cache[12].effective_frame, 11);
    EXPECT_EQ(cache[15].effective_frame, 12);
    EXPECT_EQ(cache[12].value, before[12].value);
    auto expect = before[15].key;
    rotate_temporal(std::span<float>(expect), -3, f);
    EXPECT_LT(max_rel_err(cache[15].key, expect), 1e-6);
}

TEST(UnifyTopc, RandomSelectionsGiveContiguousTimeline) {
    std::mt19937_64 rng(13);
    auto f = build_frequencies(16);
    for (int trial = 0; trial < 50; ++trial) {
        auto cfg = small_cfg(3);
        auto cache = random_cache(21, 3, 1, 16, f, rng);
        std::vector<std::size_t> cand(21);
        std::iota(cand.begin(), cand.end(), 30);
        std::shuffle(cand.begin(), cand.end(), rng);
        cand.resize(6);
        std::sort(cand.begin(), cand.end());
        std::vector<bool> keep(cache.size(), false);
        for (std::size_t i = 0; i < 30; ++i) keep[i] = true;
        for (auto i : cand) keep[i] = true;
        cache.keep_only(keep);
        std::vector<std::size_t> moved(6);
        std::iota(moved.begin(), moved.end(), 30);
        (void)unify_topc_rope(cache, moved, f, cfg);
        EXPECT_TRUE(timeline_ok(cache));
        EXPECT_EQ(cache[30].effective_frame, 10);
    }
}

TEST(ParticipativeCompress, FullScaleBudget) {
    auto f = build_frequencies(2, DimSplit{2, 0, 0});
    LayerCache cache(1560, 1, 2);
    const auto pos = frame_positions(0, 21, 1560);
    std::mt19937_64 rng(14);
    cache.append_chunk(random_matrix(pos.size(), 2, rng), random_matrix(pos.size(), 2, rng), pos);
    auto q = random_matrix(8, 2, rng);
    auto rep = participative_compress(cache, q, q, CachePolicyConfig{}, f);
    EXPECT_EQ(rep.pre_size, 32760u);
    EXPECT_EQ(rep.post_size, 24960u);
    EXPECT_EQ(cache.size(), 24960u);
    EXPECT_EQ(cache.frame_count(), 16u);
    EXPECT_EQ(rep.selected_token_indices.size(), 3120u);
    EXPECT_EQ(rep.selected_token_indices.size() + rep.evicted_token_indices.size(), rep.candidate_count);
}

TEST(ParticipativeCompress, NoTopCBudgetKeepsSinkAndRecent) {
    std::mt19937_64 rng(15);
    auto f = build_frequencies(16);
    auto cfg = small_cfg();
    cfg.budget_frames = 14;  // N = S + R
    auto cache = random_cache(21, 2, 1, 16, f, rng);
    auto q = random_matrix(4, 16, rng);
    auto rep = participative_compress(cache, q, q, cfg, f);
    EXPECT_TRUE(rep.selected_token_indices.empty());
    EXPECT_EQ(rep.evicted_token_indices.size(), 14u);
    EXPECT_EQ(cache.size(), 28u);
    EXPECT_EQ(cache[19].original_pos.frame, 9);
    EXPECT_EQ(cache[20].original_pos.frame, 17);
    EXPECT_TRUE(timeline_ok(cache));
}

TEST(ParticipativeCompress, EmptyCandidatesOnlyRealigns) {
    std::mt19937_64 rng(16);
    auto f = build_frequencies(16);
    auto cfg = small_cfg();
    cfg.max_window_frames = 14;
    cfg.budget_frames = 14;
    auto cache = random_cache(14, 2, 1, 16, f, rng);
    const auto before = cache.tokens();
    auto q = random_matrix(4, 16, rng);
    auto rep = participative_compress(cache, q, q, cfg, f);
    EXPECT_EQ(rep.candidate_count, 0u);
    EXPECT_EQ(cache.size(), before.size());
    EXPECT_EQ(rep.delta_sink, 1);  // literal: last sink frame 9 lands on tail frame 10
    for (std::size_t i = 20; i < cache.size(); ++i) EXPECT_EQ(cache[i].key, before[i].key);
}

TEST(ParticipativeCompress, TriggerDiscipline) {
    std::mt19937_64 rng(17);
    auto f = build_frequencies(16);
    auto cfg = small_cfg();
    auto q = random_matrix(4, 16, rng);
    auto short_cache = random_cache(20, 2, 1, 16, f, rng);
    EXPECT_THROW((void)participative_compress(short_cache, q, q, cfg, f), std::logic_error);
    auto full = random_cache(21, 2, 1, 16, f, rng);
    EXPECT_THROW((void)participative_compress(full, q, q, cfg, f, 750), std::logic_error);
    EXPECT_EQ(full.size(), 42u);
}

TEST(ParticipativeCompress, KeepsHighestScoringCandidates) {
    std::mt19937_64 rng(18);
    auto f = build_frequencies(16);
    auto cfg = small_cfg();
    auto cache = random_cache(21, 2, 1, 16, f, rng);
    auto q = random_matrix(3, 16, rng);
    const auto part = partition(cache, cfg);
    auto phi = importance_scores(q, q, cache.keys(), part.candidates, QueryMode::both);
    const auto expect = top_c_select(phi, cfg.topc_tokens());
    std::vector<std::uint64_t> expect_ids;
    for (auto i : expect) expect_ids.push_back(cache[i].id);
    auto rep = participative_compress(cache, q, q, cfg, f);
    EXPECT_EQ(rep.selected_token_indices, expect);
    for (std::size_t n = 0; n < expect_ids.size(); ++n) EXPECT_EQ(cache[20 + n].id, expect_ids[n]);
}

TEST(ParticipativeCompress, RepeatedCompressionsKeepInvariants) {
    std::mt19937_64 rng(19);
    auto f = build_frequencies(16);
    auto cfg = small_cfg();
    auto cache = random_cache(21, 2, 1, 16, f, rng);
    std::map<std::uint64_t, std::vector<float>> values;
    for (const auto& t : cache.tokens()) values[t.id] = t.value;
    std::int64_t next = 21;
    std::uint64_t next_id = 42;
    for (int round = 0; round < 30; ++round) {
        auto q = random_matrix(4, 16, rng);
        const auto pre = cache.size();
        auto rep = participative_compress(cache, q, q, cfg, f);
        const auto cand = pre - 28;
        EXPECT_EQ(cache.size(), 20 + std::min<std::size_t>(cfg.topc_tokens(), cand) + 8);
        EXPECT_EQ(rep.post_size, cache.size());
        EXPECT_TRUE(timeline_ok(cache));
        for (const auto& t : cache.tokens()) EXPECT_EQ(t.value, values.at(t.id));
        while (cache.frame_count() < cfg.max_window_frames) {
            const auto pos = frame_positions(next, 3, 2);
            auto k = random_matrix(6, 16, rng);
            auto v = random_matrix(6, 16, rng);
            for (std::size_t i = 0; i < 6; ++i) apply_rope_inplace(k.row(i), pos[i], f);
            cache.append_chunk(k, v, pos, next_id);
            for (std::size_t i = 0; i < 6; ++i) values[next_id + i] = std::vector<float>(v.row(i).begin(), v.row(i).end());
            next += 3;
            next_id += 6;
        }
    }
}

TEST(BaselineStep, FifoEvictsOldestChunk) {
    std::mt19937_64 rng(20);
    auto f = build_frequencies(16);
    auto cfg = small_cfg();
    cfg.policy = PolicyKind::fifo;
    auto cache = random_cache(21, 2, 1, 16, f, rng);
    auto rep = baseline_step(cache, cfg, f, 0);
    EXPECT_EQ(cache.frame_count(), 18u);
    EXPECT_EQ(cache[0].original_pos.frame, 3);
    EXPECT_EQ(rep.evicted_token_indices.size(), 6u);
    EXPECT_TRUE(rep.selected_token_indices.empty());
}

TEST(BaselineStep, RandomTopcIsSeeded) {
    std::mt19937_64 rng(21);
    auto f = build_frequencies(16);
    auto cfg = small_cfg();
    cfg.policy = PolicyKind::random_topc;
    auto a = random_cache(21, 2, 1, 16, f, rng);
    auto b = a;
    auto c = a;
    auto ra = baseline_step(a, cfg, f, 77);
    auto rb = baseline_step(b, cfg, f, 77);
    auto rc = baseline_step(c, cfg, f, 78);
    EXPECT_EQ(ra.selected_token_indices, rb.selected_token_indices);
    EXPECT_NE(ra.selected_token_indices, rc.selected_token_indices);
    EXPECT_EQ(a.size(), 32u);
    EXPECT_TRUE(timeline_ok(a));
}

TEST(BaselineStep, LongLiveSinkFramesNeverMove) {
    std::mt19937_64 rng(22);
    auto f = build_frequencies(16);
    auto cfg = small_cfg();
    cfg.policy = PolicyKind::longlive_sink;
    auto cache = random_cache(21, 2, 1, 16, f, rng);
    const auto sink_keys = std::vector<TokenRecord>(cache.tokens().begin(), cache.tokens().begin() + 6);
    std::int64_t next = 21;
    for (int round = 0; round < 10; ++round) {
        (void)baseline_step(cache, cfg, f, 0);
        EXPECT_EQ(cache.frame_count(), 18u);
        std::set<std::int64_t> sink_frames;
        for (std::size_t i = 0; i < 6; ++i) {
            sink_frames.insert(cache[i].effective_frame);
            EXPECT_EQ(cache[i].key, sink_keys[i].key);
        }
        EXPECT_EQ(sink_frames, (std::set<std::int64_t>{0, 1, 2}));
        const auto pos = frame_positions(next, 3, 2);
        cache.append_chunk(random_matrix(6, 16, rng), random_matrix(6, 16, rng), pos);
        next += 3;
    }
}

TEST(BaselineStep, RollingForcingSinkSitsBeforeTail) {
    std::mt19937_64 rng(23);
    auto f = build_frequencies(16);
    auto cfg = small_cfg();
    cfg.policy = PolicyKind::rollingforcing_sink;
    auto cache = random_cache(21, 2, 1, 16, f, rng);
    auto rep = baseline_step(cache, cfg, f, 0);
    EXPECT_EQ(cache.frame_count(), 18u);
    EXPECT_EQ(cache[5].effective_frame + 1, cache[6].effective_frame);
    EXPECT_EQ(rep.delta_sink, 3);
    EXPECT_TRUE(timeline_ok(cache));
}

TEST(BaselineStep, ShallowSinkUsesConfiguredSinkWithoutRealign) {
    std::mt19937_64 rng(24);
    auto f = build_frequencies(16);
    auto cfg = small_cfg();
    cfg.policy = PolicyKind::shallow_sink;
    cfg.sink_frames = 3;
    cfg.budget_frames = 7;
    auto cache = random_cache(21, 2, 1, 16, f, rng);
    (void)baseline_step(cache, cfg, f, 0);
    EXPECT_EQ(cache.frame_count(), 18u);
    EXPECT_EQ(cache[5].effective_frame, 2);
    EXPECT_EQ(cache[6].original_pos.frame, 6);
}

TEST(BaselineStep, RejectsDeepForcing) {
    std::mt19937_64 rng(25);
    auto f = build_frequencies(16);
    auto cache = random_cache(21, 2, 1, 16, f, rng);
    EXPECT_THROW((void)baseline_step(cache, small_cfg(), f, 0), std::invalid_argument);
}
