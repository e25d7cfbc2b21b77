// Copyright 2026 The sinkcache Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// simulate / compare / heatmap / profile. Each command returns a process exit
// code: 0 success, 2 configuration or input error, 3 runtime invariant
// violation. Errors are reported as one JSON object on `err`. Outputs are
// computed fully before any file is written.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sinkcache/attention.hpp"
#include "sinkcache/cache.hpp"
#include "sinkcache/serialization.hpp"
#include "sinkcache/simulator.hpp"

namespace sinkcache::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

struct RunConfig {
    StreamModel model;
    CachePolicyConfig policy;
    std::size_t chunks = 32;
    std::vector<std::uint64_t> seeds{0};
    std::size_t metric_queries = 8;
    std::vector<PolicyKind> policies;  // compare only
    std::filesystem::path out_dir = ".";
};

/// Validates every downstream invariant; unknown keys anywhere are errors.
[[nodiscard]] inline RunConfig run_config_from_json(const json& j) {
    detail::reject_unknown(j, "config", {"model", "policy", "chunks", "seeds", "metric_queries", "policies", "out"});
    RunConfig rc;
    if (j.contains("model")) rc.model = model_from_json(j.at("model"));
    CachePolicyConfig base;
    base.tokens_per_frame = rc.model.tokens_per_frame;
    rc.policy = j.contains("policy") ? policy_from_json(j.at("policy"), base) : base;
    detail::read_size(j, "config", "chunks", nullptr, rc.chunks);
    detail::read_size(j, "config", "metric_queries", nullptr, rc.metric_queries);
    if (j.contains("seeds")) {
        rc.seeds = detail::get_field<std::vector<std::uint64_t>>(j, "config", "seeds");
        if (rc.seeds.empty()) throw ConfigError("config.seeds: must not be empty");
    }
    if (j.contains("policies")) {
        for (const auto& name : detail::get_field<std::vector<std::string>>(j, "config", "policies")) {
            auto p = parse_policy(name);
            if (!p) throw ConfigError("config.policies: unknown policy '" + name + "'; valid: " + valid_policy_names());
            rc.policies.push_back(*p);
        }
    }
    if (j.contains("out")) rc.out_dir = detail::get_field<std::string>(j, "config", "out");

    rc.model.validate();
    rc.policy.validate();
    if (rc.policy.tokens_per_frame != rc.model.tokens_per_frame) {
        throw ConfigError("policy.tokens_per_frame (" + std::to_string(rc.policy.tokens_per_frame) +
                          ") differs from model.tokens_per_frame (" + std::to_string(rc.model.tokens_per_frame) + ")");
    }
    if (rc.chunks == 0) throw ConfigError("config.chunks: must be >= 1");
    return rc;
}

/// Applies `a.b.c=value` overrides. Values parse as JSON when possible, else as strings.
[[nodiscard]] inline json apply_overrides(json j, const std::vector<std::string>& sets) {
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
        const std::string path = s.substr(0, eq);
        const std::string raw = s.substr(eq + 1);
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::exception&) {
            value = raw;
        }
        json* node = &j;
        std::size_t start = 0;
        while (true) {
            const auto dot = path.find('.', start);
            const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
            if (key.empty()) throw ConfigError("--set: empty key segment in '" + path + "'");
            if (!node->is_object()) throw ConfigError("--set: '" + path + "' descends into a non-object");
            if (dot == std::string::npos) {
                // An override replaces the other spelling of an aliased policy key.
                static const std::pair<const char*, const char*> kAliases[] = {
                    {"S", "sink_frames"}, {"N", "budget_frames"}, {"R", "recent_frames"},
                    {"M", "max_window_frames"}, {"F", "tokens_per_frame"}};
                if (start > 0 && path.compare(0, start, "policy.") == 0) {
                    for (const auto& [short_name, long_name] : kAliases) {
                        if (key == short_name) node->erase(long_name);
                        if (key == long_name) node->erase(short_name);
                    }
                }
                (*node)[key] = value;
                break;
            }
            node = &(*node)[key];
            if (node->is_null()) *node = json::object();
            start = dot + 1;
        }
    }
    return j;
}

struct CommonArgs {
    std::filesystem::path config;
    std::vector<std::string> sets;
    std::optional<std::filesystem::path> out;
    std::optional<std::uint64_t> seed;
};

namespace detail {

inline void report_error(std::ostream& err, const char* kind, const std::string& msg) {
    err << json{{"error", kind}, {"message", msg}}.dump() << '\n';
}

inline RunConfig load_run_config(const CommonArgs& args) {
    std::ifstream in(args.config);
    if (!in) throw ConfigError("cannot read config " + args.config.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig rc = run_config_from_json(apply_overrides(std::move(j), args.sets));
    if (args.out) rc.out_dir = *args.out;
    if (args.seed) rc.seeds = {*args.seed};
    return rc;
}

inline void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw std::runtime_error("cannot create output dir " + dir.string());
}

/// Runs one rollout per seed; results come back in seed order.
inline std::vector<RolloutTrace> run_seeds(const RunConfig& rc, const CachePolicyConfig& policy) {
    std::vector<std::future<RolloutTrace>> jobs;
    for (auto seed : rc.seeds) {
        StreamModel m = rc.model;
        m.seed = seed;
        jobs.push_back(std::async(std::launch::async, [m, policy, &rc] {
            return rollout(m, policy, rc.chunks, RolloutOptions{rc.metric_queries});
        }));
    }
    std::vector<RolloutTrace> out;
    for (auto& j : jobs) out.push_back(j.get());
    return out;
}

template <class Fn>
int guarded(std::ostream& err, Fn&& fn) {
    try {
        fn();
        return kExitOk;
    } catch (const ConfigError& e) {
        report_error(err, "config_error", e.what());
        return kExitConfig;
    } catch (const FormatError& e) {
        report_error(err, "input_error", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        report_error(err, "runtime_error", e.what());
        return kExitRuntime;
    }
}

}  // namespace detail

/// Writes trace.jsonl and summary.csv into the output directory.
inline int cmd_simulate(const CommonArgs& args, std::ostream& err) {
    return detail::guarded(err, [&] {
        const RunConfig rc = detail::load_run_config(args);
        const auto traces = detail::run_seeds(rc, rc.policy);
        std::vector<RunSummary> rows;
        for (const auto& t : traces) rows.push_back(summarize(t));
        detail::ensure_dir(rc.out_dir);
        write_file_atomic(rc.out_dir / "trace.jsonl", [&](std::ostream& os) {
            for (const auto& t : traces) write_trace_jsonl(os, t);
        });
        write_file_atomic(rc.out_dir / "summary.csv", [&](std::ostream& os) { write_summary_csv(os, rows); });
    });
}

/// Writes policies.csv: one row per policy, averaged over seeds.
inline int cmd_compare(const CommonArgs& args, const std::vector<std::string>& policy_names, std::ostream& err) {
    return detail::guarded(err, [&] {
        RunConfig rc = detail::load_run_config(args);
        if (!policy_names.empty()) {
            rc.policies.clear();
            for (const auto& name : policy_names) {
                auto p = parse_policy(name);
                if (!p) throw ConfigError("unknown policy '" + name + "'; valid: " + valid_policy_names());
                rc.policies.push_back(*p);
            }
        }
        if (rc.policies.empty()) throw ConfigError("compare: no policies given");
        std::vector<CachePolicyConfig> cfgs;
        for (auto p : rc.policies) {
            CachePolicyConfig c = rc.policy;
            c.policy = p;
            cfgs.push_back(c);
        }
        const auto rows = compare_policies(rc.model, cfgs, rc.chunks, rc.seeds, RolloutOptions{rc.metric_queries});
        detail::ensure_dir(rc.out_dir);
        write_file_atomic(rc.out_dir / "policies.csv", [&](std::ostream& os) { write_policies_csv(os, rows); });
    });
}

/// Writes heatmap.csv (slot,count) summed over every run in the trace, plus
/// heatmap_meta.json with the region boundaries.
inline int cmd_heatmap(const std::filesystem::path& trace_path, const std::filesystem::path& out_dir,
                       std::ostream& err) {
    return detail::guarded(err, [&] {
        const auto traces = read_trace_file(trace_path);
        SelectionHeatmap total;
        for (const auto& t : traces) {
            const auto hm = selection_heatmap(t);
            if (total.counts.size() < hm.counts.size()) total.counts.resize(hm.counts.size(), 0);
            for (std::size_t i = 0; i < hm.counts.size(); ++i) total.counts[i] += hm.counts[i];
            total.sink_boundary = hm.sink_boundary;
            total.candidate_end = hm.candidate_end;
            total.events += hm.events;
        }
        detail::ensure_dir(out_dir);
        write_file_atomic(out_dir / "heatmap.csv", [&](std::ostream& os) { write_heatmap_csv(os, total); });
        write_file_atomic(out_dir / "heatmap_meta.json",
                          [&](std::ostream& os) { os << heatmap_meta(total).dump(2) << '\n'; });
    });
}

/// Replays the first run recorded in the trace and writes profile.csv
/// (frame,weight): how the final chunk's clean queries of (layer, head)
/// distribute attention over the cache they were generated against.
inline int cmd_profile(const std::filesystem::path& trace_path, std::size_t layer, std::size_t head,
                       const std::filesystem::path& out_dir, std::ostream& err) {
    return detail::guarded(err, [&] {
        const auto traces = read_trace_file(trace_path);
        const auto& t = traces.front();
        if (layer >= t.model.num_layers) throw ConfigError("profile: layer out of range");
        if (head >= t.model.num_heads) throw ConfigError("profile: head out of range");
        RolloutOptions opts{t.metric_queries};
        opts.skip_final_append = true;
        const auto res = rollout_with_state(t.model, t.cfg, t.chunks, opts);
        if (res.trace.steps.size() != t.steps.size() || res.trace.event_count() != t.event_count() ||
            (!t.steps.empty() && res.trace.steps.back().post_tokens != t.steps.back().post_tokens)) {
            throw FormatError("profile: trace does not match its recorded configuration");
        }
        const std::size_t g = res.caches.group_of_head(head);
        const auto& cache = res.caches.group(layer, g);
        const std::size_t head_in_group = res.caches.granularity() == HeadGranularity::per_head ? 0 : head;
        const auto queries = res.caches.group_columns(res.last_chunk.queries[layer], g);
        auto prof = frame_attention_profile(queries, cache, head_in_group);
        prof.layer = layer;
        prof.head = head;
        detail::ensure_dir(out_dir);
        write_file_atomic(out_dir / "profile.csv", [&](std::ostream& os) { write_profile_csv(os, prof); });
    });
}

}  // namespace sinkcache::cli
