// Copyright 2026 The sinkcache Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// JSON / JSON-lines / CSV encodings.
//
// Cache dump:     {"tokens_per_frame", "num_heads", "head_dim", "tokens": [
//                   {"id", "frame", "h", "w", "effective_frame", "key": [...], "value": [...]}]}
// Trace (JSONL):  one {"type":"header", "seed", "chunks", "metric_queries", "model", "policy"}
//                 line per seed, followed by one {"type":"step", ...} line per chunk-step.
// CSV files carry a header row and end every line with '\n'.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sinkcache/attention.hpp"
#include "sinkcache/cache.hpp"
#include "sinkcache/policy.hpp"
#include "sinkcache/simulator.hpp"

namespace sinkcache {

using json = nlohmann::json;

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---- cache ----------------------------------------------------------------

[[nodiscard]] inline json cache_to_json(const LayerCache& cache) {
    json tokens = json::array();
    for (const auto& t : cache.tokens()) {
        tokens.push_back({{"id", t.id},
                          {"frame", t.original_pos.frame},
                          {"h", t.original_pos.h},
                          {"w", t.original_pos.w},
                          {"effective_frame", t.effective_frame},
                          {"key", t.key},
                          {"value", t.value}});
    }
    return {{"tokens_per_frame", cache.tokens_per_frame()},
            {"num_heads", cache.num_heads()},
            {"head_dim", cache.head_dim()},
            {"tokens", std::move(tokens)}};
}

[[nodiscard]] inline LayerCache cache_from_json(const json& j) {
    try {
        LayerCache cache(j.at("tokens_per_frame").get<std::size_t>(), j.at("num_heads").get<std::size_t>(),
                         j.at("head_dim").get<std::size_t>());
        std::vector<TokenRecord> tokens;
        for (const auto& t : j.at("tokens")) {
            TokenRecord r;
            r.id = t.at("id").get<std::uint64_t>();
            r.original_pos = {t.at("frame").get<std::int64_t>(), t.at("h").get<std::int64_t>(),
                              t.at("w").get<std::int64_t>()};
            r.effective_frame = t.at("effective_frame").get<std::int64_t>();
            r.key = t.at("key").get<std::vector<float>>();
            r.value = t.at("value").get<std::vector<float>>();
            if (r.key.size() != cache.row_width() || r.value.size() != cache.row_width()) {
                throw FormatError("cache dump: token " + std::to_string(r.id) + " has wrong vector width");
            }
            tokens.push_back(std::move(r));
        }
        cache.replace_tokens(std::move(tokens));
        return cache;
    } catch (const json::exception& e) {
        throw FormatError(std::string("cache dump: ") + e.what());
    }
}

// ---- configs --------------------------------------------------------------

[[nodiscard]] inline json policy_to_json(const CachePolicyConfig& c) {
    return {{"policy", to_string(c.policy)},
            {"sink_frames", c.sink_frames},
            {"budget_frames", c.budget_frames},
            {"recent_frames", c.recent_frames},
            {"max_window_frames", c.max_window_frames},
            {"tokens_per_frame", c.tokens_per_frame},
            {"chunk_frames", c.chunk_frames},
            {"query_mode", to_string(c.query_mode)},
            {"score_mode", to_string(c.score_mode)},
            {"head_granularity", to_string(c.head_granularity)},
            {"sink_alignment", to_string(c.sink_alignment)}};
}

[[nodiscard]] inline json model_to_json(const StreamModel& m) {
    json j = {{"kind", to_string(m.kind)},
              {"seed", m.seed},
              {"tokens_per_frame", m.tokens_per_frame},
              {"head_dim", m.head_dim},
              {"num_heads", m.num_heads},
              {"num_layers", m.num_layers},
              {"anchor_count", m.anchor_count},
              {"anchor_gain", m.anchor_gain},
              {"anchor_frame", m.anchor_frame},
              {"drift_rate", m.drift_rate},
              {"jitter_scale", m.jitter_scale},
              {"rope_base", m.rope_base}};
    if (m.dim_split) j["dim_split"] = {m.dim_split->temporal, m.dim_split->height, m.dim_split->width};
    return j;
}

namespace detail {

template <class T>
T get_field(const json& obj, const std::string& section, const std::string& key) {
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(section + "." + key + ": wrong type");
    }
}

inline void reject_unknown(const json& obj, const std::string& section, std::initializer_list<const char*> known) {
    if (!obj.is_object()) throw ConfigError(section + ": expected an object");
    for (const auto& [key, _] : obj.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw ConfigError(section + ": unknown key '" + key + "'");
    }
}

// Reads `key` or its short alias into `out`; giving both is an error.
inline void read_size(const json& obj, const std::string& section, const char* key, const char* alias,
                      std::size_t& out) {
    const bool has_key = obj.contains(key);
    const bool has_alias = alias && obj.contains(alias);
    if (has_key && has_alias) throw ConfigError(section + ": both '" + key + "' and '" + alias + "' given");
    const char* k = has_key ? key : (has_alias ? alias : nullptr);
    if (!k) return;
    const auto& v = obj.at(k);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
        throw ConfigError(section + "." + k + ": expected a non-negative integer");
    }
    out = v.get<std::size_t>();
}

}  // namespace detail

/// Strict policy block parser. Short keys S/N/R/M/F alias the long ones.
[[nodiscard]] inline CachePolicyConfig policy_from_json(const json& j, CachePolicyConfig base = {}) {
    detail::reject_unknown(j, "policy",
                           {"policy", "sink_frames", "budget_frames", "recent_frames", "max_window_frames",
                            "tokens_per_frame", "chunk_frames", "query_mode", "score_mode", "head_granularity",
                            "sink_alignment", "S", "N", "R", "M", "F"});
    CachePolicyConfig c = base;
    detail::read_size(j, "policy", "sink_frames", "S", c.sink_frames);
    detail::read_size(j, "policy", "budget_frames", "N", c.budget_frames);
    detail::read_size(j, "policy", "recent_frames", "R", c.recent_frames);
    detail::read_size(j, "policy", "max_window_frames", "M", c.max_window_frames);
    detail::read_size(j, "policy", "tokens_per_frame", "F", c.tokens_per_frame);
    detail::read_size(j, "policy", "chunk_frames", nullptr, c.chunk_frames);
    auto enum_field = [&](const char* key, auto parse, auto& out) {
        if (!j.contains(key)) return;
        const auto s = detail::get_field<std::string>(j, "policy", key);
        auto v = parse(s);
        if (!v) throw ConfigError(std::string("policy.") + key + ": unknown value '" + s + "'");
        out = *v;
    };
    if (j.contains("policy")) {
        const auto s = detail::get_field<std::string>(j, "policy", "policy");
        auto v = parse_policy(s);
        if (!v) throw ConfigError("policy.policy: unknown policy '" + s + "'; valid: " + valid_policy_names());
        c.policy = *v;
    }
    enum_field("query_mode", parse_query_mode, c.query_mode);
    enum_field("score_mode", parse_score_mode, c.score_mode);
    enum_field("head_granularity", parse_head_granularity, c.head_granularity);
    enum_field("sink_alignment", parse_sink_alignment, c.sink_alignment);
    return c;
}

[[nodiscard]] inline StreamModel model_from_json(const json& j, StreamModel base = {}) {
    detail::reject_unknown(j, "model",
                           {"kind", "seed", "tokens_per_frame", "head_dim", "num_heads", "num_layers", "anchor_count",
                            "anchor_gain", "anchor_frame", "drift_rate", "jitter_scale", "rope_base", "dim_split"});
    StreamModel m = base;
    if (j.contains("kind")) {
        const auto s = detail::get_field<std::string>(j, "model", "kind");
        auto k = parse_stream_kind(s);
        if (!k) throw ConfigError("model.kind: unknown value '" + s + "'; valid: gaussian, clustered, drifting");
        m.kind = *k;
    }
    if (j.contains("seed")) m.seed = detail::get_field<std::uint64_t>(j, "model", "seed");
    detail::read_size(j, "model", "tokens_per_frame", nullptr, m.tokens_per_frame);
    detail::read_size(j, "model", "head_dim", nullptr, m.head_dim);
    detail::read_size(j, "model", "num_heads", nullptr, m.num_heads);
    detail::read_size(j, "model", "num_layers", nullptr, m.num_layers);
    detail::read_size(j, "model", "anchor_count", nullptr, m.anchor_count);
    if (j.contains("anchor_gain")) m.anchor_gain = detail::get_field<double>(j, "model", "anchor_gain");
    if (j.contains("anchor_frame")) m.anchor_frame = detail::get_field<std::int64_t>(j, "model", "anchor_frame");
    if (j.contains("drift_rate")) m.drift_rate = detail::get_field<double>(j, "model", "drift_rate");
    if (j.contains("jitter_scale")) m.jitter_scale = detail::get_field<double>(j, "model", "jitter_scale");
    if (j.contains("rope_base")) m.rope_base = detail::get_field<double>(j, "model", "rope_base");
    if (j.contains("dim_split")) {
        const auto v = detail::get_field<std::vector<std::size_t>>(j, "model", "dim_split");
        if (v.size() != 3) throw ConfigError("model.dim_split: expected [temporal, height, width]");
        m.dim_split = DimSplit{v[0], v[1], v[2]};
    }
    return m;
}

// ---- reports and traces ---------------------------------------------------

[[nodiscard]] inline json report_to_json(const CompressionReport& r) {
    return {{"policy", to_string(r.policy)},
            {"selected", r.selected_token_indices},
            {"evicted", r.evicted_token_indices},
            {"delta_sink", r.delta_sink},
            {"delta_top", r.delta_top},
            {"pre_size", r.pre_size},
            {"post_size", r.post_size},
            {"candidates", r.candidate_count}};
}

[[nodiscard]] inline CompressionReport report_from_json(const json& j) {
    CompressionReport r;
    const auto p = parse_policy(j.at("policy").get<std::string>());
    if (!p) throw FormatError("report: unknown policy");
    r.policy = *p;
    r.selected_token_indices = j.at("selected").get<std::vector<std::size_t>>();
    r.evicted_token_indices = j.at("evicted").get<std::vector<std::size_t>>();
    r.delta_sink = j.at("delta_sink").get<std::int64_t>();
    r.delta_top = j.at("delta_top").get<std::vector<std::int64_t>>();
    r.pre_size = j.at("pre_size").get<std::size_t>();
    r.post_size = j.at("post_size").get<std::size_t>();
    r.candidate_count = j.at("candidates").get<std::size_t>();
    return r;
}

[[nodiscard]] inline json step_to_json(const StepRecord& s) {
    json reports = json::array();
    for (const auto& layer : s.reports) {
        json lj = json::array();
        for (const auto& r : layer) lj.push_back(report_to_json(r));
        reports.push_back(std::move(lj));
    }
    return {{"type", "step"},
            {"seed", s.seed},
            {"chunk", s.chunk},
            {"timestep", s.timestep},
            {"cache_frames", s.cache_frames},
            {"cache_tokens", s.cache_tokens},
            {"event", s.event},
            {"post_frames", s.post_frames},
            {"post_tokens", s.post_tokens},
            {"retained_mass", s.retained_mass ? json(*s.retained_mass) : json(nullptr)},
            {"anchor_slots", s.anchor_slots},
            {"anchors_before", s.anchors_before},
            {"anchors_after", s.anchors_after},
            {"reports", std::move(reports)}};
}

[[nodiscard]] inline StepRecord step_from_json(const json& j) {
    StepRecord s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.chunk = j.at("chunk").get<std::size_t>();
    s.timestep = j.at("timestep").get<int>();
    s.cache_frames = j.at("cache_frames").get<std::size_t>();
    s.cache_tokens = j.at("cache_tokens").get<std::size_t>();
    s.event = j.at("event").get<bool>();
    s.post_frames = j.at("post_frames").get<std::size_t>();
    s.post_tokens = j.at("post_tokens").get<std::size_t>();
    if (!j.at("retained_mass").is_null()) s.retained_mass = j.at("retained_mass").get<double>();
    s.anchor_slots = j.at("anchor_slots").get<std::vector<std::size_t>>();
    s.anchors_before = j.at("anchors_before").get<std::size_t>();
    s.anchors_after = j.at("anchors_after").get<std::size_t>();
    for (const auto& lj : j.at("reports")) {
        std::vector<CompressionReport> layer;
        for (const auto& rj : lj) layer.push_back(report_from_json(rj));
        s.reports.push_back(std::move(layer));
    }
    return s;
}

[[nodiscard]] inline json trace_header(const RolloutTrace& t) {
    return {{"type", "header"},
            {"seed", t.model.seed},
            {"chunks", t.chunks},
            {"metric_queries", t.metric_queries},
            {"model", model_to_json(t.model)},
            {"policy", policy_to_json(t.cfg)}};
}

inline void write_trace_jsonl(std::ostream& os, const RolloutTrace& t) {
    os << trace_header(t).dump() << '\n';
    for (const auto& s : t.steps) os << step_to_json(s).dump() << '\n';
}

/// Parses a JSON-lines trace; one RolloutTrace per header line.
[[nodiscard]] inline std::vector<RolloutTrace> read_trace_jsonl(std::istream& is) {
    std::vector<RolloutTrace> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            const auto type = j.at("type").get<std::string>();
            if (type == "header") {
                RolloutTrace t;
                t.model = model_from_json(j.at("model"));
                t.cfg = policy_from_json(j.at("policy"));
                t.chunks = j.at("chunks").get<std::size_t>();
                t.metric_queries = j.at("metric_queries").get<std::size_t>();
                out.push_back(std::move(t));
            } else if (type == "step") {
                if (out.empty()) throw FormatError("step record before any header");
                out.back().steps.push_back(step_from_json(j));
            } else {
                throw FormatError("unknown record type '" + type + "'");
            }
        } catch (const json::exception& e) {
            throw FormatError("trace line " + std::to_string(lineno) + ": " + e.what());
        } catch (const FormatError& e) {
            throw FormatError("trace line " + std::to_string(lineno) + ": " + e.what());
        } catch (const ConfigError& e) {
            throw FormatError("trace line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (out.empty()) throw FormatError("trace has no header record");
    return out;
}

[[nodiscard]] inline std::vector<RolloutTrace> read_trace_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open trace " + path.string());
    return read_trace_jsonl(in);
}

// ---- CSV ------------------------------------------------------------------

[[nodiscard]] inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10f", v);
    return buf;
}

inline void write_summary_csv(std::ostream& os, const std::vector<RunSummary>& rows) {
    os << "seed,policy,chunks,events,evicted_tokens,mean_retained_mass,final_cache_frames,final_cache_tokens\n";
    for (const auto& r : rows) {
        os << r.seed << ',' << r.policy << ',' << r.chunks << ',' << r.events << ',' << r.evicted_tokens << ','
           << format_double(r.mean_retained_mass) << ',' << r.final_cache_frames << ',' << r.final_cache_tokens << '\n';
    }
}

inline void write_policies_csv(std::ostream& os, const std::vector<PolicySummary>& rows) {
    os << "policy,seeds,mean_retained_mass,mean_events,mean_evicted_tokens,mean_final_cache_tokens\n";
    for (const auto& r : rows) {
        os << r.policy << ',' << r.seeds << ',' << format_double(r.mean_retained_mass) << ','
           << format_double(r.mean_events) << ',' << format_double(r.mean_evicted_tokens) << ','
           << format_double(r.mean_final_cache_tokens) << '\n';
    }
}

inline void write_heatmap_csv(std::ostream& os, const SelectionHeatmap& hm) {
    os << "slot,count\n";
    for (std::size_t i = 0; i < hm.counts.size(); ++i) os << i << ',' << hm.counts[i] << '\n';
}

[[nodiscard]] inline json heatmap_meta(const SelectionHeatmap& hm) {
    return {{"slots", hm.counts.size()},
            {"sink_boundary", hm.sink_boundary},
            {"candidate_end", hm.candidate_end},
            {"events", hm.events}};
}

/// Writes through `<path>.tmp` and renames on success so readers never see a
/// partial file.
template <class Writer>
void write_file_atomic(const std::filesystem::path& path, Writer&& writer) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write " + tmp.string());
        writer(os);
        os.flush();
        if (!os) {
            std::filesystem::remove(tmp);
            throw std::runtime_error("write failed for " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace sinkcache
