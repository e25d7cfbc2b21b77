// Copyright 2026 The sinkcache Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Log level comes from SINKCACHE_LOG
// (trace, debug, info, warn, error, off; default warn). Logs go to stderr.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "sinkcache/commands.hpp"

namespace {

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("sinkcache");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::warn);
    if (const char* lvl = std::getenv("SINKCACHE_LOG")) spdlog::set_level(spdlog::level::from_str(lvl));
}

void add_common(CLI::App* sub, sinkcache::cli::CommonArgs& a, std::optional<std::uint64_t>& seed,
                std::string& out) {
    sub->add_option("--config", a.config, "JSON run configuration")->required();
    sub->add_option("--set", a.sets, "Override a config key, e.g. policy.sink_frames=8 (repeatable)");
    sub->add_option("--out", out, "Output directory");
    sub->add_option("--seed", seed, "Run a single seed instead of the configured list");
}

}  // namespace

int main(int argc, char** argv) {
    setup_logging();
    namespace cli = sinkcache::cli;

    CLI::App app{"KV cache sink/compression simulator"};
    app.require_subcommand(1);

    cli::CommonArgs sim_args, cmp_args;
    std::optional<std::uint64_t> sim_seed, cmp_seed;
    std::string sim_out, cmp_out, heat_out = ".", prof_out = ".";
    std::string policies;
    std::string heat_trace, prof_trace;
    std::size_t layer = 0, head = 0;

    auto* sim = app.add_subcommand("simulate", "Roll out one policy; writes trace.jsonl and summary.csv");
    add_common(sim, sim_args, sim_seed, sim_out);

    auto* cmp = app.add_subcommand("compare", "Roll out several policies; writes policies.csv");
    add_common(cmp, cmp_args, cmp_seed, cmp_out);
    cmp->add_option("--policies", policies, "Comma-separated policy names (default: config 'policies')");

    auto* heat = app.add_subcommand("heatmap", "Top-C selection counts per cache slot from a trace");
    heat->add_option("--trace", heat_trace, "trace.jsonl from simulate")->required();
    heat->add_option("--out", heat_out, "Output directory");

    auto* prof = app.add_subcommand("profile", "Per-frame attention of the final chunk for one layer/head");
    prof->add_option("--trace", prof_trace, "trace.jsonl from simulate")->required();
    prof->add_option("--layer", layer, "Layer index");
    prof->add_option("--head", head, "Head index");
    prof->add_option("--out", prof_out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : cli::kExitConfig;
    }

    int rc = cli::kExitOk;
    if (*sim) {
        sim_args.seed = sim_seed;
        if (!sim_out.empty()) sim_args.out = sim_out;
        spdlog::info("simulate config={}", sim_args.config.string());
        rc = cli::cmd_simulate(sim_args, std::cerr);
    } else if (*cmp) {
        cmp_args.seed = cmp_seed;
        if (!cmp_out.empty()) cmp_args.out = cmp_out;
        std::vector<std::string> names;
        if (!policies.empty()) {
            std::size_t start = 0;
            while (start <= policies.size()) {
                const auto comma = policies.find(',', start);
                names.push_back(policies.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
                if (comma == std::string::npos) break;
                start = comma + 1;
            }
        }
        spdlog::info("compare config={} policies={}", cmp_args.config.string(), policies);
        rc = cli::cmd_compare(cmp_args, names, std::cerr);
    } else if (*heat) {
        spdlog::info("heatmap trace={}", heat_trace);
        rc = cli::cmd_heatmap(heat_trace, heat_out, std::cerr);
    } else if (*prof) {
        spdlog::info("profile trace={} layer={} head={}", prof_trace, layer, head);
        rc = cli::cmd_profile(prof_trace, layer, head, prof_out, std::cerr);
    }
    spdlog::info("exit code {}", rc);
    return rc;
}
