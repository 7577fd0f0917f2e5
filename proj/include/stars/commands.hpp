#pragma once

#include <optional>
#include <string>

#include "stars/config.hpp"

namespace stars {

struct CommandOptions {
    std::string config_path;
    std::optional<std::string> variant;      // distill: overrides config variant
    std::string axis;                        // sweep: T | neuron | quantiles
    std::optional<std::uint64_t> seed;       // restrict to a single seed
    std::size_t parallel_seeds = 1;
    std::optional<std::string> out_dir;      // overrides config out_dir
    bool smoke = false;                      // 3 rounds, first 2 seeds
};

/// Trains the teacher on the procedural dataset, saves the checkpoint and an
/// accuracy report under the output directory.
void cmd_pretrain(const CommandOptions& opts);

/// Runs the requested variant across the configured seeds; writes the
/// per-round metrics CSV and a mean/std summary JSON.
void cmd_distill(const CommandOptions& opts);

/// Component ablation (4 variants) plus the tail-quantile sweep, each
/// aggregated over seeds into Table-3- and Table-4-shaped CSVs.
void cmd_ablate(const CommandOptions& opts);

/// Numerical verification report: integration factors, effective thresholds,
/// a moment-matched pair with its rate gap, analytic vs simulated rates and
/// shift classifications. Emits CSV and a text report.
void cmd_analyze(const CommandOptions& opts);

/// STARS variant across one axis: T in {2,4,8}, neuron in {LIF, IF}, or the
/// tail-quantile prefix sets.
void cmd_sweep(const CommandOptions& opts);

/// Applies CLI overrides (variant, seed, out_dir, smoke) to a loaded config.
ExperimentConfig resolve_config(const CommandOptions& opts);

}  // namespace stars
