#include <exception>
#include <iostream>

#include "CLI11.hpp"
#include "stars/commands.hpp"
#include "stars/errors.hpp"

namespace {

// exit codes: 0 success, 2 config error, 3 missing artifact, 4 numerical failure
int dispatch(const std::string& command, const stars::CommandOptions& opts) {
    try {
        if (command == "pretrain") stars::cmd_pretrain(opts);
        else if (command == "distill") stars::cmd_distill(opts);
        else if (command == "ablate") stars::cmd_ablate(opts);
        else if (command == "analyze") stars::cmd_analyze(opts);
        else if (command == "sweep") stars::cmd_sweep(opts);
        return 0;
    } catch (const stars::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const stars::MissingArtifact& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const stars::NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"data-free ANN-to-SNN distillation with relational and tail-aware synthesis"};
    app.require_subcommand(1);

    stars::CommandOptions opts;
    std::string variant_flag;
    std::string seed_flag;
    std::string out_flag;

    auto add_common = [&](CLI::App* sub, bool with_variant = false, bool with_axis = false) {
        sub->add_option("--config", opts.config_path, "experiment config (JSON)")->required();
        sub->add_option("--out", out_flag, "output directory override");
        sub->add_option("--seed", seed_flag, "run a single seed");
        sub->add_option("--parallel-seeds", opts.parallel_seeds,
                        "run seed pipelines concurrently");
        sub->add_flag("--smoke", opts.smoke, "3 rounds, first 2 seeds");
        if (with_variant)
            sub->add_option("--variant", variant_flag, "bn | rca | tar | stars");
        if (with_axis)
            sub->add_option("--axis", opts.axis, "T | neuron | quantiles")->required();
    };

    add_common(app.add_subcommand("pretrain", "train and save the teacher"));
    add_common(app.add_subcommand("distill", "synthesize and distill one variant"), true);
    add_common(app.add_subcommand("ablate", "component and tail-quantile ablations"));
    add_common(app.add_subcommand("analyze", "numerical theory verification report"));
    add_common(app.add_subcommand("sweep", "sweep T, neuron model or quantile sets"), false,
               true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    if (!variant_flag.empty()) opts.variant = variant_flag;
    if (!out_flag.empty()) opts.out_dir = out_flag;
    if (!seed_flag.empty()) {
        try {
            opts.seed = std::stoull(seed_flag);
        } catch (const std::exception&) {
            std::cerr << "error: --seed expects an unsigned integer\n";
            return 2;
        }
    }

    return dispatch(app.get_subcommands().front()->get_name(), opts);
}
