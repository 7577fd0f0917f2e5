#include "stars/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <thread>

#include "json.hpp"
#include "stars/analysis.hpp"
#include "stars/errors.hpp"
#include "stars/io.hpp"

namespace stars {

namespace fs = std::filesystem;

namespace {

/// Standardized splits regenerated deterministically from the config.
DataSplits prepare_data(const ExperimentConfig& cfg) {
    DataSplits splits = gaussian_blobs(cfg.dataset.num_classes, cfg.dataset.dim,
                                       cfg.dataset.n_per_class, cfg.dataset.spread,
                                       cfg.dataset.seed);
    standardize(splits);
    return splits;
}

fs::path checkpoint_path(const ExperimentConfig& cfg) {
    return fs::path(cfg.out_dir) / cfg.teacher.checkpoint;
}

TeacherNet load_frozen_teacher(const ExperimentConfig& cfg) {
    const fs::path path = checkpoint_path(cfg);
    if (!fs::exists(path))
        throw MissingArtifact("teacher checkpoint missing at " + path.string() +
                              "; run `stars pretrain` first");
    TeacherNet teacher = load_checkpoint(path);
    teacher.freeze();
    return teacher;
}

struct SeedOutcome {
    std::vector<MetricsRecord> rounds;
    double final_acc = 0.0;
};

/// Runs one pipeline per seed, optionally on a small thread pool. Results
/// are collected per seed index, so parallelism never changes output bytes.
std::vector<SeedOutcome> run_seeds(const TeacherNet& teacher, const DataSplits& data,
                                   const ExperimentConfig& cfg, Variant variant,
                                   const SynthesisConfig& synth, std::size_t parallel) {
    std::vector<SeedOutcome> outcomes(cfg.seeds.size());
    auto work = [&](std::size_t idx) {
        ExperimentResult res = run_experiment(teacher, data, cfg.lif, synth, cfg.distill,
                                              variant, cfg.seeds[idx]);
        outcomes[idx].rounds = std::move(res.rounds);
        outcomes[idx].final_acc = outcomes[idx].rounds.back().test_acc;
    };
    const std::size_t workers = std::max<std::size_t>(1, std::min(parallel, cfg.seeds.size()));
    if (workers == 1) {
        for (std::size_t i = 0; i < cfg.seeds.size(); ++i) work(i);
    } else {
        std::vector<std::thread> pool;
        std::size_t next = 0;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < cfg.seeds.size(); i += workers) work(i);
            });
        (void)next;
        for (auto& t : pool) t.join();
    }
    return outcomes;
}

struct MeanStd {
    double mean = 0.0;
    double stddev = 0.0;
};

MeanStd mean_std(const std::vector<double>& xs) {
    MeanStd ms;
    if (xs.empty()) return ms;
    for (double x : xs) ms.mean += x;
    ms.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double acc = 0.0;
        for (double x : xs) acc += (x - ms.mean) * (x - ms.mean);
        ms.stddev = std::sqrt(acc / static_cast<double>(xs.size() - 1));
    }
    return ms;
}

void ensure_out_dir(const ExperimentConfig& cfg) {
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + cfg.out_dir);
}

}  // namespace

ExperimentConfig resolve_config(const CommandOptions& opts) {
    ExperimentConfig cfg = ExperimentConfig::load(opts.config_path);
    if (opts.variant) cfg.variant = variant_from_string(*opts.variant);
    if (opts.out_dir) cfg.out_dir = *opts.out_dir;
    if (opts.seed) cfg.seeds = {*opts.seed};
    if (opts.smoke) {
        cfg.distill.rounds = 3;
        if (cfg.seeds.size() > 2) cfg.seeds.resize(2);
    }
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------

void cmd_pretrain(const CommandOptions& opts) {
    ExperimentConfig cfg = resolve_config(opts);
    ensure_out_dir(cfg);
    DataSplits data = prepare_data(cfg);

    TeacherArch arch{cfg.dataset.dim, cfg.teacher.hidden, cfg.dataset.num_classes};
    Rng init_rng = Rng(cfg.teacher.seed).derive("teacher-init");
    TeacherNet teacher(arch, init_rng);
    TeacherTrainConfig tcfg{cfg.teacher.epochs, cfg.teacher.lr, cfg.teacher.momentum,
                            cfg.teacher.batch_size, cfg.teacher.seed};
    TrainReport report = train_teacher(teacher, data, tcfg);
    save_checkpoint(teacher, checkpoint_path(cfg));

    nlohmann::json j;
    j["train_accuracy"] = report.train_accuracy;
    j["test_accuracy"] = report.test_accuracy;
    j["final_loss"] = report.final_loss;
    write_file(fs::path(cfg.out_dir) / "pretrain_report.json", j.dump(1) + "\n");
    std::cout << "pretrain: train_acc=" << format_double(report.train_accuracy)
              << " test_acc=" << format_double(report.test_accuracy) << " checkpoint="
              << checkpoint_path(cfg).string() << "\n";
}

void cmd_distill(const CommandOptions& opts) {
    ExperimentConfig cfg = resolve_config(opts);
    ensure_out_dir(cfg);
    DataSplits data = prepare_data(cfg);
    TeacherNet teacher = load_frozen_teacher(cfg);

    auto outcomes =
        run_seeds(teacher, data, cfg, cfg.variant, cfg.synthesis, opts.parallel_seeds);

    const std::string vname = variant_cli_name(cfg.variant);
    std::string csv = metrics_csv_header();
    std::vector<double> finals;
    for (const auto& oc : outcomes) {
        for (const auto& rec : oc.rounds) csv += metrics_csv_row(rec);
        finals.push_back(oc.final_acc);
    }
    write_file(fs::path(cfg.out_dir) / ("metrics_" + vname + ".csv"), csv);

    const MeanStd ms = mean_std(finals);
    nlohmann::json j;
    j[variant_tag(cfg.variant)] = {{"mean", ms.mean}, {"std", ms.stddev}};
    write_file(fs::path(cfg.out_dir) / ("summary_" + vname + ".json"), j.dump(1) + "\n");
    std::cout << "distill " << variant_tag(cfg.variant) << ": mean test_acc "
              << format_double(ms.mean) << " +- " << format_double(ms.stddev) << " over "
              << cfg.seeds.size() << " seeds\n";
}

void cmd_ablate(const CommandOptions& opts) {
    ExperimentConfig cfg = resolve_config(opts);
    ensure_out_dir(cfg);
    DataSplits data = prepare_data(cfg);
    TeacherNet teacher = load_frozen_teacher(cfg);

    std::string detail = metrics_csv_header();

    // component ablation: the four variants
    CsvWriter table3({"variant", "mean_acc", "std_acc", "seeds"});
    for (Variant v : {Variant::bn, Variant::rca, Variant::tar, Variant::stars}) {
        auto outcomes = run_seeds(teacher, data, cfg, v, cfg.synthesis, opts.parallel_seeds);
        std::vector<double> finals;
        for (const auto& oc : outcomes) {
            for (const auto& rec : oc.rounds) detail += metrics_csv_row(rec);
            finals.push_back(oc.final_acc);
        }
        const MeanStd ms = mean_std(finals);
        table3.add_row({variant_tag(v), format_double(ms.mean), format_double(ms.stddev),
                        format_int(static_cast<long long>(finals.size()))});
    }
    table3.write(fs::path(cfg.out_dir) / "ablation_variants.csv");

    // tail-quantile sweep, STARS variant with the Table-4 prefix sets
    CsvWriter table4({"quantiles", "M", "mean_acc", "std_acc"});
    for (const auto& qs : quantile_prefix_sets()) {
        SynthesisConfig synth = cfg.synthesis;
        synth.quantiles = qs;
        auto outcomes = run_seeds(teacher, data, cfg, Variant::stars, synth,
                                  opts.parallel_seeds);
        std::vector<double> finals;
        for (const auto& oc : outcomes) finals.push_back(oc.final_acc);
        const MeanStd ms = mean_std(finals);
        std::string qstr;
        for (std::size_t i = 0; i < qs.size(); ++i)
            qstr += (i ? " " : "") + format_double(qs[i]);
        table4.add_row({qstr, format_int(static_cast<long long>(qs.size())),
                        format_double(ms.mean), format_double(ms.stddev)});
    }
    table4.write(fs::path(cfg.out_dir) / "ablation_quantiles.csv");
    write_file(fs::path(cfg.out_dir) / "ablation_metrics.csv", detail);
    std::cout << "ablate: wrote ablation_variants.csv, ablation_quantiles.csv\n";
}

// ---------------------------------------------------------------------------

void cmd_analyze(const CommandOptions& opts) {
    ExperimentConfig cfg = resolve_config(opts);
    ensure_out_dir(cfg);
    const LIFConfig& lif = cfg.lif;
    lif.validate();
    const std::uint64_t seed = cfg.seeds.front();

    CsvWriter csv({"section", "name", "value"});
    std::string txt;
    auto put = [&](const std::string& section, const std::string& name, double value) {
        csv.add_row({section, name, format_double(value)});
    };

    txt += "effective threshold table (tau=" + format_double(lif.tau) +
           ", v_th=" + format_double(lif.v_th) + ", T=" + std::to_string(lif.steps) + ")\n";
    txt += "  t    beta_t            theta_t\n";
    for (std::size_t t = 1; t <= lif.steps; ++t) {
        const double b = beta_factor(t, lif.tau);
        const double th = effective_threshold(t, lif);
        put("thresholds", "beta_" + std::to_string(t), b);
        put("thresholds", "theta_" + std::to_string(t), th);
        txt += "  " + std::to_string(t) + "    " + format_double(b) + "    " +
               format_double(th) + "\n";
    }

    // moment-matched pair: both distributions look identical to BN matching
    DistPair pair = moment_matched_pair(0.0, 1.0, MomentMatchedFamily::gaussian_vs_two_point);
    const double rate_p = rate_functional(pair.p, lif);
    const double rate_q = rate_functional(pair.q, lif);
    const double gap = rate_gap(pair.p, pair.q, lif);
    put("moment_matched", "mean_p", pair.p.mean());
    put("moment_matched", "var_p", pair.p.variance());
    put("moment_matched", "mean_q", pair.q.mean());
    put("moment_matched", "var_q", pair.q.variance());
    put("moment_matched", "rate_p", rate_p);
    put("moment_matched", "rate_q", rate_q);
    put("moment_matched", "rate_gap", gap);
    txt += "\nmoment-matched pair\n";
    txt += "  P = " + pair.p.describe() + "\n";
    txt += "  Q = " + pair.q.describe() + "\n";
    txt += "  identical mean/variance, yet R_T(P)=" + format_double(rate_p) +
           ", R_T(Q)=" + format_double(rate_q) + ", gap=" + format_double(gap) + "\n";

    // analytic vs simulated rates; where resets occur the signed discrepancy
    // is reported, not asserted away
    txt += "\nanalytic vs simulated rates (n=100000)\n";
    const struct {
        const char* name;
        Dist dist;
    } mc_cases[] = {
        {"gaussian_p", pair.p},
        {"two_point_q", pair.q},
        {"subthreshold",
         Dist::two_point(0.0, 0.5, 0.5 * (effective_threshold(lif.steps, lif) +
                                          (lif.steps > 1 ? effective_threshold(lif.steps - 1, lif)
                                                         : effective_threshold(lif.steps, lif) +
                                                               1.0)))},
    };
    for (const auto& c : mc_cases) {
        const MonteCarloRate mc = monte_carlo_rate(c.dist, lif, 100000, seed);
        const double analytic = rate_functional(c.dist, lif);
        put("monte_carlo", std::string(c.name) + "_analytic", analytic);
        put("monte_carlo", std::string(c.name) + "_simulated", mc.rate);
        put("monte_carlo", std::string(c.name) + "_std_err", mc.std_err);
        put("monte_carlo", std::string(c.name) + "_discrepancy", mc.rate - analytic);
        txt += "  " + std::string(c.name) + ": analytic=" + format_double(analytic) +
               " simulated=" + format_double(mc.rate) + " +- " + format_double(mc.std_err) +
               " discrepancy=" + format_double(mc.rate - analytic) + "\n";
    }

    // shift classifications
    txt += "\nshift classifications\n";
    const struct {
        const char* name;
        Dist s;
        Dist r;
    } shift_cases[] = {
        {"left_shifted_gaussian", Dist::gaussian(-1.0, 1.0), Dist::gaussian(0.0, 1.0)},
        {"right_shifted_gaussian", Dist::gaussian(1.0, 1.0), Dist::gaussian(0.0, 1.0)},
        {"identical", Dist::gaussian(0.0, 1.0), Dist::gaussian(0.0, 1.0)},
    };
    for (const auto& c : shift_cases) {
        const ShiftResult res = check_shift(c.s, c.r, lif);
        const char* kind = res.kind == ShiftKind::under_firing  ? "under_firing"
                           : res.kind == ShiftKind::over_firing ? "over_firing"
                                                                : "neither";
        csv.add_row({"shift", c.name, kind});
        put("shift", std::string(c.name) + "_rate_s", res.rate_s);
        put("shift", std::string(c.name) + "_rate_r", res.rate_r);
        txt += "  " + std::string(c.name) + ": " + kind +
               " (R_s=" + format_double(res.rate_s) + ", R_r=" + format_double(res.rate_r) +
               ")\n";
    }

    csv.write(fs::path(cfg.out_dir) / "analysis.csv");
    write_file(fs::path(cfg.out_dir) / "analysis.txt", txt);
    std::cout << txt;
}

// ---------------------------------------------------------------------------

void cmd_sweep(const CommandOptions& opts) {
    ExperimentConfig cfg = resolve_config(opts);
    ensure_out_dir(cfg);
    if (opts.axis != "T" && opts.axis != "neuron" && opts.axis != "quantiles")
        throw ConfigError("sweep: unknown axis '" + opts.axis + "' (expected T|neuron|quantiles)");
    DataSplits data = prepare_data(cfg);
    TeacherNet teacher = load_frozen_teacher(cfg);

    CsvWriter csv({"axis", "value", "seed", "test_acc"});
    auto run_point = [&](const std::string& value, const LIFConfig& lif,
                         const SynthesisConfig& synth) {
        ExperimentConfig point = cfg;
        point.lif = lif;
        auto outcomes = run_seeds(teacher, data, point, Variant::stars, synth,
                                  opts.parallel_seeds);
        for (std::size_t i = 0; i < outcomes.size(); ++i)
            csv.add_row({opts.axis, value, std::to_string(cfg.seeds[i]),
                         format_double(outcomes[i].final_acc)});
    };

    if (opts.axis == "T") {
        for (std::size_t steps : {2, 4, 8}) {
            LIFConfig lif = cfg.lif;
            lif.steps = steps;
            run_point(std::to_string(steps), lif, cfg.synthesis);
        }
    } else if (opts.axis == "neuron") {
        for (NeuronModel model : {NeuronModel::LIF, NeuronModel::IF}) {
            LIFConfig lif = cfg.lif;
            lif.neuron_model = model;
            run_point(model == NeuronModel::LIF ? "LIF" : "IF", lif, cfg.synthesis);
        }
    } else {
        for (const auto& qs : quantile_prefix_sets()) {
            SynthesisConfig synth = cfg.synthesis;
            synth.quantiles = qs;
            std::string value = "M" + std::to_string(qs.size());
            run_point(value, cfg.lif, synth);
        }
    }
    csv.write(fs::path(cfg.out_dir) / ("sweep_" + opts.axis + ".csv"));
    std::cout << "sweep " << opts.axis << ": " << csv.row_count() << " rows\n";
}

}  // namespace stars
