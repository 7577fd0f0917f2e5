#include "stars/config.hpp"

#include <fstream>
#include <set>

#include "json.hpp"
#include "stars/errors.hpp"

namespace stars {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& allowed,
                    const std::string& path) {
    if (!j.is_object()) throw ConfigError("config: '" + path + "' must be an object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key))
            throw ConfigError("config: unknown key '" + path + "." + key + "'");
}

template <typename T>
T get_or(const json& j, const char* key, const T& fallback, const std::string& path) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: bad value for '" + path + "." + key + "'");
    }
}

DatasetConfig parse_dataset(const json& j) {
    reject_unknown(j, {"num_classes", "dim", "n_per_class", "spread", "seed"}, "dataset");
    DatasetConfig c;
    c.num_classes = get_or(j, "num_classes", c.num_classes, "dataset");
    c.dim = get_or(j, "dim", c.dim, "dataset");
    c.n_per_class = get_or(j, "n_per_class", c.n_per_class, "dataset");
    c.spread = get_or(j, "spread", c.spread, "dataset");
    c.seed = get_or(j, "seed", c.seed, "dataset");
    return c;
}

TeacherConfig parse_teacher(const json& j) {
    reject_unknown(j, {"hidden", "epochs", "lr", "momentum", "batch_size", "seed", "checkpoint"},
                   "teacher");
    TeacherConfig c;
    c.hidden = get_or(j, "hidden", c.hidden, "teacher");
    c.epochs = get_or(j, "epochs", c.epochs, "teacher");
    c.lr = get_or(j, "lr", c.lr, "teacher");
    c.momentum = get_or(j, "momentum", c.momentum, "teacher");
    c.batch_size = get_or(j, "batch_size", c.batch_size, "teacher");
    c.seed = get_or(j, "seed", c.seed, "teacher");
    c.checkpoint = get_or(j, "checkpoint", c.checkpoint, "teacher");
    return c;
}

LIFConfig parse_lif(const json& j) {
    reject_unknown(j, {"tau", "v_th", "v_reset", "steps", "surrogate_alpha", "neuron_model"},
                   "lif");
    LIFConfig c;
    c.tau = get_or(j, "tau", c.tau, "lif");
    c.v_th = get_or(j, "v_th", c.v_th, "lif");
    c.v_reset = get_or(j, "v_reset", c.v_reset, "lif");
    c.steps = get_or(j, "steps", c.steps, "lif");
    c.surrogate_alpha = get_or(j, "surrogate_alpha", c.surrogate_alpha, "lif");
    const std::string model = get_or<std::string>(j, "neuron_model", "LIF", "lif");
    if (model == "LIF") c.neuron_model = NeuronModel::LIF;
    else if (model == "IF") c.neuron_model = NeuronModel::IF;
    else throw ConfigError("config: lif.neuron_model must be LIF or IF, got '" + model + "'");
    return c;
}

SynthesisConfig parse_synthesis(const json& j) {
    reject_unknown(j,
                   {"lambda_bn", "lambda_reg", "lambda_rca", "lambda_tar", "steps", "step_size",
                    "batch_size", "quantiles", "delta", "layer_weights", "threshold_mode",
                    "fixed_thresholds", "tar_norm"},
                   "synthesis");
    SynthesisConfig c;
    c.lambda_bn = get_or(j, "lambda_bn", c.lambda_bn, "synthesis");
    c.lambda_reg = get_or(j, "lambda_reg", c.lambda_reg, "synthesis");
    c.lambda_rca = get_or(j, "lambda_rca", c.lambda_rca, "synthesis");
    c.lambda_tar = get_or(j, "lambda_tar", c.lambda_tar, "synthesis");
    c.steps = get_or(j, "steps", c.steps, "synthesis");
    c.step_size = get_or(j, "step_size", c.step_size, "synthesis");
    c.batch_size = get_or(j, "batch_size", c.batch_size, "synthesis");
    c.quantiles = get_or(j, "quantiles", c.quantiles, "synthesis");
    c.delta = get_or(j, "delta", c.delta, "synthesis");
    c.layer_weights = get_or(j, "layer_weights", c.layer_weights, "synthesis");
    const std::string mode = get_or<std::string>(j, "threshold_mode", "quantile", "synthesis");
    if (mode == "quantile") c.threshold_mode = ThresholdMode::quantile;
    else if (mode == "fixed") c.threshold_mode = ThresholdMode::fixed;
    else throw ConfigError("config: synthesis.threshold_mode must be quantile or fixed");
    c.fixed_thresholds = get_or(j, "fixed_thresholds", c.fixed_thresholds, "synthesis");
    const std::string norm = get_or<std::string>(j, "tar_norm", "batch", "synthesis");
    if (norm == "batch") c.tar_norm = TarNorm::batch;
    else if (norm == "running") c.tar_norm = TarNorm::running;
    else throw ConfigError("config: synthesis.tar_norm must be batch or running");
    return c;
}

DistillConfig parse_distill(const json& j) {
    reject_unknown(j,
                   {"temperature", "rounds", "kd_steps", "student_lr", "student_momentum",
                    "pool_size", "use_label_ce", "warmup_rounds"},
                   "distill");
    DistillConfig c;
    c.temperature = get_or(j, "temperature", c.temperature, "distill");
    c.rounds = get_or(j, "rounds", c.rounds, "distill");
    c.kd_steps = get_or(j, "kd_steps", c.kd_steps, "distill");
    c.student_lr = get_or(j, "student_lr", c.student_lr, "distill");
    c.student_momentum = get_or(j, "student_momentum", c.student_momentum, "distill");
    c.pool_size = get_or(j, "pool_size", c.pool_size, "distill");
    c.use_label_ce = get_or(j, "use_label_ce", c.use_label_ce, "distill");
    c.warmup_rounds = get_or(j, "warmup_rounds", c.warmup_rounds, "distill");
    return c;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (dataset.num_classes < 2) throw ConfigError("config: dataset.num_classes must be >= 2");
    if (dataset.dim < 2) throw ConfigError("config: dataset.dim must be >= 2");
    if (dataset.n_per_class < 5) throw ConfigError("config: dataset.n_per_class must be >= 5");
    if (dataset.spread < 0.0) throw ConfigError("config: dataset.spread must be >= 0");
    if (teacher.hidden.empty()) throw ConfigError("config: teacher.hidden must be nonempty");
    if (!(teacher.lr > 0.0)) throw ConfigError("config: teacher.lr must be positive");
    if (teacher.momentum < 0.0 || teacher.momentum >= 1.0)
        throw ConfigError("config: teacher.momentum must lie in [0,1)");
    if (teacher.batch_size < 2) throw ConfigError("config: teacher.batch_size must be >= 2");
    if (seeds.empty()) throw ConfigError("config: seeds must be nonempty");
    if (out_dir.empty()) throw ConfigError("config: out_dir must be nonempty");
    try {
        lif.validate();
        synthesis.validate();
        distill.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

std::string ExperimentConfig::to_json_string() const {
    json j;
    j["dataset"] = {{"num_classes", dataset.num_classes},
                    {"dim", dataset.dim},
                    {"n_per_class", dataset.n_per_class},
                    {"spread", dataset.spread},
                    {"seed", dataset.seed}};
    j["teacher"] = {{"hidden", teacher.hidden},       {"epochs", teacher.epochs},
                    {"lr", teacher.lr},               {"momentum", teacher.momentum},
                    {"batch_size", teacher.batch_size}, {"seed", teacher.seed},
                    {"checkpoint", teacher.checkpoint}};
    j["lif"] = {{"tau", lif.tau},
                {"v_th", lif.v_th},
                {"v_reset", lif.v_reset},
                {"steps", lif.steps},
                {"surrogate_alpha", lif.surrogate_alpha},
                {"neuron_model", lif.neuron_model == NeuronModel::IF ? "IF" : "LIF"}};
    j["synthesis"] = {
        {"lambda_bn", synthesis.lambda_bn},
        {"lambda_reg", synthesis.lambda_reg},
        {"lambda_rca", synthesis.lambda_rca},
        {"lambda_tar", synthesis.lambda_tar},
        {"steps", synthesis.steps},
        {"step_size", synthesis.step_size},
        {"batch_size", synthesis.batch_size},
        {"quantiles", synthesis.quantiles},
        {"delta", synthesis.delta},
        {"layer_weights", synthesis.layer_weights},
        {"threshold_mode",
         synthesis.threshold_mode == ThresholdMode::fixed ? "fixed" : "quantile"},
        {"fixed_thresholds", synthesis.fixed_thresholds},
        {"tar_norm", synthesis.tar_norm == TarNorm::running ? "running" : "batch"}};
    j["distill"] = {{"temperature", distill.temperature},
                    {"rounds", distill.rounds},
                    {"kd_steps", distill.kd_steps},
                    {"student_lr", distill.student_lr},
                    {"student_momentum", distill.student_momentum},
                    {"pool_size", distill.pool_size},
                    {"use_label_ce", distill.use_label_ce},
                    {"warmup_rounds", distill.warmup_rounds}};
    j["variant"] = variant_cli_name(variant);
    j["seeds"] = seeds;
    j["out_dir"] = out_dir;
    return j.dump(1) + "\n";
}

ExperimentConfig ExperimentConfig::from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: not valid JSON: ") + e.what());
    }
    reject_unknown(
        j, {"dataset", "teacher", "lif", "synthesis", "distill", "variant", "seeds", "out_dir"},
        "<root>");
    for (const char* section : {"dataset", "teacher", "lif", "synthesis", "distill"})
        if (!j.contains(section))
            throw ConfigError(std::string("config: missing section '") + section + "'");
    ExperimentConfig c;
    c.dataset = parse_dataset(j["dataset"]);
    c.teacher = parse_teacher(j["teacher"]);
    c.lif = parse_lif(j["lif"]);
    c.synthesis = parse_synthesis(j["synthesis"]);
    c.distill = parse_distill(j["distill"]);
    if (j.contains("variant"))
        c.variant = variant_from_string(get_or<std::string>(j, "variant", "stars", "<root>"));
    c.seeds = get_or(j, "seeds", c.seeds, "<root>");
    c.out_dir = get_or(j, "out_dir", c.out_dir, "<root>");
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("config: cannot open file: " + path.string());
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return from_json_string(text);
}

bool ExperimentConfig::operator==(const ExperimentConfig& other) const {
    auto key = [](const ExperimentConfig& c) {
        return std::tuple(c.dataset, c.teacher, c.lif.tau, c.lif.v_th, c.lif.v_reset,
                          c.lif.steps, c.lif.surrogate_alpha, c.lif.neuron_model,
                          c.synthesis.lambda_bn, c.synthesis.lambda_reg, c.synthesis.lambda_rca,
                          c.synthesis.lambda_tar, c.synthesis.steps, c.synthesis.step_size,
                          c.synthesis.batch_size, c.synthesis.quantiles, c.synthesis.delta,
                          c.synthesis.layer_weights, c.synthesis.threshold_mode,
                          c.synthesis.fixed_thresholds, c.synthesis.tar_norm,
                          c.distill.temperature, c.distill.rounds, c.distill.kd_steps,
                          c.distill.student_lr, c.distill.student_momentum, c.distill.pool_size,
                          c.distill.use_label_ce, c.distill.warmup_rounds, c.variant, c.seeds,
                          c.out_dir);
    };
    return key(*this) == key(other);
}

}  // namespace stars
