#include "stars/distill.hpp"

#include <cmath>

#include "stars/errors.hpp"
#include "stars/io.hpp"
#include "stars/optim.hpp"

namespace stars {

void DistillConfig::validate() const {
    if (!(temperature > 0.0)) throw ConfigError("distill: temperature must be positive");
    if (rounds < 1) throw ConfigError("distill: rounds must be >= 1");
    if (!(student_lr > 0.0)) throw ConfigError("distill: student_lr must be positive");
    if (student_momentum < 0.0 || student_momentum >= 1.0)
        throw ConfigError("distill: student_momentum must lie in [0,1)");
    if (pool_size < 1) throw ConfigError("distill: pool_size must be >= 1");
}

Variant variant_from_string(const std::string& s) {
    if (s == "bn") return Variant::bn;
    if (s == "rca") return Variant::rca;
    if (s == "tar") return Variant::tar;
    if (s == "stars") return Variant::stars;
    throw ConfigError("variant: expected one of bn|rca|tar|stars, got '" + s + "'");
}

std::string variant_cli_name(Variant v) {
    switch (v) {
        case Variant::bn: return "bn";
        case Variant::rca: return "rca";
        case Variant::tar: return "tar";
        default: return "stars";
    }
}

std::string variant_tag(Variant v) {
    switch (v) {
        case Variant::bn: return "BN-only";
        case Variant::rca: return "RCA-only";
        case Variant::tar: return "TAR-only";
        default: return "STARS";
    }
}

SynthesisConfig apply_variant(const SynthesisConfig& base, Variant v) {
    SynthesisConfig cfg = base;
    if (v == Variant::bn || v == Variant::tar) cfg.lambda_rca = 0.0;
    if (v == Variant::bn || v == Variant::rca) cfg.lambda_tar = 0.0;
    return cfg;
}

// ---------------------------------------------------------------------------

Tensor kd_loss(const Tensor& teacher_logits, const Tensor& student_logits, double gamma) {
    if (teacher_logits.shape() != student_logits.shape())
        throw ShapeError("kd_loss: logit shapes " + shape_str(teacher_logits.shape()) + " and " +
                         shape_str(student_logits.shape()) + " differ");
    if (!(gamma > 0.0)) throw ContractError("kd_loss: temperature must be positive");
    Tensor pt = softmax_rows(teacher_logits, gamma);
    Tensor lpt = log_softmax_rows(teacher_logits, gamma);
    Tensor lps = log_softmax_rows(student_logits, gamma);
    return mean(sum(mul(pt, sub(lpt, lps)), 1));
}

std::vector<double> distill_round(const TeacherNet& teacher, StudentNet& student,
                                  const std::vector<SyntheticBatch>& pool,
                                  const DistillConfig& cfg, const LIFConfig& lif, Rng& rng) {
    cfg.validate();
    if (pool.empty()) throw ContractError("distill_round: empty batch pool");
    MomentumSgd sgd(student.parameters(), cfg.student_lr, cfg.student_momentum);
    std::vector<double> trace;
    trace.reserve(cfg.kd_steps);
    for (std::size_t step = 0; step < cfg.kd_steps; ++step) {
        const SyntheticBatch& batch =
            pool.size() == 1 ? pool[0] : pool[rng.uniform_index(pool.size())];
        sgd.zero_grad();
        Tensor t_logits = teacher.forward_eval(batch.inputs);
        Tensor s_logits = student.forward(batch.inputs, lif).logits;
        Tensor loss = kd_loss(t_logits, s_logits, cfg.temperature);
        if (cfg.use_label_ce)
            loss = add(loss, cross_entropy_with_logits(s_logits, batch.labels));
        const double v = loss.value();
        if (!std::isfinite(v))
            throw NumericalError("distill_round: non-finite loss at step " +
                                 std::to_string(step));
        trace.push_back(v);
        backward(loss);
        sgd.step();
    }
    return trace;
}

std::vector<double> distill_round(const TeacherNet& teacher, StudentNet& student,
                                  const SyntheticBatch& batch, const DistillConfig& cfg,
                                  const LIFConfig& lif, Rng& rng) {
    return distill_round(teacher, student, std::vector<SyntheticBatch>{batch}, cfg, lif, rng);
}

// ---------------------------------------------------------------------------

namespace {

double vec_mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
}

}  // namespace

ExperimentResult run_experiment(const TeacherNet& teacher, const DataSplits& data,
                                const LIFConfig& lif, const SynthesisConfig& synth,
                                const DistillConfig& distill, Variant variant,
                                std::uint64_t seed) {
    distill.validate();
    const SynthesisConfig cfg = apply_variant(synth, variant);
    Rng root(seed);
    Rng init_rng = root.derive("student-init");
    StudentNet student(teacher.arch(), init_rng);

    ExperimentResult result{.rounds = {}, .student = student, .student_feature_evals = 0};
    std::vector<SyntheticBatch> pool;
    for (std::size_t round = 0; round < distill.rounds; ++round) {
        Rng kd_rng = root.derive("kd", round);
        const std::uint64_t synth_seed = root.derive("synthesis", round).next_u64();
        SynthesisConfig round_cfg = cfg;
        if (round < distill.warmup_rounds) {
            round_cfg.lambda_rca = 0.0;
            round_cfg.lambda_tar = 0.0;
        }
        SynthesisResult syn =
            synthesize(teacher, student, lif, round_cfg, data.train.num_classes, synth_seed);
        result.student_feature_evals += syn.student_feature_evals;
        syn.batch.inputs.set_requires_grad(false);  // frozen once synthesized
        pool.push_back(syn.batch);
        if (pool.size() > distill.pool_size) pool.erase(pool.begin());

        std::vector<double> kd_trace = distill_round(teacher, student, pool, distill, lif, kd_rng);

        MetricsRecord rec;
        rec.variant = variant_tag(variant);
        rec.seed = seed;
        rec.round = round;
        rec.test_acc = evaluate_student(student, data.test, lif);
        rec.kd_loss = vec_mean(kd_trace);
        std::vector<double> cls, bn, rca, tar;
        for (const auto& row : syn.trace) {
            cls.push_back(row.cls);
            bn.push_back(row.bn);
            rca.push_back(row.rca);
            tar.push_back(row.tar);
        }
        rec.l_cls = vec_mean(cls);
        rec.l_bn = vec_mean(bn);
        rec.l_rca = vec_mean(rca);
        rec.l_tar = vec_mean(tar);
        rec.firing_rate = vec_mean(student.firing_rate(pool.back().inputs, lif));
        result.rounds.push_back(std::move(rec));
    }
    result.student = std::move(student);
    return result;
}

const std::vector<std::vector<double>>& quantile_prefix_sets() {
    static const std::vector<std::vector<double>> sets{
        {0.90, 0.95},
        {0.80, 0.90, 0.95},
        {0.70, 0.80, 0.90, 0.95},
        {0.60, 0.70, 0.80, 0.90, 0.95},
    };
    return sets;
}

std::string metrics_csv_header() {
    return "variant,seed,round,test_acc,kd_loss,L_cls,L_BN,L_RCA,L_TAR,firing_rate\n";
}

std::string metrics_csv_row(const MetricsRecord& r) {
    std::string row = r.variant;
    row += ',' + std::to_string(r.seed);
    row += ',' + std::to_string(r.round);
    row += ',' + format_double(r.test_acc);
    row += ',' + format_double(r.kd_loss);
    row += ',' + format_double(r.l_cls);
    row += ',' + format_double(r.l_bn);
    row += ',' + format_double(r.l_rca);
    row += ',' + format_double(r.l_tar);
    row += ',' + format_double(r.firing_rate);
    row += '\n';
    return row;
}

}  // namespace stars
