#include "stars/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "stars/errors.hpp"
#include "stars/io.hpp"
#include "stars/optim.hpp"
#include "stars/rng.hpp"
#include "stars/tensor_detail.hpp"

namespace stars {

void SynthesisConfig::validate() const {
    if (batch_size < 2) throw ConfigError("synthesis: batch_size must be >= 2");
    if (!(step_size > 0.0)) throw ConfigError("synthesis: step_size must be positive");
    if (!(delta > 0.0)) throw ConfigError("synthesis: delta must be positive");
    if (lambda_bn < 0 || lambda_reg < 0 || lambda_rca < 0 || lambda_tar < 0)
        throw ConfigError("synthesis: loss weights must be nonnegative");
    if (threshold_mode == ThresholdMode::quantile) {
        if (quantiles.empty()) throw ConfigError("synthesis: quantile set must be nonempty");
        for (std::size_t i = 0; i < quantiles.size(); ++i) {
            if (!(quantiles[i] > 0.0 && quantiles[i] < 1.0))
                throw ConfigError("synthesis: quantiles must lie in (0,1)");
            if (i > 0 && !(quantiles[i] > quantiles[i - 1]))
                throw ConfigError("synthesis: quantiles must be strictly increasing");
        }
    } else {
        if (fixed_thresholds.empty())
            throw ConfigError("synthesis: fixed threshold mode needs fixed_thresholds");
        for (std::size_t i = 1; i < fixed_thresholds.size(); ++i)
            if (!(fixed_thresholds[i] > fixed_thresholds[i - 1]))
                throw ConfigError("synthesis: fixed_thresholds must be strictly increasing");
    }
    for (double w : layer_weights)
        if (w < 0.0) throw ConfigError("synthesis: layer weights must be nonnegative");
}

// ---------------------------------------------------------------------------

PooledPair pooled_features(const Tensor& teacher_feat, const Tensor& student_feat) {
    const auto& ts = teacher_feat.shape();
    const auto& ss = student_feat.shape();
    if (ts.size() != 2 && ts.size() != 3)
        throw ContractError("pooled_features: teacher feature must be [BxC] or [BxCxN]");
    if (ss.size() != 3 && ss.size() != 4)
        throw ContractError("pooled_features: student feature must be [TxBxC] or [TxBxCxN]");

    const std::size_t b = ts[0], c = ts[1];
    PooledPair out;
    if (ts.size() == 2) {
        out.teacher = teacher_feat;
    } else {
        const std::size_t n = ts[2];
        out.teacher = reshape(mean(reshape(teacher_feat, {b * c, n}), 1), {b, c});
    }

    const std::size_t t = ss[0];
    if (ss[1] != b || ss[2] != c)
        throw ContractError("pooled_features: teacher " + shape_str(ts) + " and student " +
                            shape_str(ss) + " disagree on batch or channels");
    if (ss.size() == 3) {
        out.student = reshape(mean(reshape(student_feat, {t, b * c}), 0), {b, c});
    } else {
        const std::size_t n = ss[3];
        Tensor time_avg = mean(reshape(student_feat, {t, b * c * n}), 0);  // [B*C*N]
        out.student = reshape(mean(reshape(time_avg, {b * c, n}), 1), {b, c});
    }
    return out;
}

Tensor loss_cls(const Tensor& teacher_logits, const std::vector<int>& labels) {
    return cross_entropy_with_logits(teacher_logits, labels);
}

Tensor loss_bn(const std::vector<Tensor>& pre_bn, const TeacherNet& teacher) {
    if (pre_bn.size() != teacher.num_blocks())
        throw ContractError("loss_bn: tap count does not match BN layer count");
    Tensor total;
    for (std::size_t l = 0; l < pre_bn.size(); ++l) {
        Tensor mu_b = mean(pre_bn[l], 0);
        Tensor var_b = variance_biased(pre_bn[l], 0);
        const auto& bn = teacher.bn(l);
        Tensor mu_run(Shape{bn.channels()}, bn.running_mean());
        Tensor var_run(Shape{bn.channels()}, bn.running_var());
        Tensor term = add(sum(square(sub(mu_b, mu_run))), sum(square(sub(var_b, var_run))));
        total = l == 0 ? term : add(total, term);
    }
    return total;
}

Tensor loss_reg(const Tensor& inputs) {
    return scalar_mul(sum(square(inputs)), 1.0 / static_cast<double>(inputs.rows()));
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> resolve_weights(const std::vector<double>& weights, std::size_t layers,
                                    const char* who) {
    if (weights.empty()) return std::vector<double>(layers, 1.0);
    if (weights.size() != layers)
        throw ContractError(std::string(who) + ": layer weight count mismatch");
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) throw ContractError(std::string(who) + ": layer weights sum to zero");
    return weights;
}

/// Fused row l2-normalization. Rows below the 1e-12 norm guard divide by the
/// guard (forward) and are excluded from gradient flow: the guarded map has
/// slope 1/eps there, which swamps every other loss term, and a cosine
/// against a (near-)silent feature row carries no usable signal anyway.
Tensor row_normalize(const Tensor& z) {
    constexpr double kNormGuard = 1e-12;
    constexpr double kGradCutoff = 1e-8;
    const std::size_t b = z.rows(), c = z.cols();
    const auto& zv = z.values();
    std::vector<double> norms(b, 0.0);
    std::vector<double> out(b * c);
    for (std::size_t i = 0; i < b; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += zv[i * c + j] * zv[i * c + j];
        norms[i] = std::max(std::sqrt(acc), kNormGuard);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = zv[i * c + j] / norms[i];
    }
    auto zi = z.impl();
    return detail::make_node(
        z.shape(), std::move(out), {zi},
        [zi, b, c, norms](detail::TensorImpl& self) {
            auto& dz = zi->grad_buf();
            for (std::size_t i = 0; i < b; ++i) {
                if (norms[i] < kGradCutoff) continue;
                const double* zn = self.data.data() + i * c;
                const double* g = self.grad.data() + i * c;
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += g[j] * zn[j];
                for (std::size_t j = 0; j < c; ++j)
                    dz[i * c + j] += (g[j] - zn[j] * dot) / norms[i];
            }
        },
        "row_normalize");
}

/// Weighted layer aggregate sum(w_l * terms[l]) / sum(w_l).
Tensor aggregate_layers(const std::vector<Tensor>& terms, const std::vector<double>& weights) {
    double wsum = 0.0;
    for (double w : weights) wsum += w;
    Tensor total;
    for (std::size_t l = 0; l < terms.size(); ++l) {
        Tensor scaled = scalar_mul(terms[l], weights[l]);
        total = l == 0 ? scaled : add(total, scaled);
    }
    return scalar_mul(total, 1.0 / wsum);
}

}  // namespace

Tensor rca_loss(const std::vector<Tensor>& z_teacher, const std::vector<Tensor>& z_student,
                const std::vector<double>& layer_weights) {
    if (z_teacher.size() != z_student.size() || z_teacher.empty())
        throw ContractError("rca_loss: layer lists must align and be nonempty");
    const auto w = resolve_weights(layer_weights, z_teacher.size(), "rca_loss");

    std::vector<Tensor> terms;
    for (std::size_t l = 0; l < z_teacher.size(); ++l) {
        const std::size_t b = z_teacher[l].rows();
        if (b < 2) throw ContractError("rca_loss: needs at least 2 samples");
        if (z_teacher[l].shape() != z_student[l].shape())
            throw ContractError("rca_loss: teacher/student feature shapes differ");
        Tensor gt = matmul(row_normalize(z_teacher[l]), transpose(row_normalize(z_teacher[l])));
        Tensor gs = matmul(row_normalize(z_student[l]), transpose(row_normalize(z_student[l])));
        // Off-diagonal mask; the fixed diagonal (cosine of a sample with
        // itself) carries no information and is excluded by definition.
        std::vector<double> mask(b * b, 1.0);
        for (std::size_t i = 0; i < b; ++i) mask[i * b + i] = 0.0;
        Tensor off(Shape{b, b}, std::move(mask));
        Tensor sq = mul(square(sub(gs, gt)), off);
        // each unordered pair appears twice in the masked sum
        terms.push_back(scalar_mul(sum(sq), 1.0 / static_cast<double>(b * (b - 1))));
    }
    return aggregate_layers(terms, w);
}

// ---------------------------------------------------------------------------

namespace {

/// Linear-interpolation empirical quantile of sorted values.
double interp_quantile(const std::vector<double>& sorted, double q) {
    const double h = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

/// Scalar anchor statistics of a feature matrix: mean and biased std of all
/// B*C entries.
void batch_anchor(const Tensor& z, double* mu, double* sd) {
    const auto& v = z.values();
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m);
    var /= static_cast<double>(v.size());
    *mu = m;
    *sd = std::sqrt(var);
}

/// Anchor statistics implied by the teacher's stored BN transform: post-BN
/// channel c has mean beta_c and variance ~ gamma_c^2; the anchors are the
/// moments of the equal-weight channel mixture.
void running_anchor(const TeacherNet& teacher, std::size_t layer, double* mu, double* sd) {
    const auto& bn = teacher.bn(layer);
    const auto& gamma = bn.gamma_bn.values();
    const auto& beta = bn.beta_bn.values();
    const auto& rvar = bn.running_var();
    const std::size_t c = bn.channels();
    double m = 0.0, second = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
        const double vj = gamma[j] * gamma[j] * rvar[j] / (rvar[j] + bn.eps());
        m += beta[j];
        second += vj + beta[j] * beta[j];
    }
    m /= static_cast<double>(c);
    second /= static_cast<double>(c);
    *mu = m;
    *sd = std::sqrt(std::max(0.0, second - m * m));
}

}  // namespace

ThresholdSet teacher_thresholds(const std::vector<Tensor>& z_teacher, const SynthesisConfig& cfg,
                                const TeacherNet* teacher) {
    ThresholdSet out;
    for (std::size_t l = 0; l < z_teacher.size(); ++l) {
        LayerAnchors anchors;
        if (cfg.tar_norm == TarNorm::running) {
            if (!teacher) throw ContractError("teacher_thresholds: running norm needs a teacher");
            running_anchor(*teacher, l, &anchors.mu, &anchors.sd);
        } else {
            batch_anchor(z_teacher[l], &anchors.mu, &anchors.sd);
        }

        if (cfg.threshold_mode == ThresholdMode::fixed) {
            anchors.thresholds = cfg.fixed_thresholds;
            out.layers.push_back(std::move(anchors));
            continue;
        }

        const std::size_t m_count = cfg.quantiles.size();
        if (z_teacher[l].size() < m_count)
            throw ContractError("teacher_thresholds: quantile mode needs B*C >= M");
        if (anchors.sd < 1e-12) {
            std::cerr << "[stars] warning: degenerate teacher feature spread at layer " << l
                      << "; thresholds set to 0\n";
            anchors.thresholds.assign(m_count, 0.0);
            out.layers.push_back(std::move(anchors));
            continue;
        }
        std::vector<double> normalized = z_teacher[l].values();
        for (auto& v : normalized) v = (v - anchors.mu) / (anchors.sd + 1e-12);
        std::sort(normalized.begin(), normalized.end());
        for (double q : cfg.quantiles)
            anchors.thresholds.push_back(interp_quantile(normalized, q));
        out.layers.push_back(std::move(anchors));
    }
    return out;
}

Tensor tar_loss(const std::vector<Tensor>& z_teacher, const std::vector<Tensor>& z_student,
                const ThresholdSet& thresholds, double delta,
                const std::vector<double>& layer_weights) {
    if (z_teacher.size() != z_student.size() || z_teacher.size() != thresholds.layers.size() ||
        z_teacher.empty())
        throw ContractError("tar_loss: layer lists must align and be nonempty");
    if (!(delta > 0.0)) throw ContractError("tar_loss: delta must be positive");
    const auto w = resolve_weights(layer_weights, z_teacher.size(), "tar_loss");

    std::vector<Tensor> terms;
    for (std::size_t l = 0; l < z_teacher.size(); ++l) {
        const auto& anc = thresholds.layers[l];
        const double inv_sd = 1.0 / (anc.sd + 1e-12);
        // both sides normalized with the same teacher-derived anchors
        Tensor zt = scalar_mul(add_scalar(z_teacher[l], -anc.mu), inv_sd);
        Tensor zs = scalar_mul(add_scalar(z_student[l], -anc.mu), inv_sd);
        Tensor layer_term;
        for (std::size_t m = 0; m < anc.thresholds.size(); ++m) {
            const double theta = anc.thresholds[m];
            Tensor pt = mean(sigmoid(scalar_mul(add_scalar(zt, -theta), 1.0 / delta)));
            Tensor ps = mean(sigmoid(scalar_mul(add_scalar(zs, -theta), 1.0 / delta)));
            Tensor sq = square(sub(ps, pt));
            layer_term = m == 0 ? sq : add(layer_term, sq);
        }
        terms.push_back(
            scalar_mul(layer_term, 1.0 / static_cast<double>(anc.thresholds.size())));
    }
    return aggregate_layers(terms, w);
}

// ---------------------------------------------------------------------------

namespace {

/// Scoped freeze: parameters are constants for the lifetime of the guard, so
/// backward reaches only the synthetic inputs.
class ParamFreeze {
public:
    explicit ParamFreeze(std::vector<Tensor> params) : params_(std::move(params)) {
        for (auto& p : params_) {
            saved_.push_back(p.requires_grad());
            p.set_requires_grad(false);
        }
    }
    ~ParamFreeze() {
        for (std::size_t i = 0; i < params_.size(); ++i)
            params_[i].set_requires_grad(saved_[i]);
    }
    ParamFreeze(const ParamFreeze&) = delete;
    ParamFreeze& operator=(const ParamFreeze&) = delete;

private:
    std::vector<Tensor> params_;
    std::vector<bool> saved_;
};

SyntheticBatch init_batch(std::size_t batch_size, std::size_t dim, std::size_t num_classes,
                          std::uint64_t seed) {
    Rng rng = Rng(seed).derive("synthesis-init");
    std::vector<double> values(batch_size * dim);
    for (auto& v : values) v = 0.5 * rng.normal();
    SyntheticBatch batch;
    batch.inputs = Tensor({batch_size, dim}, std::move(values), true);
    batch.labels.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i)
        batch.labels.push_back(static_cast<int>(i % num_classes));
    return batch;
}

[[noreturn]] void abort_nonfinite(std::size_t step, const TraceRow& row) {
    throw NumericalError("synthesis: non-finite loss at step " + std::to_string(step) +
                         " (cls=" + format_double(row.cls) + ", bn=" + format_double(row.bn) +
                         ", reg=" + format_double(row.reg) + ", rca=" + format_double(row.rca) +
                         ", tar=" + format_double(row.tar) + ")");
}

}  // namespace

SynthesisResult synthesize(const TeacherNet& teacher, const StudentNet& student,
                           const LIFConfig& lif, const SynthesisConfig& cfg,
                           std::size_t num_classes, std::uint64_t seed) {
    cfg.validate();
    lif.validate();
    SynthesisResult result;
    result.batch = init_batch(cfg.batch_size, teacher.arch().input_dim, num_classes, seed);
    Adam adam({result.batch.inputs}, cfg.step_size);
    const bool needs_student = cfg.lambda_rca > 0.0 || cfg.lambda_tar > 0.0;
    ParamFreeze freeze_student(student.parameters());

    for (std::size_t k = 0; k < cfg.steps; ++k) {
        result.batch.inputs.zero_grad();
        TeacherNet::Taps taps;
        Tensor logits = teacher.forward_eval(result.batch.inputs, &taps);
        Tensor l_cls = loss_cls(logits, result.batch.labels);
        Tensor l_bn = loss_bn(taps.pre_bn, teacher);
        Tensor l_reg = loss_reg(result.batch.inputs);
        Tensor total = add(l_cls, scalar_mul(l_bn, cfg.lambda_bn));
        total = add(total, scalar_mul(l_reg, cfg.lambda_reg));

        TraceRow row{k, l_cls.value(), l_bn.value(), l_reg.value(), 0.0, 0.0, 0.0};
        if (needs_student) {
            StudentNet::Forward fw = student.forward(result.batch.inputs, lif);
            ++result.student_feature_evals;
            // Teacher features are the per-step anchor: like the thresholds
            // and normalization statistics they are constants of the step, so
            // the regularizers steer the structure the student sees toward
            // the teacher's rather than the other way around.
            std::vector<Tensor> z_t, z_s;
            for (std::size_t l = 0; l < taps.pre_act.size(); ++l) {
                PooledPair pooled = pooled_features(taps.pre_act[l], fw.features[l]);
                z_t.push_back(pooled.teacher.detached());
                z_s.push_back(pooled.student);
            }
            if (cfg.lambda_rca > 0.0) {
                Tensor l_rca = rca_loss(z_t, z_s, cfg.layer_weights);
                row.rca = l_rca.value();
                total = add(total, scalar_mul(l_rca, cfg.lambda_rca));
            }
            if (cfg.lambda_tar > 0.0) {
                ThresholdSet th = teacher_thresholds(z_t, cfg, &teacher);
                Tensor l_tar = tar_loss(z_t, z_s, th, cfg.delta, cfg.layer_weights);
                row.tar = l_tar.value();
                total = add(total, scalar_mul(l_tar, cfg.lambda_tar));
            }
        }
        row.total = total.value();
        if (!std::isfinite(row.total)) abort_nonfinite(k, row);
        result.trace.push_back(row);

        backward(total);
        adam.step();
    }
    result.batch.inputs.zero_grad();
    return result;
}

SynthesisResult synthesize_baseline(const TeacherNet& teacher, const SynthesisConfig& cfg,
                                    std::size_t num_classes, std::uint64_t seed) {
    cfg.validate();
    SynthesisResult result;
    result.batch = init_batch(cfg.batch_size, teacher.arch().input_dim, num_classes, seed);
    Adam adam({result.batch.inputs}, cfg.step_size);

    for (std::size_t k = 0; k < cfg.steps; ++k) {
        result.batch.inputs.zero_grad();
        TeacherNet::Taps taps;
        Tensor logits = teacher.forward_eval(result.batch.inputs, &taps);
        Tensor l_cls = loss_cls(logits, result.batch.labels);
        Tensor l_bn = loss_bn(taps.pre_bn, teacher);
        Tensor l_reg = loss_reg(result.batch.inputs);
        Tensor total = add(l_cls, scalar_mul(l_bn, cfg.lambda_bn));
        total = add(total, scalar_mul(l_reg, cfg.lambda_reg));

        TraceRow row{k, l_cls.value(), l_bn.value(), l_reg.value(), 0.0, 0.0, total.value()};
        if (!std::isfinite(row.total)) abort_nonfinite(k, row);
        result.trace.push_back(row);

        backward(total);
        adam.step();
    }
    result.batch.inputs.zero_grad();
    return result;
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
    CsvWriter csv({"step", "L_cls", "L_BN", "L_reg", "L_RCA", "L_TAR", "L_total"});
    for (const auto& r : trace)
        csv.add_row({format_int(static_cast<long long>(r.step)), format_double(r.cls),
                     format_double(r.bn), format_double(r.reg), format_double(r.rca),
                     format_double(r.tar), format_double(r.total)});
    return csv.str();
}

}  // namespace stars
