#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stars/nets.hpp"
#include "stars/snn.hpp"
#include "stars/tensor.hpp"

namespace stars {

enum class ThresholdMode { quantile, fixed };
enum class TarNorm { batch, running };

struct SynthesisConfig {
    double lambda_bn = 10.0;
    double lambda_reg = 1e-3;
    double lambda_rca = 1.0;
    double lambda_tar = 1.0;
    std::size_t steps = 200;      // optimization steps K
    double step_size = 0.05;      // eta
    std::size_t batch_size = 64;  // B
    std::vector<double> quantiles{0.60, 0.70, 0.80, 0.90, 0.95};
    double delta = 0.5;  // softness of the threshold transition
    std::vector<double> layer_weights;  // empty -> uniform 1 per selected layer
    ThresholdMode threshold_mode = ThresholdMode::quantile;
    std::vector<double> fixed_thresholds;
    TarNorm tar_norm = TarNorm::batch;

    void validate() const;
};

/// Optimizable surrogate inputs plus their assigned class labels.
struct SyntheticBatch {
    Tensor inputs;  // [B x D], requires_grad while being optimized
    std::vector<int> labels;
};

/// Teacher-anchored thresholds per selected layer, in normalized teacher
/// coordinates, together with the anchor statistics that define those
/// coordinates. Student features must be normalized with the same anchors.
struct LayerAnchors {
    double mu = 0.0;
    double sd = 1.0;
    std::vector<double> thresholds;  // ascending
};

struct ThresholdSet {
    std::vector<LayerAnchors> layers;
};

/// Collapses raw features to batch-by-channel form: the teacher feature
/// [B x C x N] is averaged over spatial locations, the student feature
/// [T x B x C x N] over both time steps and spatial locations. Dense nets
/// pass N = 1 ([B x C] and [T x B x C] accepted directly).
struct PooledPair {
    Tensor teacher;  // z_T [B x C]
    Tensor student;  // z_S [B x C]
};
PooledPair pooled_features(const Tensor& teacher_feat, const Tensor& student_feat);

/// Mean cross-entropy of the teacher softmax against assigned labels.
Tensor loss_cls(const Tensor& teacher_logits, const std::vector<int>& labels);

/// sum_l ||mu_l(B) - running_mean_l||^2 + ||var_l(B) - running_var_l||^2,
/// batch variance biased.
Tensor loss_bn(const std::vector<Tensor>& pre_bn, const TeacherNet& teacher);

/// Mean squared l2 norm of the batch inputs: (1/B) sum_i ||x_i||^2.
Tensor loss_reg(const Tensor& inputs);

/// Off-diagonal cosine-gram matching between teacher and student features,
/// averaged over unordered sample pairs, aggregated over layers with weights
/// w_l. Zero-norm rows are guarded with eps 1e-12 rather than rejected.
Tensor rca_loss(const std::vector<Tensor>& z_teacher, const std::vector<Tensor>& z_student,
                const std::vector<double>& layer_weights);

/// Normalizes each layer's teacher features by their own scalar mean/std and
/// takes empirical quantiles (linear interpolation) as thresholds; fixed mode
/// takes cfg.fixed_thresholds directly on normalized coordinates. A
/// degenerate spread (< 1e-12) yields all-zero thresholds with a logged
/// warning. The `teacher` argument supplies running statistics for
/// TarNorm::running.
ThresholdSet teacher_thresholds(const std::vector<Tensor>& z_teacher, const SynthesisConfig& cfg,
                                const TeacherNet* teacher = nullptr);

/// Squared differences of soft exceedance probabilities over the threshold
/// set, averaged over thresholds, aggregated over layers.
Tensor tar_loss(const std::vector<Tensor>& z_teacher, const std::vector<Tensor>& z_student,
                const ThresholdSet& thresholds, double delta,
                const std::vector<double>& layer_weights);

struct TraceRow {
    std::size_t step;
    double cls, bn, reg, rca, tar, total;
};

struct SynthesisResult {
    SyntheticBatch batch;
    std::vector<TraceRow> trace;
    /// Number of student forward passes performed to collect features;
    /// stays 0 whenever lambda_rca == lambda_tar == 0.
    std::size_t student_feature_evals = 0;
};

/// Optimizes a synthetic batch under
///   L_cls + lambda_bn L_BN + lambda_reg R + lambda_rca L_RCA + lambda_tar L_TAR
/// with bias-corrected adaptive-moment gradient descent on the inputs only.
/// Teacher and student stay frozen for the duration of the call.
SynthesisResult synthesize(const TeacherNet& teacher, const StudentNet& student,
                           const LIFConfig& lif, const SynthesisConfig& cfg,
                           std::size_t num_classes, std::uint64_t seed);

/// Reference engine for the plug-and-play identity: optimizes the same batch
/// under the teacher-only objective L_cls + lambda_bn L_BN + lambda_reg R and
/// never touches student features. Bit-identical to synthesize() with
/// lambda_rca = lambda_tar = 0 for the same seed.
SynthesisResult synthesize_baseline(const TeacherNet& teacher, const SynthesisConfig& cfg,
                                    std::size_t num_classes, std::uint64_t seed);

std::string trace_csv(const std::vector<TraceRow>& trace);

}  // namespace stars
