#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stars/data.hpp"
#include "stars/synthesis.hpp"

namespace stars {

struct DistillConfig {
    double temperature = 4.0;  // gamma
    std::size_t rounds = 20;
    std::size_t kd_steps = 100;
    double student_lr = 0.05;
    double student_momentum = 0.9;
    std::size_t pool_size = 5;  // rolling pool of most recent synthetic batches
    bool use_label_ce = false;  // optional CE-on-assigned-labels term
    /// Rounds distilled under the teacher-only objective before the
    /// student-feature terms activate; aligning batches to a still-random
    /// student couples the synthesis to noise.
    std::size_t warmup_rounds = 5;

    void validate() const;
};

enum class Variant { bn, rca, tar, stars };

Variant variant_from_string(const std::string& s);
std::string variant_cli_name(Variant v);
std::string variant_tag(Variant v);  // "BN-only" | "RCA-only" | "TAR-only" | "STARS"

/// Applies the variant's (lambda_rca, lambda_tar) gating to a base config.
SynthesisConfig apply_variant(const SynthesisConfig& base, Variant v);

/// Mean over the batch of KL(softmax(t/gamma) || softmax(s/gamma)),
/// computed with log-softmax for stability.
Tensor kd_loss(const Tensor& teacher_logits, const Tensor& student_logits, double gamma);

/// kd_steps of momentum gradient descent on the student against frozen
/// teacher targets. Batches are sampled uniformly from the pool; a pool of
/// one is the single-batch case. Returns the per-step loss trace.
std::vector<double> distill_round(const TeacherNet& teacher, StudentNet& student,
                                  const std::vector<SyntheticBatch>& pool,
                                  const DistillConfig& cfg, const LIFConfig& lif, Rng& rng);

std::vector<double> distill_round(const TeacherNet& teacher, StudentNet& student,
                                  const SyntheticBatch& batch, const DistillConfig& cfg,
                                  const LIFConfig& lif, Rng& rng);

struct MetricsRecord {
    std::string variant;  // tag, e.g. "STARS"
    std::uint64_t seed = 0;
    std::size_t round = 0;
    double test_acc = 0.0;
    double kd_loss = 0.0;  // mean over the round's KD steps
    double l_cls = 0.0;    // means over the round's synthesis steps
    double l_bn = 0.0;
    double l_rca = 0.0;
    double l_tar = 0.0;
    double firing_rate = 0.0;  // mean over layers, latest synthetic batch
};

struct ExperimentResult {
    std::vector<MetricsRecord> rounds;
    StudentNet student;
    std::size_t student_feature_evals = 0;  // summed over synthesis calls

    double final_accuracy() const { return rounds.empty() ? 0.0 : rounds.back().test_acc; }
};

/// Alternates {synthesize -> distill} for cfg.rounds. The student starts from
/// a seeded random initialization and persists across rounds; the held-out
/// real test split is used for evaluation only.
ExperimentResult run_experiment(const TeacherNet& teacher, const DataSplits& data,
                                const LIFConfig& lif, const SynthesisConfig& synth,
                                const DistillConfig& distill, Variant variant,
                                std::uint64_t seed);

/// The Table-4 tail-quantile prefixes, M = 2..5.
const std::vector<std::vector<double>>& quantile_prefix_sets();

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& r);

}  // namespace stars
