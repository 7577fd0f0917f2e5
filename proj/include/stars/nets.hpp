#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stars/data.hpp"
#include "stars/rng.hpp"
#include "stars/tensor.hpp"

namespace stars {

/// Fully connected layer, weights stored [out x in].
struct DenseLayer {
    Tensor W;
    Tensor b;

    Tensor forward(const Tensor& x) const;  // x [B x in] -> [B x out]
    static DenseLayer init(std::size_t in, std::size_t out, Rng& rng);
};

/// Batch normalization over the batch axis with running-statistic tracking.
/// Train-mode forward normalizes with batch statistics and updates the
/// running estimates; eval-mode forward uses the stored estimates and never
/// mutates state.
class BatchNormLayer {
public:
    explicit BatchNormLayer(std::size_t channels, double momentum = 0.1, double eps = 1e-5);

    Tensor forward_train(const Tensor& a);
    Tensor forward_eval(const Tensor& a) const;

    std::size_t channels() const { return running_mean_.size(); }
    bool initialized() const { return initialized_; }
    double momentum() const { return momentum_; }
    double eps() const { return eps_; }
    const std::vector<double>& running_mean() const { return running_mean_; }
    const std::vector<double>& running_var() const { return running_var_; }
    void set_running(std::vector<double> mean, std::vector<double> var);

    Tensor gamma_bn;  // scale [C]
    Tensor beta_bn;   // shift [C]

private:
    std::vector<double> running_mean_;
    std::vector<double> running_var_;
    double momentum_;
    double eps_;
    bool initialized_ = false;
};

struct TeacherArch {
    std::size_t input_dim = 16;
    std::vector<std::size_t> hidden{64, 64};
    std::size_t num_classes = 4;
    bool operator==(const TeacherArch&) const = default;
};

/// Dense classifier: blocks of (dense -> batchnorm -> relu) and a linear
/// logit head. Pre-BN and pre-activation (post-BN, pre-ReLU) taps are exposed
/// per hidden block.
class TeacherNet {
public:
    TeacherNet(TeacherArch arch, Rng& rng);

    struct Taps {
        std::vector<Tensor> pre_bn;   // dense outputs, before BN     [B x C_l]
        std::vector<Tensor> pre_act;  // after BN, before ReLU        [B x C_l]
    };

    /// Batch statistics drive BN; running statistics are updated. B >= 2.
    Tensor forward_train(const Tensor& batch);
    /// Running statistics drive BN; no state is mutated.
    Tensor forward_eval(const Tensor& batch, Taps* taps = nullptr) const;

    std::vector<Tensor> tap_pre_bn(const Tensor& batch) const;
    std::vector<Tensor> tap_pre_activation(const Tensor& batch) const;

    const TeacherArch& arch() const { return arch_; }
    std::size_t num_blocks() const { return dense_.size(); }
    const std::vector<std::size_t>& tap_layers() const { return tap_layers_; }
    DenseLayer& dense(std::size_t i) { return dense_[i]; }
    const DenseLayer& dense(std::size_t i) const { return dense_[i]; }
    BatchNormLayer& bn(std::size_t i) { return bn_[i]; }
    const BatchNormLayer& bn(std::size_t i) const { return bn_[i]; }
    DenseLayer& head() { return head_; }
    const DenseLayer& head() const { return head_; }

    std::vector<Tensor> parameters() const;
    /// Marks all parameters as constants; forwards stop recording graphs.
    void freeze();

private:
    TeacherArch arch_;
    std::vector<DenseLayer> dense_;
    std::vector<BatchNormLayer> bn_;
    DenseLayer head_;
    std::vector<std::size_t> tap_layers_;  // selected layer set, default: all blocks
};

struct TeacherTrainConfig {
    std::size_t epochs = 80;
    double lr = 0.05;
    double momentum = 0.9;
    std::size_t batch_size = 64;
    std::uint64_t seed = 7;
};

struct TrainReport {
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    double final_loss = 0.0;
};

/// Cross-entropy pretraining with momentum gradient descent. Aborts with a
/// NumericalError diagnostic if the loss goes non-finite.
TrainReport train_teacher(TeacherNet& net, const DataSplits& data,
                          const TeacherTrainConfig& cfg);

double accuracy(const Tensor& logits, const std::vector<int>& labels);

/// Argmax-accuracy of an eval-mode forward over a dataset.
double evaluate_teacher(const TeacherNet& net, const Dataset& ds);

// ---- checkpoint I/O (JSON, round-trip-exact decimal doubles) ----

void save_checkpoint(const TeacherNet& net, const std::filesystem::path& path);
TeacherNet load_checkpoint(const std::filesystem::path& path);

}  // namespace stars
