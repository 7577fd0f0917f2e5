#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "stars/nets.hpp"
#include "stars/rng.hpp"
#include "stars/tensor.hpp"

namespace stars {

enum class NeuronModel { LIF, IF };

/// Spiking neuron parameters shared by the student network and the
/// rate analysis. IF is the no-leak variant of LIF.
struct LIFConfig {
    double tau = 2.0;
    double v_th = 1.0;
    double v_reset = 0.0;
    std::size_t steps = 4;  // simulation horizon T
    double surrogate_alpha = 4.0;
    NeuronModel neuron_model = NeuronModel::LIF;

    void validate() const;
};

/// Membrane potentials after reset, one per neuron. Wherever a spike fired at
/// the previous step the entry equals v_reset.
struct LIFState {
    Tensor V;  // [B x C]
};

struct LIFStepResult {
    Tensor spikes;  // binary [B x C]
    LIFState state;
    Tensor membrane;  // pre-reset potential H, exposed for analysis/tests
};

/// One step of the discrete neuron update:
///   LIF: H = V + (X - (V - v_reset)) / tau
///   IF:  H = V + X
///   S = step(H - v_th),  V' = H (1 - S) + v_reset S
/// The step is exact in the forward pass; its recorded gradient is the
/// scaled sigmoid derivative (surrogate).
LIFStepResult lif_step(const LIFState& state, const Tensor& input, const LIFConfig& cfg,
                       bool smooth = false);

/// Exact Heaviside forward with sigmoid-derivative surrogate backward.
inline Tensor surrogate_heaviside(const Tensor& x, double alpha) {
    return surrogate_step(x, alpha);
}

// ---- plain scalar simulation (no graphs), used by the rate analysis ----

/// Number of spikes emitted over cfg.steps under constant input drive.
std::size_t spike_count_constant(double drive, const LIFConfig& cfg);

/// First step index (1-based) at which a constant drive fires, or 0 if the
/// neuron stays silent over the horizon.
std::size_t first_spike_time(double drive, const LIFConfig& cfg);

/// Pre-reset membrane trace H[1..T] for a constant drive (resets applied).
std::vector<double> membrane_trace(double drive, const LIFConfig& cfg);

// ---------------------------------------------------------------------------

/// Spiking counterpart of the teacher: dense layers of the same widths, each
/// followed by a spiking nonlinearity, and an analog head whose per-step
/// logits are averaged over time (direct coding: the same input is presented
/// at every step).
class StudentNet {
public:
    StudentNet(TeacherArch arch, Rng& rng);

    struct Forward {
        Tensor logits;                 // [B x num_classes], time-averaged head output
        std::vector<Tensor> features;  // pre-LIF drives per tap layer, [T x B x C_l]
        std::vector<Tensor> spikes;    // spike tensors per tap layer, [T x B x C_l]
    };

    /// Membrane state starts at v_reset on every call; no cross-batch state.
    /// With smooth=true the exact threshold is replaced by its sigmoid
    /// relaxation, making the whole forward differentiable for gradient
    /// checks.
    Forward forward(const Tensor& batch, const LIFConfig& cfg, bool smooth = false) const;

    /// Mean spike rate per tap layer over steps, batch and channels.
    std::vector<double> firing_rate(const Tensor& batch, const LIFConfig& cfg) const;

    const TeacherArch& arch() const { return arch_; }
    std::size_t num_blocks() const { return dense_.size(); }
    DenseLayer& dense(std::size_t i) { return dense_[i]; }
    const DenseLayer& dense(std::size_t i) const { return dense_[i]; }
    DenseLayer& head() { return head_; }
    const DenseLayer& head() const { return head_; }

    std::vector<Tensor> parameters() const;
    void freeze();
    StudentNet clone() const;

private:
    TeacherArch arch_;
    std::vector<DenseLayer> dense_;
    DenseLayer head_;
};

double evaluate_student(const StudentNet& net, const Dataset& ds, const LIFConfig& cfg);

void save_student_checkpoint(const StudentNet& net, const LIFConfig& cfg,
                             const std::filesystem::path& path);
StudentNet load_student_checkpoint(const std::filesystem::path& path, LIFConfig* cfg_out);

}  // namespace stars
