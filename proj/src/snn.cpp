#include "stars/snn.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "stars/errors.hpp"

namespace stars {

void LIFConfig::validate() const {
    if (!(tau >= 1.0)) throw ConfigError("lif: tau must be >= 1");
    if (!(v_th > v_reset)) throw ConfigError("lif: v_th must exceed v_reset");
    if (steps < 1) throw ConfigError("lif: steps must be >= 1");
    if (!(surrogate_alpha > 0.0)) throw ConfigError("lif: surrogate_alpha must be positive");
}

LIFStepResult lif_step(const LIFState& state, const Tensor& input, const LIFConfig& cfg,
                       bool smooth) {
    if (state.V.shape() != input.shape())
        throw ShapeError("lif_step: state " + shape_str(state.V.shape()) + " vs input " +
                         shape_str(input.shape()));
    Tensor h;
    if (cfg.neuron_model == NeuronModel::LIF) {
        // H = V + (X - (V - v_r)) / tau
        Tensor drive = sub(input, add_scalar(state.V, -cfg.v_reset));
        h = add(state.V, scalar_mul(drive, 1.0 / cfg.tau));
    } else {
        h = add(state.V, input);
    }
    Tensor over = add_scalar(h, -cfg.v_th);
    Tensor s = smooth ? smooth_step(over, cfg.surrogate_alpha)
                      : surrogate_step(over, cfg.surrogate_alpha);
    // V' = H (1 - S) + v_r S
    Tensor vnext = add(mul(h, add_scalar(scalar_mul(s, -1.0), 1.0)), scalar_mul(s, cfg.v_reset));
    return LIFStepResult{s, LIFState{vnext}, h};
}

// ---------------------------------------------------------------------------
// plain scalar simulation

namespace {

template <typename OnStep>
void simulate_constant(double drive, const LIFConfig& cfg, OnStep&& on_step) {
    double v = cfg.v_reset;
    for (std::size_t t = 1; t <= cfg.steps; ++t) {
        const double h = cfg.neuron_model == NeuronModel::LIF
                             ? v + (drive - (v - cfg.v_reset)) / cfg.tau
                             : v + drive;
        const bool spike = h >= cfg.v_th;
        v = spike ? cfg.v_reset : h;
        on_step(t, h, spike);
    }
}

}  // namespace

std::size_t spike_count_constant(double drive, const LIFConfig& cfg) {
    std::size_t count = 0;
    simulate_constant(drive, cfg, [&](std::size_t, double, bool s) { count += s ? 1 : 0; });
    return count;
}

std::size_t first_spike_time(double drive, const LIFConfig& cfg) {
    std::size_t first = 0;
    simulate_constant(drive, cfg, [&](std::size_t t, double, bool s) {
        if (s && first == 0) first = t;
    });
    return first;
}

std::vector<double> membrane_trace(double drive, const LIFConfig& cfg) {
    std::vector<double> trace;
    trace.reserve(cfg.steps);
    simulate_constant(drive, cfg, [&](std::size_t, double h, bool) { trace.push_back(h); });
    return trace;
}

// ---------------------------------------------------------------------------

StudentNet::StudentNet(TeacherArch arch, Rng& rng) : arch_(std::move(arch)), head_{} {
    std::size_t in = arch_.input_dim;
    for (std::size_t width : arch_.hidden) {
        DenseLayer layer = DenseLayer::init(in, width, rng);
        if (!dense_.empty()) {
            // deeper layers see sparse binary inputs rather than dense unit-
            // variance ones; widen the weights so drives reach the threshold
            for (auto& w : layer.W.mutable_values()) w *= 2.0;
        }
        dense_.push_back(std::move(layer));
        in = width;
    }
    head_ = DenseLayer::init(in, arch_.num_classes, rng);
}

StudentNet::Forward StudentNet::forward(const Tensor& batch, const LIFConfig& cfg,
                                        bool smooth) const {
    cfg.validate();
    const std::size_t B = batch.rows();
    const std::size_t L = dense_.size();
    const std::size_t T = cfg.steps;

    std::vector<LIFState> states;
    states.reserve(L);
    for (std::size_t l = 0; l < L; ++l)
        states.push_back(LIFState{Tensor::full({B, arch_.hidden[l]}, cfg.v_reset)});

    // Layer-1 drive is identical at every step (direct coding); computed once
    // and referenced per step.
    Tensor first_drive = dense_[0].forward(batch);

    std::vector<std::vector<Tensor>> drives(L);   // [L][T] pre-LIF inputs
    std::vector<std::vector<Tensor>> spikes(L);   // [L][T] binary outputs
    Tensor logits_sum;
    for (std::size_t t = 0; t < T; ++t) {
        Tensor x = batch;
        for (std::size_t l = 0; l < L; ++l) {
            Tensor drive = l == 0 ? first_drive : dense_[l].forward(x);
            auto res = lif_step(states[l], drive, cfg, smooth);
            states[l] = res.state;
            drives[l].push_back(drive);
            spikes[l].push_back(res.spikes);
            x = res.spikes;
        }
        Tensor head_out = head_.forward(x);
        logits_sum = t == 0 ? head_out : add(logits_sum, head_out);
    }

    Forward out;
    out.logits = scalar_mul(logits_sum, 1.0 / static_cast<double>(T));
    for (std::size_t l = 0; l < L; ++l) {
        out.features.push_back(stack0(drives[l]));
        out.spikes.push_back(stack0(spikes[l]));
    }
    return out;
}

std::vector<double> StudentNet::firing_rate(const Tensor& batch, const LIFConfig& cfg) const {
    Forward fw = forward(batch, cfg);
    std::vector<double> rates;
    rates.reserve(fw.spikes.size());
    for (const auto& s : fw.spikes) {
        double acc = 0.0;
        for (double v : s.values()) acc += v;
        rates.push_back(acc / static_cast<double>(s.size()));
    }
    return rates;
}

std::vector<Tensor> StudentNet::parameters() const {
    std::vector<Tensor> ps;
    for (auto& d : dense_) {
        ps.push_back(d.W);
        ps.push_back(d.b);
    }
    ps.push_back(head_.W);
    ps.push_back(head_.b);
    return ps;
}

void StudentNet::freeze() {
    for (auto& p : parameters()) {
        p.zero_grad();
        p.set_requires_grad(false);
    }
}

StudentNet StudentNet::clone() const {
    StudentNet copy = *this;
    for (std::size_t l = 0; l < dense_.size(); ++l) {
        copy.dense_[l].W = Tensor(dense_[l].W.shape(), dense_[l].W.values(),
                                  dense_[l].W.requires_grad());
        copy.dense_[l].b = Tensor(dense_[l].b.shape(), dense_[l].b.values(),
                                  dense_[l].b.requires_grad());
    }
    copy.head_.W = Tensor(head_.W.shape(), head_.W.values(), head_.W.requires_grad());
    copy.head_.b = Tensor(head_.b.shape(), head_.b.values(), head_.b.requires_grad());
    return copy;
}

double evaluate_student(const StudentNet& net, const Dataset& ds, const LIFConfig& cfg) {
    auto fw = net.forward(ds.inputs, cfg);
    return accuracy(fw.logits, ds.labels);
}

// ---------------------------------------------------------------------------

void save_student_checkpoint(const StudentNet& net, const LIFConfig& cfg,
                             const std::filesystem::path& path) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["arch"] = {{"input_dim", net.arch().input_dim},
                 {"hidden", net.arch().hidden},
                 {"num_classes", net.arch().num_classes}};
    nlohmann::json params;
    for (std::size_t l = 0; l < net.num_blocks(); ++l)
        params["dense" + std::to_string(l)] = {{"W", net.dense(l).W.values()},
                                               {"b", net.dense(l).b.values()}};
    params["head"] = {{"W", net.head().W.values()}, {"b", net.head().b.values()}};
    j["params"] = std::move(params);
    j["lif"] = {{"tau", cfg.tau},
                {"v_th", cfg.v_th},
                {"v_reset", cfg.v_reset},
                {"steps", cfg.steps},
                {"surrogate_alpha", cfg.surrogate_alpha},
                {"neuron_model", cfg.neuron_model == NeuronModel::LIF ? "LIF" : "IF"}};
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("student checkpoint: cannot open for writing: " + path.string());
    f << j.dump(1) << '\n';
}

StudentNet load_student_checkpoint(const std::filesystem::path& path, LIFConfig* cfg_out) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifact("student checkpoint: file not found: " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("student checkpoint: malformed file: " + std::string(e.what()));
    }
    try {
        if (j.at("schema_version").get<int>() != 1)
            throw ConfigError("student checkpoint: unsupported schema_version");
        TeacherArch arch;
        arch.input_dim = j.at("arch").at("input_dim").get<std::size_t>();
        arch.hidden = j.at("arch").at("hidden").get<std::vector<std::size_t>>();
        arch.num_classes = j.at("arch").at("num_classes").get<std::size_t>();
        Rng dummy(0);
        StudentNet net(arch, dummy);
        for (std::size_t l = 0; l < net.num_blocks(); ++l) {
            const auto& d = j.at("params").at("dense" + std::to_string(l));
            net.dense(l).W.mutable_values() = d.at("W").get<std::vector<double>>();
            net.dense(l).b.mutable_values() = d.at("b").get<std::vector<double>>();
        }
        net.head().W.mutable_values() = j.at("params").at("head").at("W").get<std::vector<double>>();
        net.head().b.mutable_values() = j.at("params").at("head").at("b").get<std::vector<double>>();
        if (cfg_out) {
            const auto& lif = j.at("lif");
            cfg_out->tau = lif.at("tau").get<double>();
            cfg_out->v_th = lif.at("v_th").get<double>();
            cfg_out->v_reset = lif.at("v_reset").get<double>();
            cfg_out->steps = lif.at("steps").get<std::size_t>();
            cfg_out->surrogate_alpha = lif.at("surrogate_alpha").get<double>();
            cfg_out->neuron_model = lif.at("neuron_model").get<std::string>() == "IF"
                                        ? NeuronModel::IF
                                        : NeuronModel::LIF;
        }
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("student checkpoint: malformed field: " + std::string(e.what()));
    }
}

}  // namespace stars
