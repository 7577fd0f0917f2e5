#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "stars/analysis.hpp"
#include "stars/snn.hpp"

using namespace stars;

namespace {

LIFConfig default_lif() {
    return LIFConfig{2.0, 1.0, 0.0, 4, 4.0, NeuronModel::LIF};
}

void fill(Tensor& t, double v) {
    for (auto& x : t.mutable_values()) x = v;
}

}  // namespace

TEST_CASE("lif_step rest state") {
    LIFConfig cfg = default_lif();
    LIFState state{Tensor::zeros({1, 1})};
    auto res = lif_step(state, Tensor::zeros({1, 1}), cfg);
    CHECK(res.membrane.value() == 0.0);
    CHECK(res.spikes.value() == 0.0);
    CHECK(res.state.V.value() == 0.0);
}

TEST_CASE("lif_step constant drive, hand-iterated recursion") {
    // tau=2, v_th=1, v_r=0, X=1.5: H1=0.75 (subthreshold), H2=1.125 -> spike
    LIFConfig cfg = default_lif();
    LIFState state{Tensor::zeros({1, 1})};
    Tensor x(Shape{1, 1}, {1.5});

    auto s1 = lif_step(state, x, cfg);
    CHECK(s1.membrane.value() == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(s1.spikes.value() == 0.0);
    auto s2 = lif_step(s1.state, x, cfg);
    CHECK(s2.membrane.value() == doctest::Approx(1.125).epsilon(1e-15));
    CHECK(s2.spikes.value() == 1.0);
    CHECK(s2.state.V.value() == 0.0);  // reset exactly to v_r

    // the subthreshold values coincide with beta_t * a
    CHECK(s1.membrane.value() == doctest::Approx(beta_factor(1, 2.0) * 1.5).epsilon(1e-15));
    CHECK(s2.membrane.value() == doctest::Approx(beta_factor(2, 2.0) * 1.5).epsilon(1e-15));
}

TEST_CASE("IF model spikes immediately on suprathreshold drive") {
    LIFConfig cfg = default_lif();
    cfg.neuron_model = NeuronModel::IF;
    LIFState state{Tensor::zeros({1, 1})};
    auto res = lif_step(state, Tensor(Shape{1, 1}, {1.5}), cfg);
    CHECK(res.membrane.value() == 1.5);
    CHECK(res.spikes.value() == 1.0);
    CHECK(first_spike_time(1.5, cfg) == 1);
}

TEST_CASE("subthreshold closed form: H[t] = beta_t * a within 1e-12") {
    for (double tau : {1.5, 2.0, 4.0}) {
        LIFConfig cfg = default_lif();
        cfg.tau = tau;
        cfg.steps = 16;
        for (double frac : {0.1, 0.45, 0.8, 0.99}) {
            // keep a below v_th / beta_T so no spike occurs over the horizon
            const double a = frac * cfg.v_th / beta_factor(cfg.steps, tau);
            auto trace = membrane_trace(a, cfg);
            for (std::size_t t = 1; t <= cfg.steps; ++t) {
                const double closed = beta_factor(t, tau) * a;
                CHECK(std::abs(trace[t - 1] - closed) < 1e-12);
            }
        }
    }
}

TEST_CASE("first spike time equals the effective-threshold argmin") {
    LIFConfig cfg = default_lif();
    cfg.steps = 8;
    for (std::size_t t = 1; t <= cfg.steps; ++t) {
        const double theta = effective_threshold(t, cfg);
        // straddle each threshold
        for (double a : {theta * (1.0 + 1e-6), theta * (1.0 - 1e-6)}) {
            std::size_t analytic = 0;
            for (std::size_t u = 1; u <= cfg.steps; ++u)
                if (a >= effective_threshold(u, cfg)) {
                    analytic = u;
                    break;
                }
            CHECK(first_spike_time(a, cfg) == analytic);
        }
    }
}

TEST_CASE("spikes are exactly binary and reset is exact") {
    LIFConfig cfg = default_lif();
    Rng rng(99);
    Tensor x(Shape{3, 5}, std::vector<double>(15));
    for (auto& v : x.mutable_values()) v = 3.0 * rng.normal();
    LIFState state{Tensor::full({3, 5}, cfg.v_reset)};
    for (std::size_t t = 0; t < 6; ++t) {
        auto res = lif_step(state, x, cfg);
        for (std::size_t i = 0; i < res.spikes.size(); ++i) {
            const double s = res.spikes.values()[i];
            CHECK((s == 0.0 || s == 1.0));
            if (s == 1.0) CHECK(res.state.V.values()[i] == cfg.v_reset);
        }
        state = res.state;
    }
}

TEST_CASE("firing_rate hand-simulated cases") {
    LIFConfig cfg = default_lif();

    // single neuron, tau=2, v_th=1, a=1.5, T=4: spike at t=2, reset, spike at
    // t=4 -> rate 1/2 (hand-iterated: H = .75, 1.125*, .75, 1.125*)
    CHECK(spike_count_constant(1.5, cfg) == 2);

    // zero drive never fires; strong IF drive fires every step
    CHECK(spike_count_constant(0.0, cfg) == 0);
    LIFConfig ifcfg = cfg;
    ifcfg.neuron_model = NeuronModel::IF;
    CHECK(spike_count_constant(50.0, ifcfg) == ifcfg.steps);
}

TEST_CASE("student forward: zero input, zero biases -> zero logits and spikes") {
    TeacherArch arch{4, {6, 5}, 3};
    Rng rng(5);
    StudentNet net(arch, rng);
    LIFConfig cfg = default_lif();
    Tensor batch = Tensor::zeros({2, 4});
    for (std::size_t l = 0; l < net.num_blocks(); ++l) fill(net.dense(l).b, 0.0);
    fill(net.head().b, 0.0);
    auto fw = net.forward(batch, cfg);
    for (double v : fw.logits.values()) CHECK(v == 0.0);
    for (const auto& s : fw.spikes)
        for (double v : s.values()) CHECK(v == 0.0);
}

TEST_CASE("student features have shape [T x B x C] per tap") {
    TeacherArch arch{4, {6, 5}, 3};
    Rng rng(5);
    StudentNet net(arch, rng);
    LIFConfig cfg = default_lif();
    auto fw = net.forward(Tensor::zeros({2, 4}), cfg);
    REQUIRE(fw.features.size() == 2);
    CHECK(fw.features[0].shape() == Shape{4, 2, 6});
    CHECK(fw.features[1].shape() == Shape{4, 2, 5});
}

TEST_CASE("T=1 IF saturation equals a dense net with all-ones activations") {
    TeacherArch arch{3, {4, 4}, 2};
    Rng rng(8);
    StudentNet net(arch, rng);
    // all-positive parameters so every neuron crosses threshold at t=1
    for (std::size_t l = 0; l < net.num_blocks(); ++l) {
        fill(net.dense(l).W, 0.5);
        fill(net.dense(l).b, 1.0);
    }
    fill(net.head().W, 0.25);
    fill(net.head().b, -0.5);

    LIFConfig cfg = default_lif();
    cfg.neuron_model = NeuronModel::IF;
    cfg.steps = 1;
    Tensor batch = Tensor::full({2, 3}, 5.0);
    auto fw = net.forward(batch, cfg);
    for (const auto& s : fw.spikes)
        for (double v : s.values()) CHECK(v == 1.0);

    // hand-built dense forward with activations pinned to 1
    const std::size_t width = 4;
    const double ones_head = 0.25 * static_cast<double>(width) - 0.5;
    for (double v : fw.logits.values()) CHECK(v == doctest::Approx(ones_head).epsilon(1e-15));
}

TEST_CASE("firing_rate is zero on zero input and one under IF saturation") {
    TeacherArch arch{3, {4, 4}, 2};
    Rng rng(8);
    StudentNet net(arch, rng);
    LIFConfig cfg = default_lif();
    for (std::size_t l = 0; l < net.num_blocks(); ++l) fill(net.dense(l).b, 0.0);
    auto rates = net.firing_rate(Tensor::zeros({2, 3}), cfg);
    for (double r : rates) CHECK(r == 0.0);

    for (std::size_t l = 0; l < net.num_blocks(); ++l) {
        fill(net.dense(l).W, 1.0);
        fill(net.dense(l).b, 2.0);
    }
    LIFConfig ifcfg = cfg;
    ifcfg.neuron_model = NeuronModel::IF;
    rates = net.firing_rate(Tensor::full({2, 3}, 10.0), ifcfg);
    for (double r : rates) CHECK(r == 1.0);
}

TEST_CASE("smoothed student pipeline matches finite differences") {
    TeacherArch arch{4, {5, 4}, 3};
    Rng rng(21);
    StudentNet net(arch, rng);
    LIFConfig cfg = default_lif();
    Tensor batch(Shape{3, 4}, std::vector<double>(12), true);
    for (auto& v : batch.mutable_values()) v = rng.normal();

    auto rep = gradcheck::check(
        [&] { return mean(square(net.forward(batch, cfg, /*smooth=*/true).logits)); }, {batch},
        1e-5, 1e-4, 1e-7);
    CHECK_MESSAGE(rep.ok, rep.detail);
}

TEST_CASE("student checkpoint round trip") {
    TeacherArch arch{4, {5, 4}, 3};
    Rng rng(3);
    StudentNet net(arch, rng);
    LIFConfig cfg = default_lif();
    const auto path = std::filesystem::temp_directory_path() / "stars_student_ckpt.json";
    save_student_checkpoint(net, cfg, path);
    LIFConfig loaded_cfg;
    StudentNet loaded = load_student_checkpoint(path, &loaded_cfg);
    CHECK(loaded_cfg.tau == cfg.tau);
    CHECK(loaded_cfg.steps == cfg.steps);
    for (std::size_t l = 0; l < net.num_blocks(); ++l)
        CHECK(loaded.dense(l).W.values() == net.dense(l).W.values());
    std::filesystem::remove(path);
}

TEST_CASE("lif config invariants") {
    LIFConfig bad = default_lif();
    bad.tau = 0.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = default_lif();
    bad.v_reset = 2.0;  // v_th must exceed v_reset
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = default_lif();
    bad.steps = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}
