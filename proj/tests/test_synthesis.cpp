#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "stars/synthesis.hpp"

using namespace stars;

namespace {

LIFConfig default_lif() { return LIFConfig{2.0, 1.0, 0.0, 4, 4.0, NeuronModel::LIF}; }

TeacherNet make_frozen_teacher(TeacherArch arch, std::uint64_t seed) {
    Rng rng = Rng(seed).derive("teacher-init");
    TeacherNet net(arch, rng);
    Rng batch_rng(seed + 1);
    std::vector<double> v(8 * arch.input_dim);
    for (auto& x : v) x = batch_rng.normal();
    net.forward_train(Tensor({8, arch.input_dim}, v));  // initialize running stats
    net.freeze();
    return net;
}

StudentNet make_student(TeacherArch arch, std::uint64_t seed) {
    Rng rng = Rng(seed).derive("student-init");
    return StudentNet(arch, rng);
}

SynthesisConfig small_cfg() {
    SynthesisConfig cfg;
    cfg.batch_size = 8;
    cfg.steps = 10;
    cfg.quantiles = {0.6, 0.7, 0.8, 0.9, 0.95};
    return cfg;
}

Tensor random2d(Shape shape, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = rng.normal();
    return Tensor(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("pooled features: degenerate and averaging cases") {
    // N = 1, T = 1: plain squeeze
    Tensor ft(Shape{2, 3, 1}, {1, 2, 3, 4, 5, 6});
    Tensor fs(Shape{1, 2, 3, 1}, {1, 2, 3, 4, 5, 6});
    PooledPair p = pooled_features(ft, fs);
    CHECK(p.teacher.shape() == Shape{2, 3});
    CHECK(p.teacher.values() == std::vector<double>{1, 2, 3, 4, 5, 6});
    CHECK(p.student.values() == std::vector<double>{1, 2, 3, 4, 5, 6});

    // 2-D / 3-D accepted directly
    Tensor ft2(Shape{2, 2}, {1, 2, 3, 4});
    Tensor fs_const(Shape{3, 2, 2}, {5, 6, 7, 8, 5, 6, 7, 8, 5, 6, 7, 8});
    PooledPair q = pooled_features(ft2, fs_const);
    CHECK(q.student.values() == std::vector<double>{5, 6, 7, 8});  // constant over time

    // steps v and 3v average to 2v
    Tensor fs2(Shape{2, 2, 2}, {1, 2, 3, 4, 3, 6, 9, 12});
    PooledPair r = pooled_features(ft2, fs2);
    CHECK(r.student.values() == std::vector<double>{2, 4, 6, 8});

    // spatial averaging on the teacher side
    Tensor ft3(Shape{1, 2, 2}, {1, 3, 10, 30});
    PooledPair s = pooled_features(ft3, Tensor(Shape{1, 1, 2, 2}, {0, 0, 0, 0}));
    CHECK(s.teacher.values() == std::vector<double>{2, 20});
}

TEST_CASE("classification confidence loss") {
    // strongly peaked at the label: margin 20
    Tensor peaked(Shape{2, 3}, {20, 0, 0, 0, 20, 0});
    CHECK(loss_cls(peaked, {0, 1}).value() < 1e-8);

    Tensor uniform(Shape{2, 4}, std::vector<double>(8, 0.0));
    CHECK(loss_cls(uniform, {0, 3}).value() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    Tensor two(Shape{1, 2}, {1.0, 0.0});
    CHECK(loss_cls(two, {0}).value() ==
          doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
    CHECK(loss_cls(two, {0}).value() == doctest::Approx(0.31326168751822286).epsilon(1e-12));

    CHECK_THROWS_AS(loss_cls(two, {2}), ContractError);
}

TEST_CASE("BN matching loss") {
    TeacherNet teacher = make_frozen_teacher(TeacherArch{4, {5}, 3}, 2);

    // batch statistics equal to the running statistics give exactly zero:
    // use a synthetic pre-BN tensor whose stats we control via the running
    // slots of a fresh layer
    Tensor pre(Shape{4, 2}, {1, 10, 2, 20, 3, 30, 4, 40});
    Rng rng(0);
    TeacherNet tiny(TeacherArch{2, {2}, 2}, rng);
    tiny.bn(0).set_running({2.5, 25.0}, {1.25, 125.0});
    tiny.freeze();
    CHECK(loss_bn({pre}, tiny).value() == 0.0);

    // one layer, one channel, mean offset 0.5, equal variances -> 0.25
    Rng rng1(1);
    TeacherNet one(TeacherArch{2, {1}, 2}, rng1);
    Tensor pre1(Shape{2, 1}, {2.0, 4.0});  // mean 3, biased var 1
    one.bn(0).set_running({2.5}, {1.0});
    one.freeze();
    CHECK(loss_bn({pre1}, one).value() == doctest::Approx(0.25).epsilon(1e-15));

    // gradient w.r.t. the inputs matches finite differences
    Tensor batch(Shape{5, 4}, std::vector<double>(20), true);
    Rng rb(3);
    for (auto& v : batch.mutable_values()) v = rb.normal();
    auto rep = gradcheck::check(
        [&] {
            TeacherNet::Taps taps;
            teacher.forward_eval(batch, &taps);
            return loss_bn(taps.pre_bn, teacher);
        },
        {batch});
    CHECK_MESSAGE(rep.ok, rep.detail);
}

TEST_CASE("input-norm regularizer") {
    CHECK(loss_reg(Tensor::zeros({3, 4})).value() == 0.0);
    CHECK(loss_reg(Tensor(Shape{1, 4}, {1, 1, 1, 1})).value() == 4.0);
    Tensor x = random2d({4, 6}, 9);
    Tensor x2 = scalar_mul(x, 2.0);
    CHECK(loss_reg(x2).value() == doctest::Approx(4.0 * loss_reg(x).value()).epsilon(1e-12));
}

TEST_CASE("relational consistency loss") {
    // identical features give exactly zero
    Tensor z = random2d({5, 3}, 4);
    CHECK(rca_loss({z}, {z}, {}).value() == 0.0);

    // orthogonal teacher rows vs identical student rows: single pair, loss 1
    Tensor zt(Shape{2, 2}, {1, 0, 0, 1});
    Tensor zs(Shape{2, 2}, {1, 0, 1, 0});
    CHECK(rca_loss({zt}, {zs}, {}).value() == doctest::Approx(1.0).epsilon(1e-12));

    // invariant to positive per-sample rescaling: exact for power-of-two
    // scales (no rounding), 1e-12 otherwise
    Tensor scaled2 = mul_colvec(z, Tensor(Shape{5}, {2.0, 0.5, 4.0, 8.0, 0.25}));
    CHECK(rca_loss({z}, {scaled2}, {}).value() == 0.0);
    Tensor scaled_any = mul_colvec(z, Tensor(Shape{5}, {1.7, 0.3, 2.9, 5.1, 0.01}));
    CHECK(rca_loss({z}, {scaled_any}, {}).value() < 1e-12);

    // zero-norm rows are guarded, not an error
    Tensor with_zero(Shape{2, 2}, {0, 0, 1, 2});
    CHECK_NOTHROW(rca_loss({with_zero}, {with_zero}, {}));
    CHECK(rca_loss({with_zero}, {with_zero}, {}).value() == 0.0);

    // B < 2 violates the contract
    Tensor single(Shape{1, 2}, {1, 2});
    CHECK_THROWS_AS(rca_loss({single}, {single}, {}), ContractError);

    // layer weights shift the aggregate
    Tensor a = random2d({4, 3}, 5), b = random2d({4, 3}, 6);
    const double l1 = rca_loss({a}, {b}, {}).value();
    const double l2 = rca_loss({a, a}, {b, a}, {1.0, 1.0}).value();
    CHECK(l2 == doctest::Approx(l1 / 2.0).epsilon(1e-12));

    // gradients flow through both sides
    Tensor ta(Shape{3, 4}, std::vector<double>(12), true);
    Tensor tb(Shape{3, 4}, std::vector<double>(12), true);
    Rng rng(31);
    for (auto& v : ta.mutable_values()) v = rng.normal();
    for (auto& v : tb.mutable_values()) v = rng.normal();
    auto rep = gradcheck::check([&] { return rca_loss({ta}, {tb}, {}); }, {ta, tb});
    CHECK_MESSAGE(rep.ok, rep.detail);
}

TEST_CASE("teacher-anchored thresholds") {
    SynthesisConfig cfg = small_cfg();

    // median of standardized roughly-normal samples is near zero
    Rng rng(41);
    std::vector<double> v(400);
    for (auto& x : v) x = 3.0 + 2.0 * rng.normal();
    cfg.quantiles = {0.5};
    ThresholdSet th = teacher_thresholds({Tensor({20, 20}, v)}, cfg);
    REQUIRE(th.layers.size() == 1);
    CHECK(std::abs(th.layers[0].thresholds[0]) < 0.15);

    // hand-oracle: z = {1,2,3,4}, q = 0.95 on standardized values
    cfg.quantiles = {0.95};
    ThresholdSet th2 = teacher_thresholds({Tensor({2, 2}, {1, 2, 3, 4})}, cfg);
    {
        std::vector<double> z{1, 2, 3, 4};
        const double mu = 2.5;
        double var = 0.0;
        for (double x : z) var += (x - mu) * (x - mu);
        var /= 4.0;
        const double sd = std::sqrt(var);
        std::vector<double> norm;
        for (double x : z) norm.push_back((x - mu) / (sd + 1e-12));
        std::sort(norm.begin(), norm.end());
        const double h = 3.0 * 0.95;
        const double expected = norm[2] + (h - 2.0) * (norm[3] - norm[2]);
        CHECK(th2.layers[0].thresholds[0] == doctest::Approx(expected).epsilon(1e-14));
        CHECK(th2.layers[0].thresholds[0] == doctest::Approx(1.207476707848806).epsilon(1e-12));
    }

    // constant features: zero thresholds, warning path
    cfg.quantiles = {0.6, 0.9};
    ThresholdSet th3 = teacher_thresholds({Tensor::full({3, 3}, 7.0)}, cfg);
    CHECK(th3.layers[0].thresholds == std::vector<double>{0.0, 0.0});

    // quantile mode needs B*C >= M
    cfg.quantiles = {0.1, 0.2, 0.3, 0.4, 0.5};
    CHECK_THROWS_AS(teacher_thresholds({Tensor(Shape{2, 2}, {1, 2, 3, 4})}, cfg), ContractError);

    // thresholds ascend with the quantiles
    cfg.quantiles = {0.6, 0.7, 0.8, 0.9, 0.95};
    ThresholdSet th4 = teacher_thresholds({random2d({8, 8}, 10)}, cfg);
    CHECK(std::is_sorted(th4.layers[0].thresholds.begin(), th4.layers[0].thresholds.end()));

    // fixed mode passes the configured values through
    cfg.threshold_mode = ThresholdMode::fixed;
    cfg.fixed_thresholds = {-0.5, 0.5, 1.5};
    ThresholdSet th5 = teacher_thresholds({random2d({4, 4}, 11)}, cfg);
    CHECK(th5.layers[0].thresholds == cfg.fixed_thresholds);
}

TEST_CASE("tail-aware loss") {
    // identical features give exactly zero
    Tensor z = random2d({4, 4}, 12);
    SynthesisConfig cfg = small_cfg();
    ThresholdSet th = teacher_thresholds({z}, cfg);
    CHECK(tar_loss({z}, {z}, th, 0.5, {}).value() == 0.0);

    // single scalar feature hand-oracle: z_T normalized to 0, z_S to 0.5,
    // theta 0, delta 0.5 -> p_T = 1/2, p_S = sigmoid(1)
    ThresholdSet manual;
    manual.layers.push_back(LayerAnchors{0.0, 1.0 - 1e-12, {0.0}});
    Tensor zt(Shape{1, 1}, {0.0});
    Tensor zs(Shape{1, 1}, {0.5});
    const double ps = 1.0 / (1.0 + std::exp(-1.0));
    const double expected = (ps - 0.5) * (ps - 0.5);
    CHECK(tar_loss({zt}, {zs}, manual, 0.5, {}).value() ==
          doctest::Approx(expected).epsilon(1e-12));
    CHECK(tar_loss({zt}, {zs}, manual, 0.5, {}).value() ==
          doctest::Approx(0.053388).epsilon(1e-4));

    // teacher/student symmetry is exact
    Tensor a = random2d({5, 3}, 13), b = random2d({5, 3}, 14);
    ThresholdSet th2 = teacher_thresholds({a}, cfg);
    CHECK(tar_loss({a}, {b}, th2, 0.5, {}).value() ==
          tar_loss({b}, {a}, th2, 0.5, {}).value());

    // each term lies in [0,1], so the loss does too
    CHECK(tar_loss({a}, {b}, th2, 0.5, {}).value() >= 0.0);
    CHECK(tar_loss({a}, {b}, th2, 0.5, {}).value() <= 1.0);

    // gradients flow through both sides
    Tensor ta(Shape{3, 4}, std::vector<double>(12), true);
    Tensor tb(Shape{3, 4}, std::vector<double>(12), true);
    Rng rng(15);
    for (auto& v : ta.mutable_values()) v = rng.normal();
    for (auto& v : tb.mutable_values()) v = rng.normal();
    ThresholdSet th3 = teacher_thresholds({ta.detached()}, cfg);
    auto rep =
        gradcheck::check([&] { return tar_loss({ta}, {tb}, th3, 0.5, {}); }, {ta, tb});
    CHECK_MESSAGE(rep.ok, rep.detail);
}

TEST_CASE("soft exceedance converges to the hard fraction as delta shrinks") {
    Rng rng(16);
    std::vector<double> v(64);
    for (auto& x : v) x = rng.normal();
    const double theta = 0.4;  // no value sits exactly at the threshold
    double hard = 0.0;
    for (double x : v) hard += x > theta ? 1.0 : 0.0;
    hard /= static_cast<double>(v.size());

    // signed per-sample deviations can cancel, so only convergence is
    // asserted: the smallest delta must land closest to the hard count
    std::vector<double> errs;
    for (double delta : {0.5, 0.1, 0.02}) {
        double soft = 0.0;
        for (double x : v) soft += 1.0 / (1.0 + std::exp(-(x - theta) / delta));
        soft /= static_cast<double>(v.size());
        errs.push_back(std::abs(soft - hard));
    }
    CHECK(errs[2] < errs[0]);
    CHECK(errs[2] < 0.01);
}

TEST_CASE("synthesize: plug-and-play identity with the baseline engine") {
    TeacherArch arch{4, {6, 5}, 3};
    TeacherNet teacher = make_frozen_teacher(arch, 20);
    StudentNet student = make_student(arch, 21);
    LIFConfig lif = default_lif();

    SynthesisConfig cfg = small_cfg();
    cfg.lambda_rca = 0.0;
    cfg.lambda_tar = 0.0;
    cfg.steps = 12;

    SynthesisResult with_engine = synthesize(teacher, student, lif, cfg, 3, 900);
    SynthesisResult baseline = synthesize_baseline(teacher, cfg, 3, 900);

    CHECK(with_engine.student_feature_evals == 0);
    CHECK(with_engine.batch.inputs.values() == baseline.batch.inputs.values());
    CHECK(with_engine.batch.labels == baseline.batch.labels);
    REQUIRE(with_engine.trace.size() == baseline.trace.size());
    for (std::size_t i = 0; i < with_engine.trace.size(); ++i) {
        CHECK(with_engine.trace[i].total == baseline.trace[i].total);
        CHECK(with_engine.trace[i].cls == baseline.trace[i].cls);
        CHECK(with_engine.trace[i].bn == baseline.trace[i].bn);
    }
}

TEST_CASE("synthesize: zero steps returns the seeded initialization") {
    TeacherArch arch{4, {6}, 3};
    TeacherNet teacher = make_frozen_teacher(arch, 22);
    StudentNet student = make_student(arch, 23);
    SynthesisConfig cfg = small_cfg();
    cfg.steps = 0;

    SynthesisResult res = synthesize(teacher, student, default_lif(), cfg, 3, 77);
    CHECK(res.trace.empty());
    // reproduce the seeded init independently
    Rng rng = Rng(77).derive("synthesis-init");
    for (double v : res.batch.inputs.values())
        CHECK(v == 0.5 * rng.normal());
    // labels are round-robin over classes
    for (std::size_t i = 0; i < res.batch.labels.size(); ++i)
        CHECK(res.batch.labels[i] == static_cast<int>(i % 3));
}

TEST_CASE("synthesize: loss decreases on a short run and is deterministic") {
    TeacherArch arch{4, {6, 5}, 3};
    TeacherNet teacher = make_frozen_teacher(arch, 24);
    StudentNet student = make_student(arch, 25);
    SynthesisConfig cfg = small_cfg();
    cfg.steps = 50;

    SynthesisResult res = synthesize(teacher, student, default_lif(), cfg, 3, 5);
    CHECK(res.trace.back().total < res.trace.front().total);
    CHECK(res.student_feature_evals == 50);

    SynthesisResult again = synthesize(teacher, student, default_lif(), cfg, 3, 5);
    CHECK(res.batch.inputs.values() == again.batch.inputs.values());
    CHECK(trace_csv(res.trace) == trace_csv(again.trace));
}

TEST_CASE("synthesize: non-finite loss aborts with the offending step") {
    TeacherArch arch{4, {6}, 3};
    TeacherNet teacher = make_frozen_teacher(arch, 26);
    StudentNet student = make_student(arch, 27);
    SynthesisConfig cfg = small_cfg();
    cfg.steps = 5;
    cfg.step_size = 1e200;  // blows the inputs up after the first update
    try {
        synthesize(teacher, student, default_lif(), cfg, 3, 1);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("step") != std::string::npos);
    }
}

TEST_CASE("full synthesis objective matches finite differences (smoothed student)") {
    TeacherArch arch{3, {4, 4}, 2};
    TeacherNet teacher = make_frozen_teacher(arch, 28);
    StudentNet student = make_student(arch, 29);
    student.freeze();
    LIFConfig lif = default_lif();
    SynthesisConfig cfg = small_cfg();

    Tensor inputs(Shape{4, 3}, std::vector<double>(12), true);
    Rng rng(30);
    for (auto& v : inputs.mutable_values()) v = 0.5 * rng.normal();
    std::vector<int> labels{0, 1, 0, 1};

    // thresholds and anchors are per-step constants in the engine, so the
    // check holds them fixed while the inputs are perturbed
    ThresholdSet th;
    {
        TeacherNet::Taps taps;
        teacher.forward_eval(inputs, &taps);
        StudentNet::Forward fw = student.forward(inputs, lif, true);
        std::vector<Tensor> z_t;
        for (std::size_t l = 0; l < taps.pre_act.size(); ++l)
            z_t.push_back(pooled_features(taps.pre_act[l], fw.features[l]).teacher.detached());
        th = teacher_thresholds(z_t, cfg, &teacher);
    }

    auto make_loss = [&] {
        TeacherNet::Taps taps;
        Tensor logits = teacher.forward_eval(inputs, &taps);
        Tensor total = add(loss_cls(logits, labels),
                           scalar_mul(loss_bn(taps.pre_bn, teacher), cfg.lambda_bn));
        total = add(total, scalar_mul(loss_reg(inputs), cfg.lambda_reg));
        StudentNet::Forward fw = student.forward(inputs, lif, /*smooth=*/true);
        std::vector<Tensor> z_t, z_s;
        for (std::size_t l = 0; l < taps.pre_act.size(); ++l) {
            PooledPair pooled = pooled_features(taps.pre_act[l], fw.features[l]);
            z_t.push_back(pooled.teacher);
            z_s.push_back(pooled.student);
        }
        total = add(total, scalar_mul(rca_loss(z_t, z_s, {}), cfg.lambda_rca));
        total = add(total, scalar_mul(tar_loss(z_t, z_s, th, cfg.delta, {}), cfg.lambda_tar));
        return total;
    };

    auto rep = gradcheck::check(make_loss, {inputs}, 1e-5, 1e-4, 1e-7);
    CHECK_MESSAGE(rep.ok, rep.detail);
}
