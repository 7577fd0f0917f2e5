#include "stars/nets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "stars/errors.hpp"
#include "stars/optim.hpp"

namespace stars {

Tensor DenseLayer::forward(const Tensor& x) const {
    return add_rowvec(matmul(x, transpose(W)), b);
}

DenseLayer DenseLayer::init(std::size_t in, std::size_t out, Rng& rng) {
    // He-normal weights, uniform +-1/sqrt(in) biases
    const double scale = std::sqrt(2.0 / static_cast<double>(in));
    std::vector<double> w(out * in);
    for (auto& v : w) v = scale * rng.normal();
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::vector<double> b(out);
    for (auto& v : b) v = bound * (2.0 * rng.uniform() - 1.0);
    return DenseLayer{Tensor({out, in}, std::move(w), true), Tensor({out}, std::move(b), true)};
}

// ---------------------------------------------------------------------------

BatchNormLayer::BatchNormLayer(std::size_t channels, double momentum, double eps)
    : gamma_bn(Tensor::full({channels}, 1.0, true)),
      beta_bn(Tensor::zeros({channels}, true)),
      running_mean_(channels, 0.0),
      running_var_(channels, 1.0),
      momentum_(momentum),
      eps_(eps) {}

Tensor BatchNormLayer::forward_train(const Tensor& a) {
    if (a.rows() < 2)
        throw ContractError("batchnorm: train-mode batch must have at least 2 samples");
    Tensor mu = mean(a, 0);
    Tensor var = variance_biased(a, 0);
    Tensor centered = add_rowvec(a, scalar_mul(mu, -1.0));
    // eps guards degenerate channels only; healthy channels normalize to unit
    // variance exactly
    Tensor xhat = div_rowvec(centered, stars::sqrt(clamp_min(var, eps_)));
    // running <- (1-m) * running + m * batch, on detached values
    for (std::size_t c = 0; c < running_mean_.size(); ++c) {
        running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * mu.at(c);
        running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * var.at(c);
    }
    initialized_ = true;
    return add_rowvec(mul_rowvec(xhat, gamma_bn), beta_bn);
}

Tensor BatchNormLayer::forward_eval(const Tensor& a) const {
    if (!initialized_)
        throw ContractError("batchnorm: eval before running statistics are initialized");
    const std::size_t c = channels();
    if (a.cols() != c) throw ShapeError("batchnorm: channel mismatch");
    std::vector<double> shift(c), inv_std(c);
    for (std::size_t j = 0; j < c; ++j) {
        shift[j] = running_mean_[j];
        inv_std[j] = 1.0 / std::sqrt(std::max(running_var_[j], eps_));
    }
    Tensor centered = add_rowvec(a, scalar_mul(Tensor({c}, std::move(shift)), -1.0));
    Tensor xhat = mul_rowvec(centered, Tensor({c}, std::move(inv_std)));
    return add_rowvec(mul_rowvec(xhat, gamma_bn), beta_bn);
}

void BatchNormLayer::set_running(std::vector<double> mean, std::vector<double> var) {
    if (mean.size() != channels() || var.size() != channels())
        throw ShapeError("batchnorm: running statistics size mismatch");
    for (double v : var)
        if (v < 0.0) throw ConfigError("batchnorm: negative running variance");
    running_mean_ = std::move(mean);
    running_var_ = std::move(var);
    initialized_ = true;
}

// ---------------------------------------------------------------------------

TeacherNet::TeacherNet(TeacherArch arch, Rng& rng) : arch_(std::move(arch)), head_{} {
    if (arch_.hidden.empty()) throw ContractError("teacher: at least one hidden block required");
    std::size_t in = arch_.input_dim;
    for (std::size_t width : arch_.hidden) {
        dense_.push_back(DenseLayer::init(in, width, rng));
        bn_.emplace_back(width);
        tap_layers_.push_back(tap_layers_.size());
        in = width;
    }
    head_ = DenseLayer::init(in, arch_.num_classes, rng);
}

Tensor TeacherNet::forward_train(const Tensor& batch) {
    if (batch.rows() < 2) throw ContractError("teacher: train-mode batch must have B >= 2");
    Tensor h = batch;
    for (std::size_t l = 0; l < dense_.size(); ++l)
        h = relu(bn_[l].forward_train(dense_[l].forward(h)));
    return head_.forward(h);
}

Tensor TeacherNet::forward_eval(const Tensor& batch, Taps* taps) const {
    Tensor h = batch;
    for (std::size_t l = 0; l < dense_.size(); ++l) {
        Tensor pre_bn = dense_[l].forward(h);
        Tensor pre_act = bn_[l].forward_eval(pre_bn);
        if (taps) {
            taps->pre_bn.push_back(pre_bn);
            taps->pre_act.push_back(pre_act);
        }
        h = relu(pre_act);
    }
    return head_.forward(h);
}

std::vector<Tensor> TeacherNet::tap_pre_bn(const Tensor& batch) const {
    Taps taps;
    forward_eval(batch, &taps);
    return taps.pre_bn;
}

std::vector<Tensor> TeacherNet::tap_pre_activation(const Tensor& batch) const {
    Taps taps;
    forward_eval(batch, &taps);
    return taps.pre_act;
}

std::vector<Tensor> TeacherNet::parameters() const {
    std::vector<Tensor> ps;
    for (std::size_t l = 0; l < dense_.size(); ++l) {
        ps.push_back(dense_[l].W);
        ps.push_back(dense_[l].b);
        ps.push_back(bn_[l].gamma_bn);
        ps.push_back(bn_[l].beta_bn);
    }
    ps.push_back(head_.W);
    ps.push_back(head_.b);
    return ps;
}

void TeacherNet::freeze() {
    for (auto& p : parameters()) {
        p.zero_grad();
        p.set_requires_grad(false);
    }
}

// ---------------------------------------------------------------------------

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
    const std::size_t b = logits.rows(), c = logits.cols();
    if (labels.size() != b) throw ContractError("accuracy: label count mismatch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < b; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (logits.at(i, j) > logits.at(i, best)) best = j;
        if (static_cast<int>(best) == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(b);
}

double evaluate_teacher(const TeacherNet& net, const Dataset& ds) {
    return accuracy(net.forward_eval(ds.inputs), ds.labels);
}

namespace {

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
    const std::size_t d = x.cols();
    std::vector<double> out(idx.size() * d);
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x.at(idx[i], j);
    return Tensor({idx.size(), d}, std::move(out));
}

}  // namespace

TrainReport train_teacher(TeacherNet& net, const DataSplits& data,
                          const TeacherTrainConfig& cfg) {
    if (data.train.num_classes < 2)
        throw ContractError("train_teacher: dataset needs at least 2 classes");
    Rng shuffle_rng = Rng(cfg.seed).derive("teacher-shuffle");
    MomentumSgd sgd(net.parameters(), cfg.lr, cfg.momentum);

    const std::size_t n = data.train.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    double last_loss = 0.0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start + 2 <= n; start += cfg.batch_size) {
            const std::size_t stop = std::min(start + cfg.batch_size, n);
            if (stop - start < 2) break;  // BN needs batch variance
            std::vector<std::size_t> idx(order.begin() + start, order.begin() + stop);
            std::vector<int> labels;
            labels.reserve(idx.size());
            for (auto i : idx) labels.push_back(data.train.labels[i]);
            Tensor batch = gather_rows(data.train.inputs, idx);

            sgd.zero_grad();
            Tensor loss = cross_entropy_with_logits(net.forward_train(batch), labels);
            last_loss = loss.value();
            if (!std::isfinite(last_loss))
                throw NumericalError("train_teacher: non-finite loss at epoch " +
                                     std::to_string(epoch));
            backward(loss);
            sgd.step();
        }
    }

    TrainReport report;
    report.final_loss = last_loss;
    if (net.bn(0).initialized()) {
        report.train_accuracy = evaluate_teacher(net, data.train);
        report.test_accuracy = evaluate_teacher(net, data.test);
    } else {
        // epochs == 0: untrained network, chance-level by construction
        report.train_accuracy = 1.0 / static_cast<double>(data.train.num_classes);
        report.test_accuracy = report.train_accuracy;
    }
    return report;
}

// ---------------------------------------------------------------------------
// checkpoint I/O

namespace {

constexpr int kSchemaVersion = 1;

nlohmann::json dense_to_json(const DenseLayer& d) {
    return {{"W", d.W.values()}, {"b", d.b.values()}};
}

void dense_from_json(const nlohmann::json& j, DenseLayer& d, const std::string& name) {
    auto w = j.at("W").get<std::vector<double>>();
    auto b = j.at("b").get<std::vector<double>>();
    if (w.size() != d.W.size() || b.size() != d.b.size())
        throw ConfigError("checkpoint: parameter size mismatch in field " + name);
    d.W.mutable_values() = std::move(w);
    d.b.mutable_values() = std::move(b);
}

}  // namespace

void save_checkpoint(const TeacherNet& net, const std::filesystem::path& path) {
    nlohmann::json j;
    j["schema_version"] = kSchemaVersion;
    j["arch"] = {{"input_dim", net.arch().input_dim},
                 {"hidden", net.arch().hidden},
                 {"num_classes", net.arch().num_classes}};
    nlohmann::json params;
    for (std::size_t l = 0; l < net.num_blocks(); ++l) {
        params["dense" + std::to_string(l)] = dense_to_json(net.dense(l));
        params["bn" + std::to_string(l)] = {{"gamma", net.bn(l).gamma_bn.values()},
                                            {"beta", net.bn(l).beta_bn.values()}};
    }
    params["head"] = dense_to_json(net.head());
    j["params"] = std::move(params);
    nlohmann::json bn_running;
    for (std::size_t l = 0; l < net.num_blocks(); ++l) {
        bn_running["bn" + std::to_string(l)] = {{"mean", net.bn(l).running_mean()},
                                                {"var", net.bn(l).running_var()},
                                                {"momentum", net.bn(l).momentum()},
                                                {"eps", net.bn(l).eps()}};
    }
    j["bn_running"] = std::move(bn_running);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("checkpoint: cannot open for writing: " + path.string());
    f << j.dump(1) << '\n';
}

TeacherNet load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifact("checkpoint: file not found: " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("checkpoint: malformed file " + path.string() + ": " + e.what());
    }
    try {
        if (!j.contains("schema_version"))
            throw ConfigError("checkpoint: missing field schema_version");
        if (j["schema_version"].get<int>() != kSchemaVersion)
            throw ConfigError("checkpoint: unsupported schema_version " +
                              j["schema_version"].dump());
        TeacherArch arch;
        arch.input_dim = j.at("arch").at("input_dim").get<std::size_t>();
        arch.hidden = j.at("arch").at("hidden").get<std::vector<std::size_t>>();
        arch.num_classes = j.at("arch").at("num_classes").get<std::size_t>();
        Rng dummy(0);
        TeacherNet net(arch, dummy);
        const auto& params = j.at("params");
        for (std::size_t l = 0; l < net.num_blocks(); ++l) {
            const std::string dn = "dense" + std::to_string(l);
            const std::string bnn = "bn" + std::to_string(l);
            dense_from_json(params.at(dn), net.dense(l), dn);
            auto gamma = params.at(bnn).at("gamma").get<std::vector<double>>();
            auto beta = params.at(bnn).at("beta").get<std::vector<double>>();
            if (gamma.size() != net.bn(l).channels() || beta.size() != net.bn(l).channels())
                throw ConfigError("checkpoint: parameter size mismatch in field " + bnn);
            net.bn(l).gamma_bn.mutable_values() = std::move(gamma);
            net.bn(l).beta_bn.mutable_values() = std::move(beta);
            const auto& running = j.at("bn_running").at(bnn);
            net.bn(l).set_running(running.at("mean").get<std::vector<double>>(),
                                  running.at("var").get<std::vector<double>>());
        }
        dense_from_json(params.at("head"), net.head(), "head");
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("checkpoint: malformed field in " + path.string() + ": " + e.what());
    }
}

}  // namespace stars
