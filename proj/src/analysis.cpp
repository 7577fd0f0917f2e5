#include "stars/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <variant>

#include "stars/errors.hpp"
#include "stars/io.hpp"

namespace stars {

namespace {

double gaussian_cdf(double x, double mu, double var) {
    return 0.5 * (1.0 + std::erf((x - mu) / std::sqrt(2.0 * var)));
}

struct GaussianK {
    double mu, var;
};
struct TwoPointK {
    double x1, p1, x2;  // mass p1 at x1, 1-p1 at x2
};
struct MixtureK {
    double w1;
    std::shared_ptr<const Dist> d1, d2;
};
struct EmpiricalK {
    std::vector<double> sorted;
};

}  // namespace

struct Dist::Node {
    std::variant<GaussianK, TwoPointK, MixtureK, EmpiricalK> kind;
};

Dist Dist::gaussian(double mu, double var) {
    if (!(var > 0.0)) throw ContractError("dist: gaussian variance must be positive");
    Dist d;
    d.node_ = std::make_shared<Node>(Node{GaussianK{mu, var}});
    return d;
}

Dist Dist::two_point(double x1, double p1, double x2) {
    if (x1 == x2) throw ContractError("dist: two_point atoms must differ");
    if (p1 < 0.0 || p1 > 1.0) throw ContractError("dist: two_point mass outside [0,1]");
    Dist d;
    d.node_ = std::make_shared<Node>(Node{TwoPointK{x1, p1, x2}});
    return d;
}

Dist Dist::point_mass(double x) { return two_point(x, 1.0, x + 1.0); }

Dist Dist::point_mixture(const Dist& base, double eps, double atom) {
    if (!(eps > 0.0 && eps < 1.0)) throw ContractError("dist: mixture eps must be in (0,1)");
    return mixture(1.0 - eps, base, point_mass(atom));
}

Dist Dist::mixture(double w1, const Dist& d1, const Dist& d2) {
    if (w1 < 0.0 || w1 > 1.0) throw ContractError("dist: mixture weight outside [0,1]");
    Dist d;
    d.node_ = std::make_shared<Node>(
        Node{MixtureK{w1, std::make_shared<const Dist>(d1), std::make_shared<const Dist>(d2)}});
    return d;
}

Dist Dist::empirical(std::vector<double> samples) {
    if (samples.empty()) throw ContractError("dist: empirical needs at least one sample");
    std::sort(samples.begin(), samples.end());
    Dist d;
    d.node_ = std::make_shared<Node>(Node{EmpiricalK{std::move(samples)}});
    return d;
}

double Dist::cdf(double x) const {
    return std::visit(
        [&](const auto& k) -> double {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, GaussianK>) {
                return gaussian_cdf(x, k.mu, k.var);
            } else if constexpr (std::is_same_v<K, TwoPointK>) {
                double f = 0.0;
                if (k.x1 <= x) f += k.p1;
                if (k.x2 <= x) f += 1.0 - k.p1;
                return f;
            } else if constexpr (std::is_same_v<K, MixtureK>) {
                return k.w1 * k.d1->cdf(x) + (1.0 - k.w1) * k.d2->cdf(x);
            } else {
                auto it = std::upper_bound(k.sorted.begin(), k.sorted.end(), x);
                return static_cast<double>(it - k.sorted.begin()) /
                       static_cast<double>(k.sorted.size());
            }
        },
        node_->kind);
}

double Dist::survival(double x) const {
    // P(a >= x): matters for atoms exactly at a threshold.
    return std::visit(
        [&](const auto& k) -> double {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, GaussianK>) {
                return 1.0 - gaussian_cdf(x, k.mu, k.var);
            } else if constexpr (std::is_same_v<K, TwoPointK>) {
                double s = 0.0;
                if (k.x1 >= x) s += k.p1;
                if (k.x2 >= x) s += 1.0 - k.p1;
                return s;
            } else if constexpr (std::is_same_v<K, MixtureK>) {
                return k.w1 * k.d1->survival(x) + (1.0 - k.w1) * k.d2->survival(x);
            } else {
                auto it = std::lower_bound(k.sorted.begin(), k.sorted.end(), x);
                return static_cast<double>(k.sorted.end() - it) /
                       static_cast<double>(k.sorted.size());
            }
        },
        node_->kind);
}

double Dist::mean() const {
    return std::visit(
        [&](const auto& k) -> double {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, GaussianK>) {
                return k.mu;
            } else if constexpr (std::is_same_v<K, TwoPointK>) {
                return k.p1 * k.x1 + (1.0 - k.p1) * k.x2;
            } else if constexpr (std::is_same_v<K, MixtureK>) {
                return k.w1 * k.d1->mean() + (1.0 - k.w1) * k.d2->mean();
            } else {
                double s = 0.0;
                for (double v : k.sorted) s += v;
                return s / static_cast<double>(k.sorted.size());
            }
        },
        node_->kind);
}

double Dist::variance() const {
    return std::visit(
        [&](const auto& k) -> double {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, GaussianK>) {
                return k.var;
            } else if constexpr (std::is_same_v<K, TwoPointK>) {
                const double m = k.p1 * k.x1 + (1.0 - k.p1) * k.x2;
                return k.p1 * (k.x1 - m) * (k.x1 - m) + (1.0 - k.p1) * (k.x2 - m) * (k.x2 - m);
            } else if constexpr (std::is_same_v<K, MixtureK>) {
                // law of total variance over the two components
                const double m1 = k.d1->mean(), m2 = k.d2->mean();
                const double m = k.w1 * m1 + (1.0 - k.w1) * m2;
                const double second = k.w1 * (k.d1->variance() + m1 * m1) +
                                      (1.0 - k.w1) * (k.d2->variance() + m2 * m2);
                return second - m * m;
            } else {
                double m = 0.0;
                for (double v : k.sorted) m += v;
                m /= static_cast<double>(k.sorted.size());
                double s = 0.0;
                for (double v : k.sorted) s += (v - m) * (v - m);
                return s / static_cast<double>(k.sorted.size());
            }
        },
        node_->kind);
}

double Dist::sample(Rng& rng) const {
    return std::visit(
        [&](const auto& k) -> double {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, GaussianK>) {
                return k.mu + std::sqrt(k.var) * rng.normal();
            } else if constexpr (std::is_same_v<K, TwoPointK>) {
                return rng.uniform() < k.p1 ? k.x1 : k.x2;
            } else if constexpr (std::is_same_v<K, MixtureK>) {
                return rng.uniform() < k.w1 ? k.d1->sample(rng) : k.d2->sample(rng);
            } else {
                return k.sorted[rng.uniform_index(k.sorted.size())];
            }
        },
        node_->kind);
}

bool Dist::supported_below(double bound) const {
    return std::visit(
        [&](const auto& k) -> bool {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, GaussianK>) {
                return false;
            } else if constexpr (std::is_same_v<K, TwoPointK>) {
                return k.x1 < bound && (k.p1 == 1.0 || k.x2 < bound);
            } else if constexpr (std::is_same_v<K, MixtureK>) {
                return k.d1->supported_below(bound) && k.d2->supported_below(bound);
            } else {
                return k.sorted.back() < bound;
            }
        },
        node_->kind);
}

std::string Dist::describe() const {
    return std::visit(
        [&](const auto& k) -> std::string {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, GaussianK>) {
                return "gaussian(mu=" + format_double(k.mu) + ", var=" + format_double(k.var) +
                       ")";
            } else if constexpr (std::is_same_v<K, TwoPointK>) {
                return "two_point(" + format_double(k.x1) + " w.p. " + format_double(k.p1) +
                       ", " + format_double(k.x2) + " w.p. " + format_double(1.0 - k.p1) + ")";
            } else if constexpr (std::is_same_v<K, MixtureK>) {
                return "mixture(" + format_double(k.w1) + " * " + k.d1->describe() + " + " +
                       format_double(1.0 - k.w1) + " * " + k.d2->describe() + ")";
            } else {
                return "empirical(n=" + std::to_string(k.sorted.size()) + ")";
            }
        },
        node_->kind);
}

// ---------------------------------------------------------------------------

double beta_factor(std::size_t t, double tau) {
    if (t < 1) throw ContractError("beta_factor: t must be >= 1");
    if (!(tau >= 1.0)) throw ContractError("beta_factor: tau must be >= 1");
    return 1.0 - std::pow(1.0 - 1.0 / tau, static_cast<double>(t));
}

double effective_threshold(std::size_t t, const LIFConfig& setup) {
    return setup.v_th / beta_factor(t, setup.tau);
}

double rate_functional(const Dist& dist, const LIFConfig& setup) {
    double acc = 0.0;
    for (std::size_t t = 1; t <= setup.steps; ++t)
        acc += dist.survival(effective_threshold(t, setup));
    return acc / static_cast<double>(setup.steps);
}

double rate_gap(const Dist& p, const Dist& q, const LIFConfig& setup) {
    double acc = 0.0;
    for (std::size_t t = 1; t <= setup.steps; ++t) {
        const double theta = effective_threshold(t, setup);
        acc += p.survival(theta) - q.survival(theta);
    }
    return acc / static_cast<double>(setup.steps);
}

DistPair moment_matched_pair(double mu, double var, MomentMatchedFamily family, double delta,
                             double eps) {
    if (!(var > 0.0)) throw ContractError("moment_matched_pair: variance must be positive");
    const double sigma = std::sqrt(var);
    if (family == MomentMatchedFamily::gaussian_vs_two_point) {
        // atoms at mu +- sigma with equal mass have mean mu and variance var
        return DistPair{Dist::gaussian(mu, var), Dist::two_point(mu - sigma, 0.5, mu + sigma)};
    }
    if (!(eps > 0.0 && eps < 1.0))
        throw ContractError("moment_matched_pair: mixture eps must be in (0,1)");
    if (!(delta > 0.0)) throw ContractError("moment_matched_pair: delta must be positive");
    // (1-eps) N(mu, var') + eps {mu +- delta}: total variance
    // (1-eps) var' + eps delta^2 must equal var.
    const double var_base = (var - eps * delta * delta) / (1.0 - eps);
    if (!(var_base > 0.0))
        throw ContractError(
            "moment_matched_pair: infeasible (delta, eps), base variance would be <= 0");
    Dist spike = Dist::two_point(mu - delta, 0.5, mu + delta);
    Dist q = Dist::mixture(1.0 - eps, Dist::gaussian(mu, var_base), spike);
    return DistPair{Dist::gaussian(mu, var), q};
}

ShiftResult check_shift(const Dist& p_s, const Dist& p_r, const LIFConfig& setup) {
    // Compared on survival probabilities (the terms the rate sums), so that a
    // classification always entails the corresponding strict rate ordering,
    // atoms at a threshold included.
    bool s_below = true, s_above = true, any_lt = false, any_gt = false;
    for (std::size_t t = 1; t <= setup.steps; ++t) {
        const double theta = effective_threshold(t, setup);
        const double ss = p_s.survival(theta);
        const double sr = p_r.survival(theta);
        s_below = s_below && ss <= sr;
        s_above = s_above && ss >= sr;
        any_lt = any_lt || ss < sr;
        any_gt = any_gt || ss > sr;
    }
    ShiftResult res;
    res.rate_s = rate_functional(p_s, setup);
    res.rate_r = rate_functional(p_r, setup);
    if (s_below && any_lt)
        res.kind = ShiftKind::under_firing;
    else if (s_above && any_gt)
        res.kind = ShiftKind::over_firing;
    else
        res.kind = ShiftKind::neither;
    return res;
}

MonteCarloRate monte_carlo_rate(const Dist& dist, const LIFConfig& setup, std::size_t n_samples,
                                std::uint64_t seed) {
    if (n_samples < 1000) throw ContractError("monte_carlo_rate: need at least 1000 samples");
    Rng rng = Rng(seed).derive("monte-carlo-rate");
    const double inv_t = 1.0 / static_cast<double>(setup.steps);
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double a = dist.sample(rng);
        const double r = static_cast<double>(spike_count_constant(a, setup)) * inv_t;
        sum += r;
        sumsq += r * r;
    }
    const double n = static_cast<double>(n_samples);
    const double mean = sum / n;
    const double var = std::max(0.0, sumsq / n - mean * mean);
    MonteCarloRate out;
    out.rate = mean;
    out.std_err = std::sqrt(var / (n - 1.0));
    out.samples = n_samples;
    return out;
}

}  // namespace stars
