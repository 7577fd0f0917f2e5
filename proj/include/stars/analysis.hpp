#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "stars/rng.hpp"
#include "stars/snn.hpp"

namespace stars {

/// 1-D activation distribution with exact CDF evaluation. Gaussian CDFs go
/// through the error function; discrete and mixture kinds are evaluated in
/// closed form; empirical distributions use the sample fraction <= x.
class Dist {
public:
    static Dist gaussian(double mu, double var);
    static Dist two_point(double x1, double p1, double x2);
    static Dist point_mass(double x);
    /// (1 - eps) * base + eps * point mass at atom.
    static Dist point_mixture(const Dist& base, double eps, double atom);
    static Dist mixture(double w1, const Dist& d1, const Dist& d2);
    static Dist empirical(std::vector<double> samples);

    double cdf(double x) const;       // P(a <= x)
    double survival(double x) const;  // P(a >= x) for atoms at x; 1 - P(a < x)
    double mean() const;
    double variance() const;
    double sample(Rng& rng) const;
    std::string describe() const;

    /// True when every atom / all sample mass lies strictly below `bound`
    /// (gaussians never qualify: unbounded support).
    bool supported_below(double bound) const;

private:
    struct Node;
    std::shared_ptr<const Node> node_;
};

/// Integration factor: fraction of a constant input accumulated by step t.
double beta_factor(std::size_t t, double tau);

/// Time-dependent effective threshold v_th / beta_t; strictly decreasing in t.
double effective_threshold(std::size_t t, const LIFConfig& setup);

/// Expected firing rate over T steps under the subthreshold approximation:
/// (1/T) sum_t P(a >= theta_t).
double rate_functional(const Dist& dist, const LIFConfig& setup);

/// (1/T) sum_t (F_Q(theta_t) - F_P(theta_t)); equals
/// rate_functional(P) - rate_functional(Q) up to rounding.
double rate_gap(const Dist& p, const Dist& q, const LIFConfig& setup);

enum class MomentMatchedFamily { gaussian_vs_two_point, base_vs_variance_preserving_mixture };

struct DistPair {
    Dist p;
    Dist q;
};

/// Two distributions with identical mean and variance that generally place
/// different mass above the effective thresholds.
///   gaussian_vs_two_point:  N(mu, var) vs atoms at mu +- sigma, mass 1/2.
///   base_vs_variance_preserving_mixture(delta, eps):
///     N(mu, var) vs (1-eps) N(mu, var') + eps {mu +- delta}, with var'
///     solved so both moments match (infeasible parameters throw).
DistPair moment_matched_pair(double mu, double var, MomentMatchedFamily family,
                             double delta = 0.0, double eps = 0.0);

enum class ShiftKind { under_firing, over_firing, neither };

struct ShiftResult {
    ShiftKind kind = ShiftKind::neither;
    double rate_s = 0.0;  // R_T of the shifted/synthetic distribution
    double rate_r = 0.0;  // R_T of the reference distribution
};

/// Classifies P_s against P_r by comparing the CDFs at every effective
/// threshold: under-firing when F_s >= F_r everywhere with strict inequality
/// somewhere, over-firing symmetrically. The returned rates realize the
/// strict ordering the classification promises.
ShiftResult check_shift(const Dist& p_s, const Dist& p_r, const LIFConfig& setup);

struct MonteCarloRate {
    double rate = 0.0;
    double std_err = 0.0;
    std::size_t samples = 0;
};

/// Draws activations from `dist` and simulates the exact neuron recursion
/// (resets included) for T steps of constant drive. Where resets occur this
/// measures the true rate, which can fall below the no-reset rate_functional;
/// the discrepancy is reported by callers, never asserted away.
MonteCarloRate monte_carlo_rate(const Dist& dist, const LIFConfig& setup, std::size_t n_samples,
                                std::uint64_t seed);

}  // namespace stars
