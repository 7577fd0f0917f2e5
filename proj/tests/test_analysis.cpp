#include <cmath>

#include "doctest.h"
#include "stars/analysis.hpp"

using namespace stars;

namespace {

LIFConfig setup(double tau = 2.0, double v_th = 1.0, std::size_t steps = 4) {
    return LIFConfig{tau, v_th, 0.0, steps, 4.0, NeuronModel::LIF};
}

/// Taylor-series oracle for erf, independent of std::erf:
/// erf(x) = 2/sqrt(pi) * sum (-1)^n x^(2n+1) / (n! (2n+1)).
/// Converges fast for |x| <= 3.
double erf_series(double x) {
    const double two_over_sqrt_pi = 1.1283791670955125738961589031215;
    double term = x;  // n = 0 contribution before the 1/(2n+1) factor
    double sum = x;
    for (int n = 1; n < 80; ++n) {
        term *= -x * x / static_cast<double>(n);
        sum += term / static_cast<double>(2 * n + 1);
    }
    return two_over_sqrt_pi * sum;
}

double phi_oracle(double x) { return 0.5 * (1.0 + erf_series(x / std::sqrt(2.0))); }

}  // namespace

TEST_CASE("beta factor closed form") {
    CHECK(beta_factor(1, 1.0) == 1.0);
    CHECK(beta_factor(7, 1.0) == 1.0);
    CHECK(beta_factor(1, 2.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(beta_factor(2, 2.0) == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(beta_factor(3, 2.0) == doctest::Approx(0.875).epsilon(1e-15));

    // strictly increasing toward 1
    for (double tau : {1.5, 2.0, 4.0}) {
        double prev = 0.0;
        for (std::size_t t = 1; t <= 32; ++t) {
            const double b = beta_factor(t, tau);
            CHECK(b > prev);
            CHECK(b <= 1.0);
            prev = b;
        }
        CHECK(prev > 0.999);
    }
}

TEST_CASE("effective thresholds") {
    LIFConfig s = setup();
    CHECK(effective_threshold(1, s) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(effective_threshold(2, s) == doctest::Approx(4.0 / 3.0).epsilon(1e-15));
    CHECK(effective_threshold(3, s) == doctest::Approx(8.0 / 7.0).epsilon(1e-15));

    LIFConfig leakless = setup(1.0);
    for (std::size_t t = 1; t <= 8; ++t) CHECK(effective_threshold(t, leakless) == 1.0);

    // theta_t > v_th for finite t when tau > 1; strictly decreasing
    double prev = HUGE_VAL;
    for (std::size_t t = 1; t <= 16; ++t) {
        const double th = effective_threshold(t, s);
        CHECK(th > s.v_th);
        CHECK(th < prev);
        prev = th;
    }
}

TEST_CASE("beta_t * theta_t recovers v_th to within one ulp") {
    // exact equality is not attainable in IEEE arithmetic for every (tau, t):
    // theta is a rounded quotient, so the product can be off by one ulp
    for (double tau : {1.5, 2.0, 4.0})
        for (double v_th : {1.0, 0.75, 1.25})
            for (std::size_t t = 1; t <= 16; ++t) {
                LIFConfig s = setup(tau, v_th);
                const double prod = beta_factor(t, tau) * effective_threshold(t, s);
                CHECK(std::abs(prod - v_th) <=
                      std::nextafter(v_th, HUGE_VAL) - v_th);
            }
}

TEST_CASE("cdf and survival") {
    Dist g = Dist::gaussian(0.0, 1.0);
    CHECK(g.cdf(0.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(g.survival(0.5) == doctest::Approx(0.308538).epsilon(1e-5));

    // table check against the series-expansion oracle
    for (double x : {0.0, 0.5, -0.5, 1.0, -1.0, 2.0, -2.0})
        CHECK(g.cdf(x) == doctest::Approx(phi_oracle(x)).epsilon(1e-14));

    Dist tp = Dist::two_point(-1.0, 0.5, 1.0);
    CHECK(tp.survival(0.5) == 0.5);
    CHECK(tp.cdf(-1.0) == 0.5);
    CHECK(tp.cdf(-1.5) == 0.0);
    CHECK(tp.survival(1.0) == 0.5);  // atom at the evaluation point counts

    Dist emp = Dist::empirical({1.0, 2.0, 3.0, 4.0});
    CHECK(emp.cdf(2.5) == 0.5);
    CHECK(emp.cdf(4.0) == 1.0);
    CHECK(emp.survival(2.0) == 0.75);

    CHECK_THROWS_AS(Dist::two_point(1.0, 0.5, 1.0), ContractError);
    CHECK_THROWS_AS(Dist::gaussian(0.0, 0.0), ContractError);
    CHECK_THROWS_AS(Dist::empirical({}), ContractError);
}

TEST_CASE("rate functional on atomic distributions") {
    LIFConfig s = setup(2.0, 1.0, 2);  // thetas: 2, 4/3
    CHECK(rate_functional(Dist::point_mass(0.5), s) == 0.0);   // below theta_T
    CHECK(rate_functional(Dist::point_mass(2.5), s) == 1.0);   // above theta_1
    CHECK(rate_functional(Dist::two_point(0.0, 0.5, 2.5), s) ==
          doctest::Approx(0.5).epsilon(1e-15));

    // monotone nondecreasing in T for a fixed distribution
    Dist g = Dist::gaussian(0.8, 0.6);
    double prev = 0.0;
    for (std::size_t t = 1; t <= 12; ++t) {
        LIFConfig cfg = setup(2.0, 1.0, t);
        const double r = rate_functional(g, cfg);
        CHECK(r >= prev - 1e-15);
        prev = r;
    }
}

TEST_CASE("rate functional equals brute-force enumeration over atoms") {
    // exhaustive oracle for discrete distributions: count each atom against
    // each threshold
    LIFConfig s = setup(2.0, 1.0, 6);
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(100);
        std::vector<double> atoms(n);
        for (auto& a : atoms) a = -1.0 + 4.0 * rng.uniform();
        Dist d = Dist::empirical(atoms);

        double oracle = 0.0;
        for (std::size_t t = 1; t <= s.steps; ++t) {
            const double theta = effective_threshold(t, s);
            std::size_t count = 0;
            for (double a : atoms)
                if (a >= theta) ++count;
            oracle += static_cast<double>(count) / static_cast<double>(n);
        }
        oracle /= static_cast<double>(s.steps);
        CHECK(rate_functional(d, s) == doctest::Approx(oracle).epsilon(1e-14));
    }
}

TEST_CASE("rate gap basics") {
    LIFConfig s = setup();
    Dist g = Dist::gaussian(0.0, 1.0);
    CHECK(rate_gap(g, g, s) == 0.0);

    DistPair pair = moment_matched_pair(0.0, 1.0, MomentMatchedFamily::gaussian_vs_two_point);
    const double gap = rate_gap(pair.p, pair.q, s);
    CHECK(gap != 0.0);
    CHECK(gap > 0.05);  // the gaussian has tail mass above every threshold

    // antisymmetry is exact, and the gap equals the rate difference
    CHECK(rate_gap(pair.q, pair.p, s) == -gap);
    CHECK(gap == doctest::Approx(rate_functional(pair.p, s) - rate_functional(pair.q, s))
                     .epsilon(1e-15));
}

TEST_CASE("moment matched pairs") {
    DistPair pair = moment_matched_pair(0.0, 1.0, MomentMatchedFamily::gaussian_vs_two_point);
    CHECK(std::abs(pair.p.mean() - 0.0) < 1e-12);
    CHECK(std::abs(pair.q.mean() - 0.0) < 1e-12);
    CHECK(std::abs(pair.p.variance() - 1.0) < 1e-12);
    CHECK(std::abs(pair.q.variance() - 1.0) < 1e-12);

    DistPair mix = moment_matched_pair(0.3, 0.8,
                                       MomentMatchedFamily::base_vs_variance_preserving_mixture,
                                       /*delta=*/1.5, /*eps=*/0.2);
    CHECK(std::abs(mix.p.mean() - mix.q.mean()) < 1e-12);
    CHECK(std::abs(mix.p.variance() - mix.q.variance()) < 1e-12);

    // infeasible: eps * delta^2 exceeds the target variance
    CHECK_THROWS_AS(moment_matched_pair(
                        0.0, 0.5, MomentMatchedFamily::base_vs_variance_preserving_mixture,
                        /*delta=*/3.0, /*eps=*/0.5),
                    ContractError);

    LIFConfig s = setup();
    CHECK(rate_gap(pair.p, pair.q, s) != 0.0);
}

TEST_CASE("shift classification entails the strict rate ordering") {
    LIFConfig s = setup();
    Dist base = Dist::gaussian(0.0, 1.0);

    ShiftResult under = check_shift(Dist::gaussian(-1.0, 1.0), base, s);
    CHECK(under.kind == ShiftKind::under_firing);
    CHECK(under.rate_s < under.rate_r);

    ShiftResult over = check_shift(Dist::gaussian(1.0, 1.0), base, s);
    CHECK(over.kind == ShiftKind::over_firing);
    CHECK(over.rate_s > over.rate_r);

    ShiftResult none = check_shift(base, base, s);
    CHECK(none.kind == ShiftKind::neither);

    // randomly constructed stochastically ordered pairs
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        const double mu = -0.5 + rng.uniform();
        const double var = 0.4 + rng.uniform();
        const double shift = 0.05 + rng.uniform();
        const bool left = rng.uniform() < 0.5;
        Dist reference = Dist::gaussian(mu, var);
        Dist shifted = Dist::gaussian(left ? mu - shift : mu + shift, var);
        ShiftResult res = check_shift(shifted, reference, s);
        if (left) {
            CHECK(res.kind == ShiftKind::under_firing);
            CHECK(res.rate_s < res.rate_r);
        } else {
            CHECK(res.kind == ShiftKind::over_firing);
            CHECK(res.rate_s > res.rate_r);
        }
    }
}

TEST_CASE("monte carlo rate: exact atoms, reset discrepancy reported") {
    // point mass at 2.5, tau=2, v_th=1, T=2: simulation spikes at both steps
    // (H = 1.25 each time, reset included), so the simulated rate is 1
    LIFConfig s2 = setup(2.0, 1.0, 2);
    MonteCarloRate mc = monte_carlo_rate(Dist::point_mass(2.5), s2, 1000, 7);
    CHECK(mc.rate == 1.0);
    CHECK(mc.std_err == 0.0);

    // zero input never fires
    MonteCarloRate zero = monte_carlo_rate(Dist::point_mass(0.0), s2, 1000, 7);
    CHECK(zero.rate == 0.0);

    // a = 1.5, T=4: simulation gives 1/2 but the no-reset functional gives
    // 3/4; the discrepancy is real and carries sign
    LIFConfig s4 = setup();
    MonteCarloRate sim = monte_carlo_rate(Dist::point_mass(1.5), s4, 1000, 7);
    CHECK(sim.rate == 0.5);
    CHECK(rate_functional(Dist::point_mass(1.5), s4) == doctest::Approx(0.75).epsilon(1e-15));

    // distributions supported below theta_T never spike either way
    const double theta_t = effective_threshold(s4.steps, s4);
    Dist sub = Dist::two_point(0.0, 0.5, 0.9 * theta_t);
    CHECK(sub.supported_below(theta_t));
    CHECK(monte_carlo_rate(sub, s4, 1000, 9).rate == 0.0);
    CHECK(rate_functional(sub, s4) == 0.0);

    CHECK_THROWS_AS(monte_carlo_rate(sub, s4, 10, 1), ContractError);
}

TEST_CASE("no-reset regime: simulation agrees with the functional within 4 SE") {
    // support between theta_T and theta_{T-1} fires exactly once at step T,
    // so resets never matter; the only error is sampling noise
    LIFConfig s = setup();
    const double lo = effective_threshold(s.steps, s);
    const double hi = effective_threshold(s.steps - 1, s);
    Dist d = Dist::two_point(0.0, 0.6, 0.5 * (lo + hi));
    MonteCarloRate mc = monte_carlo_rate(d, s, 100000, 12345);
    const double analytic = rate_functional(d, s);
    CHECK(std::abs(mc.rate - analytic) <= 4.0 * mc.std_err);
}
