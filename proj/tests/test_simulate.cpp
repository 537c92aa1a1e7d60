#include <gtest/gtest.h>

#include <cmath>

#include <Eigen/Eigenvalues>

#include "relperf/simulate.hpp"

using namespace relperf;

namespace {

Population hetero2() { return Population({{1.0, 0.5, 1.0, 1.0, 1.0}, {2.0, 0.2, 0.5, 0.0, 1.0}}); }

// constant investment, no consumption
GridStrategyN constant_pi(std::size_t n, const TimeGrid& g, double p) {
    auto s = GridStrategyN::zero(n, g);
    for (auto& row : s.pi_s) std::fill(row.begin(), row.end(), p);
    return s;
}

SimConfig small(std::size_t paths, double dt = 1e-2, std::uint64_t seed = 42) {
    SimConfig c;
    c.n_paths = paths;
    c.dt = dt;
    c.seed = seed;
    return c;
}

}  // namespace

TEST(SimulatePaths, ZeroStrategyKeepsWealth) {
    const TimeGrid g(0.0, 1.0, 11);
    const auto pb = simulate_paths(hetero2(), GridStrategyN::zero(2, g), 0.0, {1.5, -2.0}, small(50));
    for (std::size_t p = 0; p < pb.n_paths; ++p)
        for (std::size_t r = 0; r < pb.n_records(); ++r) {
            EXPECT_EQ(pb.X(p, r, 0), 1.5);
            EXPECT_EQ(pb.X(p, r, 1), -2.0);
        }
}

TEST(SimulatePaths, ShapesAndInitialWealth) {
    const TimeGrid g(0.0, 2.0, 50);
    auto cfg = small(10, 1e-2);
    cfg.record_stride = 40;
    const auto eq = equilibrium_strategy(hetero2(), DiscountFunction(Hyperbolic{0.1, 1.0}), g);
    const auto pb = simulate_paths(hetero2(), eq, 0.0, {1.0, 2.0}, cfg);
    EXPECT_EQ(pb.n_records(), 6u);  // steps 0,40,...,160 and 200
    EXPECT_DOUBLE_EQ(pb.times.back(), 2.0);
    EXPECT_EQ(pb.wealth.size(), 10u * 6u * 2u);
    EXPECT_EQ(pb.common_noise.size(), 10u * 6u);
    for (std::size_t p = 0; p < pb.n_paths; ++p) {
        EXPECT_EQ(pb.X(p, 0, 0), 1.0);
        EXPECT_EQ(pb.X(p, 0, 1), 2.0);
    }
}

TEST(SimulatePaths, ErrorsReported) {
    const TimeGrid g(0.0, 1.0, 11);
    const auto s = GridStrategyN::zero(2, g);
    EXPECT_THROW(simulate_paths(hetero2(), s, 0.0, {1.0}, small(5)), std::invalid_argument);
    EXPECT_THROW(simulate_paths(hetero2(), s, 0.0, {1.0, 1.0}, small(5, 2.0)), std::invalid_argument);
    EXPECT_THROW(simulate_paths(hetero2(), GridStrategyN::zero(3, g), 0.0, {1.0, 1.0}, small(5)),
                 std::invalid_argument);
}

TEST(SimulatePaths, ConstantInvestmentGaussianLaw) {
    // agent 0: mu = 1, nu = 0, sigma = 1, Pi = 1: X_t - x0 - t ~ N(0, t)
    const Population pop({{1.0, 0.0, 1.0, 0.0, 1.0}, {1.0, 0.0, 1.0, 0.0, 1.0}});
    const TimeGrid g(0.0, 1.0, 11);
    auto cfg = small(40000, 1e-2);
    cfg.record_stride = 25;
    const auto pb = simulate_paths(pop, constant_pi(2, g, 1.0), 0.0, {0.0, 0.0}, cfg);
    for (std::size_t r = 1; r < pb.n_records(); ++r) {
        const double t = pb.times[r];
        detail::Moments m, v;
        for (std::size_t p = 0; p < pb.n_paths; ++p) {
            const double y = pb.X(p, r, 0) - t;
            m.add(y);
            v.add(y * y);
        }
        EXPECT_LE(std::abs(m.mean(pb.n_paths)), 4.0 * m.se(pb.n_paths));
        EXPECT_LE(std::abs(v.mean(pb.n_paths) - t), 4.0 * v.se(pb.n_paths));
    }
}

TEST(SimulatePaths, EquilibriumMeanMatchesGaussianLaw) {
    const auto pop = hetero2();
    const TimeGrid g(0.0, 2.0, 200);
    const auto eq = equilibrium_strategy(pop, DiscountFunction(Hyperbolic{0.1, 1.0}), g);
    auto cfg = small(20000, 1e-2);
    cfg.record_stride = 40;
    const std::vector<double> x0{1.0, 2.0};
    const auto pb = simulate_paths(pop, eq, 0.0, x0, cfg);
    ASSERT_EQ(pb.n_records(), 6u);
    for (std::size_t r = 1; r < pb.n_records(); ++r) {
        const auto law = gaussian_moments(pop, eq, 0.0, x0, pb.times[r]);
        for (std::size_t i = 0; i < 2; ++i) {
            detail::Moments m;
            for (std::size_t p = 0; p < pb.n_paths; ++p) m.add(pb.X(p, r, i));
            EXPECT_LE(std::abs(m.mean(pb.n_paths) - law.mean[i]), 4.0 * m.se(pb.n_paths)) << r << ' ' << i;
        }
    }
}

TEST(SimulatePaths, BitIdenticalAcrossRunsAndThreads) {
    const auto pop = hetero2();
    const TimeGrid g(0.0, 2.0, 50);
    const auto eq = equilibrium_strategy(pop, DiscountFunction(Hyperbolic{0.1, 1.0}), g);
    auto cfg = small(700, 1e-2);
    cfg.threads = 1;
    const auto a = simulate_paths(pop, eq, 0.0, {1.0, 1.0}, cfg);
    const auto b = simulate_paths(pop, eq, 0.0, {1.0, 1.0}, cfg);
    cfg.threads = 3;
    const auto c = simulate_paths(pop, eq, 0.0, {1.0, 1.0}, cfg);
    EXPECT_EQ(a.wealth, b.wealth);
    EXPECT_EQ(a.wealth, c.wealth);
    EXPECT_EQ(a.consumption, c.consumption);
    EXPECT_EQ(a.common_noise, c.common_noise);
    cfg.seed = 43;
    EXPECT_NE(simulate_paths(pop, eq, 0.0, {1.0, 1.0}, cfg).wealth, a.wealth);
}

TEST(SimulatePaths, EulerMeanBiasIsFirstOrder) {
    // antithetic pairs cancel the noise of the affine scheme, leaving the Euler mean exactly
    const auto pop = hetero2();
    const TimeGrid g(0.0, 2.0, 200);
    const auto eq = equilibrium_strategy(pop, DiscountFunction(Hyperbolic{0.1, 1.0}), g);
    const std::vector<double> x0{1.0, 2.0};
    const auto law = gaussian_moments(pop, eq, 0.0, x0, 2.0, 4000);
    std::vector<double> bias;
    for (double dt : {1e-2, 1e-3}) {
        auto cfg = small(2, dt);
        cfg.antithetic = true;
        const auto pb = simulate_paths(pop, eq, 0.0, x0, cfg);
        const std::size_t r = pb.n_records() - 1;
        bias.push_back(std::abs(0.5 * (pb.X(0, r, 0) + pb.X(1, r, 0)) - law.mean[0]));
    }
    EXPECT_GT(bias[0], bias[1]);
    EXPECT_NEAR(bias[0] / bias[1], 10.0, 2.0);
}

TEST(GaussianMoments, ZeroStrategy) {
    const TimeGrid g(0.0, 1.0, 11);
    const auto law = gaussian_moments(hetero2(), GridStrategyN::zero(2, g), 0.0, {3.0, 4.0}, 0.8);
    EXPECT_EQ(law.mean[0], 3.0);
    EXPECT_EQ(law.mean[1], 4.0);
    EXPECT_EQ(law.cov.norm(), 0.0);
}

TEST(GaussianMoments, ConstantInvestmentClosedForm) {
    const auto pop = hetero2();
    const TimeGrid g(0.0, 2.0, 11);
    const auto law = gaussian_moments(pop, constant_pi(2, g, 1.7), 0.0, {3.0, 4.0}, 1.5);
    for (std::size_t i = 0; i < 2; ++i) {
        const auto& a = pop[i];
        EXPECT_NEAR(law.mean[i], (i ? 4.0 : 3.0) + 1.7 * a.mu * 1.5, 1e-12);
        EXPECT_NEAR(law.cov(i, i), 1.7 * 1.7 * (a.nu * a.nu + a.sigma * a.sigma) * 1.5, 1e-12);
    }
    EXPECT_NEAR(law.cov(0, 1), 1.7 * 1.7 * 1.5, 1e-12);
}

TEST(GaussianMoments, CovariancePositiveSemidefinite) {
    const Population pop({{1.0, 0.5, 1.0, 1.0, 1.0}, {2.0, 0.2, 0.5, 0.0, 1.0}, {0.7, 0.8, 1.2, 0.3, 0.6}});
    const TimeGrid g(0.0, 2.0, 200);
    const auto eq = equilibrium_strategy(pop, DiscountFunction(Hyperbolic{0.1, 1.0}), g);
    for (double t : {0.4, 0.8, 1.2, 1.6, 2.0}) {
        const auto law = gaussian_moments(pop, eq, 0.0, {1.0, 1.0, 1.0}, t);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(law.cov);
        EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
    }
}

TEST(ExpectedPayoff, DeterministicMinusThree) {
    const Population pop({{1.0, 0.0, 1.0, 0.0, 1.0}, {1.0, 0.0, 1.0, 0.0, 1.0}});
    const TimeGrid g(0.0, 2.0, 11);
    const auto est = expected_payoff(pop, DiscountFunction(Exponential{0.0}), GridStrategyN::zero(2, g), 0, 0.0,
                                     {0.0, 0.0}, small(64, 1e-2));
    EXPECT_NEAR(est.J, -3.0, 1e-12);
    EXPECT_EQ(est.se, 0.0);
    EXPECT_EQ(est.clamped, 0u);
}

TEST(ExpectedPayoff, RejectsStartAtHorizon) {
    const TimeGrid g(0.0, 2.0, 11);
    EXPECT_THROW(expected_payoff(hetero2(), DiscountFunction(), GridStrategyN::zero(2, g), 0, 2.0, {0.0, 0.0},
                                 small(4)),
                 std::invalid_argument);
}

TEST(ExpectedPayoff, CommonRandomNumbers) {
    const auto pop = hetero2();
    const DiscountFunction d(Hyperbolic{0.1, 1.0});
    const TimeGrid g(0.0, 2.0, 200);
    const auto eq = equilibrium_strategy(pop, d, g);
    const auto cfg = small(2000, 1e-2);
    const auto a = expected_payoff(pop, d, eq, 0, 0.5, {1.0, 1.0}, cfg);
    const auto b = expected_payoff(pop, d, eq, 0, 0.5, {1.0, 1.0}, cfg);
    EXPECT_EQ(a.J, b.J);
    EXPECT_EQ(a.se, b.se);
    // a perturbation with v = 0 reproduces the base payoff bit for bit
    const auto z = expected_payoff(pop, d, eq, 0, 0.5, {1.0, 1.0}, cfg, Perturbation{0.0, 0.0, 0.1});
    EXPECT_EQ(z.J, a.J);
    // thread count does not change the estimate
    auto c3 = cfg;
    c3.threads = 3;
    EXPECT_EQ(expected_payoff(pop, d, eq, 0, 0.5, {1.0, 1.0}, c3).J, a.J);
}

TEST(ExpectedPayoff, FiniteAndStableAcrossSeeds) {
    const auto pop = hetero2();
    const DiscountFunction d(Hyperbolic{0.1, 1.0});
    const auto eq = equilibrium_strategy(pop, d, TimeGrid(0.0, 2.0, 200));
    const auto a = expected_payoff(pop, d, eq, 1, 0.0, {1.0, 1.0}, small(5000, 1e-2, 1));
    const auto b = expected_payoff(pop, d, eq, 1, 0.0, {1.0, 1.0}, small(5000, 1e-2, 2));
    ASSERT_TRUE(std::isfinite(a.J) && std::isfinite(a.se));
    EXPECT_GT(a.se, 0.0);
    EXPECT_LE(std::abs(a.J - b.J), 5.0 * std::hypot(a.se, b.se));
    EXPECT_NEAR(a.se / b.se, 1.0, 0.3);
}

TEST(ExpectedPayoff, PathAverageConsumptionMatchesMeanOde) {
    // two identical no-competition agents reproduce the single-type figure setting
    const AgentType m{1.0, 0.0, 1.0, 0.0, 1.0};
    const Population pop({m, m});
    const DiscountFunction d(Exponential{0.1});
    const auto eq = equilibrium_strategy(pop, d, TimeGrid(0.0, 2.0, 200));
    auto cfg = small(20000, 1e-3);
    cfg.record_stride = 200;
    const auto pb = simulate_paths(pop, eq, 0.0, {10.0, 10.0}, cfg);
    const TypeDistribution one({{m, 1.0}});
    ASSERT_EQ(pb.n_records(), 11u);
    for (std::size_t r = 1; r < pb.n_records(); ++r) {
        detail::Moments c;
        for (std::size_t p = 0; p < pb.n_paths; ++p) c.add(pb.C(p, r, 0));
        const double want = average_consumption(one, d, pb.times[r], 0.0, 10.0, 2.0, 2001);
        EXPECT_LE(std::abs(c.mean(pb.n_paths) - want), 4.0 * c.se(pb.n_paths)) << pb.times[r];
    }
}

TEST(SpikeTest, ZeroSpikeHasZeroSlope) {
    const auto pop = hetero2();
    const DiscountFunction d(Hyperbolic{0.1, 1.0});
    const auto eq = equilibrium_strategy(pop, d, TimeGrid(0.0, 2.0, 200));
    const auto rep = spike_test(pop, d, eq, 0, 0.5, {1.0, 1.0}, {{0.0, 0.0}}, {0.1, 0.05}, small(1000, 1e-2));
    ASSERT_EQ(rep.entries.size(), 2u);
    for (const auto& e : rep.entries) {
        EXPECT_EQ(e.slope, 0.0);
        EXPECT_EQ(e.se, 0.0);
        EXPECT_TRUE(e.pass);
    }
    EXPECT_TRUE(rep.pass);
}

TEST(SpikeTest, InputValidation) {
    const auto pop = hetero2();
    const DiscountFunction d(Hyperbolic{0.1, 1.0});
    const auto eq = equilibrium_strategy(pop, d, TimeGrid(0.0, 2.0, 200));
    const auto cfg = small(10, 1e-2);
    const std::vector<double> x0{1.0, 1.0};
    EXPECT_THROW(spike_test(pop, d, eq, 0, 0.0, x0, {{1, 0}}, {0.05, 0.1}, cfg), std::invalid_argument);
    EXPECT_THROW(spike_test(pop, d, eq, 0, 0.0, x0, {{1, 0}}, {}, cfg), std::invalid_argument);
    EXPECT_THROW(spike_test(pop, d, eq, 0, 0.0, x0, {{1, 0}}, {0.105}, cfg), std::invalid_argument);
    EXPECT_THROW(spike_test(pop, d, eq, 0, 1.95, x0, {{1, 0}}, {0.1}, cfg), std::invalid_argument);
    EXPECT_THROW(spike_test(pop, d, eq, 0, 0.0, x0, {{11, 0}}, {0.1}, cfg), ValidationError);
}

TEST(SpikeTest, SmallRunAtEquilibriumPasses) {
    const auto pop = hetero2();
    const DiscountFunction d(Hyperbolic{0.1, 1.0});
    const auto eq = equilibrium_strategy(pop, d, TimeGrid(0.0, 2.0, 200));
    const auto reps = spike_test_grid(pop, d, eq, {0.0, 1.0}, {1.0, 1.0}, {{1, 0}, {-1, 0}, {0, 1}, {0, -1}},
                                      {0.1, 0.05}, small(4000, 1e-2));
    for (const auto& r : reps) EXPECT_TRUE(r.pass) << "agent " << r.agent << " t " << r.t;
}

TEST(MeanField, NoIdiosyncraticNoiseIsExact) {
    const TypeDistribution dist({{{1.0, 0.3, 1.0, 0.0, 1.0}, 1.0}});
    const auto rep = meanfield_consistency(dist, DiscountFunction(Hyperbolic{0.1, 1.0}), 100, 10.0, 0.0, 2.0,
                                           small(1, 1e-2), 5);
    EXPECT_LE(rep.sup_gap, 1e-10);
}

TEST(MeanField, GapScalesLikeInverseRootM) {
    const TypeDistribution dist({{{1.0, 0.3, 1.0, 0.8, 0.6}, 1.0}});
    const DiscountFunction d(Hyperbolic{0.1, 1.0});
    double g100 = 0.0, g10k = 0.0, s100 = 0.0, s10k = 0.0;
    const int seeds = 20;
    for (int s = 0; s < seeds; ++s) {
        const auto a = meanfield_consistency(dist, d, 100, 10.0, 0.0, 2.0, small(1, 2e-2, 1000 + s), 5);
        const auto b = meanfield_consistency(dist, d, 10000, 10.0, 0.0, 2.0, small(1, 2e-2, 1000 + s), 5);
        g100 += a.sup_gap / seeds;
        g10k += b.sup_gap / seeds;
        s100 += a.predicted_scale / seeds;
        s10k += b.predicted_scale / seeds;
    }
    EXPECT_NEAR(g10k / g100, 0.1, 0.05);
    EXPECT_NEAR(s10k / s100, 0.1, 0.02);
}

TEST(MeanField, ConsumptionConsistency) {
    const TypeDistribution dist({{{1.0, 0.3, 1.0, 0.8, 0.6}, 0.4}, {{2.0, 0.5, 0.8, 0.4, 1.0}, 0.6}});
    const auto rep =
        meanfield_consistency(dist, DiscountFunction(Hyperbolic{0.1, 1.0}), 5000, 10.0, 0.0, 2.0, small(1, 1e-2), 5);
    for (std::size_t r = 0; r < rep.times.size(); ++r) EXPECT_LE(rep.c_gap[r], 5.0 * rep.c_se[r]);
}

TEST(MeanField, RejectsSmallPopulation) {
    const TypeDistribution dist({{{1.0, 0.3, 1.0, 0.8, 0.6}, 1.0}});
    EXPECT_THROW(meanfield_consistency(dist, DiscountFunction(), 50, 1.0, 0.0, 1.0, small(1)), std::invalid_argument);
}
