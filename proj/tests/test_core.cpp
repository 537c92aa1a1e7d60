#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "relperf/core.hpp"

using namespace relperf;

TEST(AgentType, ValidAgentPasses) {
    EXPECT_NO_THROW(validate_agent({1.0, 0.0, 1.0, 0.0, 1.0}));
}

TEST(AgentType, ThetaOneRejected) {
    try {
        validate_agent({1.0, 1.0, 1.0, 0.0, 1.0});
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("theta"), std::string::npos);
    }
}

TEST(AgentType, NoVolatilityRejected) {
    try {
        validate_agent({1.0, 0.5, 1.0, 0.0, 0.0});
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("sigma+nu"), std::string::npos);
    }
}

TEST(AgentType, AllViolationsReported) {
    const auto v = agent_violations({-1.0, 2.0, 0.0, -1.0, -1.0});
    EXPECT_EQ(v.size(), 6u);
}

TEST(Discount, HyperbolicAtZeroIsOne) {
    EXPECT_EQ(discount_eval(DiscountFunction(Hyperbolic{0.1, 1.0}), 0.0), 1.0);
}

TEST(Discount, ExponentialValue) {
    EXPECT_NEAR(discount_eval(DiscountFunction(Exponential{0.1}), 2.0), std::exp(-0.2), 1e-15);
}

TEST(Discount, HyperbolicSmallBetaApproachesExponential) {
    EXPECT_NEAR(discount_eval(DiscountFunction(Hyperbolic{0.1, 1e-8}), 2.0), std::exp(-0.2), 1e-6);
}

TEST(Discount, ParametricValueAtZeroExact) {
    EXPECT_EQ(DiscountFunction(Exponential{0.3}).eval(0.0), 1.0);
    EXPECT_EQ(DiscountFunction(Hyperbolic{0.3, 2.0}).eval(0.0), 1.0);
}

TEST(Discount, TabulatedValueAtZero) {
    const auto d = DiscountFunction::tabulate({0.0, 1.0, 2.0}, {1.0, 0.8, 0.7});
    EXPECT_NEAR(d.eval(0.0), 1.0, 1e-12);
    EXPECT_NEAR(d.eval(0.5), std::sqrt(0.8), 1e-12);  // log-linear interpolation
}

TEST(Discount, TabulatedValidation) {
    EXPECT_THROW(DiscountFunction::tabulate({0.5, 1.0}, {1.0, 0.9}), ValidationError);
    EXPECT_THROW(DiscountFunction::tabulate({0.0, 1.0}, {0.9, 0.8}), ValidationError);
    EXPECT_THROW(DiscountFunction::tabulate({0.0, 1.0}, {1.0, 0.0}), ValidationError);
    EXPECT_THROW(DiscountFunction::tabulate({0.0, 1.0, 1.0}, {1.0, 0.9, 0.8}), ValidationError);
    const auto d = DiscountFunction::tabulate({0.0, 1.0}, {1.0, 0.9});
    EXPECT_THROW(d.eval(1.5), RangeError);
    EXPECT_THROW(d.eval(-0.1), RangeError);
}

TEST(Discount, ParameterValidation) {
    EXPECT_THROW(DiscountFunction(Exponential{-0.1}), ValidationError);
    EXPECT_THROW(DiscountFunction(Hyperbolic{0.0, 1.0}), ValidationError);
    EXPECT_THROW(DiscountFunction(Hyperbolic{0.1, 0.0}), ValidationError);
}

TEST(Discount, HyperbolicToExponentialSupErrorDecreases) {
    const double T = 2.0;
    double prev = INFINITY;
    for (double beta : {1e-2, 1e-4, 1e-6}) {
        const DiscountFunction d(Hyperbolic{0.1, beta});
        double sup = 0.0;
        for (int k = 0; k <= 400; ++k) {
            const double t = T * k / 400.0;
            sup = std::max(sup, std::abs(d.eval(t) - std::exp(-0.1 * t)));
        }
        EXPECT_LT(sup, prev);
        prev = sup;
    }
    EXPECT_LT(prev, 1e-6);
}

TEST(LogIntegral, ExponentialValue) {
    const DiscountFunction d(Exponential{0.1});
    EXPECT_NEAR(discount_log_integral(d, 0.0, 2.0), -0.2, 1e-14);
    EXPECT_NEAR(oracle::log_integral(d, 0.0, 2.0), -0.2, 1e-10);
}

TEST(LogIntegral, EmptyIntervalIsZero) {
    for (const auto& d : {DiscountFunction(Exponential{0.1}), DiscountFunction(Hyperbolic{0.1, 1.0}),
                          DiscountFunction::tabulate({0.0, 1.0, 3.0}, {1.0, 0.9, 0.5})})
        EXPECT_EQ(discount_log_integral(d, 1.3, 1.3), 0.0);
}

TEST(LogIntegral, HyperbolicMatchesQuadrature) {
    const DiscountFunction d(Hyperbolic{0.1, 1.0});
    EXPECT_NEAR(discount_log_integral(d, 0.0, 2.0), oracle::log_integral(d, 0.0, 2.0), 1e-8);
}

TEST(LogIntegral, HyperbolicSeriesBranchContinuous) {
    // both sides of the small-z switch agree with quadrature
    for (double beta : {1e-6, 4.99e-4, 5.01e-4, 1e-2}) {
        const DiscountFunction d(Hyperbolic{0.3, beta});
        EXPECT_NEAR(discount_log_integral(d, 0.0, 2.0), oracle::log_integral(d, 0.0, 2.0), 1e-10) << beta;
    }
}

TEST(LogIntegral, AllVariantsMatchQuadrature) {
    std::mt19937_64 rng(11);
    for (int k = 0; k < 30; ++k) {
        const auto d = oracle::random_discount(rng, k);
        std::uniform_real_distribution<double> u(0.0, 2.9);
        const double t = u(rng) * 0.5, T = std::max(t + 0.05, u(rng));
        EXPECT_NEAR(discount_log_integral(d, t, T), oracle::log_integral(d, t, T), 1e-8);
    }
}

TEST(LogIntegral, Additive) {
    std::mt19937_64 rng(3);
    for (int k = 0; k < 15; ++k) {
        const auto d = oracle::random_discount(rng, k);
        const double t = 0.2, m = 1.1, T = 2.5;
        // int_t^T ln lambda(T-s) ds split at m
        const double whole = discount_log_integral(d, t, T);
        const double left = d.log_integral(T - t) - d.log_integral(T - m);
        const double right = d.log_integral(T - m);
        EXPECT_NEAR(whole, left + right, 1e-10);
        const auto ll = oracle::log_lambda(d);
        EXPECT_NEAR(left, oracle::simpson([&](double s) { return ll(T - s); }, t, m), 1e-6);
        EXPECT_NEAR(right, oracle::log_integral(d, m, T), 1e-8);
    }
}

TEST(LogIntegral, RejectsReversedInterval) {
    EXPECT_THROW(discount_log_integral(DiscountFunction(Exponential{0.1}), 2.0, 1.0), std::invalid_argument);
}

TEST(TimeGrid, Nodes) {
    const TimeGrid g(0.0, 2.0, 201);
    EXPECT_EQ(g[0], 0.0);
    EXPECT_EQ(g[200], 2.0);
    EXPECT_NEAR(g[100], 1.0, 1e-15);
    EXPECT_EQ(g.nodes().size(), 201u);
    EXPECT_THROW(TimeGrid(1.0, 1.0, 10), ValidationError);
    EXPECT_THROW(TimeGrid(0.0, 1.0, 1), ValidationError);
}

TEST(TypeDistribution, WeightsValidated) {
    const AgentType a{1.0, 0.0, 1.0, 0.0, 1.0};
    EXPECT_NO_THROW(TypeDistribution({{a, 0.25}, {a, 0.75}}));
    EXPECT_THROW(TypeDistribution({{a, 0.5}, {a, 0.6}}), ValidationError);
    EXPECT_THROW(TypeDistribution({{a, 1.5}, {a, -0.5}}), ValidationError);
    EXPECT_THROW(TypeDistribution(std::vector<TypeAtom>{}), ValidationError);
}

TEST(Quadrature, SimpsonExactForCubics) {
    auto f = [](double x) { return 3 * x * x * x - x + 2; };
    EXPECT_NEAR(simpson(f, 0.0, 2.0, 2), 12.0 - 2.0 + 4.0, 1e-13);
    EXPECT_THROW(simpson(std::vector<double>{1.0, 2.0}, 0.1), std::invalid_argument);
}
