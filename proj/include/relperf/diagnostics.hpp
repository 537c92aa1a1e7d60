#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "core.hpp"
#include "nagent.hpp"

namespace relperf {

// Coefficients of V^i(t, x, xbar) = (1/delta)(1 - theta/n) exp{f x + g xbar + h}.
struct AnsatzFG {
    double delta = 1.0, theta = 0.0, n = 2.0, T = 1.0;

    double keep() const { return 1.0 - theta / n; }
    double f(double t) const { return -keep() / delta / tau(t, T); }
    double g(double t) const { return theta / delta / tau(t, T); }
    double df(double t) const { return -keep() / delta / (tau(t, T) * tau(t, T)); }
    double dg(double t) const { return theta / delta / (tau(t, T) * tau(t, T)); }
};

struct FGResiduals {
    double f_ode = 0.0;         // max |f' + (delta/(1-theta/n)) f^2|
    double g_ode = 0.0;         // max |g' + (delta/(1-theta/n)) f g|
    double cancellation = 0.0;  // max |theta/(1-theta/n) f + g|
    double f_terminal = 0.0;    // |f(T) + (1/delta)(1-theta/n)|
    double g_terminal = 0.0;    // |g(T) - theta/delta|
};

inline FGResiduals check_fg(const AgentType& agent, std::size_t n, const TimeGrid& grid) {
    validate_agent(agent);
    if (n < 2) throw ValidationError("check_fg: need n >= 2");
    const AnsatzFG a{agent.delta, agent.theta, static_cast<double>(n), grid.T()};
    const double k = agent.delta / a.keep();
    FGResiduals r;
    for (std::size_t j = 0; j < grid.size(); ++j) {
        const double t = grid[j];
        r.f_ode = std::max(r.f_ode, std::abs(a.df(t) + k * a.f(t) * a.f(t)));
        r.g_ode = std::max(r.g_ode, std::abs(a.dg(t) + k * a.f(t) * a.g(t)));
        r.cancellation = std::max(r.cancellation, std::abs(agent.theta / a.keep() * a.f(t) + a.g(t)));
    }
    r.f_terminal = std::abs(a.f(grid.T()) + a.keep() / agent.delta);
    r.g_terminal = std::abs(a.g(grid.T()) - agent.theta / agent.delta);
    return r;
}

struct FOCResult {
    double log_p = 0.0;         // log p(t) = log V^i
    double rel_invest = 0.0;    // r_invest / |p|
    double rel_consume = 0.0;   // r_consume / |p|
    double r_invest() const { return std::exp(log_p) * rel_invest; }
    double r_consume() const { return std::exp(log_p) * rel_consume; }
};

// First-order conditions along the closed form at (t, x). Everything is formed
// relative to p = V^i, in log space, so large wealth does not overflow.
// pi_i_scale multiplies agent i's investment (for discriminative checks).
inline FOCResult foc_residuals(const EquilibriumStrategyN& eq, std::size_t i, double t, const std::vector<double>& x,
                               double pi_i_scale = 1.0) {
    const auto& pop = eq.population();
    const std::size_t n = pop.size();
    if (i >= n) throw std::out_of_range("agent index out of range");
    if (x.size() != n) throw std::invalid_argument("foc_residuals: wealth vector has wrong length");
    const double T = eq.T(), nn = pop.n();
    const auto& a = pop[i];
    const AnsatzFG fg{a.delta, a.theta, nn, T};
    const double f = fg.f(t), g = fg.g(t);
    const double h = h_closed_form(eq.D(i), eq.discount(), t, T);

    double xbar = 0.0, sP = 0.0, cbar = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (k == i) continue;
        xbar += x[k] / nn;
        sP += pop[k].sigma * eq.pi(k, t) / nn;
        cbar += (eq.p(k, k, t) * x[k] + eq.q(k, t)) / nn;
    }
    const double pre = std::log(fg.keep() / a.delta);
    FOCResult r;
    r.log_p = pre + f * x[i] + g * xbar + h;

    // mu p + nu q^i + sigma q^B with q^i = V_x nu Pi, q^B = V_x sigma Pi + V_xbar sP
    const double Pi = pi_i_scale * eq.pi(i, t);
    r.rel_invest = std::abs(a.mu + (a.nu * a.nu + a.sigma * a.sigma) * f * Pi + a.sigma * g * sP);

    const double Ci = eq.p(i, i, t) * x[i] + eq.q(i, t);
    const double log_rhs = pre - fg.keep() / a.delta * Ci + a.theta / a.delta * cbar;
    r.rel_consume = std::abs(-eq.discount().eval(T - t) + std::exp(log_rhs - r.log_p));
    return r;
}

// C^i(t,x) rebuilt from the ansatz: -(delta/(1-theta/n)) ln[(delta/(1-theta/n)) lambda V] + theta/(1-theta/n) Cbar^(i).
inline double reconstruct_consumption(const EquilibriumStrategyN& eq, std::size_t i, double t,
                                      const std::vector<double>& x) {
    const auto& pop = eq.population();
    const std::size_t n = pop.size();
    const double T = eq.T(), nn = pop.n();
    const auto& a = pop[i];
    const AnsatzFG fg{a.delta, a.theta, nn, T};
    double xbar = 0.0, cbar = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (k == i) continue;
        xbar += x[k] / nn;
        cbar += (eq.p(k, k, t) * x[k] + eq.q(k, t)) / nn;
    }
    const double h = h_closed_form(eq.D(i), eq.discount(), t, T);
    // ln[(delta/keep) lambda V] = ln lambda + f x + g xbar + h
    const double lnarg = eq.discount().log_eval(T - t) + fg.f(t) * x[i] + fg.g(t) * xbar + h;
    return -(a.delta / fg.keep()) * lnarg + a.theta / fg.keep() * cbar;
}

}  // namespace relperf
