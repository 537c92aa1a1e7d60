#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "core.hpp"

namespace relperf {

class Population {
public:
    explicit Population(std::vector<AgentType> agents) : agents_(std::move(agents)) {
        if (agents_.size() < 2) throw ValidationError("population: need n >= 2 agents");
        for (std::size_t i = 0; i < agents_.size(); ++i) {
            try {
                validate_agent(agents_[i]);
            } catch (const ValidationError& e) {
                throw ValidationError("agent " + std::to_string(i) + ": " + e.what());
            }
        }
    }

    std::size_t size() const { return agents_.size(); }
    double n() const { return static_cast<double>(agents_.size()); }
    const AgentType& operator[](std::size_t i) const { return agents_[i]; }
    const std::vector<AgentType>& agents() const { return agents_; }

private:
    std::vector<AgentType> agents_;
};

struct NAgentAggregates {
    double phi_n = 0.0;
    double psi_n = 0.0;
    double delta_bar = 0.0;
    double theta_bar = 0.0;
};

struct AgentConstants {
    double A = 0.0, B = 0.0, C = 0.0, D = 0.0;
};

namespace detail {

// sigma_k^2 + (1 - theta_k/n) nu_k^2
inline double nagent_den(const AgentType& a, double n) {
    return a.sigma * a.sigma + (1.0 - a.theta / n) * a.nu * a.nu;
}

inline void check_index(const Population& pop, std::size_t i) {
    if (i >= pop.size()) throw std::out_of_range("agent index out of range");
}

}  // namespace detail

inline NAgentAggregates aggregates(const Population& pop) {
    const double n = pop.n();
    NAgentAggregates g;
    for (const auto& a : pop.agents()) {
        const double den = detail::nagent_den(a, n);
        g.phi_n += a.delta * a.sigma * a.mu / den;
        g.psi_n += a.theta * a.sigma * a.sigma / den;
        g.delta_bar += a.delta;
        g.theta_bar += a.theta;
    }
    g.phi_n /= n;
    g.psi_n /= n;
    g.delta_bar /= n;
    g.theta_bar /= n;
    if (g.psi_n >= 1.0 - 1e-12)
        throw DegenerateFixedPointError("psi_n >= 1: averaged investment equation sigma*Pi = phi_n tau + psi_n sigma*Pi has no solution");
    if (g.theta_bar >= 1.0 - 1e-12)
        throw DegenerateFixedPointError("mean theta >= 1: averaged consumption equation is degenerate");
    return g;
}

// Pi*^i(t) = a_i (T+1-t)
inline double pi_coeff(const Population& pop, const NAgentAggregates& g, std::size_t i) {
    const auto& a = pop[i];
    const double den = detail::nagent_den(a, pop.n());
    return (a.delta * a.mu + a.theta * a.sigma * g.phi_n / (1.0 - g.psi_n)) / den;
}

inline double pi_coeff(const Population& pop, std::size_t i) {
    detail::check_index(pop, i);
    return pi_coeff(pop, aggregates(pop), i);
}

inline AgentConstants agent_constants(const Population& pop, const NAgentAggregates& g, std::size_t i) {
    detail::check_index(pop, i);
    const double n = pop.n();
    const auto& ai = pop[i];
    AgentConstants c;
    for (std::size_t k = 0; k < pop.size(); ++k) {
        if (k == i) continue;
        const double ak = pi_coeff(pop, g, k);
        c.A += pop[k].sigma * ak;
        c.B += pop[k].mu * ak;
        c.C += (pop[k].nu * ak) * (pop[k].nu * ak);
    }
    const double pre = ai.theta / (n * ai.delta);
    c.A *= pre;
    c.B *= pre;
    c.C *= pre * pre;
    const double m = ai.mu + ai.sigma * c.A;
    c.D = 0.5 * m * m / (ai.nu * ai.nu + ai.sigma * ai.sigma) - 0.5 * (c.A * c.A + c.C) - c.B;
    return c;
}

inline AgentConstants agent_constants(const Population& pop, std::size_t i) {
    return agent_constants(pop, aggregates(pop), i);
}

inline double pi_star(const Population& pop, std::size_t i, double t, double T) {
    return pi_coeff(pop, i) * tau(t, T);
}

// (D/2)[1/tau - tau] - (1/tau) int_t^T ln lambda(T-s) ds; shared by the n-agent and MFG forms.
inline double h_closed_form(double D, const DiscountFunction& d, double t, double T) {
    const double tt = tau(t, T);
    return 0.5 * D * (1.0 / tt - tt) - discount_log_integral(d, t, T) / tt;
}

inline double hhat(const Population& pop, const DiscountFunction& d, std::size_t i, double t, double T) {
    return h_closed_form(agent_constants(pop, i).D, d, t, T);
}

// Intercept q^i(t) of C*^i(t,x) = x^i/(T+1-t) + q^i(t), given every agent's D constant.
inline double c_intercept(const Population& pop, const NAgentAggregates& g, const std::vector<double>& D,
                          const DiscountFunction& d, std::size_t i, double t, double T) {
    const double li = discount_log_integral(d, t, T);
    const double tt = tau(t, T);
    const double base = 0.5 * (1.0 / tt - tt);
    double avg_dh = 0.0;
    for (std::size_t k = 0; k < pop.size(); ++k) avg_dh += pop[k].delta * (D[k] * base - li / tt);
    avg_dh /= pop.n();
    const auto& a = pop[i];
    const double h_i = D[i] * base - li / tt;
    return -a.delta * h_i - a.theta / (1.0 - g.theta_bar) * avg_dh -
           (a.delta + a.theta * g.delta_bar / (1.0 - g.theta_bar)) * d.log_eval(T - t);
}

inline std::vector<double> all_D(const Population& pop, const NAgentAggregates& g) {
    std::vector<double> D(pop.size());
    for (std::size_t k = 0; k < pop.size(); ++k) D[k] = agent_constants(pop, g, k).D;
    return D;
}

inline double c_star(const Population& pop, const DiscountFunction& d, std::size_t i, double t, double x_i, double T) {
    detail::check_index(pop, i);
    const auto g = aggregates(pop);
    return x_i / tau(t, T) + c_intercept(pop, g, all_D(pop, g), d, i, t, T);
}

// H(t) = (mu/(2 sigma))^2 [tau - 1/tau] + (1/tau) int_t^T ln lambda(T-s) ds
inline double calH(double mu, double sigma, const DiscountFunction& d, double t, double T) {
    const double tt = tau(t, T);
    const double r = mu / (2.0 * sigma);
    return r * r * (tt - 1.0 / tt) + discount_log_integral(d, t, T) / tt;
}

struct SingleStockStrategy {
    double delta_hat = 0.0;
    double pi = 0.0;          // investment amount at t
    double H = 0.0;
    double c_intercept = 0.0; // delta_hat * H - delta_hat * ln lambda(T-t)
    double consumption(double x, double t, double T) const { return x / tau(t, T) + c_intercept; }
};

// Single common stock (nu = 0): everything runs through the effective risk tolerance.
inline SingleStockStrategy single_stock_strategy(double delta, double theta, double delta_bar, double theta_bar,
                                                 double mu, double sigma, const DiscountFunction& d,
                                                 double t, double T) {
    if (!(sigma > 0.0)) throw std::invalid_argument("single stock strategy needs sigma > 0");
    if (!(theta_bar < 1.0)) throw DegenerateFixedPointError("mean theta >= 1");
    SingleStockStrategy s;
    s.delta_hat = delta + theta * delta_bar / (1.0 - theta_bar);
    s.pi = mu / (sigma * sigma) * s.delta_hat * tau(t, T);
    s.H = calH(mu, sigma, d, t, T);
    s.c_intercept = s.delta_hat * s.H - s.delta_hat * d.log_eval(T - t);
    return s;
}

// Closed-form equilibrium. pi and the consumption intercept are exact at any t;
// the grid samples are kept for export and for comparison with iterated strategies.
class EquilibriumStrategyN {
public:
    EquilibriumStrategyN(Population pop, DiscountFunction d, TimeGrid grid)
        : pop_(std::move(pop)), d_(std::move(d)), grid_(grid), agg_(relperf::aggregates(pop_)) {
        D_ = all_D(pop_, agg_);
        a_.resize(pop_.size());
        for (std::size_t i = 0; i < pop_.size(); ++i) a_[i] = relperf::pi_coeff(pop_, agg_, i);
        q_samples_.assign(pop_.size(), std::vector<double>(grid_.size()));
        for (std::size_t i = 0; i < pop_.size(); ++i)
            for (std::size_t k = 0; k < grid_.size(); ++k) q_samples_[i][k] = q(i, grid_[k]);
    }

    std::size_t n() const { return pop_.size(); }
    double T() const { return grid_.T(); }
    bool simple() const { return true; }
    const Population& population() const { return pop_; }
    const DiscountFunction& discount() const { return d_; }
    const TimeGrid& grid() const { return grid_; }
    const NAgentAggregates& aggregates() const { return agg_; }
    double pi_coeff(std::size_t i) const { return a_[i]; }
    double D(std::size_t i) const { return D_[i]; }
    const std::vector<double>& intercept_samples(std::size_t i) const { return q_samples_[i]; }

    double pi(std::size_t i, double t) const { return a_[i] * tau(t, T()); }
    double p(std::size_t i, std::size_t k, double t) const { return i == k ? 1.0 / tau(t, T()) : 0.0; }
    double q(std::size_t i, double t) const { return c_intercept(pop_, agg_, D_, d_, i, t, T()); }

private:
    Population pop_;
    DiscountFunction d_;
    TimeGrid grid_;
    NAgentAggregates agg_;
    std::vector<double> D_;
    std::vector<double> a_;
    std::vector<std::vector<double>> q_samples_;
};

inline EquilibriumStrategyN equilibrium_strategy(const Population& pop, const DiscountFunction& d,
                                                 const TimeGrid& grid) {
    return EquilibriumStrategyN(pop, d, grid);
}

}  // namespace relperf
