#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "core.hpp"
#include "nagent.hpp"

namespace relperf {

struct MFGAggregates {
    double phi = 0.0;
    double psi = 0.0;
    double E_delta = 0.0;
    double E_theta = 0.0;
};

struct MFGTypeConstants {
    double A = 0.0, B = 0.0, D = 0.0;
};

inline MFGAggregates mfg_aggregates(const TypeDistribution& dist) {
    MFGAggregates g;
    g.phi = dist.expect([](const AgentType& a) {
        return a.delta * a.mu * a.sigma / (a.sigma * a.sigma + a.nu * a.nu);
    });
    g.psi = dist.expect([](const AgentType& a) {
        return a.theta * a.sigma * a.sigma / (a.sigma * a.sigma + a.nu * a.nu);
    });
    g.E_delta = dist.expect([](const AgentType& a) { return a.delta; });
    g.E_theta = dist.expect([](const AgentType& a) { return a.theta; });
    if (g.psi >= 1.0 - 1e-12)
        throw DegenerateFixedPointError("psi >= 1: E[sigma Pi] = phi tau + psi E[sigma Pi] has no solution");
    if (g.E_theta >= 1.0 - 1e-12)
        throw DegenerateFixedPointError("E[theta] >= 1: mean consumption equation is degenerate");
    return g;
}

// Pi*^xi(t) = coeff * (T+1-t)
inline double mfg_pi_coeff(const MFGAggregates& g, const AgentType& x) {
    const double v = x.sigma * x.sigma + x.nu * x.nu;
    return x.delta * x.mu / v + x.theta * x.sigma / v * g.phi / (1.0 - g.psi);
}

inline MFGTypeConstants mfg_type_constants(const TypeDistribution& dist, const AgentType& x0) {
    const auto g = mfg_aggregates(dist);
    const double s = g.phi / (1.0 - g.psi);
    MFGTypeConstants c;
    const double pre = x0.theta / x0.delta;
    c.A = pre * dist.expect([&](const AgentType& a) { return a.sigma * mfg_pi_coeff(g, a); });
    c.B = pre * dist.expect([&](const AgentType& a) {
        const double v = a.sigma * a.sigma + a.nu * a.nu;
        return a.delta * a.mu * a.mu / v + a.theta * a.sigma * a.mu / v * s;
    });
    const double m = x0.mu + x0.sigma * c.A;
    c.D = 0.5 * m * m / (x0.nu * x0.nu + x0.sigma * x0.sigma) - 0.5 * c.A * c.A - c.B;
    return c;
}

inline double mfg_H(const TypeDistribution& dist, const DiscountFunction& d, const AgentType& x0, double t, double T) {
    return h_closed_form(mfg_type_constants(dist, x0).D, d, t, T);
}

inline double mfg_pi_star(const TypeDistribution& dist, const AgentType& x0, double t, double T) {
    return mfg_pi_coeff(mfg_aggregates(dist), x0) * tau(t, T);
}

inline double effective_delta(const TypeDistribution& dist, const AgentType& x0) {
    const auto g = mfg_aggregates(dist);
    return x0.delta + x0.theta * g.E_delta / (1.0 - g.E_theta);
}

// Intercept of C*^xi(t,x) = x/(T+1-t) + q(t); E_dH is E[delta H^xi(t)].
inline double mfg_c_intercept(const MFGAggregates& g, const AgentType& x0, double H0, double E_dH,
                              const DiscountFunction& d, double t, double T) {
    return -x0.delta * H0 - x0.theta * E_dH / (1.0 - g.E_theta) -
           (x0.delta + x0.theta * g.E_delta / (1.0 - g.E_theta)) * d.log_eval(T - t);
}

inline double mfg_E_delta_H(const TypeDistribution& dist, const DiscountFunction& d, double t, double T) {
    return dist.expect([&](const AgentType& a) { return a.delta * mfg_H(dist, d, a, t, T); });
}

inline double mfg_c_star(const TypeDistribution& dist, const DiscountFunction& d, const AgentType& x0,
                         double t, double x, double T) {
    const auto g = mfg_aggregates(dist);
    return x / tau(t, T) + mfg_c_intercept(g, x0, mfg_H(dist, d, x0, t, T), mfg_E_delta_H(dist, d, t, T), d, t, T);
}

// Closed-form mean-field equilibrium, one entry per atom.
class MFGEquilibrium {
public:
    MFGEquilibrium(TypeDistribution dist, DiscountFunction d, double T)
        : dist_(std::move(dist)), d_(std::move(d)), T_(T), agg_(relperf::mfg_aggregates(dist_)) {
        for (const auto& at : dist_.atoms()) {
            a_.push_back(mfg_pi_coeff(agg_, at.type));
            D_.push_back(mfg_type_constants(dist_, at.type).D);
        }
    }

    std::size_t size() const { return dist_.size(); }
    double T() const { return T_; }
    const TypeDistribution& distribution() const { return dist_; }
    const DiscountFunction& discount() const { return d_; }
    const MFGAggregates& aggregates() const { return agg_; }
    double pi_coeff(std::size_t a) const { return a_[a]; }
    double D(std::size_t a) const { return D_[a]; }

    double pi(std::size_t a, double t) const { return a_[a] * tau(t, T_); }
    double H(std::size_t a, double t) const { return h_closed_form(D_[a], d_, t, T_); }
    double E_delta_H(double t) const {
        double s = 0.0;
        for (std::size_t a = 0; a < size(); ++a) s += dist_[a].weight * dist_[a].type.delta * H(a, t);
        return s;
    }
    double p1(double t) const { return 1.0 / tau(t, T_); }
    double p2(std::size_t, double) const { return 0.0; }
    double q(std::size_t a, double t) const {
        return mfg_c_intercept(agg_, dist_[a].type, H(a, t), E_delta_H(t), d_, t, T_);
    }
    double consumption(std::size_t a, double t, double x) const { return x / tau(t, T_) + q(a, t); }

private:
    TypeDistribution dist_;
    DiscountFunction d_;
    double T_;
    MFGAggregates agg_;
    std::vector<double> a_, D_;
};

// E[C*(t, X_t)] via the per-atom mean ODE m' = Pi* mu - m/(T+1-t) - q(t), RK4 on the grid.
// Returns one value per grid node from grid.t0() on; x0 is the common initial wealth.
inline std::vector<double> average_consumption_curve(const TypeDistribution& dist, const DiscountFunction& d,
                                                     const TimeGrid& grid, double x0) {
    const MFGEquilibrium eq(dist, d, grid.T());
    const double T = grid.T();
    std::vector<double> out(grid.size(), 0.0);
    for (std::size_t a = 0; a < eq.size(); ++a) {
        const double mu = dist[a].type.mu;
        auto rhs = [&](double t, double m) { return eq.pi(a, t) * mu - m / tau(t, T) - eq.q(a, t); };
        double m = x0;
        out[0] += dist[a].weight * eq.consumption(a, grid[0], m);
        for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
            const double t = grid[k], h = grid[k + 1] - grid[k];
            const double k1 = rhs(t, m);
            const double k2 = rhs(t + 0.5 * h, m + 0.5 * h * k1);
            const double k3 = rhs(t + 0.5 * h, m + 0.5 * h * k2);
            const double k4 = rhs(t + h, m + h * k3);
            m += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            out[k + 1] += dist[a].weight * eq.consumption(a, grid[k + 1], m);
        }
    }
    return out;
}

// Single time t in [t0, T]; integrates on a uniform grid of `nodes` points over [t0, t].
inline double average_consumption(const TypeDistribution& dist, const DiscountFunction& d, double t,
                                  double t0, double x0, double T, std::size_t nodes = 200) {
    if (t < t0) throw std::invalid_argument("average_consumption: t < t0");
    if (t > T) throw std::invalid_argument("average_consumption: t > T");
    const MFGEquilibrium eq(dist, d, T);
    if (t == t0) {
        double s = 0.0;
        for (std::size_t a = 0; a < eq.size(); ++a) s += dist[a].weight * eq.consumption(a, t0, x0);
        return s;
    }
    const std::size_t steps = std::max<std::size_t>(1, nodes - 1);
    double s = 0.0;
    for (std::size_t a = 0; a < eq.size(); ++a) {
        const double mu = dist[a].type.mu;
        auto rhs = [&](double u, double m) { return eq.pi(a, u) * mu - m / tau(u, T) - eq.q(a, u); };
        double m = x0;
        const double h = (t - t0) / static_cast<double>(steps);
        for (std::size_t k = 0; k < steps; ++k) {
            const double u = t0 + static_cast<double>(k) * h;
            const double k1 = rhs(u, m);
            const double k2 = rhs(u + 0.5 * h, m + 0.5 * h * k1);
            const double k3 = rhs(u + 0.5 * h, m + 0.5 * h * k2);
            const double k4 = rhs(u + h, m + h * k3);
            m += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        s += dist[a].weight * eq.consumption(a, t, m);
    }
    return s;
}

}  // namespace relperf
