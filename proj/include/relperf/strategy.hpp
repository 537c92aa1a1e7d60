#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "core.hpp"
#include "mfg.hpp"
#include "nagent.hpp"

namespace relperf {

// Anything the simulator can drive: deterministic investment pi(i,t) and affine
// consumption C^i(t,x) = sum_k p(i,k,t) x^k + q(i,t).
template <class S>
concept DFStrategy = requires(const S& s, std::size_t i, double t) {
    { s.n() } -> std::convertible_to<std::size_t>;
    { s.T() } -> std::convertible_to<double>;
    { s.pi(i, t) } -> std::convertible_to<double>;
    { s.p(i, i, t) } -> std::convertible_to<double>;
    { s.q(i, t) } -> std::convertible_to<double>;
};

namespace detail {

// Index and weight of the left node for linear interpolation on a uniform grid.
inline std::pair<std::size_t, double> locate(const TimeGrid& g, double t) {
    const std::size_t m = g.size();
    if (t <= g.t0()) return {0, 0.0};
    if (t >= g.T()) return {m - 2, 1.0};
    const double x = (t - g.t0()) / g.step();
    std::size_t k = static_cast<std::size_t>(x);
    if (k > m - 2) k = m - 2;
    return {k, x - static_cast<double>(k)};
}

inline double lerp_at(const std::vector<double>& y, std::pair<std::size_t, double> kw) {
    return (1.0 - kw.second) * y[kw.first] + kw.second * y[kw.first + 1];
}

inline double sup_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s = std::max(s, std::abs(a[k] - b[k]));
    return s;
}

}  // namespace detail

// General (not necessarily simple) DF strategy profile sampled on a grid.
struct GridStrategyN {
    TimeGrid grid;
    std::vector<std::vector<double>> pi_s;               // [i][node]
    std::vector<std::vector<std::vector<double>>> p_s;   // [i][k][node]
    std::vector<std::vector<double>> q_s;                // [i][node]

    static GridStrategyN zero(std::size_t n, const TimeGrid& g) {
        const std::vector<double> z(g.size(), 0.0);
        return GridStrategyN{g, std::vector<std::vector<double>>(n, z),
                             std::vector<std::vector<std::vector<double>>>(n, std::vector<std::vector<double>>(n, z)),
                             std::vector<std::vector<double>>(n, z)};
    }

    template <DFStrategy S>
    static GridStrategyN sample(const S& s, const TimeGrid& g) {
        auto out = zero(s.n(), g);
        for (std::size_t j = 0; j < g.size(); ++j) {
            const double t = g[j];
            for (std::size_t i = 0; i < s.n(); ++i) {
                out.pi_s[i][j] = s.pi(i, t);
                out.q_s[i][j] = s.q(i, t);
                for (std::size_t k = 0; k < s.n(); ++k) out.p_s[i][k][j] = s.p(i, k, t);
            }
        }
        return out;
    }

    std::size_t n() const { return pi_s.size(); }
    double T() const { return grid.T(); }
    double pi(std::size_t i, double t) const { return detail::lerp_at(pi_s[i], detail::locate(grid, t)); }
    double p(std::size_t i, std::size_t k, double t) const {
        return detail::lerp_at(p_s[i][k], detail::locate(grid, t));
    }
    double q(std::size_t i, double t) const { return detail::lerp_at(q_s[i], detail::locate(grid, t)); }

    bool simple(double tol = 0.0) const {
        for (std::size_t i = 0; i < n(); ++i)
            for (std::size_t k = 0; k < n(); ++k)
                if (k != i)
                    for (double v : p_s[i][k])
                        if (std::abs(v) > tol) return false;
        return true;
    }
};

inline double sup_distance(const GridStrategyN& a, const GridStrategyN& b) {
    if (!(a.grid == b.grid) || a.n() != b.n()) throw std::invalid_argument("sup_distance: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.n(); ++i) {
        s = std::max(s, detail::sup_diff(a.pi_s[i], b.pi_s[i]));
        s = std::max(s, detail::sup_diff(a.q_s[i], b.q_s[i]));
        for (std::size_t k = 0; k < a.n(); ++k) s = std::max(s, detail::sup_diff(a.p_s[i][k], b.p_s[i][k]));
    }
    return s;
}

// Mean-field strategy on a grid: C^a(t,x,xbar) = p1(t) x + p2_a(t) xbar + q_a(t).
struct MFGGridStrategy {
    TimeGrid grid;
    std::vector<std::vector<double>> pi_s;  // [atom][node]
    std::vector<double> p1_s;               // [node]
    std::vector<std::vector<double>> p2_s;  // [atom][node]
    std::vector<std::vector<double>> q_s;   // [atom][node]

    static MFGGridStrategy zero(std::size_t atoms, const TimeGrid& g) {
        const std::vector<double> z(g.size(), 0.0);
        return MFGGridStrategy{g, std::vector<std::vector<double>>(atoms, z), z,
                               std::vector<std::vector<double>>(atoms, z), std::vector<std::vector<double>>(atoms, z)};
    }

    static MFGGridStrategy sample(const MFGEquilibrium& eq, const TimeGrid& g) {
        auto out = zero(eq.size(), g);
        for (std::size_t j = 0; j < g.size(); ++j) {
            out.p1_s[j] = eq.p1(g[j]);
            for (std::size_t a = 0; a < eq.size(); ++a) {
                out.pi_s[a][j] = eq.pi(a, g[j]);
                out.p2_s[a][j] = eq.p2(a, g[j]);
                out.q_s[a][j] = eq.q(a, g[j]);
            }
        }
        return out;
    }

    std::size_t size() const { return pi_s.size(); }
    double T() const { return grid.T(); }
    double pi(std::size_t a, double t) const { return detail::lerp_at(pi_s[a], detail::locate(grid, t)); }
    double p1(double t) const { return detail::lerp_at(p1_s, detail::locate(grid, t)); }
    double p2(std::size_t a, double t) const { return detail::lerp_at(p2_s[a], detail::locate(grid, t)); }
    double q(std::size_t a, double t) const { return detail::lerp_at(q_s[a], detail::locate(grid, t)); }
};

inline double sup_distance(const MFGGridStrategy& a, const MFGGridStrategy& b) {
    if (!(a.grid == b.grid) || a.size() != b.size()) throw std::invalid_argument("sup_distance: shape mismatch");
    double s = detail::sup_diff(a.p1_s, b.p1_s);
    for (std::size_t k = 0; k < a.size(); ++k) {
        s = std::max(s, detail::sup_diff(a.pi_s[k], b.pi_s[k]));
        s = std::max(s, detail::sup_diff(a.p2_s[k], b.p2_s[k]));
        s = std::max(s, detail::sup_diff(a.q_s[k], b.q_s[k]));
    }
    return s;
}

}  // namespace relperf
