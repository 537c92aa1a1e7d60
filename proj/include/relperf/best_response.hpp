#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <tuple>
#include <utility>
#include <vector>

#include "core.hpp"
#include "mfg.hpp"
#include "nagent.hpp"
#include "strategy.hpp"

namespace relperf {

struct IterationReport {
    std::size_t iterations = 0;
    std::vector<double> residual_history;   // sup-norm change of the whole profile
    std::vector<double> invest_history;     // sup-norm change of the sigma-weighted mean investment
    std::vector<double> intercept_history;  // sup-norm change of the mean consumption intercept
    bool converged = false;
};

struct AgentResponse {
    std::vector<double> pi;               // [node]
    std::vector<std::vector<double>> p;   // [k][node]
    std::vector<double> q;                // [node]
    std::vector<double> h;                // [node]
};

namespace detail {

// h(t_j) = (1/tau_j) int_{t_j}^T f(s) ds from node and midpoint samples of f,
// Simpson on each grid cell, accumulated backwards from T.
inline std::vector<double> backward_h(const TimeGrid& g, const std::vector<double>& f_node,
                                      const std::vector<double>& f_mid) {
    const std::size_t m = g.size();
    std::vector<double> h(m, 0.0);
    double acc = 0.0;
    for (std::size_t j = m - 1; j-- > 0;) {
        const double w = g[j + 1] - g[j];
        acc += w / 6.0 * (f_node[j] + 4.0 * f_mid[j] + f_node[j + 1]);
        h[j] = acc / tau(g[j], g.T());
    }
    return h;
}

// The -ln lambda(T-s)/tau(s) term of G contributes -(1/tau) int_t^T ln lambda(T-s) ds to h,
// which the discount integrates exactly (tabulated kinks need not sit on grid nodes).
inline void add_discount_part(std::vector<double>& h, const TimeGrid& g, const DiscountFunction& d) {
    for (std::size_t j = 0; j < g.size(); ++j) h[j] -= discount_log_integral(d, g[j], g.T()) / tau(g[j], g.T());
}

}  // namespace detail

inline AgentResponse best_response_nagent(const Population& pop, const DiscountFunction& d,
                                          const GridStrategyN& s, std::size_t i) {
    const std::size_t n = pop.size();
    if (s.n() != n) throw std::invalid_argument("best_response_nagent: strategy profile has wrong agent count");
    if (i >= n) throw std::out_of_range("agent index out of range");
    const TimeGrid& g = s.grid;
    const std::size_t m = g.size();
    const double T = g.T(), nn = pop.n();
    const auto& a = pop[i];
    const double v = a.nu * a.nu + a.sigma * a.sigma;
    const double keep = 1.0 - a.theta / nn;
    const double th_p = a.theta / keep;  // theta/(1 - theta/n)
    const double de_p = a.delta / keep;

    // (1/n) sums over k != i of sigma_k Pi^k, mu_k Pi^k, and (1/n^2) sum (nu_k Pi^k)^2
    auto sums = [&](auto&& pik) {
        double sp = 0.0, mp = 0.0, vp = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            if (k == i) continue;
            const double x = pik(k);
            sp += pop[k].sigma * x;
            mp += pop[k].mu * x;
            vp += (pop[k].nu * x) * (pop[k].nu * x);
        }
        return std::array<double, 3>{sp / nn, mp / nn, vp / (nn * nn)};
    };
    // G less its discount term (added back exactly by add_discount_part)
    auto G = [&](double t, const std::array<double, 3>& S) {
        const double tt = tau(t, T);
        const double c = a.theta / (tt * a.delta);
        const double m1 = a.mu + c * a.sigma * S[0];
        return -0.5 * m1 * m1 / v + c * S[1] + 0.5 * c * c * (S[0] * S[0] + S[2]);
    };

    AgentResponse r;
    r.pi.resize(m);
    r.q.resize(m);
    r.p.assign(n, std::vector<double>(m, 0.0));
    std::vector<double> f_node(m), f_mid(m > 0 ? m - 1 : 0);
    for (std::size_t j = 0; j < m; ++j) {
        const double t = g[j];
        const auto S = sums([&](std::size_t k) { return s.pi_s[k][j]; });
        r.pi[j] = (a.delta * a.mu * tau(t, T) + a.theta * a.sigma * S[0]) / (v * keep);
        f_node[j] = tau(t, T) * G(t, S);
        if (j + 1 < m) {
            const double tm = 0.5 * (g[j] + g[j + 1]);
            const auto Sm = sums([&](std::size_t k) { return 0.5 * (s.pi_s[k][j] + s.pi_s[k][j + 1]); });
            f_mid[j] = tau(tm, T) * G(tm, Sm);
        }
    }
    r.h = detail::backward_h(g, f_node, f_mid);
    detail::add_discount_part(r.h, g, d);

    for (std::size_t j = 0; j < m; ++j) {
        const double tt = tau(g[j], T);
        double qbar = 0.0;
        for (std::size_t k = 0; k < n; ++k)
            if (k != i) qbar += s.q_s[k][j];
        r.q[j] = -de_p * (r.h[j] + d.log_eval(T - g[j])) + th_p * qbar / nn;
        for (std::size_t l = 0; l < n; ++l) {
            double pbar = 0.0;
            for (std::size_t k = 0; k < n; ++k)
                if (k != i) pbar += s.p_s[k][l][j];
            r.p[l][j] = (l == i ? 1.0 / tt : -th_p / (nn * tt)) + th_p * pbar / nn;
        }
    }
    return r;
}

// One simultaneous (Picard) sweep of the best-response map over all agents.
inline GridStrategyN best_response_profile(const Population& pop, const DiscountFunction& d, const GridStrategyN& s) {
    auto out = GridStrategyN::zero(pop.size(), s.grid);
    for (std::size_t i = 0; i < pop.size(); ++i) {
        auto r = best_response_nagent(pop, d, s, i);
        out.pi_s[i] = std::move(r.pi);
        out.p_s[i] = std::move(r.p);
        out.q_s[i] = std::move(r.q);
    }
    return out;
}

inline std::pair<GridStrategyN, IterationReport> fixed_point_nagent(const Population& pop, const DiscountFunction& d,
                                                                    GridStrategyN init, double tol,
                                                                    std::size_t max_iter) {
    if (!(tol > 0.0)) throw std::invalid_argument("fixed_point_nagent: tol must be positive");
    // Guard against degenerate populations before iterating.
    (void)aggregates(pop);
    const std::size_t n = pop.size(), m = init.grid.size();
    auto weighted = [&](const GridStrategyN& s) {
        std::vector<double> sp(m, 0.0), qb(m, 0.0);
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t k = 0; k < n; ++k) {
                sp[j] += pop[k].sigma * s.pi_s[k][j] / pop.n();
                qb[j] += s.q_s[k][j] / pop.n();
            }
        return std::pair{sp, qb};
    };
    IterationReport rep;
    GridStrategyN cur = std::move(init);
    auto [sp_cur, qb_cur] = weighted(cur);
    for (std::size_t it = 0; it < max_iter; ++it) {
        GridStrategyN next = best_response_profile(pop, d, cur);
        const double res = sup_distance(next, cur);
        auto [sp_next, qb_next] = weighted(next);
        rep.residual_history.push_back(res);
        rep.invest_history.push_back(detail::sup_diff(sp_next, sp_cur));
        rep.intercept_history.push_back(detail::sup_diff(qb_next, qb_cur));
        rep.iterations = it + 1;
        cur = std::move(next);
        sp_cur = std::move(sp_next);
        qb_cur = std::move(qb_next);
        if (!std::isfinite(res)) break;
        if (res <= tol) {
            rep.converged = true;
            break;
        }
    }
    return {std::move(cur), std::move(rep)};
}

inline MFGGridStrategy best_response_mfg(const TypeDistribution& dist, const DiscountFunction& d,
                                         const MFGGridStrategy& s) {
    const std::size_t na = dist.size();
    if (s.size() != na) throw std::invalid_argument("best_response_mfg: strategy has wrong atom count");
    const TimeGrid& g = s.grid;
    const std::size_t m = g.size();
    const double T = g.T();

    auto moments = [&](auto&& pia) {
        double sp = 0.0, mp = 0.0;
        for (std::size_t a = 0; a < na; ++a) {
            sp += dist[a].weight * dist[a].type.sigma * pia(a);
            mp += dist[a].weight * dist[a].type.mu * pia(a);
        }
        return std::pair{sp, mp};
    };
    std::vector<double> sp_node(m), mp_node(m), sp_mid(m - 1), mp_mid(m - 1);
    std::vector<double> Eq(m, 0.0), Ep2v(m, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
        std::tie(sp_node[j], mp_node[j]) = moments([&](std::size_t a) { return s.pi_s[a][j]; });
        if (j + 1 < m)
            std::tie(sp_mid[j], mp_mid[j]) =
                moments([&](std::size_t a) { return 0.5 * (s.pi_s[a][j] + s.pi_s[a][j + 1]); });
        for (std::size_t a = 0; a < na; ++a) {
            Eq[j] += dist[a].weight * s.q_s[a][j];
            Ep2v[j] += dist[a].weight * s.p2_s[a][j];
        }
    }

    auto out = MFGGridStrategy::zero(na, g);
    for (std::size_t j = 0; j < m; ++j) out.p1_s[j] = 1.0 / tau(g[j], T);
    for (std::size_t a = 0; a < na; ++a) {
        const auto& x = dist[a].type;
        const double v = x.nu * x.nu + x.sigma * x.sigma;
        auto G = [&](double t, double sp, double mp) {
            const double tt = tau(t, T);
            const double c = x.theta / (tt * x.delta);
            const double m1 = x.mu + c * x.sigma * sp;
            return -0.5 * m1 * m1 / v + c * mp + 0.5 * c * c * sp * sp;
        };
        std::vector<double> f_node(m), f_mid(m - 1);
        for (std::size_t j = 0; j < m; ++j) {
            f_node[j] = tau(g[j], T) * G(g[j], sp_node[j], mp_node[j]);
            if (j + 1 < m) {
                const double tm = 0.5 * (g[j] + g[j + 1]);
                f_mid[j] = tau(tm, T) * G(tm, sp_mid[j], mp_mid[j]);
            }
        }
        auto h = detail::backward_h(g, f_node, f_mid);
        detail::add_discount_part(h, g, d);
        for (std::size_t j = 0; j < m; ++j) {
            const double tt = tau(g[j], T);
            out.pi_s[a][j] = x.delta * x.mu / v * tt + x.sigma * x.theta / v * sp_node[j];
            out.p2_s[a][j] = -x.theta / tt + x.theta * (s.p1_s[j] + Ep2v[j]);
            out.q_s[a][j] = -x.delta * (h[j] + d.log_eval(T - g[j])) + x.theta * Eq[j];
        }
    }
    return out;
}

inline std::pair<MFGGridStrategy, IterationReport> fixed_point_mfg(const TypeDistribution& dist,
                                                                   const DiscountFunction& d, MFGGridStrategy init,
                                                                   double tol, std::size_t max_iter) {
    if (!(tol > 0.0)) throw std::invalid_argument("fixed_point_mfg: tol must be positive");
    (void)mfg_aggregates(dist);
    const std::size_t m = init.grid.size();
    auto weighted = [&](const MFGGridStrategy& s) {
        std::vector<double> sp(m, 0.0), qb(m, 0.0);
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t a = 0; a < dist.size(); ++a) {
                sp[j] += dist[a].weight * dist[a].type.sigma * s.pi_s[a][j];
                qb[j] += dist[a].weight * s.q_s[a][j];
            }
        return std::pair{sp, qb};
    };
    IterationReport rep;
    MFGGridStrategy cur = std::move(init);
    auto [sp_cur, qb_cur] = weighted(cur);
    for (std::size_t it = 0; it < max_iter; ++it) {
        MFGGridStrategy next = best_response_mfg(dist, d, cur);
        const double res = sup_distance(next, cur);
        auto [sp_next, qb_next] = weighted(next);
        rep.residual_history.push_back(res);
        rep.invest_history.push_back(detail::sup_diff(sp_next, sp_cur));
        rep.intercept_history.push_back(detail::sup_diff(qb_next, qb_cur));
        rep.iterations = it + 1;
        cur = std::move(next);
        sp_cur = std::move(sp_next);
        qb_cur = std::move(qb_next);
        if (!std::isfinite(res)) break;
        if (res <= tol) {
            rep.converged = true;
            break;
        }
    }
    return {std::move(cur), std::move(rep)};
}

// Spectral radius of the linear part of the n-agent investment update
// Pi_i <- b_i + sum_{k != i} M_ik Pi_k. This, not psi_n, sets the Picard rate.
inline double investment_contraction_factor(const Population& pop, std::size_t power_iters = 2000) {
    const std::size_t n = pop.size();
    const double nn = pop.n();
    std::vector<double> c(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& a = pop[i];
        c[i] = a.theta * a.sigma / (nn * (a.nu * a.nu + a.sigma * a.sigma) * (1.0 - a.theta / nn));
    }
    // M = diag(c) (1 sigma^T - diag(sigma)), all entries non-negative; the square M^2
    // removes the +/- pairing that appears for bipartite structure (n = 2).
    std::vector<double> x(n, 1.0), y(n), z(n);
    auto apply = [&](const std::vector<double>& in, std::vector<double>& out) {
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) s += pop[k].sigma * in[k];
        for (std::size_t i = 0; i < n; ++i) out[i] = c[i] * (s - pop[i].sigma * in[i]);
    };
    double lam2 = 0.0;
    for (std::size_t it = 0; it < power_iters; ++it) {
        apply(x, y);
        apply(y, z);
        double nz = 0.0, nx = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            nz = std::max(nz, std::abs(z[i]));
            nx = std::max(nx, std::abs(x[i]));
        }
        if (nz == 0.0) return 0.0;
        lam2 = nz / nx;
        for (std::size_t i = 0; i < n; ++i) x[i] = z[i] / nz;
    }
    return std::sqrt(lam2);
}

}  // namespace relperf
