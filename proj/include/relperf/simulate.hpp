#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "core.hpp"
#include "mfg.hpp"
#include "nagent.hpp"
#include "strategy.hpp"

namespace relperf {

struct SimConfig {
    std::size_t n_paths = 100000;
    double dt = 1e-3;
    std::uint64_t seed = 42;
    bool antithetic = false;
    std::size_t record_stride = 0;  // record wealth every this many Euler steps; 0 = every step
    unsigned threads = 0;           // 0 = RELPERF_THREADS or hardware concurrency
};

struct PathBundle {
    std::size_t n_paths = 0, n_agents = 0;
    std::vector<double> times;            // recorded times, first is t0
    std::vector<double> wealth;           // [path][record][agent]
    std::vector<double> consumption;      // [path][record][agent], C(t, X_t) at the recorded time
    std::vector<double> common_noise;     // [path][record]: B increment since the previous record
    std::vector<double> idio_noise;       // [path][record][agent]: W increments since the previous record
    std::size_t n_records() const { return times.size(); }
    double X(std::size_t path, std::size_t rec, std::size_t agent) const {
        return wealth[(path * n_records() + rec) * n_agents + agent];
    }
    double C(std::size_t path, std::size_t rec, std::size_t agent) const {
        return consumption[(path * n_records() + rec) * n_agents + agent];
    }
};

namespace detail {

inline unsigned worker_count(unsigned requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("RELPERF_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<unsigned>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1u;
}

// Runs f(chunk) for every chunk index; each chunk owns its output, so the result
// does not depend on how chunks are scheduled.
template <class F>
void for_each_chunk(std::size_t n_chunks, unsigned threads, F&& f) {
    const unsigned w = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n_chunks, 1)));
    if (w <= 1) {
        for (std::size_t c = 0; c < n_chunks; ++c) f(c);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned k = 0; k < w; ++k)
        pool.emplace_back([&] {
            for (std::size_t c; (c = next.fetch_add(1)) < n_chunks;) f(c);
        });
    for (auto& th : pool) th.join();
}

// Independent stream for unit `index` (a path, an antithetic pair, or an agent).
inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return std::mt19937_64(seq);
}

struct StepGrid {
    double t0 = 0.0, T = 0.0, h = 0.0;
    std::size_t N = 0;
    double at(std::size_t k) const { return k == N ? T : t0 + static_cast<double>(k) * h; }
};

inline StepGrid make_steps(double t0, double T, double dt) {
    if (!(t0 < T)) throw std::invalid_argument("simulation needs t0 < T");
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
    if (dt > (T - t0) * (1.0 + 1e-12)) throw std::invalid_argument("dt larger than the horizon");
    StepGrid g{t0, T, 0.0, 0};
    g.N = static_cast<std::size_t>(std::ceil((T - t0) / dt - 1e-9));
    g.h = (T - t0) / static_cast<double>(g.N);
    return g;
}

// Strategy coefficients frozen at the Euler nodes.
struct CoeffTable {
    std::size_t n = 0;
    std::vector<double> pi, P, q;  // [k*n+i], [(k*n+i)*n+j], [k*n+i]
    template <DFStrategy S>
    CoeffTable(const S& s, const StepGrid& g) : n(s.n()) {
        pi.resize((g.N + 1) * n);
        q.resize((g.N + 1) * n);
        P.resize((g.N + 1) * n * n);
        for (std::size_t k = 0; k <= g.N; ++k) {
            const double t = g.at(k);
            for (std::size_t i = 0; i < n; ++i) {
                pi[k * n + i] = s.pi(i, t);
                q[k * n + i] = s.q(i, t);
                for (std::size_t j = 0; j < n; ++j) P[(k * n + i) * n + j] = s.p(i, j, t);
            }
        }
    }
    void consumption(std::size_t k, const double* X, double* c) const {
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = &P[(k * n + i) * n];
            double s = q[k * n + i];
            for (std::size_t j = 0; j < n; ++j) s += row[j] * X[j];
            c[i] = s;
        }
    }
};

// Euler-Maruyama for one path. z holds n+1 normals per step: B first, then W^1..W^n.
// obs(k, X, c, dB, dW) is called at each step before the update; end(X) afterwards.
template <class Draw, class Obs, class End>
void euler_path(const Population& pop, const CoeffTable& tab, const StepGrid& g, const std::vector<double>& x0,
                Draw&& draw, Obs&& obs, End&& end) {
    const std::size_t n = pop.size();
    const double sh = std::sqrt(g.h);
    std::vector<double> X(x0), c(n), dW(n);
    for (std::size_t k = 0; k < g.N; ++k) {
        tab.consumption(k, X.data(), c.data());
        const double dB = sh * draw();
        for (std::size_t i = 0; i < n; ++i) dW[i] = sh * draw();
        obs(k, X, c, dB, dW);
        for (std::size_t i = 0; i < n; ++i) {
            const double p = tab.pi[k * n + i];
            const auto& a = pop[i];
            X[i] += (p * a.mu - c[i]) * g.h + p * (a.nu * dW[i] + a.sigma * dB);
        }
    }
    end(X);
}

}  // namespace detail

template <DFStrategy S>
PathBundle simulate_paths(const Population& pop, const S& strategy, double t0, const std::vector<double>& x0,
                          const SimConfig& cfg) {
    const std::size_t n = pop.size();
    if (strategy.n() != n) throw std::invalid_argument("simulate_paths: strategy/population size mismatch");
    if (x0.size() != n) throw std::invalid_argument("simulate_paths: x0 has wrong length");
    if (cfg.n_paths < 1) throw std::invalid_argument("simulate_paths: need at least one path");
    if (cfg.antithetic && cfg.n_paths % 2) throw std::invalid_argument("antithetic sampling needs an even path count");
    const auto g = detail::make_steps(t0, strategy.T(), cfg.dt);
    const detail::CoeffTable tab(strategy, g);
    const std::size_t stride = cfg.record_stride ? cfg.record_stride : 1;

    PathBundle pb;
    pb.n_paths = cfg.n_paths;
    pb.n_agents = n;
    std::vector<std::size_t> rec_steps;
    for (std::size_t k = 0; k < g.N; k += stride) rec_steps.push_back(k);
    if (rec_steps.back() != g.N) rec_steps.push_back(g.N);
    for (auto k : rec_steps) pb.times.push_back(g.at(k));
    const std::size_t R = rec_steps.size();
    pb.wealth.assign(cfg.n_paths * R * n, 0.0);
    pb.consumption.assign(cfg.n_paths * R * n, 0.0);
    pb.common_noise.assign(cfg.n_paths * R, 0.0);
    pb.idio_noise.assign(cfg.n_paths * R * n, 0.0);

    const std::size_t per_unit = cfg.antithetic ? 2 : 1;
    const std::size_t units = cfg.n_paths / per_unit;
    const std::size_t chunk = 256;
    const std::size_t n_chunks = (units + chunk - 1) / chunk;

    detail::for_each_chunk(n_chunks, detail::worker_count(cfg.threads), [&](std::size_t ci) {
        std::vector<double> zbuf;
        for (std::size_t u = ci * chunk; u < std::min(units, (ci + 1) * chunk); ++u) {
            // draw the unit's normals once; antithetic partners replay them negated
            auto rng = detail::stream(cfg.seed, u);
            std::normal_distribution<double> nd;
            zbuf.resize(g.N * (n + 1));
            for (auto& z : zbuf) z = nd(rng);
            for (std::size_t s = 0; s < per_unit; ++s) {
                const std::size_t path = u * per_unit + s;
                const double sign = s ? -1.0 : 1.0;
                std::size_t zi = 0, r = 0;
                double accB = 0.0;
                std::vector<double> accW(n, 0.0), c_end(n);
                auto store = [&](const std::vector<double>& X, const double* c) {
                    const std::size_t base = (path * R + r) * n;
                    for (std::size_t i = 0; i < n; ++i) {
                        pb.wealth[base + i] = X[i];
                        pb.consumption[base + i] = c[i];
                        pb.idio_noise[base + i] = accW[i];
                        accW[i] = 0.0;
                    }
                    pb.common_noise[path * R + r] = accB;
                    accB = 0.0;
                    ++r;
                };
                detail::euler_path(
                    pop, tab, g, x0, [&] { return sign * zbuf[zi++]; },
                    [&](std::size_t k, const std::vector<double>& X, const std::vector<double>& c, double dB,
                        const std::vector<double>& dW) {
                        if (r < R && rec_steps[r] == k) store(X, c.data());
                        accB += dB;
                        for (std::size_t i = 0; i < n; ++i) accW[i] += dW[i];
                    },
                    [&](const std::vector<double>& X) {
                        tab.consumption(g.N, X.data(), c_end.data());
                        store(X, c_end.data());
                    });
            }
        }
    });
    return pb;
}

struct GaussianLaw {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

// Exact law of the affine closed loop: m' = A m + b, P' = A P + P A^T + D D^T with
// A = -[p_ik], b_i = pi_i mu_i - q_i, (D D^T)_ij = 1{i=j} pi_i^2 nu_i^2 + pi_i pi_j sigma_i sigma_j.
template <DFStrategy S>
GaussianLaw gaussian_moments(const Population& pop, const S& s, double t0, const std::vector<double>& x0, double t,
                             std::size_t steps = 2000) {
    const std::size_t n = pop.size();
    if (x0.size() != n) throw std::invalid_argument("gaussian_moments: x0 has wrong length");
    if (t < t0) throw std::invalid_argument("gaussian_moments: t < t0");
    GaussianLaw law{Eigen::Map<const Eigen::VectorXd>(x0.data(), static_cast<Eigen::Index>(n)),
                    Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n))};
    if (t == t0) return law;
    auto coeffs = [&](double u, Eigen::MatrixXd& A, Eigen::VectorXd& b, Eigen::MatrixXd& Q) {
        Eigen::VectorXd p(n), sig(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = s.pi(i, u);
            sig[i] = p[i] * pop[i].sigma;
            b[i] = p[i] * pop[i].mu - s.q(i, u);
            for (std::size_t k = 0; k < n; ++k) A(i, k) = -s.p(i, k, u);
        }
        Q = sig * sig.transpose();
        for (std::size_t i = 0; i < n; ++i) Q(i, i) += p[i] * p[i] * pop[i].nu * pop[i].nu;
    };
    const auto N = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd A(N, N), Q(N, N);
    Eigen::VectorXd b(N);
    auto f = [&](double u, const Eigen::VectorXd& m, const Eigen::MatrixXd& P, Eigen::VectorXd& dm,
                 Eigen::MatrixXd& dP) {
        coeffs(u, A, b, Q);
        dm = A * m + b;
        dP = A * P + P * A.transpose() + Q;
    };
    const double h = (t - t0) / static_cast<double>(steps);
    Eigen::VectorXd m1, m2, m3, m4;
    Eigen::MatrixXd P1, P2, P3, P4;
    for (std::size_t k = 0; k < steps; ++k) {
        const double u = t0 + static_cast<double>(k) * h;
        f(u, law.mean, law.cov, m1, P1);
        f(u + 0.5 * h, law.mean + 0.5 * h * m1, law.cov + 0.5 * h * P1, m2, P2);
        f(u + 0.5 * h, law.mean + 0.5 * h * m2, law.cov + 0.5 * h * P2, m3, P3);
        f(u + h, law.mean + h * m3, law.cov + h * P3, m4, P4);
        law.mean += h / 6.0 * (m1 + 2.0 * m2 + 2.0 * m3 + m4);
        law.cov += h / 6.0 * (P1 + 2.0 * P2 + 2.0 * P3 + P4);
    }
    law.cov = 0.5 * (law.cov + law.cov.transpose());
    return law;
}

// ---------------------------------------------------------------- payoffs

// Open-loop spike of agent `agent`'s control: (pi, c) += (v1, v2) on [t, t+eps).
struct Perturbation {
    double v1 = 0.0, v2 = 0.0;
    double eps = 0.0;
};

struct PayoffEstimate {
    double J = 0.0;
    double se = 0.0;
    std::size_t clamped = 0;
};

struct SpikeEntry {
    double v1 = 0.0, v2 = 0.0, eps = 0.0;
    double slope = 0.0, se = 0.0;
    bool pass = true;
};

struct SpikeReport {
    std::size_t agent = 0;
    double t = 0.0;
    double J_base = 0.0, J_base_se = 0.0;
    double slope_tolerance = 0.0;
    std::size_t clamped = 0;
    std::vector<SpikeEntry> entries;
    bool pass = true;
};

struct SpikeOptions {
    double slope_tol_rel = 1e-2;  // absolute slope tolerance = slope_tol_rel * |J_base|
    double v_bound = 10.0;
    double se_mult = 3.0;
};

namespace detail {

constexpr double kExpClamp = 700.0;

inline double clamped_exp(double e, std::size_t& count) {
    if (e > kExpClamp) {
        ++count;
        e = kExpClamp;
    } else if (e < -kExpClamp) {
        ++count;
        e = -kExpClamp;
    }
    return std::exp(e);
}

struct Moments {
    double s = 0.0, ss = 0.0;
    void add(double x) {
        s += x;
        ss += x * x;
    }
    void merge(const Moments& o) {
        s += o.s;
        ss += o.ss;
    }
    double mean(std::size_t m) const { return s / static_cast<double>(m); }
    double se(std::size_t m) const {
        if (m < 2) return 0.0;
        const double md = static_cast<double>(m);
        const double var = std::max(0.0, (ss - s * s / md) / (md - 1.0));
        return std::sqrt(var / md);
    }
};

struct PayoffTally {
    std::size_t clamped = 0;
    std::vector<Moments> base;   // [agent slot]
    std::vector<Moments> diff;   // [agent slot][eps][v]
    std::vector<Moments> pert;
};

// One base simulation from (t, x0); evaluates the payoff of each listed agent and,
// with common random numbers, every (eps, v) spike of that agent's control.
template <DFStrategy S>
PayoffTally payoff_engine(const Population& pop, const DiscountFunction& d, const S& strategy,
                          const std::vector<std::size_t>& agents, double t, const std::vector<double>& x0,
                          const std::vector<double>& eps_list, const std::vector<std::pair<double, double>>& v_list,
                          const SimConfig& cfg) {
    const std::size_t n = pop.size();
    const double T = strategy.T();
    if (!(t < T)) throw std::invalid_argument("expected_payoff: need t < T");
    if (x0.size() != n) throw std::invalid_argument("expected_payoff: x0 has wrong length");
    if (cfg.antithetic && cfg.n_paths % 2) throw std::invalid_argument("antithetic sampling needs an even path count");
    for (auto i : agents)
        if (i >= n) throw std::out_of_range("agent index out of range");
    const auto g = make_steps(t, T, cfg.dt);
    const CoeffTable tab(strategy, g);

    std::vector<std::size_t> eps_steps;
    for (double e : eps_list) {
        const double r = e / g.h;
        const double k = std::round(r);
        if (!(e > 0.0) || e > (T - t) * (1.0 + 1e-12) || std::abs(r - k) > 1e-6 || k < 1)
            throw std::invalid_argument("invalid eps list: " + std::to_string(e) +
                                        " is not a positive multiple of the Euler step within [t, T]");
        eps_steps.push_back(static_cast<std::size_t>(k));
    }
    const std::size_t na = agents.size(), ne = eps_list.size(), nv = v_list.size();
    std::vector<double> disc(g.N);
    for (std::size_t k = 0; k < g.N; ++k) disc[k] = d.eval(g.at(k) - t);
    const double disc_T = d.eval(T - t);
    const double nn = pop.n();

    const std::size_t per_unit = cfg.antithetic ? 2 : 1;
    const std::size_t units = cfg.n_paths / per_unit;
    const std::size_t chunk = 512;
    const std::size_t n_chunks = (units + chunk - 1) / chunk;
    std::vector<PayoffTally> tallies(n_chunks);

    for_each_chunk(n_chunks, worker_count(cfg.threads), [&](std::size_t ci) {
        PayoffTally& tl = tallies[ci];
        tl.base.assign(na, {});
        tl.diff.assign(na * ne * nv, {});
        tl.pert.assign(na * ne * nv, {});
        std::vector<double> zbuf(g.N * (n + 1));
        std::vector<double> R(na), K(na * ne), SW(na * ne), SB(ne), UT(na);
        std::vector<double> ub(na), ud(na * ne * nv), up(na * ne * nv);
        std::vector<double> Wsum(n);
        for (std::size_t u = ci * chunk; u < std::min(units, (ci + 1) * chunk); ++u) {
            auto rng = stream(cfg.seed, u);
            std::normal_distribution<double> nd;
            for (auto& z : zbuf) z = nd(rng);
            std::fill(ub.begin(), ub.end(), 0.0);
            std::fill(ud.begin(), ud.end(), 0.0);
            std::fill(up.begin(), up.end(), 0.0);
            for (std::size_t s = 0; s < per_unit; ++s) {
                const double sign = s ? -1.0 : 1.0;
                std::size_t zi = 0;
                std::fill(R.begin(), R.end(), 0.0);
                std::fill(Wsum.begin(), Wsum.end(), 0.0);
                double Bsum = 0.0;
                auto snap = [&](std::size_t k) {
                    for (std::size_t e = 0; e < ne; ++e)
                        if (eps_steps[e] == k) {
                            SB[e] = Bsum;
                            for (std::size_t a = 0; a < na; ++a) {
                                K[a * ne + e] = R[a];
                                SW[a * ne + e] = Wsum[agents[a]];
                            }
                        }
                };
                euler_path(
                    pop, tab, g, x0, [&] { return sign * zbuf[zi++]; },
                    [&](std::size_t k, const std::vector<double>&, const std::vector<double>& c, double dB,
                        const std::vector<double>& dW) {
                        snap(k);
                        double csum = 0.0;
                        for (std::size_t j = 0; j < n; ++j) csum += c[j];
                        for (std::size_t a = 0; a < na; ++a) {
                            const std::size_t i = agents[a];
                            const auto& ag = pop[i];
                            const double cbar = (csum - c[i]) / nn;
                            const double e = -(1.0 - ag.theta / nn) / ag.delta * c[i] + ag.theta / ag.delta * cbar;
                            R[a] -= disc[k] * clamped_exp(e, tl.clamped) * g.h;
                        }
                        Bsum += dB;
                        for (std::size_t j = 0; j < n; ++j) Wsum[j] += dW[j];
                    },
                    [&](const std::vector<double>& X) {
                        snap(g.N);
                        double xsum = 0.0;
                        for (std::size_t j = 0; j < n; ++j) xsum += X[j];
                        for (std::size_t a = 0; a < na; ++a) {
                            const std::size_t i = agents[a];
                            const auto& ag = pop[i];
                            const double coef = (1.0 - ag.theta / nn) / ag.delta;
                            const double e = -coef * X[i] + ag.theta / ag.delta * (xsum - X[i]) / nn;
                            UT[a] = e;  // exponent; utility formed below
                        }
                    });
                for (std::size_t a = 0; a < na; ++a) {
                    const std::size_t i = agents[a];
                    const auto& ag = pop[i];
                    const double coef = (1.0 - ag.theta / nn) / ag.delta;
                    const double uT = -clamped_exp(UT[a], tl.clamped);
                    const double Jb = R[a] + disc_T * uT;
                    ub[a] += Jb / static_cast<double>(per_unit);
                    for (std::size_t e = 0; e < ne; ++e) {
                        const double eps = eps_list[e];
                        const double noise = ag.mu * eps + ag.nu * SW[a * ne + e] + ag.sigma * SB[e];
                        for (std::size_t v = 0; v < nv; ++v) {
                            const auto [v1, v2] = v_list[v];
                            double df = 0.0;
                            if (v1 != 0.0 || v2 != 0.0) {
                                const double delta_x = v1 * noise - v2 * eps;
                                std::size_t dummy = 0;
                                const double uTp = -clamped_exp(UT[a] - coef * delta_x, dummy);
                                df = std::expm1(-coef * v2) * K[a * ne + e] + disc_T * (uTp - uT);
                            }
                            const std::size_t slot = (a * ne + e) * nv + v;
                            ud[slot] += df / static_cast<double>(per_unit);
                            up[slot] += (Jb + df) / static_cast<double>(per_unit);
                        }
                    }
                }
            }
            for (std::size_t a = 0; a < na; ++a) tl.base[a].add(ub[a]);
            for (std::size_t k = 0; k < ud.size(); ++k) {
                tl.diff[k].add(ud[k]);
                tl.pert[k].add(up[k]);
            }
        }
    });

    PayoffTally total;
    total.base.assign(na, {});
    total.diff.assign(na * ne * nv, {});
    total.pert.assign(na * ne * nv, {});
    for (const auto& tl : tallies) {
        total.clamped += tl.clamped;
        for (std::size_t a = 0; a < na; ++a) total.base[a].merge(tl.base[a]);
        for (std::size_t k = 0; k < total.diff.size(); ++k) {
            total.diff[k].merge(tl.diff[k]);
            total.pert[k].merge(tl.pert[k]);
        }
    }
    return total;
}

inline std::size_t sample_units(const SimConfig& cfg) { return cfg.antithetic ? cfg.n_paths / 2 : cfg.n_paths; }

}  // namespace detail

// J_i(t, x0) for the strategy's outcome started at (t, x0).
template <DFStrategy S>
PayoffEstimate expected_payoff(const Population& pop, const DiscountFunction& d, const S& strategy, std::size_t i,
                               double t, const std::vector<double>& x0, const SimConfig& cfg) {
    const auto tl = detail::payoff_engine(pop, d, strategy, {i}, t, x0, {}, {}, cfg);
    const std::size_t m = detail::sample_units(cfg);
    return {tl.base[0].mean(m), tl.base[0].se(m), tl.clamped};
}

// J_i for the outcome with agent i's control spiked per `pert`; same noise as the unperturbed call.
template <DFStrategy S>
PayoffEstimate expected_payoff(const Population& pop, const DiscountFunction& d, const S& strategy, std::size_t i,
                               double t, const std::vector<double>& x0, const SimConfig& cfg,
                               const Perturbation& pert) {
    const auto tl = detail::payoff_engine(pop, d, strategy, {i}, t, x0, {pert.eps}, {{pert.v1, pert.v2}}, cfg);
    const std::size_t m = detail::sample_units(cfg);
    return {tl.pert[0].mean(m), tl.pert[0].se(m), tl.clamped};
}

namespace detail {

inline void check_spike_inputs(const std::vector<std::pair<double, double>>& v_list,
                               const std::vector<double>& eps_list, const SpikeOptions& opt) {
    if (eps_list.empty()) throw std::invalid_argument("invalid eps list: empty");
    for (std::size_t k = 0; k < eps_list.size(); ++k) {
        if (!(eps_list[k] > 0.0)) throw std::invalid_argument("invalid eps list: entries must be positive");
        if (k && !(eps_list[k] < eps_list[k - 1]))
            throw std::invalid_argument("invalid eps list: entries must be strictly decreasing");
    }
    for (const auto& [v1, v2] : v_list)
        if (std::abs(v1) > opt.v_bound || std::abs(v2) > opt.v_bound)
            throw ValidationError("spike size exceeds the configured bound");
}

inline SpikeReport make_report(const PayoffTally& tl, std::size_t slot, std::size_t agent, double t,
                               const std::vector<std::pair<double, double>>& v_list,
                               const std::vector<double>& eps_list, const SpikeOptions& opt, std::size_t m) {
    SpikeReport rep;
    rep.agent = agent;
    rep.t = t;
    rep.J_base = tl.base[slot].mean(m);
    rep.J_base_se = tl.base[slot].se(m);
    rep.slope_tolerance = opt.slope_tol_rel * std::abs(rep.J_base);
    rep.clamped = tl.clamped;
    const std::size_t ne = eps_list.size(), nv = v_list.size();
    for (std::size_t e = 0; e < ne; ++e)
        for (std::size_t v = 0; v < nv; ++v) {
            const auto& mo = tl.diff[(slot * ne + e) * nv + v];
            SpikeEntry en{v_list[v].first, v_list[v].second, eps_list[e], mo.mean(m) / eps_list[e],
                          mo.se(m) / eps_list[e], true};
            en.pass = en.slope <= opt.se_mult * en.se + rep.slope_tolerance;
            rep.pass = rep.pass && en.pass;
            rep.entries.push_back(en);
        }
    return rep;
}

}  // namespace detail

template <DFStrategy S>
SpikeReport spike_test(const Population& pop, const DiscountFunction& d, const S& strategy, std::size_t i, double t,
                       const std::vector<double>& x0, const std::vector<std::pair<double, double>>& v_list,
                       const std::vector<double>& eps_list, const SimConfig& cfg, const SpikeOptions& opt = {}) {
    detail::check_spike_inputs(v_list, eps_list, opt);
    const auto tl = detail::payoff_engine(pop, d, strategy, {i}, t, x0, eps_list, v_list, cfg);
    return detail::make_report(tl, 0, i, t, v_list, eps_list, opt, detail::sample_units(cfg));
}

// Every agent at every t; one base simulation per t serves all agents and spikes.
template <DFStrategy S>
std::vector<SpikeReport> spike_test_grid(const Population& pop, const DiscountFunction& d, const S& strategy,
                                         const std::vector<double>& t_list, const std::vector<double>& x0,
                                         const std::vector<std::pair<double, double>>& v_list,
                                         const std::vector<double>& eps_list, const SimConfig& cfg,
                                         const SpikeOptions& opt = {}) {
    detail::check_spike_inputs(v_list, eps_list, opt);
    std::vector<std::size_t> agents(pop.size());
    for (std::size_t i = 0; i < agents.size(); ++i) agents[i] = i;
    std::vector<SpikeReport> out;
    for (double t : t_list) {
        const auto tl = detail::payoff_engine(pop, d, strategy, agents, t, x0, eps_list, v_list, cfg);
        for (std::size_t a = 0; a < agents.size(); ++a)
            out.push_back(detail::make_report(tl, a, agents[a], t, v_list, eps_list, opt, detail::sample_units(cfg)));
    }
    return out;
}

// ---------------------------------------------------------------- mean field

struct MeanFieldReport {
    std::vector<double> times;
    std::vector<double> gap;         // |cross-sectional mean wealth - Xbar|
    std::vector<double> se;          // cross-sectional std / sqrt(M)
    std::vector<double> c_gap;       // |mean C - ((p1 + E p2) Xbar + E q)|
    std::vector<double> c_se;
    double sup_gap = 0.0;
    double predicted_scale = 0.0;    // max se, the O(M^{-1/2}) yardstick
};

// M agents with i.i.d. types from dist under the closed-form mean-field strategy, one shared B.
inline MeanFieldReport meanfield_consistency(const TypeDistribution& dist, const DiscountFunction& d, std::size_t M,
                                             double x0, double t0, double T, const SimConfig& cfg,
                                             std::size_t checkpoints = 10) {
    if (M < 100) throw std::invalid_argument("meanfield_consistency: need M >= 100");
    const MFGEquilibrium eq(dist, d, T);
    const auto g = detail::make_steps(t0, T, cfg.dt);
    const std::size_t na = dist.size();

    // coefficient tables per atom, plus population aggregates for Xbar
    std::vector<double> pi((g.N + 1) * na), q((g.N + 1) * na), p1(g.N + 1), Epm(g.N + 1), Eps(g.N + 1),
        Eq(g.N + 1);
    for (std::size_t k = 0; k <= g.N; ++k) {
        const double t = g.at(k);
        p1[k] = eq.p1(t);
        for (std::size_t a = 0; a < na; ++a) {
            pi[k * na + a] = eq.pi(a, t);
            q[k * na + a] = eq.q(a, t);
            Epm[k] += dist[a].weight * pi[k * na + a] * dist[a].type.mu;
            Eps[k] += dist[a].weight * pi[k * na + a] * dist[a].type.sigma;
            Eq[k] += dist[a].weight * q[k * na + a];
        }
    }

    std::vector<std::size_t> rec;
    const std::size_t every = std::max<std::size_t>(1, g.N / std::max<std::size_t>(1, checkpoints));
    for (std::size_t k = every; k <= g.N; k += every) rec.push_back(k);
    if (rec.empty() || rec.back() != g.N) rec.push_back(g.N);

    // common noise and the mean-wealth SDE driven by it
    const double sh = std::sqrt(g.h);
    std::vector<double> dB(g.N);
    {
        auto rng = detail::stream(cfg.seed, ~std::uint64_t{0});
        std::normal_distribution<double> nd;
        for (auto& b : dB) b = sh * nd(rng);
    }
    std::vector<double> xbar_rec(rec.size());
    {
        double xb = x0;
        std::size_t r = 0;
        for (std::size_t k = 0; k < g.N; ++k) {
            xb += (-p1[k] * xb + Epm[k] - Eq[k]) * g.h + Eps[k] * dB[k];
            if (r < rec.size() && rec[r] == k + 1) xbar_rec[r++] = xb;
        }
    }

    // draw types, then simulate agent by agent (chunks own their partial sums)
    std::vector<std::size_t> type_of(M);
    {
        auto rng = detail::stream(cfg.seed, ~std::uint64_t{1});
        std::vector<double> w;
        for (const auto& at : dist.atoms()) w.push_back(at.weight);
        std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
        for (auto& ty : type_of) ty = pick(rng);
    }
    const std::size_t chunk = 256, n_chunks = (M + chunk - 1) / chunk;
    std::vector<std::vector<detail::Moments>> mx(n_chunks), mc(n_chunks);
    detail::for_each_chunk(n_chunks, detail::worker_count(cfg.threads), [&](std::size_t ci) {
        mx[ci].assign(rec.size(), {});
        mc[ci].assign(rec.size(), {});
        for (std::size_t j = ci * chunk; j < std::min(M, (ci + 1) * chunk); ++j) {
            const std::size_t a = type_of[j];
            const auto& x = dist[a].type;
            auto rng = detail::stream(cfg.seed, j);
            std::normal_distribution<double> nd;
            double X = x0;
            std::size_t r = 0;
            for (std::size_t k = 0; k < g.N; ++k) {
                const double p = pi[k * na + a];
                const double c = p1[k] * X + q[k * na + a];
                X += (p * x.mu - c) * g.h + p * (x.nu * sh * nd(rng) + x.sigma * dB[k]);
                if (r < rec.size() && rec[r] == k + 1) {
                    mx[ci][r].add(X);
                    mc[ci][r].add(p1[k + 1] * X + q[(k + 1) * na + a]);
                    ++r;
                }
            }
        }
    });

    MeanFieldReport rep;
    for (std::size_t r = 0; r < rec.size(); ++r) {
        detail::Moments X, C;
        for (std::size_t ci = 0; ci < n_chunks; ++ci) {
            X.merge(mx[ci][r]);
            C.merge(mc[ci][r]);
        }
        const std::size_t k = rec[r];
        rep.times.push_back(g.at(k));
        rep.gap.push_back(std::abs(X.mean(M) - xbar_rec[r]));
        rep.se.push_back(X.se(M));
        rep.c_gap.push_back(std::abs(C.mean(M) - (p1[k] * xbar_rec[r] + Eq[k])));
        rep.c_se.push_back(C.se(M));
        rep.sup_gap = std::max(rep.sup_gap, rep.gap.back());
        rep.predicted_scale = std::max(rep.predicted_scale, rep.se.back());
    }
    return rep;
}

}  // namespace relperf
