#pragma once

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "relperf/relperf.hpp"

namespace relperf::cli {

namespace fs = std::filesystem;

struct NumericalFailure : std::runtime_error {
    json diagnostic;
    NumericalFailure(const std::string& what, json diag) : std::runtime_error(what), diagnostic(std::move(diag)) {}
};

struct Context {
    fs::path out_dir = ".";
    bool deterministic = false;

    std::ofstream open(const std::string& name) const {
        fs::create_directories(out_dir);
        std::ofstream f(out_dir / name);
        if (!f) throw std::runtime_error("cannot open " + (out_dir / name).string());
        f.precision(17);
        if (!deterministic) {
            const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
            std::tm tm{};
            gmtime_r(&now, &tm);
            f << "# generated " << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << '\n';
        }
        return f;
    }
};

inline json load_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot read config '" + path + "'");
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config is not valid JSON: ") + e.what());
    }
}

inline std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    for (std::string tok; std::getline(ss, tok, ',');) {
        if (tok.empty()) continue;
        try {
            out.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw ValidationError("not a number: '" + tok + "'");
        }
    }
    return out;
}

// "v1,v2;v1,v2" -> pairs
inline std::vector<std::pair<double, double>> parse_pairs(const std::string& s) {
    std::vector<std::pair<double, double>> out;
    std::stringstream ss(s);
    for (std::string tok; std::getline(ss, tok, ';');) {
        const auto v = parse_list(tok);
        if (v.size() != 2) throw ValidationError("spike sizes must be given as v1,v2");
        out.emplace_back(v[0], v[1]);
    }
    return out;
}

inline double horizon(const json& cfg) {
    if (cfg.contains("grid")) return cfg["grid"].at("T").get<double>();
    return cfg.value("T", 2.0);
}

inline TimeGrid grid_of(const json& cfg) {
    if (cfg.contains("grid")) return grid_from_json(cfg["grid"]);
    return TimeGrid(cfg.value("t0", 0.0), horizon(cfg), cfg.value("n_points", std::size_t{200}));
}

inline DiscountFunction discount_of(const json& cfg) {
    if (!cfg.contains("discount")) return DiscountFunction(Exponential{0.0});
    return discount_from_json(cfg["discount"]);
}

inline Population population_of(const json& cfg) {
    if (!cfg.contains("population")) throw ValidationError("config needs a 'population' array");
    std::vector<AgentType> agents;
    for (const auto& a : cfg["population"]) agents.push_back(agent_from_json(a));
    return Population(std::move(agents));
}

inline TypeDistribution distribution_of(const json& cfg) {
    if (!cfg.contains("type_distribution")) throw ValidationError("config needs a 'type_distribution' array");
    return distribution_from_json(cfg["type_distribution"]);
}

inline std::vector<double> x0_of(const json& cfg, std::size_t n) {
    if (!cfg.contains("x0")) return std::vector<double>(n, 1.0);
    if (cfg["x0"].is_number()) return std::vector<double>(n, cfg["x0"].get<double>());
    auto x = cfg["x0"].get<std::vector<double>>();
    if (x.size() != n) throw ValidationError("x0 must have one entry per agent");
    return x;
}

inline void check_finite(double v, const std::string& what) {
    if (!std::isfinite(v)) throw NumericalFailure("non-finite " + what, {{"error", "nan"}, {"quantity", what}});
}

// ---------------------------------------------------------------- commands

inline void cmd_equilibrium(const Context& ctx, const json& cfg, std::ostream& out) {
    const auto pop = population_of(cfg);
    const auto grid = grid_of(cfg);
    const auto eq = equilibrium_strategy(pop, discount_of(cfg), grid);
    auto f = ctx.open("equilibrium.csv");
    f << "agent_id,t,pi,c_slope,c_intercept\n";
    for (std::size_t i = 0; i < eq.n(); ++i)
        for (std::size_t j = 0; j < grid.size(); ++j) {
            const double t = grid[j];
            check_finite(eq.intercept_samples(i)[j], "consumption intercept");
            f << i << ',' << t << ',' << eq.pi(i, t) << ',' << eq.p(i, i, t) << ',' << eq.intercept_samples(i)[j]
              << '\n';
        }
    const auto& g = eq.aggregates();
    json summary = {{"phi_n", g.phi_n}, {"psi_n", g.psi_n}, {"delta_bar", g.delta_bar}, {"theta_bar", g.theta_bar},
                    {"pi_coeff", json::array()}};
    for (std::size_t i = 0; i < eq.n(); ++i) summary["pi_coeff"].push_back(eq.pi_coeff(i));
    out << summary.dump(2) << '\n';
}

inline void cmd_mfg(const Context& ctx, const json& cfg, std::ostream& out) {
    const auto dist = distribution_of(cfg);
    const auto grid = grid_of(cfg);
    const MFGEquilibrium eq(dist, discount_of(cfg), grid.T());
    auto f = ctx.open("mfg.csv");
    f << "atom_id,t,pi,c_slope,c_intercept\n";
    for (std::size_t a = 0; a < eq.size(); ++a)
        for (std::size_t j = 0; j < grid.size(); ++j) {
            const double t = grid[j], q = eq.q(a, t);
            check_finite(q, "consumption intercept");
            f << a << ',' << t << ',' << eq.pi(a, t) << ',' << eq.p1(t) << ',' << q << '\n';
        }
    const auto& g = eq.aggregates();
    json s = {{"phi", g.phi}, {"psi", g.psi}, {"E_delta", g.E_delta}, {"E_theta", g.E_theta}, {"atoms", json::array()}};
    for (std::size_t a = 0; a < eq.size(); ++a) {
        const auto c = mfg_type_constants(dist, dist[a].type);
        s["atoms"].push_back({{"type", to_json(dist[a].type)},
                              {"weight", dist[a].weight},
                              {"delta_hat", effective_delta(dist, dist[a].type)},
                              {"pi_coeff", eq.pi_coeff(a)},
                              {"A", c.A},
                              {"B", c.B},
                              {"D", c.D}});
    }
    auto fj = ctx.open("mfg.json");
    fj << s.dump(2) << '\n';
    out << s.dump(2) << '\n';
}

inline json report_json(const IterationReport& r, double closed_form_gap) {
    return {{"iterations", r.iterations},
            {"converged", r.converged},
            {"residual_history", r.residual_history},
            {"invest_history", r.invest_history},
            {"intercept_history", r.intercept_history},
            {"sup_gap_to_closed_form", closed_form_gap}};
}

inline void cmd_best_response(const Context& ctx, const json& cfg, double tol, std::size_t max_iter,
                              std::ostream& out) {
    const auto grid = grid_of(cfg);
    const auto d = discount_of(cfg);
    json rep;
    if (cfg.contains("population")) {
        const auto pop = population_of(cfg);
        auto [s, r] = fixed_point_nagent(pop, d, GridStrategyN::zero(pop.size(), grid), tol, max_iter);
        const double gap = sup_distance(s, GridStrategyN::sample(equilibrium_strategy(pop, d, grid), grid));
        rep = report_json(r, gap);
        auto f = ctx.open("best_response.csv");
        f << "agent_id,t,pi,c_intercept";
        for (std::size_t k = 0; k < pop.size(); ++k) f << ",p_" << k;
        f << '\n';
        for (std::size_t i = 0; i < pop.size(); ++i)
            for (std::size_t j = 0; j < grid.size(); ++j) {
                f << i << ',' << grid[j] << ',' << s.pi_s[i][j] << ',' << s.q_s[i][j];
                for (std::size_t k = 0; k < pop.size(); ++k) f << ',' << s.p_s[i][k][j];
                f << '\n';
            }
        if (!r.converged) throw NumericalFailure("fixed-point iteration did not converge", rep);
    } else {
        const auto dist = distribution_of(cfg);
        auto [s, r] = fixed_point_mfg(dist, d, MFGGridStrategy::zero(dist.size(), grid), tol, max_iter);
        const double gap = sup_distance(s, MFGGridStrategy::sample(MFGEquilibrium(dist, d, grid.T()), grid));
        rep = report_json(r, gap);
        auto f = ctx.open("best_response.csv");
        f << "atom_id,t,pi,p1,p2,c_intercept\n";
        for (std::size_t a = 0; a < dist.size(); ++a)
            for (std::size_t j = 0; j < grid.size(); ++j)
                f << a << ',' << grid[j] << ',' << s.pi_s[a][j] << ',' << s.p1_s[j] << ',' << s.p2_s[a][j] << ','
                  << s.q_s[a][j] << '\n';
        if (!r.converged) throw NumericalFailure("fixed-point iteration did not converge", rep);
    }
    auto fj = ctx.open("iteration_report.json");
    fj << rep.dump(2) << '\n';
    out << "converged after " << rep["iterations"] << " iterations; gap to closed form "
        << rep["sup_gap_to_closed_form"].get<double>() << '\n';
}

inline SimConfig sim_of(const json& cfg) {
    SimConfig s;
    if (cfg.contains("sim")) s = sim_from_json(cfg["sim"], s);
    return s;
}

inline void cmd_simulate(const Context& ctx, const json& cfg, std::size_t export_paths, std::ostream& out) {
    const auto pop = population_of(cfg);
    const auto grid = grid_of(cfg);
    const auto d = discount_of(cfg);
    auto sc = sim_of(cfg);
    if (sc.record_stride == 0) sc.record_stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround((grid.T() - grid.t0()) / sc.dt / 10.0)));
    const auto eq = equilibrium_strategy(pop, d, grid);
    const auto x0 = x0_of(cfg, pop.size());
    const auto pb = simulate_paths(pop, eq, grid.t0(), x0, sc);

    PathBundle head = pb;
    head.n_paths = std::min(export_paths, pb.n_paths);
    const std::size_t row = pb.n_records() * pb.n_agents;
    head.wealth.resize(head.n_paths * row);
    head.consumption.resize(head.n_paths * row);
    auto f = ctx.open("paths.csv");
    write_paths_csv(f, head);

    // moment check against the exact Gaussian law; antithetic pairs are averaged first
    const std::size_t per = sc.antithetic ? 2 : 1;
    const std::size_t m = pb.n_paths / per;
    json checks = json::array();
    bool ok = true;
    for (std::size_t r = 1; r < pb.n_records(); ++r) {
        const auto law = gaussian_moments(pop, eq, grid.t0(), x0, pb.times[r]);
        for (std::size_t i = 0; i < pb.n_agents; ++i) {
            detail::Moments mm;
            for (std::size_t u = 0; u < m; ++u) {
                double v = 0.0;
                for (std::size_t s = 0; s < per; ++s) v += pb.X(u * per + s, r, i) / static_cast<double>(per);
                mm.add(v);
            }
            const double mean = mm.mean(m), se = mm.se(m);
            check_finite(mean, "sample mean");
            const bool pass = std::abs(mean - law.mean[static_cast<Eigen::Index>(i)]) <= 4.0 * se + 1e-12;
            ok = ok && pass;
            checks.push_back({{"t", pb.times[r]}, {"agent", i}, {"mc_mean", mean}, {"se", se},
                              {"exact_mean", law.mean[static_cast<Eigen::Index>(i)]},
                              {"exact_var", law.cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i))},
                              {"verdict", pass ? "PASS" : "FAIL"}});
        }
    }
    json s = {{"n_paths", pb.n_paths}, {"exported_paths", head.n_paths}, {"dt", sc.dt}, {"seed", sc.seed},
              {"moment_checks", checks}, {"verdict", ok ? "PASS" : "FAIL"}};
    auto fj = ctx.open("moments.json");
    fj << s.dump(2) << '\n';
    out << "simulated " << pb.n_paths << " paths; mean check " << (ok ? "PASS" : "FAIL") << '\n';
}

inline void cmd_spike(const Context& ctx, const json& cfg, const std::string& v_opt, const std::string& t_opt,
                      const std::string& eps_opt, std::ostream& out) {
    const auto pop = population_of(cfg);
    const double T = horizon(cfg);
    const auto d = discount_of(cfg);
    auto sc = sim_of(cfg);
    if (!cfg.contains("sim") || !cfg["sim"].contains("dt")) sc.dt = 0.0025;
    const auto eq = equilibrium_strategy(pop, d, TimeGrid(0.0, T, 200));
    const auto x0 = x0_of(cfg, pop.size());
    const auto v = v_opt.empty() ? std::vector<std::pair<double, double>>{{1, 0}, {-1, 0}, {0, 1}, {0, -1},
                                                                         {1, 1}, {1, -1}, {-1, 1}, {-1, -1}}
                                 : parse_pairs(v_opt);
    const auto ts = t_opt.empty() ? std::vector<double>{0.0, 0.5, 1.0, 1.5} : parse_list(t_opt);
    const auto eps = eps_opt.empty() ? std::vector<double>{0.1, 0.05, 0.025} : parse_list(eps_opt);
    const auto reps = spike_test_grid(pop, d, eq, ts, x0, v, eps, sc);
    json rows = json::array();
    bool ok = true;
    for (const auto& r : reps) {
        rows.push_back(to_json(r));
        ok = ok && r.pass;
    }
    json s = {{"n_paths", sc.n_paths}, {"dt", sc.dt}, {"seed", sc.seed}, {"verdict", ok ? "PASS" : "FAIL"},
              {"reports", rows}};
    auto fj = ctx.open("spike.json");
    fj << s.dump(2) << '\n';
    out << "spike test " << (ok ? "PASS" : "FAIL") << " over " << reps.size() << " (agent, t) cases\n";
}

// Figure defaults: mu = sigma = 1, t0 = 0, x0 = 10, T = 2.
inline void cmd_figures(const Context& ctx, double rho, const std::vector<double>& betas,
                        const std::vector<double>& e_delta_hats, double beta2, std::size_t nodes, std::ostream& out) {
    const double T = 2.0, x0 = 10.0;
    const TimeGrid grid(0.0, T, nodes);
    {
        const TypeDistribution one({{{1.0, 0.0, 1.0, 0.0, 1.0}, 1.0}});
        auto f = ctx.open("fig1.csv");
        f << "t,beta,avg_consumption\n";
        for (double b : betas) {
            const DiscountFunction d = b > 0.0 ? DiscountFunction(Hyperbolic{rho, b}) : DiscountFunction(Exponential{rho});
            const auto c = average_consumption_curve(one, d, grid, x0);
            for (std::size_t j = 0; j < grid.size(); ++j) f << grid[j] << ',' << b << ',' << c[j] << '\n';
        }
    }
    {
        // two equally likely risk tolerances 0.5 and 1.5 with a common theta = 1 - 1/E[delta_hat]
        const DiscountFunction d = beta2 > 0.0 ? DiscountFunction(Hyperbolic{rho, beta2}) : DiscountFunction(Exponential{rho});
        auto f = ctx.open("fig2.csv");
        f << "t,e_delta_hat,avg_consumption\n";
        for (double e : e_delta_hats) {
            if (!(e >= 1.0)) throw ValidationError("E[delta_hat] values must be >= 1 for the default two-atom family");
            const double th = 1.0 - 1.0 / e;
            const TypeDistribution dist({{{0.5, th, 1.0, 0.0, 1.0}, 0.5}, {{1.5, th, 1.0, 0.0, 1.0}, 0.5}});
            const auto c = average_consumption_curve(dist, d, grid, x0);
            for (std::size_t j = 0; j < grid.size(); ++j) f << grid[j] << ',' << e << ',' << c[j] << '\n';
        }
    }
    out << "wrote fig1.csv and fig2.csv to " << ctx.out_dir.string() << '\n';
}

inline bool cmd_verify(const json& cfg, std::ostream& out) {
    const Population pop = cfg.contains("population")
                               ? population_of(cfg)
                               : Population({{1.0, 0.5, 1.0, 1.0, 1.0}, {2.0, 0.2, 0.5, 0.0, 1.0}, {0.7, 0.8, 1.2, 0.3, 0.6}});
    const auto d = cfg.contains("discount") ? discount_of(cfg) : DiscountFunction(Hyperbolic{0.1, 1.0});
    const auto grid = grid_of(cfg);
    const auto eq = equilibrium_strategy(pop, d, grid);
    bool all = true;
    auto line = [&](const std::string& name, bool ok, double value) {
        out << (ok ? "PASS " : "FAIL ") << name << "  (" << value << ")\n";
        all = all && ok;
    };

    double fg = 0.0;
    for (const auto& a : pop.agents()) {
        const auto r = check_fg(a, pop.size(), grid);
        fg = std::max({fg, r.f_ode, r.g_ode, r.cancellation, r.f_terminal, r.g_terminal});
    }
    line("ansatz ODEs and cancellation", fg <= 1e-12, fg);

    double foc = 0.0, rec = 0.0;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> ut(grid.t0(), grid.T()), ux(-5.0, 5.0);
    for (int k = 0; k < 200; ++k) {
        const double t = ut(rng);
        std::vector<double> x(pop.size());
        for (auto& v : x) v = ux(rng);
        for (std::size_t i = 0; i < pop.size(); ++i) {
            const auto r = foc_residuals(eq, i, t, x);
            foc = std::max({foc, r.rel_invest, r.rel_consume});
            rec = std::max(rec, std::abs(reconstruct_consumption(eq, i, t, x) - (eq.p(i, i, t) * x[i] + eq.q(i, t))));
        }
    }
    line("first-order conditions (relative)", foc <= 1e-9, foc);
    line("consumption reconstruction from ansatz", rec <= 1e-10, rec);

    auto [s, rep] = fixed_point_nagent(pop, d, GridStrategyN::zero(pop.size(), grid), 1e-12, 2000);
    const double gap = sup_distance(s, GridStrategyN::sample(eq, grid));
    line("fixed point matches closed form", rep.converged && gap <= 1e-8, gap);
    line("fixed point is simple", s.simple(1e-10), 0.0);

    double term = 0.0;
    for (std::size_t i = 0; i < pop.size(); ++i)
        term = std::max(term, std::abs(c_star(pop, d, i, grid.T(), 3.7, grid.T()) - 3.7));
    line("terminal consumption equals wealth", term <= 1e-12, term);
    return all;
}

// ---------------------------------------------------------------- entry point

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Equilibria of CARA relative-performance games with general discounting"};
    app.require_subcommand(1);
    Context ctx;
    std::string out_dir = ".";
    app.add_option("--out", out_dir, "output directory")->capture_default_str();
    app.add_flag("--deterministic", ctx.deterministic, "omit the timestamp header line");

    std::string config;
    auto* eq = app.add_subcommand("equilibrium", "closed-form n-agent equilibrium");
    eq->add_option("--config", config, "JSON config")->required();
    auto* mf = app.add_subcommand("mfg", "closed-form mean-field equilibrium");
    mf->add_option("--config", config, "JSON config")->required();

    double tol = 1e-12;
    std::size_t max_iter = 2000;
    auto* br = app.add_subcommand("best-response", "Picard iteration of the best-response map");
    br->add_option("--config", config, "JSON config")->required();
    br->add_option("--tol", tol)->capture_default_str();
    br->add_option("--max-iter", max_iter)->capture_default_str();

    std::size_t export_paths = 1000;
    auto* sim = app.add_subcommand("simulate", "Monte Carlo paths of the closed-loop equilibrium");
    sim->add_option("--config", config, "JSON config")->required();
    sim->add_option("--export-paths", export_paths, "paths written to paths.csv")->capture_default_str();

    std::string v_opt, t_opt, eps_opt;
    auto* sp = app.add_subcommand("spike-test", "spike-variation check of the equilibrium");
    sp->add_option("--config", config, "JSON config")->required();
    sp->add_option("--v", v_opt, "spike sizes, e.g. \"1,0;0,-1\"");
    sp->add_option("--t", t_opt, "start times, comma separated");
    sp->add_option("--eps", eps_opt, "spike lengths, comma separated, decreasing");

    double rho = 0.1, beta2 = 1.0;
    std::size_t nodes = 201;
    std::string betas = "0.5,1,2", edh = "1,1.5,2";
    auto* fig = app.add_subcommand("figures", "average-consumption curves");
    fig->add_option("--rho", rho)->capture_default_str();
    fig->add_option("--betas", betas, "hyperbolic beta values; 0 means exponential")->capture_default_str();
    fig->add_option("--e-delta-hat", edh, "E[delta_hat] values for fig2")->capture_default_str();
    fig->add_option("--beta", beta2, "hyperbolic beta for fig2; 0 means exponential")->capture_default_str();
    fig->add_option("--nodes", nodes, "time grid nodes")->capture_default_str();

    auto* ver = app.add_subcommand("verify", "identity and invariant checks");
    ver->add_option("--config", config, "JSON config (optional)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 1;
    }
    ctx.out_dir = out_dir;

    try {
        if (*eq) cmd_equilibrium(ctx, load_json(config), out);
        else if (*mf) cmd_mfg(ctx, load_json(config), out);
        else if (*br) cmd_best_response(ctx, load_json(config), tol, max_iter, out);
        else if (*sim) cmd_simulate(ctx, load_json(config), export_paths, out);
        else if (*sp) cmd_spike(ctx, load_json(config), v_opt, t_opt, eps_opt, out);
        else if (*fig) cmd_figures(ctx, rho, parse_list(betas), parse_list(edh), beta2, nodes, out);
        else if (*ver) {
            if (!cmd_verify(config.empty() ? json::object() : load_json(config), out))
                throw NumericalFailure("verification failed", {{"error", "verify"}});
        }
    } catch (const NumericalFailure& e) {
        json diag = e.diagnostic;
        diag["message"] = e.what();
        err << diag.dump(2) << '\n';
        return 2;
    } catch (const DegenerateFixedPointError& e) {
        err << json{{"error", "degenerate"}, {"message", e.what()}}.dump(2) << '\n';
        return 2;
    } catch (const std::invalid_argument& e) {  // ValidationError included
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const json::exception& e) {
        err << "error: bad config: " << e.what() << '\n';
        return 1;
    } catch (const std::out_of_range& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace relperf::cli
