#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "simulate.hpp"

namespace relperf {

using json = nlohmann::json;

inline AgentType agent_from_json(const json& j) {
    AgentType a;
    a.delta = j.at("delta").get<double>();
    a.theta = j.value("theta", 0.0);
    a.mu = j.at("mu").get<double>();
    a.nu = j.value("nu", 0.0);
    a.sigma = j.value("sigma", 0.0);
    validate_agent(a);
    return a;
}

inline json to_json(const AgentType& a) {
    return {{"delta", a.delta}, {"theta", a.theta}, {"mu", a.mu}, {"nu", a.nu}, {"sigma", a.sigma}};
}

// {"variant":"exponential","rho":..} | {"variant":"hyperbolic","rho":..,"beta":..}
// | {"variant":"tabulated","t":[..],"lambda":[..]}
inline DiscountFunction discount_from_json(const json& j) {
    const auto v = j.at("variant").get<std::string>();
    if (v == "exponential") return DiscountFunction(Exponential{j.at("rho").get<double>()});
    if (v == "hyperbolic") return DiscountFunction(Hyperbolic{j.at("rho").get<double>(), j.at("beta").get<double>()});
    if (v == "tabulated")
        return DiscountFunction::tabulate(j.at("t").get<std::vector<double>>(),
                                          j.at("lambda").get<std::vector<double>>());
    throw ValidationError("unknown discount variant '" + v + "'");
}

inline json to_json(const DiscountFunction& d) {
    return std::visit([](const auto& x) -> json {
        using D = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<D, Exponential>) {
            return {{"variant", "exponential"}, {"rho", x.rho}};
        } else if constexpr (std::is_same_v<D, Hyperbolic>) {
            return {{"variant", "hyperbolic"}, {"rho", x.rho}, {"beta", x.beta}};
        } else {
            std::vector<double> lam;
            for (double l : x.log_lambda) lam.push_back(std::exp(l));
            return {{"variant", "tabulated"}, {"t", x.t}, {"lambda", lam}};
        }
    }, d.variant());
}

inline TimeGrid grid_from_json(const json& j) {
    return TimeGrid(j.value("t0", 0.0), j.at("T").get<double>(), j.value("n_points", std::size_t{200}));
}

// [{"delta":..,...,"weight":..}, ...]
inline TypeDistribution distribution_from_json(const json& j) {
    std::vector<TypeAtom> atoms;
    for (const auto& e : j) atoms.push_back({agent_from_json(e), e.at("weight").get<double>()});
    return TypeDistribution(std::move(atoms));
}

inline SimConfig sim_from_json(const json& j, SimConfig c = {}) {
    c.n_paths = j.value("n_paths", c.n_paths);
    c.dt = j.value("dt", c.dt);
    c.seed = j.value("seed", c.seed);
    c.antithetic = j.value("antithetic", c.antithetic);
    c.record_stride = j.value("record_stride", c.record_stride);
    return c;
}

inline void write_paths_csv(std::ostream& os, const PathBundle& pb) {
    os << "path_id,t,agent_id,wealth,consumption\n";
    os.precision(17);
    for (std::size_t p = 0; p < pb.n_paths; ++p)
        for (std::size_t r = 0; r < pb.n_records(); ++r)
            for (std::size_t i = 0; i < pb.n_agents; ++i)
                os << p << ',' << pb.times[r] << ',' << i << ',' << pb.X(p, r, i) << ',' << pb.C(p, r, i) << '\n';
}

inline json to_json(const SpikeReport& r) {
    json rows = json::array();
    for (const auto& e : r.entries)
        rows.push_back({{"t", r.t}, {"v1", e.v1}, {"v2", e.v2}, {"eps", e.eps}, {"slope", e.slope}, {"se", e.se},
                        {"verdict", e.pass ? "PASS" : "FAIL"}});
    return {{"agent", r.agent},
            {"t", r.t},
            {"J_base", r.J_base},
            {"J_base_se", r.J_base_se},
            {"slope_tolerance", r.slope_tolerance},
            {"clamped_samples", r.clamped},
            {"verdict", r.pass ? "PASS" : "FAIL"},
            {"entries", rows}};
}

}  // namespace relperf
