#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace relperf {

struct ValidationError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// psi >= 1 or mean theta >= 1: the averaged fixed-point equation has no solution.
struct DegenerateFixedPointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RangeError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

struct AgentType {
    double delta = 1.0;  // risk tolerance
    double theta = 0.0;  // competition weight
    double mu = 1.0;
    double nu = 0.0;     // idiosyncratic volatility
    double sigma = 1.0;  // common-noise volatility
};

inline std::vector<std::string> agent_violations(const AgentType& a) {
    std::vector<std::string> out;
    if (!(a.delta > 0.0)) out.emplace_back("delta must be positive");
    if (!(a.theta >= 0.0 && a.theta < 1.0)) out.emplace_back("theta must lie in [0,1)");
    if (!(a.mu > 0.0)) out.emplace_back("mu must be positive");
    if (!(a.sigma >= 0.0)) out.emplace_back("sigma must be non-negative");
    if (!(a.nu >= 0.0)) out.emplace_back("nu must be non-negative");
    if (!(a.sigma + a.nu > 0.0)) out.emplace_back("sigma+nu must be positive");
    return out;
}

inline void validate_agent(const AgentType& a) {
    auto v = agent_violations(a);
    if (v.empty()) return;
    std::string msg = v.front();
    for (std::size_t k = 1; k < v.size(); ++k) msg += "; " + v[k];
    throw ValidationError(msg);
}

// ---------------------------------------------------------------- quadrature

// Composite Simpson over uniformly spaced samples; needs an even number of intervals.
inline double simpson(const std::vector<double>& y, double h) {
    const std::size_t m = y.size();
    if (m < 3 || (m - 1) % 2 != 0)
        throw std::invalid_argument("simpson: need an odd number of samples >= 3");
    double s = y.front() + y.back();
    for (std::size_t k = 1; k + 1 < m; ++k) s += (k % 2 ? 4.0 : 2.0) * y[k];
    return s * h / 3.0;
}

template <class F>
double simpson(F&& f, double a, double b, std::size_t intervals) {
    if (intervals < 2) intervals = 2;
    if (intervals % 2) ++intervals;
    const double h = (b - a) / static_cast<double>(intervals);
    double s = f(a) + f(b);
    for (std::size_t k = 1; k < intervals; ++k)
        s += (k % 2 ? 4.0 : 2.0) * f(a + static_cast<double>(k) * h);
    return s * h / 3.0;
}

// Piecewise-linear interpolation on sorted abscissae; clamps outside the range.
inline double interp_linear(const std::vector<double>& x, const std::vector<double>& y, double t) {
    if (t <= x.front()) return y.front();
    if (t >= x.back()) return y.back();
    auto it = std::upper_bound(x.begin(), x.end(), t);
    const std::size_t k = static_cast<std::size_t>(it - x.begin()) - 1;
    const double w = (t - x[k]) / (x[k + 1] - x[k]);
    return (1.0 - w) * y[k] + w * y[k + 1];
}

// ---------------------------------------------------------------- discounting

struct Exponential {
    double rho = 0.0;
};

struct Hyperbolic {
    double rho = 0.1;
    double beta = 1.0;
};

// (t, lambda(t)) table; ln lambda is interpolated linearly.
struct Tabulated {
    std::vector<double> t;
    std::vector<double> log_lambda;
};

class DiscountFunction {
public:
    using Variant = std::variant<Exponential, Hyperbolic, Tabulated>;

    DiscountFunction() : v_(Exponential{0.0}) {}
    DiscountFunction(Exponential e) : v_(e) {
        if (!(e.rho >= 0.0)) throw ValidationError("exponential discount: rho must be non-negative");
    }
    DiscountFunction(Hyperbolic h) : v_(h) {
        if (!(h.rho > 0.0)) throw ValidationError("hyperbolic discount: rho must be positive");
        if (!(h.beta > 0.0)) throw ValidationError("hyperbolic discount: beta must be positive");
    }
    DiscountFunction(Tabulated tab) {
        if (tab.t.size() < 2 || tab.t.size() != tab.log_lambda.size())
            throw ValidationError("tabulated discount: need at least two (t, lambda) pairs");
        if (tab.t.front() != 0.0) throw ValidationError("tabulated discount: first node must be t=0");
        for (std::size_t k = 1; k < tab.t.size(); ++k)
            if (!(tab.t[k] > tab.t[k - 1]))
                throw ValidationError("tabulated discount: t must be strictly increasing");
        if (std::abs(tab.log_lambda.front()) > 1e-12)
            throw ValidationError("tabulated discount: lambda(0) must equal 1");
        for (double l : tab.log_lambda)
            if (!std::isfinite(l)) throw ValidationError("tabulated discount: lambda must be positive");
        v_ = std::move(tab);
    }

    static DiscountFunction tabulate(const std::vector<double>& t, const std::vector<double>& lambda) {
        if (t.size() != lambda.size()) throw ValidationError("tabulated discount: size mismatch");
        Tabulated tab{t, {}};
        tab.log_lambda.reserve(lambda.size());
        for (double l : lambda) {
            if (!(l > 0.0)) throw ValidationError("tabulated discount: lambda must be positive");
            tab.log_lambda.push_back(std::log(l));
        }
        return DiscountFunction(std::move(tab));
    }

    const Variant& variant() const { return v_; }

    double log_eval(double t) const {
        if (t < 0.0) {
            if (t < -1e-12) throw RangeError("discount evaluated at negative time");
            t = 0.0;
        }
        return std::visit([t](const auto& d) -> double {
            using D = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<D, Exponential>) {
                return -d.rho * t;
            } else if constexpr (std::is_same_v<D, Hyperbolic>) {
                return -(d.rho / d.beta) * std::log1p(d.beta * t);
            } else {
                if (t > d.t.back() * (1.0 + 1e-12) + 1e-14)
                    throw RangeError("t=" + std::to_string(t) + " outside tabulated discount range");
                return interp_linear(d.t, d.log_lambda, t);
            }
        }, v_);
    }

    double eval(double t) const { return std::exp(log_eval(t)); }

    // int_0^u ln lambda(r) dr
    double log_integral(double u) const {
        if (u < 0.0) throw std::invalid_argument("log_integral: negative length");
        if (u == 0.0) return 0.0;
        return std::visit([u, this](const auto& d) -> double {
            using D = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<D, Exponential>) {
                return -0.5 * d.rho * u * u;
            } else if constexpr (std::is_same_v<D, Hyperbolic>) {
                // -(rho/beta^2) [(1+z) log1p(z) - z], z = beta u; series for small z
                const double z = d.beta * u;
                double ratio;  // ((1+z)log1p(z) - z) / z^2
                if (z < 1e-3) {
                    ratio = 0.0;
                    double zk = 1.0;
                    for (int k = 2; k < 10; ++k) {
                        ratio += ((k % 2) ? -1.0 : 1.0) * zk / (k * (k - 1.0));
                        zk *= z;
                    }
                } else {
                    ratio = ((1.0 + z) * std::log1p(z) - z) / (z * z);
                }
                return -d.rho * u * u * ratio;
            } else {
                if (u > d.t.back() * (1.0 + 1e-12) + 1e-14)
                    throw RangeError("log_integral beyond tabulated discount range");
                // Simpson on each table cell; exact for the piecewise-linear ln lambda.
                double acc = 0.0;
                for (std::size_t k = 0; k + 1 < d.t.size() && d.t[k] < u; ++k) {
                    const double b = std::min(u, d.t[k + 1]);
                    acc += simpson([this](double r) { return log_eval(r); }, d.t[k], b, 4);
                }
                return acc;
            }
        }, v_);
    }

private:
    Variant v_;
};

inline double discount_eval(const DiscountFunction& d, double t) { return d.eval(t); }

// int_t^T ln lambda(T - s) ds
inline double discount_log_integral(const DiscountFunction& d, double t, double T) {
    if (t > T) throw std::invalid_argument("discount_log_integral: t > T");
    return d.log_integral(T - t);
}

// ---------------------------------------------------------------- grids

class TimeGrid {
public:
    TimeGrid(double t0, double T, std::size_t n_points) : t0_(t0), T_(T), n_(n_points) {
        if (!(t0 >= 0.0 && t0 < T)) throw ValidationError("time grid: need 0 <= t0 < T");
        if (n_points < 2) throw ValidationError("time grid: need at least 2 points");
    }

    double t0() const { return t0_; }
    double T() const { return T_; }
    std::size_t size() const { return n_; }
    double step() const { return (T_ - t0_) / static_cast<double>(n_ - 1); }
    double operator[](std::size_t k) const {
        return k + 1 == n_ ? T_ : t0_ + static_cast<double>(k) * step();
    }
    std::vector<double> nodes() const {
        std::vector<double> out(n_);
        for (std::size_t k = 0; k < n_; ++k) out[k] = (*this)[k];
        return out;
    }
    bool operator==(const TimeGrid& o) const { return t0_ == o.t0_ && T_ == o.T_ && n_ == o.n_; }

private:
    double t0_, T_;
    std::size_t n_;
};

// tau = T + 1 - t, the time-to-go shift used throughout.
inline double tau(double t, double T) { return T + 1.0 - t; }

// ---------------------------------------------------------------- type laws

struct TypeAtom {
    AgentType type;
    double weight = 1.0;
};

class TypeDistribution {
public:
    explicit TypeDistribution(std::vector<TypeAtom> atoms) : atoms_(std::move(atoms)) {
        if (atoms_.empty()) throw ValidationError("type distribution: no atoms");
        double s = 0.0;
        for (const auto& a : atoms_) {
            validate_agent(a.type);
            if (!(a.weight > 0.0)) throw ValidationError("type distribution: weights must be positive");
            s += a.weight;
        }
        if (std::abs(s - 1.0) > 1e-12) throw ValidationError("type distribution: weights must sum to 1");
    }

    const std::vector<TypeAtom>& atoms() const { return atoms_; }
    std::size_t size() const { return atoms_.size(); }
    const TypeAtom& operator[](std::size_t k) const { return atoms_[k]; }

    template <class F>
    double expect(F&& f) const {
        double s = 0.0;
        for (const auto& a : atoms_) s += a.weight * f(a.type);
        return s;
    }

private:
    std::vector<TypeAtom> atoms_;
};

}  // namespace relperf
