#pragma once

#include <conbo/density.hpp>
#include <conbo/math.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace conbo {

// A conditional benchmark: state/action boxes, a state density, a seeded
// noisy reward sampler, and (for synthetics) the exact expected reward.
struct ConditionalProblem {
    std::string name;
    int d_s = 1;
    int d_x = 1;
    Box state_box;
    Box action_box;
    StateDensity density;
    std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&, std::uint64_t)> sampler;
    std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&)> true_mean; // may be empty
    int oc_reps = 0; // 0: noise-free path via true_mean; else replication average
    std::string noise_desc;

    Box joint_box() const { return Box::join(state_box, action_box); }
};

inline double state_density(const ConditionalProblem& p, const Eigen::VectorXd& s)
{
    return p.density.pdf(s);
}

inline Eigen::VectorXd sample_state(const ConditionalProblem& p, Rng& rng)
{
    return p.density.sample(rng);
}

// ------------------------------- synthetics -------------------------------

namespace detail {

inline double branin_native(double u, double v)
{
    const double a = 1.0, b = 5.1 / (4.0 * M_PI * M_PI), c = 5.0 / M_PI, r = 6.0;
    const double s = 10.0, t = 1.0 / (8.0 * M_PI);
    double q = v - b * u * u + c * u - r;
    return a * q * q + s * (1.0 - t) * std::cos(u) + s;
}

inline double rosenbrock_native(double u, double v)
{
    return (1.0 - u) * (1.0 - u) + 100.0 * (v - u * u) * (v - u * u);
}

struct SyntheticDef {
    double s_lo, s_hi; // native state axis
    double x_lo, x_hi; // native action axis
    double (*f)(double, double);
};

inline const SyntheticDef& synthetic_def(const std::string& name)
{
    static const SyntheticDef branin{-5.0, 10.0, 0.0, 15.0, branin_native};
    static const SyntheticDef rosen{-2.0, 2.0, -2.0, 2.0, rosenbrock_native};
    if (name == "branin") return branin;
    if (name == "rosenbrock") return rosen;
    throw UsageError("unknown synthetic problem: " + name);
}

// Standard deviation of f over its native domain on a fixed midpoint grid;
// the reward is f scaled to unit spread so noise levels are comparable
// across functions.
inline double synthetic_scale(const std::string& name)
{
    auto compute = [](const SyntheticDef& def) {
        const int m = 401;
        double sum = 0.0, sumsq = 0.0;
        for (int i = 0; i < m; ++i) {
            double u = def.s_lo + (def.s_hi - def.s_lo) * (i + 0.5) / m;
            for (int j = 0; j < m; ++j) {
                double v = def.x_lo + (def.x_hi - def.x_lo) * (j + 0.5) / m;
                double f = def.f(u, v);
                sum += f;
                sumsq += f * f;
            }
        }
        double mean = sum / (m * m);
        return std::sqrt(std::max(sumsq / (m * m) - mean * mean, 1e-30));
    };
    if (name == "branin") {
        static const double s = compute(synthetic_def("branin"));
        return s;
    }
    static const double s = compute(synthetic_def("rosenbrock"));
    return s;
}

} // namespace detail

// Noise-free scaled reward -f_native / sd(f) at normalized (s, x) in [0,1]^2.
// The state axis is squeezed about the domain midline by the width factor:
// w = 0 pins every state to the midline (a singleton problem), w = 1 spans
// the full native state range.
inline double synthetic_mean(const std::string& name, double width, double s, double x)
{
    const auto& def = detail::synthetic_def(name);
    double s_eff = 0.5 + width * (s - 0.5);
    double u = def.s_lo + (def.s_hi - def.s_lo) * s_eff;
    double v = def.x_lo + (def.x_hi - def.x_lo) * x;
    return -def.f(u, v) / detail::synthetic_scale(name);
}

inline double synthetic_reward(const std::string& name, double width, double s, double x,
                               double noise_sd, std::uint64_t seed)
{
    if (!(s >= 0.0 && s <= 1.0 && x >= 0.0 && x <= 1.0))
        throw UsageError("synthetic_reward: normalized inputs must lie in [0,1]");
    double mean = synthetic_mean(name, width, s, x);
    if (noise_sd <= 0.0) return mean;
    Rng rng(splitmix64(seed));
    std::normal_distribution<double> normal(0.0, noise_sd);
    return mean + normal(rng);
}

inline ConditionalProblem make_synthetic(const std::string& name, double width,
                                         double noise_sd = 0.1,
                                         DensityKind density = DensityKind::Uniform)
{
    detail::synthetic_def(name); // validates the name
    if (!(width >= 0.0 && width <= 1.0)) throw UsageError("width must lie in [0,1]");
    ConditionalProblem p;
    p.name = name;
    p.d_s = 1;
    p.d_x = 1;
    p.state_box = Box::unit(1);
    p.action_box = Box::unit(1);
    p.density = density == DensityKind::Triangular ? StateDensity::triangular(Box::unit(1))
                                                   : StateDensity::uniform(Box::unit(1));
    p.sampler = [name, width, noise_sd](const Eigen::VectorXd& s, const Eigen::VectorXd& x,
                                        std::uint64_t seed) {
        return synthetic_reward(name, width, s[0], x[0], noise_sd, seed);
    };
    p.true_mean = [name, width](const Eigen::VectorXd& s, const Eigen::VectorXd& x) {
        return synthetic_mean(name, width, s[0], x[0]);
    };
    p.oc_reps = 0;
    std::ostringstream d;
    d << "additive Gaussian, sd " << noise_sd << " after unit-spread scaling";
    p.noise_desc = d.str();
    return p;
}

// ------------------------------- ambulance -------------------------------

// One day of dispatch in a 30 km square city: calls arrive at locations drawn
// around the population mode, each served by the nearest of three bases at
// constant speed. Reward is minus the mean response time in minutes.
struct AmbulanceParams {
    int n_calls = 30;
    double sigma_pop = 5.0;      // km
    double speed_km_min = 1.0;   // 60 km/h
    double map_size = 30.0;
};

inline double ambulance_simulate(const Eigen::VectorXd& s, const Eigen::VectorXd& x,
                                 std::uint64_t seed, const AmbulanceParams& prm = {})
{
    if (s.size() != 2 || x.size() != 6) throw UsageError("ambulance_simulate: bad dimensions");
    Rng rng(splitmix64(seed));
    std::normal_distribution<double> normal(0.0, 1.0);
    double total = 0.0;
    for (int call = 0; call < prm.n_calls; ++call) {
        double px = 0.0, py = 0.0;
        bool ok = false;
        for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
            px = s[0] + prm.sigma_pop * normal(rng);
            py = s[1] + prm.sigma_pop * normal(rng);
            ok = px >= 0.0 && px <= prm.map_size && py >= 0.0 && py <= prm.map_size;
        }
        if (!ok) {
            px = std::min(std::max(px, 0.0), prm.map_size);
            py = std::min(std::max(py, 0.0), prm.map_size);
        }
        double best = std::numeric_limits<double>::infinity();
        for (int b = 0; b < 3; ++b) {
            double dx = px - x[2 * b], dy = py - x[2 * b + 1];
            best = std::min(best, std::sqrt(dx * dx + dy * dy));
        }
        total += best / prm.speed_km_min;
    }
    return -total / prm.n_calls;
}

inline ConditionalProblem make_ambulance(const AmbulanceParams& prm = {})
{
    ConditionalProblem p;
    p.name = "ambulance";
    p.d_s = 2;
    p.d_x = 6;
    p.state_box = Box(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Constant(2, prm.map_size));
    p.action_box = Box(Eigen::VectorXd::Zero(6), Eigen::VectorXd::Constant(6, prm.map_size));
    p.density = StateDensity::truncated_gaussian(
        p.state_box, Eigen::VectorXd::Constant(2, prm.map_size / 2.0),
        Eigen::VectorXd::Constant(2, 6.0));
    p.sampler = [prm](const Eigen::VectorXd& s, const Eigen::VectorXd& x, std::uint64_t seed) {
        return ambulance_simulate(s, x, seed, prm);
    };
    p.oc_reps = 200;
    p.noise_desc = "finite-call dispatch day, nearest-base response";
    return p;
}

// ---------------------------- assemble to order ----------------------------

// 30-day base-stock inventory simulation with 8 item types. Orders arrive as
// Poisson streams scaled by the demand state; each sells one unit at the item
// margin when stock is available and is lost otherwise. Replenishment is
// order-up-to with a fixed lead time; holding cost accrues on end-of-day
// stock. Reward is profit minus holding cost.
struct AtoParams {
    Eigen::VectorXd rates = (Eigen::VectorXd(8) << 3, 4, 5, 6, 6, 5, 4, 3).finished();
    Eigen::VectorXd margins = (Eigen::VectorXd(8) << 1, 2, 3, 4, 4, 3, 2, 1).finished();
    double holding = 0.05; // per unit per day
    int lead_days = 2;
    int horizon_days = 30;
    double max_target = 20.0;
};

namespace detail {

// Inverse-CDF Poisson draw: monotone in the rate for a shared uniform, so
// higher demand states generate pointwise more orders under the same seed.
inline int poisson_inverse(double u, double lambda)
{
    if (lambda <= 0.0) return 0;
    double p = std::exp(-lambda), cum = p;
    int k = 0;
    while (u > cum && k < 400) {
        ++k;
        p *= lambda / k;
        cum += p;
    }
    return k;
}

} // namespace detail

inline double ato_simulate(const Eigen::VectorXd& s, const Eigen::VectorXd& x,
                           std::uint64_t seed, const AtoParams& prm = {},
                           long* orders_out = nullptr)
{
    const int items = static_cast<int>(prm.rates.size());
    if (s.size() != 1 || x.size() != items) throw UsageError("ato_simulate: bad dimensions");
    Rng rng(splitmix64(seed));
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    std::vector<long> stock(items), target(items);
    for (int i = 0; i < items; ++i) {
        target[i] = std::lround(std::min(std::max(x[i], 0.0), prm.max_target));
        stock[i] = target[i];
    }
    // replenishment pipeline indexed by arrival day
    std::vector<std::vector<long>> pipeline(prm.horizon_days + prm.lead_days + 1,
                                            std::vector<long>(items, 0));
    double profit = 0.0, holding = 0.0;
    long total_orders = 0;
    for (int day = 0; day < prm.horizon_days; ++day) {
        for (int i = 0; i < items; ++i) {
            stock[i] += pipeline[day][i];
            int orders = detail::poisson_inverse(unif(rng), s[0] * prm.rates[i]);
            total_orders += orders;
            long sold = std::min<long>(stock[i], orders);
            profit += prm.margins[i] * static_cast<double>(sold);
            stock[i] -= sold;
            long on_order = 0;
            for (int d = day + 1; d <= day + prm.lead_days; ++d) on_order += pipeline[d][i];
            long shortfall = target[i] - (stock[i] + on_order);
            if (shortfall > 0) pipeline[day + prm.lead_days][i] += shortfall;
            holding += prm.holding * static_cast<double>(stock[i]);
        }
    }
    if (orders_out) *orders_out = total_orders;
    return profit - holding;
}

inline ConditionalProblem make_ato(const AtoParams& prm = {})
{
    const int items = static_cast<int>(prm.rates.size());
    ConditionalProblem p;
    p.name = "ato";
    p.d_s = 1;
    p.d_x = items;
    p.state_box = Box(Eigen::VectorXd::Constant(1, 0.5), Eigen::VectorXd::Constant(1, 1.5));
    p.action_box = Box(Eigen::VectorXd::Zero(items), Eigen::VectorXd::Constant(items, prm.max_target));
    p.density = StateDensity::uniform(p.state_box);
    p.sampler = [prm](const Eigen::VectorXd& s, const Eigen::VectorXd& x, std::uint64_t seed) {
        return ato_simulate(s, x, seed, prm);
    };
    p.oc_reps = 200;
    p.noise_desc = "Poisson demand over a 30-day month";
    return p;
}

inline ConditionalProblem make_problem(const std::string& name, double width = 1.0,
                                       double noise_sd = 0.1,
                                       DensityKind density = DensityKind::Uniform)
{
    if (name == "ambulance") return make_ambulance();
    if (name == "ato") return make_ato();
    return make_synthetic(name, width, noise_sd, density);
}

// ------------------------------ oracle tables ------------------------------

// Per-state true optima used only by opportunity-cost evaluation.
struct OracleTable {
    Eigen::MatrixXd states;  // rows, problem units
    Eigen::MatrixXd actions; // best action per state
    Eigen::VectorXd values;  // best expected reward
    int grid_res = 0;        // provenance: scan resolution or start count
    int reps = 0;            // provenance: replications per evaluation (0 = noise-free)

    int size() const { return static_cast<int>(states.rows()); }
};

inline void write_oracle(const OracleTable& t, const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw ModelError("cannot write oracle table: " + path);
    const int d_s = static_cast<int>(t.states.cols());
    const int d_x = static_cast<int>(t.actions.cols());
    for (int k = 0; k < d_s; ++k) out << "s_" << k << ",";
    for (int k = 0; k < d_x; ++k) out << "xstar_" << k << ",";
    out << "fstar,grid_res,reps\n";
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out << buf;
    };
    for (int i = 0; i < t.size(); ++i) {
        for (int k = 0; k < d_s; ++k) {
            put(t.states(i, k));
            out << ",";
        }
        for (int k = 0; k < d_x; ++k) {
            put(t.actions(i, k));
            out << ",";
        }
        put(t.values[i]);
        out << "," << t.grid_res << "," << t.reps << "\n";
    }
}

inline OracleTable read_oracle(const std::string& path, int d_s, int d_x)
{
    std::ifstream in(path);
    if (!in) throw ModelError("missing oracle table: " + path +
                              " (generate it with the `oracle` subcommand)");
    std::string line;
    if (!std::getline(in, line)) throw ModelError("empty oracle table: " + path);
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (static_cast<int>(row.size()) != d_s + d_x + 3)
            throw ModelError("oracle table column mismatch in " + path);
        rows.push_back(std::move(row));
    }
    OracleTable t;
    t.states.resize(rows.size(), d_s);
    t.actions.resize(rows.size(), d_x);
    t.values.resize(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        for (int k = 0; k < d_s; ++k) t.states(i, k) = rows[i][k];
        for (int k = 0; k < d_x; ++k) t.actions(i, k) = rows[i][d_s + k];
        t.values[i] = rows[i][d_s + d_x];
        t.grid_res = static_cast<int>(rows[i][d_s + d_x + 1]);
        t.reps = static_cast<int>(rows[i][d_s + d_x + 2]);
    }
    return t;
}

// Noise-free synthetic oracle: per state, a 2001-point scan of the action
// axis followed by golden-section refinement around the best cell. The
// refinement keeps the scan value if it cannot improve on it.
inline OracleTable synthetic_oracle(const std::string& name, double width,
                                    const Eigen::MatrixXd& state_grid)
{
    const int scan = 2001;
    OracleTable t;
    t.states = state_grid;
    t.actions.resize(state_grid.rows(), 1);
    t.values.resize(state_grid.rows());
    t.grid_res = scan;
    t.reps = 0;
    for (int g = 0; g < state_grid.rows(); ++g) {
        double s = state_grid(g, 0);
        double best_x = 0.0, best_v = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < scan; ++i) {
            double x = static_cast<double>(i) / (scan - 1);
            double v = synthetic_mean(name, width, s, x);
            if (v > best_v) {
                best_v = v;
                best_x = x;
            }
        }
        // golden-section refinement in the bracketing cells
        double lo = std::max(0.0, best_x - 1.0 / (scan - 1));
        double hi = std::min(1.0, best_x + 1.0 / (scan - 1));
        const double gr = 0.61803398874989484820;
        double a = lo, b = hi;
        double c = b - gr * (b - a), d = a + gr * (b - a);
        double fc = synthetic_mean(name, width, s, c), fd = synthetic_mean(name, width, s, d);
        for (int it = 0; it < 60; ++it) {
            if (fc > fd) {
                b = d;
                d = c;
                fd = fc;
                c = b - gr * (b - a);
                fc = synthetic_mean(name, width, s, c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + gr * (b - a);
                fd = synthetic_mean(name, width, s, d);
            }
        }
        double xr = 0.5 * (a + b);
        double vr = synthetic_mean(name, width, s, xr);
        if (vr > best_v) {
            best_v = vr;
            best_x = xr;
        }
        t.actions(g, 0) = best_x;
        t.values[g] = best_v;
    }
    return t;
}

// Simulator oracle: per state, the replication-averaged reward (common random
// numbers across actions) is maximized by random starts plus compass search.
inline OracleTable simulator_oracle(const ConditionalProblem& p, const Eigen::MatrixXd& states,
                                    int reps, int n_starts, std::uint64_t seed)
{
    OracleTable t;
    t.states = states;
    t.actions.resize(states.rows(), p.d_x);
    t.values.resize(states.rows());
    t.grid_res = n_starts;
    t.reps = reps;

    std::vector<std::uint64_t> eval_seeds(reps);
    for (int r = 0; r < reps; ++r) eval_seeds[r] = mix_seed(seed, hash_string("oracle_rep"), r);

    for (int g = 0; g < states.rows(); ++g) {
        Eigen::VectorXd s = states.row(g).transpose();
        auto objective = [&](const Eigen::VectorXd& x) {
            double acc = 0.0;
            for (int r = 0; r < reps; ++r) acc += p.sampler(s, x, eval_seeds[r]);
            return acc / reps;
        };
        Rng rng(mix_seed(seed, hash_string("oracle_state"), g));
        Eigen::VectorXd best_x = p.action_box.sample(rng);
        double best_v = objective(best_x);
        for (int i = 1; i < n_starts; ++i) {
            Eigen::VectorXd x = p.action_box.sample(rng);
            double v = objective(x);
            if (v > best_v) {
                best_v = v;
                best_x = x;
            }
        }
        // compass search with a halving step
        Eigen::VectorXd w = p.action_box.width();
        double step = 0.25;
        while (step > 1e-3) {
            bool improved = false;
            for (int d = 0; d < p.d_x; ++d) {
                for (double sign : {1.0, -1.0}) {
                    Eigen::VectorXd x = best_x;
                    x[d] = std::min(std::max(x[d] + sign * step * w[d], p.action_box.lo[d]),
                                    p.action_box.hi[d]);
                    double v = objective(x);
                    if (v > best_v) {
                        best_v = v;
                        best_x = x;
                        improved = true;
                    }
                }
            }
            if (!improved) step *= 0.5;
        }
        t.actions.row(g) = best_x.transpose();
        t.values[g] = best_v;
    }
    return t;
}

} // namespace conbo
