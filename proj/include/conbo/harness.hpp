#pragma once

#include <conbo/baselines.hpp>
#include <conbo/conbo.hpp>
#include <conbo/fit.hpp>
#include <conbo/problems.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <atomic>
#include <mutex>
#include <sstream>
#include <thread>

namespace conbo {

// ------------------------------ configuration ------------------------------

enum class AlgorithmId { Conbo3, Conbo5, Revi, Uni, EiJoint, Knn, Pg, KgHGlobal };

inline AlgorithmId parse_algorithm(const std::string& s)
{
    if (s == "conbo3") return AlgorithmId::Conbo3;
    if (s == "conbo5") return AlgorithmId::Conbo5;
    if (s == "revi") return AlgorithmId::Revi;
    if (s == "uni") return AlgorithmId::Uni;
    if (s == "ei_joint") return AlgorithmId::EiJoint;
    if (s == "knn") return AlgorithmId::Knn;
    if (s == "pg") return AlgorithmId::Pg;
    if (s == "kg_h_global") return AlgorithmId::KgHGlobal;
    throw UsageError("unknown algorithm: " + s);
}

inline bool is_gp_algorithm(AlgorithmId id)
{
    return id != AlgorithmId::Knn && id != AlgorithmId::Pg;
}

struct ExperimentConfig {
    std::string problem;
    double width = 1.0;             // synthetics
    std::string density = "uniform"; // synthetics: uniform | triangular
    double noise_sd = 0.1;          // synthetics
    std::string algorithm;
    int budget = 0;
    int n_init = -1; // default 4 * (d_s + d_x)
    int replications = 20;
    std::uint64_t seed = 0;
    int q = 1;
    bool do_trick = false;
    int eval_cadence = 5;
    std::string oracle;
    std::string out_dir = "runs";
    bool record_wall_time = false;
};

inline ConditionalProblem problem_from_config(const ExperimentConfig& cfg)
{
    DensityKind kind = DensityKind::Uniform;
    if (cfg.density == "triangular") kind = DensityKind::Triangular;
    else if (cfg.density != "uniform")
        throw UsageError("unknown density kind: " + cfg.density);
    return make_problem(cfg.problem, cfg.width, cfg.noise_sd, kind);
}

inline int default_n_init(const ConditionalProblem& p) { return 4 * (p.d_s + p.d_x); }

inline void validate_config(const ExperimentConfig& cfg, const ConditionalProblem& p)
{
    parse_algorithm(cfg.algorithm);
    int n_init = cfg.n_init < 0 ? default_n_init(p) : cfg.n_init;
    if (n_init < 2 * (p.d_s + p.d_x))
        throw UsageError("n_init must be at least 2*(d_s+d_x)");
    if (cfg.budget <= n_init) throw UsageError("budget must exceed n_init");
    if (cfg.replications < 1) throw UsageError("replications must be >= 1");
    if (cfg.q < 1) throw UsageError("q must be >= 1");
    if (cfg.eval_cadence < 1) throw UsageError("eval_cadence must be >= 1");
    if (cfg.do_trick && !p.density.is_finite())
        throw UsageError("do_trick requires a finite state space");
}

// Flat key = value file, '#' comments, unknown keys rejected.
inline ExperimentConfig parse_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file: " + path);
    ExperimentConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
            if (blank) continue;
            throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        auto as_bool = [&](const std::string& v) {
            if (v == "true" || v == "1") return true;
            if (v == "false" || v == "0") return false;
            throw UsageError("config key " + key + ": expected boolean, got " + v);
        };
        if (key == "problem") cfg.problem = val;
        else if (key == "width") cfg.width = std::stod(val);
        else if (key == "density") cfg.density = val;
        else if (key == "noise_sd") cfg.noise_sd = std::stod(val);
        else if (key == "algorithm") cfg.algorithm = val;
        else if (key == "budget") cfg.budget = std::stoi(val);
        else if (key == "n_init") cfg.n_init = std::stoi(val);
        else if (key == "replications") cfg.replications = std::stoi(val);
        else if (key == "seed") cfg.seed = std::stoull(val);
        else if (key == "q") cfg.q = std::stoi(val);
        else if (key == "do_trick") cfg.do_trick = as_bool(val);
        else if (key == "eval_cadence") cfg.eval_cadence = std::stoi(val);
        else if (key == "oracle") cfg.oracle = val;
        else if (key == "out_dir") cfg.out_dir = val;
        else if (key == "record_wall_time") cfg.record_wall_time = as_bool(val);
        else
            throw UsageError("unknown config key: " + key);
    }
    if (cfg.problem.empty()) throw UsageError("config missing 'problem'");
    if (cfg.algorithm.empty()) throw UsageError("config missing 'algorithm'");
    if (cfg.budget <= 0) throw UsageError("config missing 'budget'");
    return cfg;
}

// ------------------------------- run records -------------------------------

struct RunRecord {
    std::string problem;
    std::string algorithm;
    std::uint64_t seed = 0;
    int iteration = 0; // suggestion rounds completed; -1 marks a failed replication
    int n_evals = 0;
    double oc = 0.0;
    double wall_ms = 0.0;
};

namespace detail {

inline std::string format_g9(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

} // namespace detail

inline void write_run_csv(const std::string& path, const std::vector<RunRecord>& rows)
{
    std::ofstream out(path);
    if (!out) throw ModelError("cannot write run CSV: " + path);
    out << "problem,algorithm,seed,iteration,n_evals,oc,wall_ms\n";
    for (const auto& r : rows)
        out << r.problem << "," << r.algorithm << "," << r.seed << "," << r.iteration << ","
            << r.n_evals << "," << detail::format_g9(r.oc) << ","
            << detail::format_g9(r.wall_ms) << "\n";
}

inline std::vector<RunRecord> read_run_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ModelError("cannot read run CSV: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ModelError("empty run CSV: " + path);
    std::vector<RunRecord> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        RunRecord r;
        std::getline(ss, r.problem, ',');
        std::getline(ss, r.algorithm, ',');
        std::getline(ss, cell, ',');
        r.seed = std::stoull(cell);
        std::getline(ss, cell, ',');
        r.iteration = std::stoi(cell);
        std::getline(ss, cell, ',');
        r.n_evals = std::stoi(cell);
        std::getline(ss, cell, ',');
        r.oc = std::stod(cell);
        std::getline(ss, cell, ',');
        r.wall_ms = std::stod(cell);
        rows.push_back(std::move(r));
    }
    return rows;
}

// ----------------------------- opportunity cost -----------------------------

// Density-weighted simple regret over the oracle's test states. Expected
// policy reward comes from the noise-free evaluator when available and a
// fixed-seed replication average otherwise.
inline double opportunity_cost(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& policy,
                               const OracleTable& oracle, const ConditionalProblem& prob)
{
    if (oracle.size() == 0) throw UsageError("opportunity_cost: empty oracle table");
    double acc = 0.0, wsum = 0.0;
    for (int g = 0; g < oracle.size(); ++g) {
        Eigen::VectorXd s = oracle.states.row(g).transpose();
        Eigen::VectorXd a = policy(s);
        if (!prob.action_box.contains(a, 1e-9))
            throw ModelError("opportunity_cost: policy returned an out-of-bounds action");
        double ef;
        if (prob.true_mean) {
            ef = prob.true_mean(s, a);
        } else {
            double sum = 0.0;
            for (int r = 0; r < prob.oc_reps; ++r)
                sum += prob.sampler(s, a, mix_seed(hash_string("oc_eval"), r));
            ef = sum / prob.oc_reps;
        }
        double p = prob.density.pdf(s);
        acc += p * (oracle.values[g] - ef);
        wsum += p;
    }
    if (!(wsum > 0.0)) throw ModelError("opportunity_cost: zero total density over the test grid");
    return acc / wsum;
}

// ------------------------------ DO-trick round ------------------------------

// Final-round allocation for finite state spaces: one evaluation per state at
// the EI-argmax action, incumbent being the best observed reward within that
// state (global best when the state is unvisited).
inline Dataset do_trick_allocation(
    const GpPosterior& post, Dataset data, const StateDensity& states, const Box& action_box,
    const std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&, std::uint64_t)>&
        evaluator,
    const InnerOptimizer& inner, std::uint64_t seed)
{
    if (!states.is_finite()) throw UsageError("do_trick_allocation: finite state space required");
    if (data.size() == 0) throw UsageError("do_trick_allocation: empty dataset");
    const double global_best = data.y.maxCoeff();
    for (Eigen::Index g = 0; g < states.states.rows(); ++g) {
        Eigen::VectorXd s = states.states.row(g).transpose();
        double incumbent = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < data.size(); ++i)
            if ((data.points[i].state - s).lpNorm<Eigen::Infinity>() <= 1e-9)
                incumbent = std::max(incumbent, data.y[i]);
        if (!std::isfinite(incumbent)) incumbent = global_best;

        InnerObjective ei;
        ei.batch = [&post, &s, incumbent](const Eigen::MatrixXd& actions) {
            Eigen::VectorXd v(actions.rows());
            for (Eigen::Index i = 0; i < actions.rows(); ++i)
                v[i] = expected_improvement(
                    post, JointPoint(s, actions.row(i).transpose()), incumbent);
            return v;
        };
        ei.point = [&post, &s, incumbent](const Eigen::VectorXd& a, Eigen::VectorXd* grad) {
            Eigen::VectorXd q(s.size() + a.size());
            q << s, a;
            if (!grad) return expected_improvement(post, JointPoint(s, a), incumbent);
            Eigen::VectorXd jg;
            double v = expected_improvement_grad(post, q, incumbent, jg);
            *grad = jg.tail(a.size());
            return v;
        };
        InnerResult best = maximize_inner(ei, action_box, inner, mix_seed(seed, g));
        data.add(JointPoint(s, best.x), evaluator(s, best.x, mix_seed(seed, hash_string("do"), g)));
    }
    return data;
}

// ------------------------------ the experiment ------------------------------

namespace detail {

struct RepContext {
    const ExperimentConfig& cfg;
    const ConditionalProblem& prob;
    const OracleTable& oracle;
    AlgorithmId algo;
    int n_init;
    std::uint64_t rep_seed;
};

inline std::uint64_t eval_seed(std::uint64_t rep_seed, int index)
{
    return mix_seed(rep_seed, hash_string("eval"), index);
}

// One replication of the sequential loop, appending OC telemetry rows as it
// goes so a mid-run failure keeps the partial rows.
inline void run_replication(const RepContext& rc, std::vector<RunRecord>& rows)
{
    const ConditionalProblem& prob = rc.prob;
    const Box joint_box = prob.joint_box();
    const KernelFamily family = KernelFamily::FactorizedMatern;

    Rng design_rng(mix_seed(rc.rep_seed, hash_string("design")));
    Rng algo_rng(mix_seed(rc.rep_seed, hash_string("algo"), hash_string(rc.cfg.algorithm)));

    Dataset data;
    int evals = 0;
    Eigen::MatrixXd init = latin_hypercube(joint_box, rc.n_init, design_rng);
    for (int i = 0; i < rc.n_init; ++i) {
        JointPoint p = JointPoint::split(init.row(i).transpose(), prob.d_s);
        data.add(p, prob.sampler(p.state, p.action, eval_seed(rc.rep_seed, evals)));
        ++evals;
    }

    const bool gp_algo = is_gp_algorithm(rc.algo);
    HyperBounds bounds = HyperBounds::standard(family, prob.state_box, prob.action_box);
    KernelSpec spec = KernelSpec::factorized(0.3 * prob.state_box.width(),
                                             0.3 * prob.action_box.width(), 1.0, 1e-2, 0.0);
    QuadraticPolicy pg_policy = QuadraticPolicy::zero(prob.d_s, prob.d_x);
    std::vector<Eigen::VectorXd> prev_peaks;

    InnerOptimizer oc_inner;
    oc_inner.seed = mix_seed(rc.rep_seed, hash_string("oc_inner"));

    auto refit = [&](int iter) {
        if (!gp_algo || data.size() < 3) return;
        FitOptions fopt;
        fopt.n_starts = 4;
        fopt.n_iters = 60;
        fopt.seed = mix_seed(rc.rep_seed, hash_string("fit"), iter);
        spec = fit_hyperparameters(data, family, prob.d_s, prob.d_x, bounds, fopt).spec;
    };

    auto record_oc = [&](int iteration, double wall_ms) {
        std::function<Eigen::VectorXd(const Eigen::VectorXd&)> policy;
        std::optional<GpPosterior> post;
        PolicyCache fresh_cache; // wiped before any testing
        if (gp_algo) {
            post.emplace(data, spec);
            policy = [&](const Eigen::VectorXd& s) {
                return policy_action(*post, s, prob.state_box, prob.action_box, oc_inner,
                                     &fresh_cache);
            };
        } else if (rc.algo == AlgorithmId::Knn) {
            policy = [&](const Eigen::VectorXd& s) {
                return knn_policy(data, s, prob.state_box, 10);
            };
        } else {
            policy = [&](const Eigen::VectorXd& s) {
                return pg_action(pg_policy, s, prob.state_box, prob.action_box);
            };
        }
        RunRecord r;
        r.problem = prob.name;
        r.algorithm = rc.cfg.algorithm;
        r.seed = rc.rep_seed;
        r.iteration = iteration;
        r.n_evals = evals;
        r.oc = opportunity_cost(policy, rc.oracle, prob);
        r.wall_ms = rc.cfg.record_wall_time ? wall_ms : 0.0;
        rows.push_back(std::move(r));
    };

    refit(0);
    record_oc(0, 0.0);

    const bool batched = rc.algo == AlgorithmId::Conbo3 || rc.algo == AlgorithmId::Conbo5 ||
                         rc.algo == AlgorithmId::Revi;
    if (rc.cfg.q > 1 && !batched)
        std::cerr << "warning: batch size q ignored by algorithm " << rc.cfg.algorithm << "\n";

    int iteration = 0;
    int last_oc_iteration = 0;
    double wall_accum_ms = 0.0;
    while (evals < rc.cfg.budget) {
        ++iteration;
        if ((iteration - 1) % 5 == 0 && iteration > 1) refit(iteration);
        auto t0 = std::chrono::steady_clock::now();

        std::vector<JointPoint> picks;
        const int remaining = rc.cfg.budget - evals;
        const int q_now = batched ? std::min(rc.cfg.q, remaining) : 1;
        std::uint64_t iter_seed = mix_seed(rc.rep_seed, hash_string("iter"), iteration);

        switch (rc.algo) {
        case AlgorithmId::Uni:
            picks.push_back(uniform_next(prob.state_box, prob.action_box, algo_rng));
            break;
        case AlgorithmId::Knn:
            picks.push_back(uniform_next(prob.state_box, prob.action_box, algo_rng));
            break;
        case AlgorithmId::Pg: {
            if (data.size() >= 5 && data.size() % 10 == 0)
                pg_policy = pg_fit(data, prob.state_box, prob.action_box,
                                   mix_seed(rc.rep_seed, hash_string("pg"), iteration));
            picks.push_back(pg_next(pg_policy, prob.density, prob.state_box, prob.action_box, 0.2,
                                    algo_rng));
            break;
        }
        case AlgorithmId::EiJoint: {
            GpPosterior post(data, spec);
            OuterOptimizer outer;
            AcquisitionHistory hist;
            picks.push_back(joint_ei_next(post, prob.state_box, prob.action_box, outer, iter_seed,
                                          &prev_peaks, &hist));
            break;
        }
        case AlgorithmId::KgHGlobal: {
            GpPosterior post(data, spec);
            InnerOptimizer inner;
            inner.seed = iter_seed;
            ZGrid zgrid = z_quantiles(5);
            AcqValueFn value = [&](const Eigen::VectorXd& qv, std::uint64_t) {
                try {
                    LookaheadContext ctx = post.lookahead(JointPoint::split(qv, prob.d_s));
                    return kg_hybrid_global(post, ctx, joint_box, zgrid, inner);
                } catch (const DegenerateCandidate&) {
                    return 0.0;
                }
            };
            AcqGradFn grad = [&](const Eigen::VectorXd& qv, std::uint64_t,
                                 Eigen::VectorXd& g) {
                g = Eigen::VectorXd::Zero(joint_box.dim());
                try {
                    LookaheadContext ctx = post.lookahead(JointPoint::split(qv, prob.d_s));
                    Eigen::MatrixXd disc;
                    kg_hybrid_global(post, ctx, joint_box, zgrid, inner, &disc);
                    auto cache = post.candidate_grad_cache(ctx);
                    return frozen_kg_grad(post, ctx, cache, disc, g);
                } catch (const DegenerateCandidate&) {
                    return 0.0;
                }
            };
            OuterOptimizer outer;
            OuterResult res =
                optimize_acquisition(value, &grad, joint_box, outer, iter_seed, &prev_peaks);
            prev_peaks = res.start_ends;
            picks.push_back(JointPoint::split(res.best, prob.d_s));
            break;
        }
        case AlgorithmId::Revi: {
            GpPosterior post(data, spec);
            Rng disc_rng(mix_seed(rc.rep_seed, hash_string("revi"), iteration));
            ReviDisc disc = make_revi_disc(data.size(), prob.density, prob.action_box, disc_rng);
            AcqValueFn value = [&](const Eigen::VectorXd& qv, std::uint64_t) {
                return revi_value(post, JointPoint::split(qv, prob.d_s), disc);
            };
            OuterOptimizer outer;
            OuterResult res =
                optimize_acquisition(value, nullptr, joint_box, outer, iter_seed, &prev_peaks);
            prev_peaks = res.start_ends;
            if (q_now == 1) {
                picks.push_back(JointPoint::split(res.best, prob.d_s));
            } else {
                for (auto& p : construct_batch(res.history, q_now, spec)) picks.push_back(p);
            }
            break;
        }
        case AlgorithmId::Conbo3:
        case AlgorithmId::Conbo5: {
            GpPosterior post(data, spec);
            ConboConfig ccfg;
            ccfg.zgrid = z_quantiles(rc.algo == AlgorithmId::Conbo3 ? 3 : 5);
            ccfg.inner.seed = iter_seed;
            PolicyCache cache;
            AcqValueFn value = [&](const Eigen::VectorXd& qv, std::uint64_t es) {
                JointPoint cand = JointPoint::split(qv, prob.d_s);
                Rng rng(es);
                try {
                    McStates mc = sample_mc_states(
                        cand.state, proposal_lengthscales(post.spec(), prob.state_box), ccfg.n_s,
                        prob.density, prob.state_box, rng);
                    return conbo_value_frozen(post, cand, ccfg, mc, prob.state_box,
                                              prob.action_box, &cache);
                } catch (const SamplingError&) {
                    return 0.0;
                }
            };
            AcqGradFn grad = [&](const Eigen::VectorXd& qv, std::uint64_t es,
                                 Eigen::VectorXd& g) {
                JointPoint cand = JointPoint::split(qv, prob.d_s);
                g = Eigen::VectorXd::Zero(joint_box.dim());
                Rng rng(es);
                try {
                    McStates mc = sample_mc_states(
                        cand.state, proposal_lengthscales(post.spec(), prob.state_box), ccfg.n_s,
                        prob.density, prob.state_box, rng);
                    FrozenConbo frozen;
                    double v = conbo_value_frozen(post, cand, ccfg, mc, prob.state_box,
                                                  prob.action_box, &cache, &frozen);
                    conbo_gradient(post, cand, frozen, g);
                    return v;
                } catch (const SamplingError&) {
                    return 0.0;
                }
            };
            OuterOptimizer outer;
            OuterResult res =
                optimize_acquisition(value, &grad, joint_box, outer, iter_seed, &prev_peaks);
            prev_peaks = res.start_ends;
            if (q_now == 1) {
                picks.push_back(JointPoint::split(res.best, prob.d_s));
            } else {
                for (auto& p : construct_batch(res.history, q_now, spec)) picks.push_back(p);
            }
            break;
        }
        }

        for (auto& p : picks) {
            if (evals >= rc.cfg.budget) break;
            data.add(p, prob.sampler(p.state, p.action, eval_seed(rc.rep_seed, evals)));
            ++evals;
        }
        wall_accum_ms +=
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();

        if (iteration % rc.cfg.eval_cadence == 0 || evals >= rc.cfg.budget) {
            record_oc(iteration, wall_accum_ms);
            last_oc_iteration = iteration;
            wall_accum_ms = 0.0;
        }
    }
    (void)last_oc_iteration;
}

} // namespace detail

struct RunSummary {
    std::vector<RunRecord> records;
    std::string csv_path;
    int failed_replications = 0;
};

// Runs every replication (optionally across threads), writes one CSV for the
// replication group, and returns the records. A replication failure keeps the
// partial rows and appends a marker row with iteration = -1.
inline RunSummary run_experiment(const ExperimentConfig& cfg, int jobs = 1)
{
    ConditionalProblem prob = problem_from_config(cfg);
    validate_config(cfg, prob);
    AlgorithmId algo = parse_algorithm(cfg.algorithm);
    int n_init = cfg.n_init < 0 ? default_n_init(prob) : cfg.n_init;

    OracleTable oracle;
    if (!cfg.oracle.empty()) {
        oracle = read_oracle(cfg.oracle, prob.d_s, prob.d_x);
    } else if (prob.true_mean) {
        oracle = synthetic_oracle(prob.name, cfg.width, prob.density.quantile_grid(11));
    } else {
        throw ModelError("problem " + prob.name +
                         " needs a precomputed oracle table: run the `oracle` subcommand and "
                         "pass its path via the 'oracle' config key");
    }

    std::vector<std::vector<RunRecord>> per_rep(cfg.replications);
    std::vector<bool> failed(cfg.replications, false);
    std::mutex io_mutex;

    auto worker = [&](int r) {
        detail::RepContext rc{cfg, prob, oracle, algo, n_init, cfg.seed + static_cast<std::uint64_t>(r)};
        try {
            detail::run_replication(rc, per_rep[r]);
        } catch (const std::exception& e) {
            {
                std::lock_guard<std::mutex> lock(io_mutex);
                std::cerr << "replication " << r << " failed: " << e.what() << "\n";
            }
            RunRecord fail;
            fail.problem = prob.name;
            fail.algorithm = cfg.algorithm;
            fail.seed = rc.rep_seed;
            fail.iteration = -1;
            fail.n_evals = 0;
            fail.oc = std::numeric_limits<double>::quiet_NaN();
            fail.wall_ms = 0.0;
            per_rep[r].push_back(std::move(fail));
            failed[r] = true;
        }
    };

    jobs = std::max(1, jobs);
    if (jobs == 1) {
        for (int r = 0; r < cfg.replications; ++r) worker(r);
    } else {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        for (int t = 0; t < std::min(jobs, cfg.replications); ++t)
            pool.emplace_back([&]() {
                for (;;) {
                    int r = next.fetch_add(1);
                    if (r >= cfg.replications) return;
                    worker(r);
                }
            });
        for (auto& th : pool) th.join();
    }

    RunSummary out;
    for (int r = 0; r < cfg.replications; ++r) {
        out.failed_replications += failed[r] ? 1 : 0;
        for (auto& rec : per_rep[r]) out.records.push_back(std::move(rec));
    }
    std::filesystem::create_directories(cfg.out_dir);
    std::ostringstream name;
    name << cfg.problem << "_" << cfg.algorithm << "_seed" << cfg.seed << ".csv";
    out.csv_path = (std::filesystem::path(cfg.out_dir) / name.str()).string();
    write_run_csv(out.csv_path, out.records);
    return out;
}

// --------------------------------- report ---------------------------------

struct SummaryRow {
    std::string problem;
    std::string algorithm;
    int iteration = 0;
    int count = 0;
    double oc_median = 0.0;
    double oc_q25 = 0.0;
    double oc_q75 = 0.0;
};

inline std::vector<SummaryRow> summarize_records(const std::vector<RunRecord>& records)
{
    std::map<std::tuple<std::string, std::string, int>, std::vector<double>> groups;
    for (const auto& r : records) {
        if (r.iteration < 0 || !std::isfinite(r.oc)) continue; // failure markers
        groups[{r.problem, r.algorithm, r.iteration}].push_back(r.oc);
    }
    std::vector<SummaryRow> rows;
    for (auto& [key, ocs] : groups) {
        SummaryRow s;
        s.problem = std::get<0>(key);
        s.algorithm = std::get<1>(key);
        s.iteration = std::get<2>(key);
        s.count = static_cast<int>(ocs.size());
        s.oc_median = median(ocs);
        s.oc_q25 = quantile(ocs, 0.25);
        s.oc_q75 = quantile(ocs, 0.75);
        rows.push_back(std::move(s));
    }
    return rows;
}

inline void write_report(const std::string& out_path, const std::vector<SummaryRow>& rows)
{
    std::ofstream out(out_path);
    if (!out) throw ModelError("cannot write report: " + out_path);
    out << "problem,algorithm,iteration,count,oc_median,oc_q25,oc_q75\n";
    for (const auto& r : rows)
        out << r.problem << "," << r.algorithm << "," << r.iteration << "," << r.count << ","
            << detail::format_g9(r.oc_median) << "," << detail::format_g9(r.oc_q25) << ","
            << detail::format_g9(r.oc_q75) << "\n";
}

inline std::vector<SummaryRow> report_directory(const std::string& in_dir,
                                                const std::string& out_path)
{
    std::vector<RunRecord> all;
    if (!std::filesystem::is_directory(in_dir))
        throw UsageError("report: not a directory: " + in_dir);
    std::vector<std::string> files;
    for (const auto& entry : std::filesystem::directory_iterator(in_dir))
        if (entry.path().extension() == ".csv") files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    for (const auto& f : files)
        for (auto& r : read_run_csv(f)) all.push_back(std::move(r));
    auto rows = summarize_records(all);
    write_report(out_path, rows);
    return rows;
}

} // namespace conbo
