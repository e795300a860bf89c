#pragma once

#include <conbo/acquisition.hpp>
#include <conbo/density.hpp>
#include <conbo/gp.hpp>
#include <conbo/math.hpp>

#include <Eigen/Dense>

#include <cstring>
#include <functional>
#include <optional>
#include <vector>

namespace conbo {

// ------------------------------ policy cache ------------------------------

// Lookup table of previously optimized policy actions. Distances are in
// normalized state units: an entry within rho_exact is reused as is, within
// rho_warm it seeds a re-ascent, otherwise a full inner optimization runs.
// Single-writer: confine one cache to one acquisition-optimization worker.
struct PolicyCache {
    struct Entry {
        Eigen::VectorXd state;
        Eigen::VectorXd action;
        double value;
    };
    std::vector<Entry> entries;
    double rho_exact = 1e-3;
    double rho_warm = 0.1;

    void clear() { entries.clear(); }
};

// argmax_x mu^n(state, x), the GP policy pi^n(state), with caching.
inline Eigen::VectorXd policy_action(const GpPosterior& post, const Eigen::VectorXd& state,
                                     const Box& state_box, const Box& action_box,
                                     const InnerOptimizer& inner, PolicyCache* cache)
{
    if (cache && cache->rho_exact >= cache->rho_warm)
        throw UsageError("PolicyCache: rho_exact must be < rho_warm");
    const PolicyCache::Entry* nearest = nullptr;
    double best_dist = std::numeric_limits<double>::infinity();
    if (cache) {
        Eigen::VectorXd su = state_box.to_unit(state);
        for (const auto& e : cache->entries) {
            double d = (state_box.to_unit(e.state) - su).norm();
            if (d < best_dist) {
                best_dist = d;
                nearest = &e;
            }
        }
        if (nearest && best_dist <= cache->rho_exact) return nearest->action;
    }

    auto objective = detail::mean_slice_objective(post, state);
    InnerResult res;
    if (nearest && best_dist <= cache->rho_warm) {
        res = maximize_inner(objective, action_box, inner, 0, &nearest->action);
    } else {
        res = maximize_inner(objective, action_box, inner, hash_vector(state));
    }
    if (cache) cache->entries.push_back({state, res.x, res.value});
    return res.x;
}

// --------------------------- Monte-Carlo states ---------------------------

struct McStates {
    Eigen::MatrixXd states;  // rows
    Eigen::VectorXd weights; // P[s_i]/q(s_i | center), or P[s_i] when exact
    bool exact = false;      // finite S: summation replaces Monte Carlo
};

// States drawn from the Gaussian proposal N(center, diag(l_s^2)) truncated to
// the state box by rejection. Weights use the truncated proposal density so
// they stay well defined on bounded S. Finite densities bypass sampling:
// every support state is returned with weight P[s_i].
inline McStates sample_mc_states(const Eigen::VectorXd& center, const Eigen::VectorXd& l_s,
                                 int n_s, const StateDensity& density, const Box& state_box,
                                 Rng& rng)
{
    McStates out;
    if (density.is_finite()) {
        out.states = density.states;
        out.weights = density.probs;
        out.exact = true;
        return out;
    }
    if (n_s < 1) throw UsageError("sample_mc_states: n_s must be >= 1");
    if (!state_box.contains(center)) throw UsageError("sample_mc_states: center out of bounds");
    const int d = state_box.dim();
    if (l_s.size() != d) throw UsageError("sample_mc_states: lengthscale size mismatch");

    // per-dimension in-box proposal mass
    double log_box_mass = 0.0;
    for (int k = 0; k < d; ++k) {
        double a = norm_cdf((state_box.lo[k] - center[k]) / l_s[k]);
        double b = norm_cdf((state_box.hi[k] - center[k]) / l_s[k]);
        log_box_mass += std::log(std::max(b - a, 1e-300));
    }

    std::normal_distribution<double> normal(0.0, 1.0);
    out.states.resize(n_s, d);
    out.weights.resize(n_s);
    for (int i = 0; i < n_s; ++i) {
        Eigen::VectorXd s(d);
        bool ok = false;
        for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
            for (int k = 0; k < d; ++k) s[k] = center[k] + l_s[k] * normal(rng);
            ok = state_box.contains(s, 0.0);
        }
        if (!ok) throw SamplingError("sample_mc_states: rejection sampling failed after 1000 draws");
        double log_q = -log_box_mass;
        for (int k = 0; k < d; ++k)
            log_q += std::log(norm_pdf((s[k] - center[k]) / l_s[k]) / l_s[k]);
        out.states.row(i) = s.transpose();
        out.weights[i] = density.pdf(s) * std::exp(-log_q);
    }
    return out;
}

// ------------------------------- ConBO value -------------------------------

struct OuterOptimizer {
    int n_starts = 10; // half uniform, half previous-iteration peaks
    int n_steps = 12;  // Adam steps per start
    double step = 0.08;
    double step_decay = 0.95;
};

struct ConboConfig {
    int n_s = 20;
    ZGrid zgrid = z_quantiles(5);
    InnerOptimizer inner;
    OuterOptimizer outer;
    bool exact_finite = false; // finite S and X: kg_d over the full action set

    void validate() const
    {
        if (n_s < 1) throw UsageError("ConboConfig: n_s must be >= 1");
        zgrid.validate();
        inner.validate();
    }
};

namespace detail {

inline Eigen::VectorXd proposal_lengthscales(const KernelSpec& spec, const Box& state_box)
{
    if (spec.family == KernelFamily::FactorizedMatern && spec.d_s > 0)
        return spec.state_lengthscales;
    return 0.5 * state_box.width(); // fallback when the kernel carries no state scales
}

inline std::function<Eigen::VectorXd(const Eigen::VectorXd&)>
policy_hint_fn(const GpPosterior& post, const Box& state_box, const Box& action_box,
               const InnerOptimizer& inner, PolicyCache* cache)
{
    return [&post, state_box, action_box, inner, cache](const Eigen::VectorXd& s) {
        return policy_action(post, s, state_box, action_box, inner, cache);
    };
}

} // namespace detail

// Frozen randomness for one ConBO evaluation: the Monte-Carlo states, their
// weights, and the per-state dynamic discretizations (joint rows). Gradients
// are taken with all of these held fixed.
struct FrozenConbo {
    McStates mc;
    std::vector<Eigen::MatrixXd> disc; // joint rows per state
};

// ConBO at a candidate with a caller-supplied state sample. One lookahead
// context serves every state. Optionally records the frozen discretization.
inline double conbo_value_frozen(const GpPosterior& post, const JointPoint& candidate,
                                 const ConboConfig& cfg, const McStates& mc,
                                 const Box& state_box, const Box& action_box,
                                 PolicyCache* cache = nullptr, FrozenConbo* frozen = nullptr)
{
    cfg.validate();
    LookaheadContext ctx;
    try {
        ctx = post.lookahead(candidate);
    } catch (const DegenerateCandidate&) {
        return 0.0;
    }
    if (frozen) {
        frozen->mc = mc;
        frozen->disc.clear();
    }
    auto hint = detail::policy_hint_fn(post, state_box, action_box, cfg.inner, cache);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < mc.states.rows(); ++i) {
        Eigen::VectorXd state = mc.states.row(i).transpose();
        double kg;
        Eigen::MatrixXd X_d;
        if (cfg.exact_finite) {
            if (cfg.inner.finite_actions.rows() < 1)
                throw UsageError("conbo_value: exact_finite requires finite_actions");
            X_d = cfg.inner.finite_actions;
            kg = kg_d(post, ctx, state, X_d);
        } else {
            kg = kg_hybrid(post, ctx, state, action_box, cfg.zgrid, cfg.inner, &hint, &X_d);
        }
        if (frozen) frozen->disc.push_back(detail::with_state(state, X_d));
        acc += mc.weights[i] * kg;
    }
    return mc.exact ? acc : acc / static_cast<double>(mc.states.rows());
}

// The importance-sampled conditional acquisition (fresh states drawn here).
inline double conbo_value(const GpPosterior& post, const JointPoint& candidate,
                          const ConboConfig& cfg, const StateDensity& density,
                          const Box& state_box, const Box& action_box, Rng& rng,
                          PolicyCache* cache = nullptr)
{
    McStates mc = sample_mc_states(candidate.state,
                                   detail::proposal_lengthscales(post.spec(), state_box), cfg.n_s,
                                   density, state_box, rng);
    return conbo_value_frozen(post, candidate, cfg, mc, state_box, action_box, cache);
}

// Value of the frozen-discretization ConBO at an arbitrary candidate; used by
// gradient validation.
inline double conbo_frozen_value_at(const GpPosterior& post, const JointPoint& candidate,
                                    const FrozenConbo& frozen)
{
    LookaheadContext ctx;
    try {
        ctx = post.lookahead(candidate);
    } catch (const DegenerateCandidate&) {
        return 0.0;
    }
    double acc = 0.0;
    for (size_t i = 0; i < frozen.disc.size(); ++i) {
        LinearEnsemble ens;
        post.predict_lookahead(ctx, frozen.disc[i], ens.mu, ens.sigma);
        acc += frozen.mc.weights[i] * kg_epigraph(ens);
    }
    return frozen.mc.exact ? acc : acc / static_cast<double>(frozen.disc.size());
}

// Gradient of the frozen-discretization ConBO value with respect to the
// candidate (d_s + d_x). Only sigma_tilde depends on the candidate.
inline double conbo_gradient(const GpPosterior& post, const JointPoint& candidate,
                             const FrozenConbo& frozen, Eigen::VectorXd& grad)
{
    const int D = post.spec().joint_dim();
    grad = Eigen::VectorXd::Zero(D);
    LookaheadContext ctx;
    try {
        ctx = post.lookahead(candidate);
    } catch (const DegenerateCandidate&) {
        return 0.0;
    }
    auto cache = post.candidate_grad_cache(ctx);
    double acc = 0.0;
    Eigen::VectorXd g(D);
    for (size_t i = 0; i < frozen.disc.size(); ++i) {
        acc += frozen.mc.weights[i] * frozen_kg_grad(post, ctx, cache, frozen.disc[i], g);
        grad += frozen.mc.weights[i] * g;
    }
    if (!frozen.mc.exact) {
        double inv = 1.0 / static_cast<double>(frozen.disc.size());
        acc *= inv;
        grad *= inv;
    }
    return acc;
}

// --------------------------- outer optimization ---------------------------

struct AcquisitionHistory {
    std::vector<Eigen::VectorXd> points; // joint coordinates
    std::vector<double> values;
};

struct OuterResult {
    Eigen::VectorXd best;
    double best_value = -std::numeric_limits<double>::infinity();
    AcquisitionHistory history;
    std::vector<Eigen::VectorXd> start_ends; // per-start final iterates
};

using AcqValueFn = std::function<double(const Eigen::VectorXd&, std::uint64_t)>;
using AcqGradFn = std::function<double(const Eigen::VectorXd&, std::uint64_t, Eigen::VectorXd&)>;

// Multi-start stochastic gradient ascent (Adam with decaying step) over the
// joint box. Each evaluation receives a fresh seed for its Monte-Carlo draw.
// Without a gradient function, central finite differences on the value at a
// frozen per-step seed are used. Returns the history-best point.
inline OuterResult optimize_acquisition(const AcqValueFn& value, const AcqGradFn* gradient,
                                        const Box& box, const OuterOptimizer& opt,
                                        std::uint64_t seed,
                                        const std::vector<Eigen::VectorXd>* prev_peaks = nullptr)
{
    if (box.dim() < 1) throw UsageError("optimize_acquisition: empty bounds");
    Rng rng(mix_seed(seed, hash_string("outer")));
    std::uint64_t eval_counter = 0;
    auto next_eval_seed = [&]() { return mix_seed(seed, hash_string("eval"), eval_counter++); };

    OuterResult out;
    const Eigen::VectorXd w = box.width();

    auto record = [&](const Eigen::VectorXd& x, double v) {
        out.history.points.push_back(x);
        out.history.values.push_back(v);
        if (std::isfinite(v) && v > out.best_value) {
            out.best_value = v;
            out.best = x;
        }
    };

    int n_peak = prev_peaks ? std::min<int>(opt.n_starts / 2, static_cast<int>(prev_peaks->size()))
                            : 0;
    for (int s = 0; s < opt.n_starts; ++s) {
        Eigen::VectorXd x = s < n_peak ? box.clip((*prev_peaks)[s]) : box.sample(rng);
        Eigen::VectorXd m = Eigen::VectorXd::Zero(box.dim());
        Eigen::VectorXd v2 = Eigen::VectorXd::Zero(box.dim());
        double alpha = opt.step;
        for (int t = 1; t <= opt.n_steps; ++t) {
            std::uint64_t es = next_eval_seed();
            Eigen::VectorXd g(box.dim());
            double val;
            if (gradient) {
                val = (*gradient)(x, es, g);
            } else {
                val = value(x, es);
                for (int d = 0; d < box.dim(); ++d) {
                    double h = 1e-3 * (w[d] > 0 ? w[d] : 1.0);
                    Eigen::VectorXd xp = x, xm = x;
                    xp[d] = std::min(x[d] + h, box.hi[d]);
                    xm[d] = std::max(x[d] - h, box.lo[d]);
                    double span = xp[d] - xm[d];
                    g[d] = span > 0 ? (value(xp, es) - value(xm, es)) / span : 0.0;
                }
            }
            record(x, val);
            Eigen::VectorXd gn = g.cwiseProduct(w); // gradient in normalized coords
            m = 0.9 * m + 0.1 * gn;
            v2 = 0.999 * v2.array() + 0.001 * gn.array().square();
            double bc1 = 1.0 - std::pow(0.9, t), bc2 = 1.0 - std::pow(0.999, t);
            Eigen::VectorXd step_n =
                alpha * (m / bc1).array() / ((v2 / bc2).array().sqrt() + 1e-8);
            x = box.clip(x + step_n.cwiseProduct(w));
            alpha *= opt.step_decay;
        }
        double final_val = value(x, next_eval_seed());
        record(x, final_val);
        out.start_ends.push_back(x);
    }
    if (!std::isfinite(out.best_value))
        throw ModelError("optimize_acquisition: all evaluations were non-finite");
    return out;
}

// ---------------------------------- REVI ----------------------------------

// Per-iteration frozen discretization: ceil(sqrt(2n)) states from P[s] and as
// many Latin-hypercube actions.
struct ReviDisc {
    Eigen::MatrixXd states;
    Eigen::VectorXd probs;
    Eigen::MatrixXd actions;
};

inline ReviDisc make_revi_disc(int n, const StateDensity& density, const Box& action_box,
                               Rng& rng)
{
    if (n < 1) throw UsageError("make_revi_disc: n must be >= 1");
    int m = static_cast<int>(std::ceil(std::sqrt(2.0 * n)));
    ReviDisc disc;
    if (density.is_finite()) {
        disc.states = density.states;
        disc.probs = density.probs;
    } else {
        disc.states.resize(m, density.dim());
        disc.probs.resize(m);
        for (int i = 0; i < m; ++i) {
            Eigen::VectorXd s = density.sample(rng);
            disc.states.row(i) = s.transpose();
            disc.probs[i] = density.pdf(s);
        }
    }
    disc.actions = latin_hypercube(action_box, m, rng);
    return disc;
}

inline double revi_value(const GpPosterior& post, const JointPoint& candidate,
                         const ReviDisc& disc)
{
    LookaheadContext ctx;
    try {
        ctx = post.lookahead(candidate);
    } catch (const DegenerateCandidate&) {
        return 0.0;
    }
    double acc = 0.0, wsum = 0.0;
    for (Eigen::Index i = 0; i < disc.states.rows(); ++i) {
        acc += disc.probs[i] * kg_d(post, ctx, disc.states.row(i).transpose(), disc.actions);
        wsum += disc.probs[i];
    }
    return wsum > 0.0 ? acc / wsum : 0.0;
}

inline double revi_value(const GpPosterior& post, const JointPoint& candidate, int n,
                         const StateDensity& density, const Box& action_box, Rng& rng)
{
    return revi_value(post, candidate, make_revi_disc(n, density, action_box, rng));
}

// ----------------------------- batch construction -----------------------------

// Inverted-kernel penalty: 0 at the chosen point, -> 1 far away.
inline double penalizer(const JointPoint& q, const JointPoint& chosen, const KernelSpec& spec)
{
    return 1.0 - kernel_eval(spec, q, chosen) / kernel_eval(spec, chosen, chosen);
}

// Sequential batch from the evaluation history: point 1 is the history
// argmax; each later point maximizes value times the accumulated penalties.
inline std::vector<JointPoint> construct_batch(const AcquisitionHistory& history, int q,
                                               const KernelSpec& spec)
{
    if (history.points.empty()) throw UsageError("construct_batch: empty history");
    if (q < 1) throw UsageError("construct_batch: q must be >= 1");
    if (q > static_cast<int>(history.points.size()))
        throw UsageError("construct_batch: q exceeds history size");

    const int d_s = spec.d_s;
    std::vector<JointPoint> chosen;
    std::vector<double> score(history.values);
    for (int k = 0; k < q; ++k) {
        size_t best = 0;
        for (size_t i = 1; i < score.size(); ++i)
            if (score[i] > score[best]) best = i;
        JointPoint pick = JointPoint::split(history.points[best], d_s);
        chosen.push_back(pick);
        if (k + 1 == q) break;
        for (size_t i = 0; i < score.size(); ++i)
            score[i] *= penalizer(JointPoint::split(history.points[i], d_s), pick, spec);
    }
    return chosen;
}

} // namespace conbo
