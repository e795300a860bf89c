#pragma once

#include <conbo/epigraph.hpp>
#include <conbo/gp.hpp>
#include <conbo/math.hpp>

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <vector>

namespace conbo {

// ------------------------------- z grid -------------------------------

// Fixed z-scores at which future posterior means are sampled. Must contain 0
// so that the current policy action enters the dynamic discretization.
struct ZGrid {
    Eigen::VectorXd values; // sorted

    void validate() const
    {
        if (values.size() < 2) throw UsageError("ZGrid: need at least 2 values");
        bool has_zero = false;
        for (int i = 0; i < values.size(); ++i) {
            if (values[i] == 0.0) has_zero = true;
            if (i > 0 && values[i] < values[i - 1]) throw UsageError("ZGrid: values must be sorted");
        }
        if (!has_zero) throw UsageError("ZGrid: 0 must be included");
    }
};

// Equal Gaussian quantiles Phi^{-1}((2j-1)/(2 n_z)), j = 1..n_z. Odd n_z is
// required so the exact 0 quantile is present; even counts are rejected
// rather than silently augmented.
inline ZGrid z_quantiles(int n_z)
{
    if (n_z < 2) throw UsageError("z_quantiles: n_z must be >= 2");
    if (n_z % 2 == 0) throw UsageError("z_quantiles: n_z must be odd so that 0 is included");
    ZGrid g;
    g.values.resize(n_z);
    for (int j = 1; j <= n_z; ++j) g.values[j - 1] = norm_ppf((2.0 * j - 1.0) / (2.0 * n_z));
    g.values[(n_z - 1) / 2] = 0.0;
    g.validate();
    return g;
}

// ---------------------------- inner optimizer ----------------------------

// Maximizer for one-dimensional-state slices and other inner problems:
// parallel random search followed by projected gradient ascent with an
// adaptive step. With finite_actions set, exact enumeration replaces both.
struct InnerOptimizer {
    int n_random = 40;
    int n_ascent = 20;
    double step_frac = 0.1; // initial ascent step, normalized units
    std::uint64_t seed = 0;
    Eigen::MatrixXd finite_actions; // nonempty => enumerate these rows

    void validate() const
    {
        if (n_random < 1) throw UsageError("InnerOptimizer: n_random must be >= 1");
        if (n_ascent < 0) throw UsageError("InnerOptimizer: n_ascent must be >= 0");
    }
};

struct InnerObjective {
    // values over a batch of points (rows)
    std::function<Eigen::VectorXd(const Eigen::MatrixXd&)> batch;
    // value at one point, gradient optional
    std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)> point;
};

struct InnerResult {
    Eigen::VectorXd x;
    double value = 0.0;
};

namespace detail {

// Projected gradient ascent with a multiplicative step adaptation; value and
// gradient are evaluated together, one fused evaluation per step.
template <typename PointFn>
InnerResult ascend(const PointFn& point, const Box& box, Eigen::VectorXd x0, double v0,
                   int n_steps, double step_frac)
{
    InnerResult res{std::move(x0), v0};
    if (n_steps <= 0) return res;
    const Eigen::VectorXd w = box.width();
    double step = step_frac;
    Eigen::VectorXd g(box.dim()), gp(box.dim());
    res.value = point(res.x, &g);
    for (int t = 0; t < n_steps; ++t) {
        Eigen::VectorXd gn = g.cwiseProduct(w);
        double norm = gn.norm();
        if (!(norm > 1e-14)) break;
        Eigen::VectorXd proposal = box.clip(res.x + (step / norm) * w.cwiseProduct(gn));
        double vp = point(proposal, &gp);
        if (vp > res.value) {
            res.x = proposal;
            res.value = vp;
            g = gp;
            step = std::min(step * 1.3, 0.5);
        } else {
            step *= 0.5;
            if (step < 1e-6) break;
        }
    }
    return res;
}

inline Eigen::MatrixXd random_batch(const Box& box, int n, std::uint64_t seed)
{
    Rng rng(seed);
    Eigen::MatrixXd cand(n, box.dim());
    for (int i = 0; i < n; ++i) cand.row(i) = box.sample(rng).transpose();
    return cand;
}

inline Eigen::Index argmax(const Eigen::VectorXd& v)
{
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

} // namespace detail

inline InnerResult maximize_inner(const InnerObjective& f, const Box& box,
                                  const InnerOptimizer& opt, std::uint64_t call_seed,
                                  const Eigen::VectorXd* warm_start = nullptr)
{
    opt.validate();
    InnerResult res;

    if (opt.finite_actions.rows() > 0) {
        Eigen::VectorXd vals = f.batch(opt.finite_actions);
        Eigen::Index best = detail::argmax(vals);
        res.x = opt.finite_actions.row(best).transpose();
        res.value = vals[best];
        return res;
    }

    if (warm_start) {
        res.x = box.clip(*warm_start);
        res.value = f.point(res.x, nullptr);
    } else {
        Eigen::MatrixXd cand = detail::random_batch(box, opt.n_random, mix_seed(opt.seed, call_seed));
        Eigen::VectorXd vals = f.batch(cand);
        Eigen::Index best = detail::argmax(vals);
        res.x = cand.row(best).transpose();
        res.value = vals[best];
    }
    return detail::ascend(f.point, box, res.x, res.value, opt.n_ascent, opt.step_frac);
}

namespace detail {

inline Eigen::MatrixXd with_state(const Eigen::VectorXd& state, const Eigen::MatrixXd& actions)
{
    Eigen::MatrixXd Q(actions.rows(), state.size() + actions.cols());
    Q.leftCols(state.size()).rowwise() = state.transpose();
    Q.rightCols(actions.cols()) = actions;
    return Q;
}

// Fixed-state slice of the posterior. The state kernel factor is constant
// over the slice, so both mu^n(state, a) and sigma_tilde((state, a); c)
// reduce to affine functions of the action Matern vector:
//
//   mu(a) = meanB + meanA . mx(a),   st(a) = stB + stA . mx(a)
//
// with mx_i = M52(a, x_i; l_x) over the (n [+ candidate]) action rows. One
// evaluation costs a single n-vector of exponentials.
class SliceEvaluator {
public:
    SliceEvaluator(const GpPosterior& post, const LookaheadContext* ctx,
                   const Eigen::VectorXd& state)
        : inv_lx_(post.spec().action_lengthscales.cwiseInverse())
    {
        const KernelSpec& spec = post.spec();
        const int n = post.size();
        const int m = ctx ? n + 1 : n;
        if (state.size() != spec.d_s) throw UsageError("SliceEvaluator: state dimension mismatch");

        Xs_.resize(m, spec.d_x);
        Xs_.topRows(n) = post.scaled_actions();
        Eigen::ArrayXd ksA(m), ksB(m);
        if (spec.family == KernelFamily::FactorizedMatern) {
            Eigen::ArrayXd rs(m);
            if (spec.d_s > 0) {
                Eigen::VectorXd ss = state.cwiseProduct(spec.state_lengthscales.cwiseInverse());
                rs.head(n) = (post.scaled_states().rowwise() - ss.transpose())
                                 .rowwise()
                                 .norm();
                if (ctx)
                    rs[n] = (ctx->candidate.state.cwiseProduct(
                                 spec.state_lengthscales.cwiseInverse()) -
                             ss)
                                .norm();
            } else {
                rs.setZero();
            }
            Eigen::ArrayXd zs = detail::kSqrt5 * rs;
            ksA = spec.amplitude * (1.0 + zs + zs.square() / 3.0) * (-zs).exp();
            ksB.setZero();
        } else {
            for (int i = 0; i < n; ++i) {
                bool same = (post.joint_inputs().row(i).head(spec.d_s).transpose() - state)
                                .lpNorm<Eigen::Infinity>() <= 1e-9;
                ksA[i] = spec.amplitude + (same ? spec.state_amplitude : 0.0);
                ksB[i] = same ? spec.offset_amplitude : 0.0;
            }
            if (ctx) {
                bool same = (ctx->candidate.state - state).lpNorm<Eigen::Infinity>() <= 1e-9;
                ksA[n] = spec.amplitude + (same ? spec.state_amplitude : 0.0);
                ksB[n] = same ? spec.offset_amplitude : 0.0;
            }
        }

        Eigen::ArrayXd w_mean = Eigen::ArrayXd::Zero(m);
        w_mean.head(n) = post.weights().array();
        meanA_ = (w_mean * ksA).matrix();
        meanB_ = spec.prior_mean + (w_mean * ksB).sum();
        if (ctx) {
            Xs_.row(n) = ctx->candidate.action.cwiseProduct(inv_lx_).transpose();
            Eigen::ArrayXd w_st(m);
            w_st.head(n) = ctx->kvec.array();
            w_st[n] = 1.0;
            w_st /= ctx->denom;
            stA_ = (w_st * ksA).matrix();
            stB_ = (w_st * ksB).sum();
        } else {
            stA_ = Eigen::VectorXd::Zero(m);
            stB_ = 0.0;
        }
        xs_sq_ = Xs_.rowwise().squaredNorm();
    }

    // mu and sigma_tilde over action rows.
    void batch(const Eigen::MatrixXd& actions, Eigen::VectorXd& mu, Eigen::VectorXd& st) const
    {
        Eigen::MatrixXd As = actions.array().rowwise() * inv_lx_.transpose().array();
        Eigen::MatrixXd D = (-2.0 * As * Xs_.transpose());
        D.colwise() += As.rowwise().squaredNorm();
        D.rowwise() += xs_sq_.transpose();
        Eigen::ArrayXXd z = detail::kSqrt5 * D.cwiseMax(0.0).array().sqrt();
        Eigen::MatrixXd MX = ((1.0 + z + z.square() / 3.0) * (-z).exp()).matrix();
        mu = (MX * meanA_).array() + meanB_;
        st = (MX * stA_).array() + stB_;
    }

    // value of mu + z * st at one action; fused gradient with respect to the
    // action when requested.
    double value_grad(const Eigen::VectorXd& action, double z, Eigen::VectorXd* grad) const
    {
        Eigen::VectorXd as = action.cwiseProduct(inv_lx_);
        Eigen::ArrayXd r2 =
            (xs_sq_.array() + as.squaredNorm() - 2.0 * (Xs_ * as).array()).max(0.0);
        Eigen::ArrayXd zr = detail::kSqrt5 * r2.sqrt();
        Eigen::ArrayXd e = (-zr).exp();
        Eigen::ArrayXd mx = (1.0 + zr + zr.square() / 3.0) * e;
        Eigen::ArrayXd coef = meanA_.array() + z * stA_.array();
        double value = meanB_ + z * stB_ + (coef * mx).sum();
        if (grad) {
            // d mx_i / d a_d = wx_i (x_{id} - a_d) / l_d^2
            Eigen::ArrayXd cw = coef * (5.0 / 3.0) * (1.0 + zr) * e;
            *grad = (Xs_.transpose() * cw.matrix() - as * cw.sum()).cwiseProduct(inv_lx_);
        }
        return value;
    }

    InnerObjective objective(double z) const
    {
        InnerObjective f;
        f.batch = [this, z](const Eigen::MatrixXd& actions) {
            Eigen::VectorXd mu, st;
            batch(actions, mu, st);
            return (mu + z * st).eval();
        };
        f.point = [this, z](const Eigen::VectorXd& a, Eigen::VectorXd* g) {
            return value_grad(a, z, g);
        };
        return f;
    }

private:
    Eigen::VectorXd inv_lx_;
    Eigen::MatrixXd Xs_;
    Eigen::VectorXd xs_sq_;
    Eigen::VectorXd meanA_, stA_;
    double meanB_ = 0.0, stB_ = 0.0;
};

inline InnerObjective mean_slice_objective(const GpPosterior& post, const Eigen::VectorXd& state)
{
    auto eval = std::make_shared<SliceEvaluator>(post, nullptr, state);
    InnerObjective f;
    f.batch = [eval](const Eigen::MatrixXd& actions) {
        Eigen::VectorXd mu, st;
        eval->batch(actions, mu, st);
        return mu;
    };
    f.point = [eval](const Eigen::VectorXd& a, Eigen::VectorXd* g) {
        return eval->value_grad(a, 0.0, g);
    };
    return f;
}

} // namespace detail

// ------------------------------ KG variants ------------------------------

// KG by discretization: the epigraph expectation over the fixed action set
// X_d within one state. A lower bound of the continuous KG.
inline double kg_d(const GpPosterior& post, const LookaheadContext& ctx,
                   const Eigen::VectorXd& state, const Eigen::MatrixXd& X_d)
{
    if (X_d.rows() < 1) throw UsageError("kg_d: empty discretization");
    detail::SliceEvaluator eval(post, &ctx, state);
    LinearEnsemble ens;
    eval.batch(X_d, ens.mu, ens.sigma);
    return kg_epigraph(ens);
}

namespace detail {

// Shared random-search batch for every z within one state slice: one Gram
// block serves all sampled futures (and the current-mean baseline), which
// also gives common random numbers across candidates.
struct SliceSearch {
    Eigen::MatrixXd actions;
    Eigen::VectorXd mu, st;
};

inline SliceSearch slice_search(const SliceEvaluator& eval, const Eigen::VectorXd& state,
                                const Box& action_box, const InnerOptimizer& opt)
{
    SliceSearch s;
    s.actions = opt.finite_actions.rows() > 0
                    ? opt.finite_actions
                    : random_batch(action_box, opt.n_random,
                                   mix_seed(opt.seed, hash_vector(state)));
    eval.batch(s.actions, s.mu, s.st);
    return s;
}

// Start from the batch argmax of mu + z * st and ascend the z-shifted
// lookahead mean over actions.
inline InnerResult slice_maximize(const SliceEvaluator& eval, const Box& action_box,
                                  const InnerOptimizer& opt, const SliceSearch& search, double z)
{
    Eigen::VectorXd vals = search.mu + z * search.st;
    Eigen::Index best = argmax(vals);
    if (opt.finite_actions.rows() > 0)
        return {search.actions.row(best).transpose(), vals[best]};
    auto point = [&eval, z](const Eigen::VectorXd& a, Eigen::VectorXd* g) {
        return eval.value_grad(a, z, g);
    };
    return ascend(point, action_box, search.actions.row(best).transpose(), vals[best],
                  opt.n_ascent, opt.step_frac);
}

} // namespace detail

// KG by Monte Carlo with caller-supplied z draws: average of the numerically
// maximized lookahead means minus the numerically maximized current mean.
// The random-search batch is shared across the draws and the baseline, so a
// degenerate draw z = 0 contributes exactly zero.
inline double kg_mc_at(const GpPosterior& post, const LookaheadContext& ctx,
                       const Eigen::VectorXd& state, const Box& action_box,
                       const Eigen::VectorXd& z_draws, const InnerOptimizer& opt)
{
    if (z_draws.size() < 1) throw UsageError("kg_mc: n_z must be >= 1");
    detail::SliceEvaluator eval(post, &ctx, state);
    auto search = detail::slice_search(eval, state, action_box, opt);
    double baseline = detail::slice_maximize(eval, action_box, opt, search, 0.0).value;
    double acc = 0.0;
    for (int j = 0; j < z_draws.size(); ++j)
        acc += detail::slice_maximize(eval, action_box, opt, search, z_draws[j]).value;
    return acc / z_draws.size() - baseline;
}

// Unbiased estimate of the continuous KG (up to inner-optimizer
// suboptimality) with i.i.d. standard-normal draws.
inline double kg_mc(const GpPosterior& post, const LookaheadContext& ctx,
                    const Eigen::VectorXd& state, const Box& action_box, int n_z,
                    const InnerOptimizer& opt, Rng& rng)
{
    if (n_z < 1) throw UsageError("kg_mc: n_z must be >= 1");
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd z(n_z);
    for (int j = 0; j < n_z; ++j) z[j] = normal(rng);
    return kg_mc_at(post, ctx, state, action_box, z, opt);
}

// Hybrid KG: optimize each sampled future mean, then run the epigraph
// expectation over the resulting dynamic discretization. Nonnegative
// whenever 0 is in the z grid. policy_hint, when given, supplies
// argmax_x mu^n(state, x) for the z = 0 branch.
inline double kg_hybrid(const GpPosterior& post, const LookaheadContext& ctx,
                        const Eigen::VectorXd& state, const Box& action_box, const ZGrid& zgrid,
                        const InnerOptimizer& opt,
                        const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>* policy_hint =
                            nullptr,
                        Eigen::MatrixXd* discretization = nullptr)
{
    zgrid.validate();
    const int n_z = static_cast<int>(zgrid.values.size());
    detail::SliceEvaluator eval(post, &ctx, state);
    auto search = detail::slice_search(eval, state, action_box, opt);
    Eigen::MatrixXd X_d(n_z, search.actions.cols());
    for (int j = 0; j < n_z; ++j) {
        double z = zgrid.values[j];
        if (z == 0.0 && policy_hint) {
            X_d.row(j) = (*policy_hint)(state).transpose();
            continue;
        }
        X_d.row(j) = detail::slice_maximize(eval, action_box, opt, search, z).x.transpose();
    }
    if (discretization) *discretization = X_d;
    LinearEnsemble ens;
    eval.batch(X_d, ens.mu, ens.sigma);
    return kg_epigraph(ens);
}

// Candidate-level convenience: degenerate candidates (fully observed,
// noiseless) have acquisition exactly 0.
inline double kg_hybrid_at(const GpPosterior& post, const JointPoint& candidate,
                           const Eigen::VectorXd& state, const Box& action_box,
                           const ZGrid& zgrid, const InnerOptimizer& opt)
{
    try {
        LookaheadContext ctx = post.lookahead(candidate);
        return kg_hybrid(post, ctx, state, action_box, zgrid, opt);
    } catch (const DegenerateCandidate&) {
        return 0.0;
    }
}

// Global-optimization variant: the whole joint space is treated as the
// action set for a single implicit state.
inline double kg_hybrid_global(const GpPosterior& post, const LookaheadContext& ctx,
                               const Box& joint_box, const ZGrid& zgrid,
                               const InnerOptimizer& opt,
                               Eigen::MatrixXd* discretization = nullptr)
{
    zgrid.validate();
    const int n_z = static_cast<int>(zgrid.values.size());
    Eigen::MatrixXd X_d(n_z, joint_box.dim());
    for (int j = 0; j < n_z; ++j) {
        const double z = zgrid.values[j];
        InnerObjective f;
        f.batch = [&post, &ctx, z](const Eigen::MatrixXd& Q) {
            Eigen::VectorXd mu, st;
            post.predict_lookahead(ctx, Q, mu, st);
            return (mu + z * st).eval();
        };
        f.point = [&post, &ctx, z](const Eigen::VectorXd& q, Eigen::VectorXd* grad) {
            if (!grad) {
                if (z == 0.0) return post.mean_joint(q);
                return post.mean_joint(q) + z * post.sigma_tilde_joint(ctx, q);
            }
            return post.lookahead_mean_grad(ctx, z, q, *grad);
        };
        auto best = maximize_inner(f, joint_box, opt, static_cast<std::uint64_t>(j));
        X_d.row(j) = best.x.transpose();
    }
    if (discretization) *discretization = X_d;
    LinearEnsemble ens;
    post.predict_lookahead(ctx, X_d, ens.mu, ens.sigma);
    return kg_epigraph(ens);
}

// Value and candidate-gradient of the epigraph expectation over a frozen
// discretization (joint rows). Only sigma_tilde depends on the candidate.
inline double frozen_kg_grad(const GpPosterior& post, const LookaheadContext& ctx,
                             const GpPosterior::CandidateGradCache& cache,
                             const Eigen::MatrixXd& disc, Eigen::VectorXd& grad)
{
    LinearEnsemble ens;
    ens.mu = post.mean_batch(disc);
    Eigen::MatrixXd st_grads;
    post.sigma_tilde_candidate_grad_batch(ctx, cache, disc, ens.sigma, st_grads);
    Eigen::VectorXd dmu, dsigma;
    double value = kg_epigraph_grad(ens, dmu, dsigma);
    grad = st_grads.transpose() * dsigma;
    return value;
}

// ------------------------------ expected improvement ------------------------------

inline double expected_improvement(const GpPosterior& post, const JointPoint& q, double incumbent)
{
    double m = post.mean(q);
    double v = post.variance(q);
    if (v <= 1e-12) return std::max(m - incumbent, 0.0);
    double sd = std::sqrt(v);
    double u = (m - incumbent) / sd;
    return (m - incumbent) * norm_cdf(u) + sd * norm_pdf(u);
}

inline double expected_improvement_grad(const GpPosterior& post, const Eigen::VectorXd& q,
                                        double incumbent, Eigen::VectorXd& grad)
{
    double m, v;
    Eigen::VectorXd dm, dv;
    post.mean_var_grad(q, m, v, dm, dv);
    if (v <= 1e-12) {
        grad = m > incumbent ? dm : Eigen::VectorXd::Zero(q.size()).eval();
        return std::max(m - incumbent, 0.0);
    }
    double sd = std::sqrt(v);
    double u = (m - incumbent) / sd;
    // dEI = Phi(u) dm + phi(u) d sd
    grad = norm_cdf(u) * dm + (norm_pdf(u) / (2.0 * sd)) * dv;
    return (m - incumbent) * norm_cdf(u) + sd * norm_pdf(u);
}

} // namespace conbo
