#pragma once

#include <conbo/acquisition.hpp>
#include <conbo/conbo.hpp>
#include <conbo/density.hpp>
#include <conbo/gp.hpp>

#include <Eigen/Dense>

#include <vector>

namespace conbo {

// ------------------------------ UNI ------------------------------

inline JointPoint uniform_next(const Box& state_box, const Box& action_box, Rng& rng)
{
    return JointPoint(state_box.sample(rng), action_box.sample(rng));
}

// ------------------------------ joint EI ------------------------------

// Expected improvement over the joint space, treating every input as an
// action. Falls back to a uniform draw with no data.
inline JointPoint joint_ei_next(const GpPosterior& post, const Box& state_box,
                                const Box& action_box, const OuterOptimizer& opt,
                                std::uint64_t seed,
                                const std::vector<Eigen::VectorXd>* prev_peaks = nullptr,
                                AcquisitionHistory* history = nullptr)
{
    if (post.size() == 0) {
        Rng rng(mix_seed(seed, hash_string("ei_fallback")));
        return uniform_next(state_box, action_box, rng);
    }
    const double incumbent = post.data().y.maxCoeff();
    Box joint = Box::join(state_box, action_box);
    AcqValueFn value = [&post, incumbent](const Eigen::VectorXd& q, std::uint64_t) {
        return expected_improvement(post, JointPoint::split(q, post.spec().d_s), incumbent);
    };
    AcqGradFn grad = [&post, incumbent](const Eigen::VectorXd& q, std::uint64_t,
                                        Eigen::VectorXd& g) {
        return expected_improvement_grad(post, q, incumbent, g);
    };
    OuterResult res = optimize_acquisition(value, &grad, joint, opt, seed, prev_peaks);
    if (history) *history = res.history;
    return JointPoint::split(res.best, post.spec().d_s);
}

// ------------------------------ KNN policy ------------------------------

// Among the k nearest training states (Euclidean in normalized units), the
// action of the row with the largest observed reward. Distance ties keep the
// lower row index.
inline Eigen::VectorXd knn_policy(const Dataset& data, const Eigen::VectorXd& s,
                                  const Box& state_box, int k = 10)
{
    const int n = data.size();
    if (n < 1) throw UsageError("knn_policy: empty dataset");
    k = std::min(k, n);
    Eigen::VectorXd su = state_box.to_unit(s);
    std::vector<std::pair<double, int>> dist(n);
    for (int i = 0; i < n; ++i)
        dist[i] = {(state_box.to_unit(data.points[i].state) - su).norm(), i};
    std::stable_sort(dist.begin(), dist.end(), [](const auto& a, const auto& b) {
        return a.first < b.first;
    });
    int best = dist[0].second;
    for (int j = 1; j < k; ++j) {
        int idx = dist[j].second;
        if (data.y[idx] > data.y[best]) best = idx;
    }
    return data.points[best].action;
}

// ------------------------------ policy gradient ------------------------------

// Gaussian policy with a quadratic mean: action_d = s^T A_d s + B_d s + C_d
// in [-0.5, 0.5]-normalized coordinates, fixed exploration sd 0.2.
struct QuadraticPolicy {
    std::vector<Eigen::MatrixXd> A; // d_x matrices of d_s x d_s
    Eigen::MatrixXd B;              // d_x x d_s
    Eigen::VectorXd C;              // d_x
    double action_sd = 0.2;

    static QuadraticPolicy zero(int d_s, int d_x)
    {
        QuadraticPolicy p;
        p.A.assign(d_x, Eigen::MatrixXd::Zero(d_s, d_s));
        p.B = Eigen::MatrixXd::Zero(d_x, d_s);
        p.C = Eigen::VectorXd::Zero(d_x);
        return p;
    }

    Eigen::VectorXd mean_action(const Eigen::VectorXd& s_norm) const
    {
        const int d_x = static_cast<int>(C.size());
        Eigen::VectorXd a(d_x);
        for (int d = 0; d < d_x; ++d)
            a[d] = s_norm.dot(A[d] * s_norm) + B.row(d).dot(s_norm) + C[d];
        return a;
    }
};

namespace detail {

inline Eigen::VectorXd to_centered(const Box& box, const Eigen::VectorXd& v)
{
    return box.to_unit(v).array() - 0.5;
}

inline Eigen::VectorXd from_centered(const Box& box, const Eigen::VectorXd& u)
{
    return box.from_unit((u.array() + 0.5).matrix());
}

} // namespace detail

// Nadaraya-Watson baseline V(s) with the squared-exponential weight
// exp(-0.5 |s - s'|^2 / 0.2^2) on normalized states.
inline double pg_baseline(const Eigen::MatrixXd& S_norm, const Eigen::VectorXd& y_std,
                          const Eigen::VectorXd& s_norm)
{
    Eigen::ArrayXd d2 = (S_norm.rowwise() - s_norm.transpose()).rowwise().squaredNorm();
    Eigen::ArrayXd w = (-0.5 * d2 / 0.04).exp();
    double denom = w.sum();
    if (denom < 1e-300) return 0.0;
    return (w * y_std.array()).sum() / denom;
}

// Fit the quadratic policy by multi-start gradient ascent on the expected
// advantage sum_i P_theta[x_i | s_i] (y_i - V(s_i)). Inputs are rescaled to
// the centered unit cube and outputs standardized first.
inline QuadraticPolicy pg_fit(const Dataset& data, const Box& state_box, const Box& action_box,
                              std::uint64_t seed = 0, int n_starts = 3, int n_iters = 400)
{
    const int n = data.size();
    if (n < 5) throw UsageError("pg_fit: need at least 5 observations");
    const int d_s = state_box.dim(), d_x = action_box.dim();

    Eigen::MatrixXd S(n, d_s), X(n, d_x);
    for (int i = 0; i < n; ++i) {
        S.row(i) = detail::to_centered(state_box, data.points[i].state).transpose();
        X.row(i) = detail::to_centered(action_box, data.points[i].action).transpose();
    }
    double ym = data.y.mean();
    double ysd = std::sqrt((data.y.array() - ym).square().sum() / std::max(1, n - 1));
    if (!(ysd > 1e-12)) return QuadraticPolicy::zero(d_s, d_x); // no signal: keep zeros
    Eigen::VectorXd y_std = (data.y.array() - ym) / ysd;

    Eigen::VectorXd adv(n);
    for (int i = 0; i < n; ++i)
        adv[i] = y_std[i] - pg_baseline(S, y_std, S.row(i).transpose());

    const int n_params = d_x * (d_s * d_s + d_s + 1);
    auto unpack = [&](const Eigen::VectorXd& th) {
        QuadraticPolicy p = QuadraticPolicy::zero(d_s, d_x);
        int off = 0;
        for (int d = 0; d < d_x; ++d)
            for (int r = 0; r < d_s; ++r)
                for (int c = 0; c < d_s; ++c) p.A[d](r, c) = th[off++];
        for (int d = 0; d < d_x; ++d)
            for (int c = 0; c < d_s; ++c) p.B(d, c) = th[off++];
        for (int d = 0; d < d_x; ++d) p.C[d] = th[off++];
        return p;
    };

    const double inv_var = 1.0 / (0.2 * 0.2);
    auto objective = [&](const Eigen::VectorXd& th, Eigen::VectorXd* grad) {
        QuadraticPolicy p = unpack(th);
        double total = 0.0;
        if (grad) grad->setZero(n_params);
        for (int i = 0; i < n; ++i) {
            Eigen::VectorXd s = S.row(i).transpose();
            Eigen::VectorXd m = p.mean_action(s);
            Eigen::VectorXd r = X.row(i).transpose() - m;
            double logp = -0.5 * inv_var * r.squaredNorm();
            double lik = std::exp(logp); // density up to the constant factor
            total += lik * adv[i];
            if (grad) {
                // d lik / d m_d = lik * r_d / sd^2
                Eigen::VectorXd dm = lik * adv[i] * inv_var * r;
                int off = 0;
                for (int d = 0; d < d_x; ++d)
                    for (int rr = 0; rr < d_s; ++rr)
                        for (int cc = 0; cc < d_s; ++cc) (*grad)[off++] += dm[d] * s[rr] * s[cc];
                for (int d = 0; d < d_x; ++d)
                    for (int cc = 0; cc < d_s; ++cc) (*grad)[off++] += dm[d] * s[cc];
                for (int d = 0; d < d_x; ++d) (*grad)[off++] += dm[d];
            }
        }
        return total;
    };

    Rng rng(mix_seed(seed, hash_string("pg_fit")));
    std::normal_distribution<double> normal(0.0, 0.3);
    Eigen::VectorXd best_theta = Eigen::VectorXd::Zero(n_params);
    double best_val = objective(best_theta, nullptr);
    for (int start = 0; start < n_starts; ++start) {
        Eigen::VectorXd theta = Eigen::VectorXd::Zero(n_params);
        if (start > 0)
            for (int j = 0; j < n_params; ++j) theta[j] = normal(rng);
        Eigen::VectorXd m = Eigen::VectorXd::Zero(n_params);
        Eigen::VectorXd v = Eigen::VectorXd::Zero(n_params);
        for (int t = 1; t <= n_iters; ++t) {
            Eigen::VectorXd g;
            double val = objective(theta, &g);
            if (val > best_val) {
                best_val = val;
                best_theta = theta;
            }
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v.array() + 0.001 * g.array().square();
            double bc1 = 1.0 - std::pow(0.9, t), bc2 = 1.0 - std::pow(0.999, t);
            theta += 0.05 * ((m / bc1).array() / ((v / bc2).array().sqrt() + 1e-8)).matrix();
        }
        double val = objective(theta, nullptr);
        if (val > best_val) {
            best_val = val;
            best_theta = theta;
        }
    }
    return unpack(best_theta);
}

// Deterministic deployment action: the policy mean mapped back to problem
// units and clipped to bounds.
inline Eigen::VectorXd pg_action(const QuadraticPolicy& policy, const Eigen::VectorXd& s,
                                 const Box& state_box, const Box& action_box)
{
    Eigen::VectorXd m = policy.mean_action(detail::to_centered(state_box, s));
    return action_box.clip(detail::from_centered(action_box, m));
}

// Data-collection step: state from P[s], epsilon-greedy action around the
// current policy mean.
inline JointPoint pg_next(const QuadraticPolicy& policy, const StateDensity& density,
                          const Box& state_box, const Box& action_box, double epsilon, Rng& rng)
{
    Eigen::VectorXd s = density.sample(rng);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    if (unif(rng) < epsilon) return JointPoint(s, action_box.sample(rng));
    Eigen::VectorXd mean = pg_action(policy, s, state_box, action_box);
    std::normal_distribution<double> normal(0.0, policy.action_sd);
    Eigen::VectorXd a = mean;
    for (int d = 0; d < a.size(); ++d)
        a[d] += normal(rng) * (action_box.hi[d] - action_box.lo[d]);
    return JointPoint(s, action_box.clip(a));
}

} // namespace conbo
