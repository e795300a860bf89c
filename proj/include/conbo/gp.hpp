#pragma once

#include <conbo/kernel.hpp>
#include <conbo/math.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <sstream>
#include <vector>

namespace conbo {

// Training data: joint inputs X~^n and observed rewards Y^n.
struct Dataset {
    std::vector<JointPoint> points;
    Eigen::VectorXd y;

    Dataset() : y(0) {}

    int size() const { return static_cast<int>(points.size()); }

    void add(JointPoint p, double value)
    {
        points.push_back(std::move(p));
        y.conservativeResize(y.size() + 1);
        y[y.size() - 1] = value;
    }

    void validate(int d_s, int d_x) const
    {
        if (static_cast<int>(points.size()) != y.size())
            throw UsageError("Dataset: inputs and outputs must have equal length");
        for (const auto& p : points)
            if (p.state.size() != d_s || p.action.size() != d_x)
                throw UsageError("Dataset: point dimension mismatch");
        if (y.size() > 0 && !y.allFinite())
            throw UsageError("Dataset: outputs must be finite");
    }

    Eigen::MatrixXd joint_matrix(int d_s, int d_x) const
    {
        Eigen::MatrixXd J(points.size(), d_s + d_x);
        for (size_t i = 0; i < points.size(); ++i)
            J.row(i) = points[i].joint().transpose();
        return J;
    }
};

// Per-candidate precomputation for the one-step lookahead.
//
// kvec  = -K^{-1} k0(X~^n, c)                       (length n)
// denom = sqrt(k^n(c, c) + sigma_eps^2)             (> 0)
//
// The sampled future posterior mean is mu^{n+1}(q) = mu^n(q) + sigma_tilde(q; c) Z
// with sigma_tilde(q; c) = k0(q, [X~^n; c]) . [kvec; 1] / denom, an O(n) query.
struct LookaheadContext {
    JointPoint candidate;
    Eigen::VectorXd kvec;
    double denom = 0.0;
    Eigen::MatrixXd joint_plus; // [X~^n; c], cached for batched queries
};

// Gaussian-process posterior over the joint state-action space.
//
// Immutable once constructed; all predictions are O(n) per query against the
// cached Cholesky factor of K = k0(X~^n, X~^n) + sigma_eps^2 I and the weight
// vector Ytilde = K^{-1} (Y - mu0).
class GpPosterior {
public:
    GpPosterior(Dataset data, KernelSpec spec) : spec_(std::move(spec)), data_(std::move(data))
    {
        spec_.validate();
        data_.validate(spec_.d_s, spec_.d_x);
        joint_ = data_.joint_matrix(spec_.d_s, spec_.d_x);
        const int n = data_.size();
        scaled_actions_ =
            joint_.rightCols(spec_.d_x).array().rowwise() /
            spec_.action_lengthscales.transpose().array();
        if (spec_.family == KernelFamily::FactorizedMatern && spec_.d_s > 0)
            scaled_states_ = joint_.leftCols(spec_.d_s).array().rowwise() /
                             spec_.state_lengthscales.transpose().array();
        else
            scaled_states_ = joint_.leftCols(spec_.d_s);
        weights_.resize(n);
        if (n == 0) { jitter_ = 0.0; return; }

        Eigen::MatrixXd K = kernel_gram(spec_, joint_, joint_);
        K.diagonal().array() += spec_.noise_variance;

        // Jitter escalation 1e-10 -> 1e-6 (x10 steps) relative to the mean
        // diagonal before declaring the system non-positive-definite.
        const double scale = K.diagonal().mean();
        double jitter = 0.0;
        for (int attempt = 0;; ++attempt) {
            Eigen::MatrixXd Kj = K;
            Kj.diagonal().array() += jitter;
            llt_.compute(Kj);
            if (llt_.info() == Eigen::Success) break;
            if (attempt >= 5) {
                std::ostringstream msg;
                msg << "fit_posterior: covariance not positive definite after jitter "
                    << jitter << " (n=" << n << ", mean diag=" << scale << ")";
                throw ModelError(msg.str());
            }
            jitter = (attempt == 0 ? 1e-10 : jitter * 10.0) * scale;
        }
        jitter_ = jitter;
        weights_ = llt_.solve((data_.y.array() - spec_.prior_mean).matrix());
    }

    const KernelSpec& spec() const { return spec_; }
    const Dataset& data() const { return data_; }
    const Eigen::MatrixXd& joint_inputs() const { return joint_; }
    // state block scaled by lengthscales (FactorizedMatern) or raw (TrendPlusOffset)
    const Eigen::MatrixXd& scaled_states() const { return scaled_states_; }
    const Eigen::MatrixXd& scaled_actions() const { return scaled_actions_; }
    int size() const { return data_.size(); }
    double jitter() const { return jitter_; }

    // ------------------------------ prediction ------------------------------

    // mu^n(q) = mu0 + k0(q, X~^n) . Ytilde
    double mean(const JointPoint& q) const { return mean_joint(q.joint()); }

    double mean_joint(const Eigen::VectorXd& q) const
    {
        if (size() == 0) {
            check_query(q);
            return spec_.prior_mean;
        }
        return spec_.prior_mean + kernel_vec(spec_, q, joint_).dot(weights_);
    }

    // Batched posterior mean over joint rows Q.
    Eigen::VectorXd mean_batch(const Eigen::MatrixXd& Q) const
    {
        if (size() == 0)
            return Eigen::VectorXd::Constant(Q.rows(), spec_.prior_mean);
        return (kernel_gram(spec_, Q, joint_) * weights_).array() + spec_.prior_mean;
    }

    // Posterior mean and its gradient with respect to the joint query.
    double mean_grad(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const
    {
        if (size() == 0) {
            check_query(q);
            grad = Eigen::VectorXd::Zero(spec_.joint_dim());
            return spec_.prior_mean;
        }
        Eigen::VectorXd kv;
        Eigen::MatrixXd dk;
        kernel_vec_grad(spec_, q, joint_, kv, &dk);
        grad = dk.transpose() * weights_;
        return spec_.prior_mean + kv.dot(weights_);
    }

    // k^n(a, b) = k0(a, b) - k0(a, X~^n) K^{-1} k0(X~^n, b).
    // Tiny negative self-variances from round-off are clamped to zero.
    double cov(const JointPoint& a, const JointPoint& b) const
    {
        Eigen::VectorXd av = a.joint(), bv = b.joint();
        double prior = kernel_eval(spec_, a, b);
        double value = prior;
        if (size() > 0) {
            Eigen::VectorXd ka = kernel_vec(spec_, av, joint_);
            Eigen::VectorXd kb = (av - bv).norm() == 0.0 ? ka : kernel_vec(spec_, bv, joint_);
            value = prior - ka.dot(llt_.solve(kb));
        }
        if ((av - bv).norm() == 0.0 && value < 0.0) {
            if (value < -1e-12 * std::max(1.0, spec_.prior_variance()))
                throw ModelError("posterior_cov: negative variance beyond round-off");
            value = 0.0;
        }
        return value;
    }

    double variance(const JointPoint& q) const { return cov(q, q); }

    // Posterior mean, variance, and their gradients at q in one pass.
    void mean_var_grad(const Eigen::VectorXd& q, double& m, double& v, Eigen::VectorXd& dm,
                       Eigen::VectorXd& dv) const
    {
        const int D = spec_.joint_dim();
        if (size() == 0) {
            check_query(q);
            m = spec_.prior_mean;
            v = spec_.prior_variance();
            dm = Eigen::VectorXd::Zero(D);
            dv = Eigen::VectorXd::Zero(D);
            return;
        }
        Eigen::VectorXd kv;
        Eigen::MatrixXd dk;
        kernel_vec_grad(spec_, q, joint_, kv, &dk);
        Eigen::VectorXd u = llt_.solve(kv);
        m = spec_.prior_mean + kv.dot(weights_);
        v = spec_.prior_variance() - kv.dot(u);
        if (v < 0.0) v = 0.0;
        dm = dk.transpose() * weights_;
        dv = -2.0 * (dk.transpose() * u); // prior self-variance is constant
    }

    // ------------------------------ lookahead ------------------------------

    // O(n^2) per-candidate context; throws DegenerateCandidate when the
    // candidate is fully observed and noiseless (denom^2 < 1e-12).
    LookaheadContext lookahead(const JointPoint& candidate) const
    {
        LookaheadContext ctx;
        ctx.candidate = candidate;
        Eigen::VectorXd c = candidate.joint();
        check_query(c);
        const int n = size();
        double kn_cc;
        if (n == 0) {
            ctx.kvec.resize(0);
            kn_cc = spec_.prior_variance();
            ctx.joint_plus = c.transpose();
        } else {
            Eigen::VectorXd kc = kernel_vec(spec_, c, joint_);
            ctx.kvec = -llt_.solve(kc);
            kn_cc = spec_.prior_variance() + kc.dot(ctx.kvec);
            if (kn_cc < 0.0) kn_cc = 0.0;
            ctx.joint_plus.resize(n + 1, spec_.joint_dim());
            ctx.joint_plus.topRows(n) = joint_;
            ctx.joint_plus.row(n) = c.transpose();
        }
        double d2 = kn_cc + spec_.noise_variance;
        if (d2 < 1e-12)
            throw DegenerateCandidate("make_lookahead: candidate carries no observable information");
        ctx.denom = std::sqrt(d2);
        return ctx;
    }

    // sigma_tilde(q; c) = k^n(q, c) / denom.
    double sigma_tilde(const LookaheadContext& ctx, const JointPoint& q) const
    {
        return sigma_tilde_joint(ctx, q.joint());
    }

    double sigma_tilde_joint(const LookaheadContext& ctx, const Eigen::VectorXd& q) const
    {
        Eigen::VectorXd kv = kernel_vec(spec_, q, ctx.joint_plus);
        double num = kv[size()];
        if (size() > 0) num += kv.head(size()).dot(ctx.kvec);
        return num / ctx.denom;
    }

    // mu^{n+1}(q) for the future sampled at z-score z.
    double lookahead_mean(const LookaheadContext& ctx, double z, const JointPoint& q) const
    {
        return mean(q) + sigma_tilde(ctx, q) * z;
    }

    // Batched mu^n and sigma_tilde over joint rows Q, sharing one Gram block.
    void predict_lookahead(const LookaheadContext& ctx, const Eigen::MatrixXd& Q,
                           Eigen::VectorXd& mu, Eigen::VectorXd& st) const
    {
        const int n = size();
        Eigen::MatrixXd G = kernel_gram(spec_, Q, ctx.joint_plus);
        if (n == 0)
            mu = Eigen::VectorXd::Constant(Q.rows(), spec_.prior_mean);
        else
            mu = (G.leftCols(n) * weights_).array() + spec_.prior_mean;
        st = G.col(n);
        if (n > 0) st += G.leftCols(n) * ctx.kvec;
        st /= ctx.denom;
    }

    // Lookahead mean and gradient with respect to the joint query q.
    double lookahead_mean_grad(const LookaheadContext& ctx, double z, const Eigen::VectorXd& q,
                               Eigen::VectorXd& grad) const
    {
        const int n = size();
        Eigen::VectorXd kv;
        Eigen::MatrixXd dk;
        kernel_vec_grad(spec_, q, ctx.joint_plus, kv, &dk);
        double mu = spec_.prior_mean;
        double num = kv[n];
        grad = dk.row(n).transpose();
        if (n > 0) {
            mu += kv.head(n).dot(weights_);
            num += kv.head(n).dot(ctx.kvec);
            grad += dk.topRows(n).transpose() * ctx.kvec;
        }
        grad = (z / ctx.denom) * grad;
        if (n > 0) grad += dk.topRows(n).transpose() * weights_;
        return mu + (num / ctx.denom) * z;
    }

    // sigma_tilde and its gradient with respect to the *candidate* location c,
    // holding the query fixed. Needed for acquisition gradients:
    //
    //  d st / d c = [ d k0(q,c)/dc - G^T u_q ] / denom - st * (G^T kvec) / denom^2
    //
    // where G = d k0(X~, c)/dc and u_q = K^{-1} k0(X~, q).
    struct CandidateGradCache {
        Eigen::MatrixXd G;           // n x D
        Eigen::VectorXd ddenom;      // D
    };

    CandidateGradCache candidate_grad_cache(const LookaheadContext& ctx) const
    {
        CandidateGradCache cache;
        const int n = size();
        Eigen::VectorXd c = ctx.candidate.joint();
        if (n == 0) {
            cache.G.resize(0, spec_.joint_dim());
            cache.ddenom = Eigen::VectorXd::Zero(spec_.joint_dim());
            return cache;
        }
        Eigen::VectorXd kc;
        kernel_vec_grad(spec_, c, joint_, kc, &cache.G);
        // d denom / d c = (G^T kvec) / denom since d k^n(c,c)/dc = 2 G^T kvec.
        cache.ddenom = (cache.G.transpose() * ctx.kvec) / ctx.denom;
        return cache;
    }

    double sigma_tilde_candidate_grad(const LookaheadContext& ctx,
                                      const CandidateGradCache& cache,
                                      const Eigen::VectorXd& q, Eigen::VectorXd& grad) const
    {
        Eigen::VectorXd st;
        Eigen::MatrixXd dst;
        sigma_tilde_candidate_grad_batch(ctx, cache, q.transpose(), st, dst);
        grad = dst.row(0).transpose();
        return st[0];
    }

    // Batched form over query rows Q: st (m) and dst (m x D), the gradients of
    // sigma_tilde(q_i; c) with respect to the candidate c.
    void sigma_tilde_candidate_grad_batch(const LookaheadContext& ctx,
                                          const CandidateGradCache& cache,
                                          const Eigen::MatrixXd& Q, Eigen::VectorXd& st,
                                          Eigen::MatrixXd& dst) const
    {
        const int n = size();
        Eigen::VectorXd c = ctx.candidate.joint();
        Eigen::VectorXd kqc;
        Eigen::MatrixXd dkqc;
        kernel_vec_grad(spec_, c, Q, kqc, &dkqc); // k0(c, q_i), grads wrt c
        Eigen::VectorXd num = kqc;
        Eigen::MatrixXd dnum = dkqc;
        if (n > 0) {
            Eigen::MatrixXd KQX = kernel_gram(spec_, Q, joint_); // m x n
            num += KQX * ctx.kvec;
            dnum -= llt_.solve(KQX.transpose()).transpose() * cache.G;
        }
        st = num / ctx.denom;
        dst = dnum / ctx.denom - (st / ctx.denom) * cache.ddenom.transpose();
    }

    // Relative factorization residual ||L L^T - K|| / ||K||; diagnostic only.
    double factor_residual() const
    {
        const int n = size();
        if (n == 0) return 0.0;
        Eigen::MatrixXd K = kernel_gram(spec_, joint_, joint_);
        K.diagonal().array() += spec_.noise_variance + jitter_;
        Eigen::MatrixXd L = llt_.matrixL();
        return (L * L.transpose() - K).norm() / K.norm();
    }

    Eigen::VectorXd weights() const { return weights_; }
    const Eigen::LLT<Eigen::MatrixXd>& factor() const { return llt_; }

private:
    void check_query(const Eigen::VectorXd& q) const
    {
        if (q.size() != spec_.joint_dim()) throw UsageError("GpPosterior: query dimension mismatch");
    }

    KernelSpec spec_;
    Dataset data_;
    Eigen::MatrixXd joint_;
    Eigen::MatrixXd scaled_states_, scaled_actions_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    Eigen::VectorXd weights_;
    double jitter_ = 0.0;
};

// Free-function views matching the operation vocabulary used elsewhere.
inline GpPosterior fit_posterior(Dataset data, KernelSpec spec)
{
    return GpPosterior(std::move(data), std::move(spec));
}

inline double posterior_mean(const GpPosterior& post, const JointPoint& q) { return post.mean(q); }

inline double posterior_cov(const GpPosterior& post, const JointPoint& a, const JointPoint& b)
{
    return post.cov(a, b);
}

inline LookaheadContext make_lookahead(const GpPosterior& post, const JointPoint& candidate)
{
    return post.lookahead(candidate);
}

inline double sigma_tilde(const GpPosterior& post, const LookaheadContext& ctx,
                          const JointPoint& q)
{
    return post.sigma_tilde(ctx, q);
}

inline double lookahead_mean(const GpPosterior& post, const LookaheadContext& ctx, double z,
                             const JointPoint& q)
{
    return post.lookahead_mean(ctx, z, q);
}

} // namespace conbo
