#pragma once

#include <conbo/gp.hpp>
#include <conbo/kernel.hpp>
#include <conbo/math.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <vector>

namespace conbo {

// Per-parameter box in log space. Parameter order:
//   FactorizedMatern:  log sigma0^2, log l_s[0..d_s), log l_x[0..d_x), log sigma_eps^2
//   TrendPlusOffset:   log sigma0^2, log sigma1^2, log sigma3^2, log l[0..d_x), log sigma_eps^2
// Amplitude and noise bounds are in standardized-output units; lengthscale
// bounds are in problem units. The constant prior mean is profiled out in
// closed form at every likelihood evaluation.
struct HyperBounds {
    Eigen::VectorXd lo;
    Eigen::VectorXd hi;

    static HyperBounds standard(KernelFamily family, const Box& state_box, const Box& action_box)
    {
        auto length_bounds = [](const Box& b, std::vector<double>& lo, std::vector<double>& hi) {
            for (int i = 0; i < b.dim(); ++i) {
                double w = b.hi[i] - b.lo[i];
                if (w <= 0.0) w = 1.0;
                lo.push_back(std::log(0.05 * w));
                hi.push_back(std::log(2.0 * w));
            }
        };
        std::vector<double> lo, hi;
        lo.push_back(std::log(1e-4));
        hi.push_back(std::log(1e2));
        if (family == KernelFamily::TrendPlusOffset) {
            for (int k = 0; k < 2; ++k) {
                lo.push_back(std::log(1e-4));
                hi.push_back(std::log(1e2));
            }
        } else {
            length_bounds(state_box, lo, hi);
        }
        length_bounds(action_box, lo, hi);
        lo.push_back(std::log(1e-8));
        hi.push_back(std::log(2.0));
        HyperBounds b;
        b.lo = Eigen::Map<Eigen::VectorXd>(lo.data(), lo.size());
        b.hi = Eigen::Map<Eigen::VectorXd>(hi.data(), hi.size());
        return b;
    }
};

struct FitOptions {
    int n_starts = 6;
    int n_iters = 80;
    double step = 0.08;
    std::uint64_t seed = 0;
};

struct FitResult {
    KernelSpec spec;
    double log_ml = -std::numeric_limits<double>::infinity();
    bool fell_back_to_default = false;
};

namespace detail {

struct LogMlWorkspace {
    Eigen::MatrixXd S, X;   // state / action blocks
    Eigen::VectorXd y;      // standardized outputs
    KernelFamily family;
    int d_s, d_x;

    int n_params() const
    {
        return family == KernelFamily::FactorizedMatern ? 2 + d_s + d_x : 4 + d_x;
    }

    KernelSpec to_spec(const Eigen::VectorXd& theta, double mu0) const
    {
        if (family == KernelFamily::FactorizedMatern) {
            KernelSpec k = KernelSpec::factorized(
                theta.segment(1, d_s).array().exp(), theta.segment(1 + d_s, d_x).array().exp(),
                std::exp(theta[0]), std::exp(theta[1 + d_s + d_x]), mu0);
            return k;
        }
        return KernelSpec::trend_plus_offset(d_s, theta.segment(3, d_x).array().exp(),
                                             std::exp(theta[0]), std::exp(theta[1]),
                                             std::exp(theta[2]), std::exp(theta[3 + d_x]), mu0);
    }

    // Log marginal likelihood with profiled constant mean; returns -inf on a
    // failed factorization. grad, when requested, is with respect to the
    // log-transformed parameters.
    double eval(const Eigen::VectorXd& theta, Eigen::VectorXd* grad, double* mu0_out) const
    {
        const int n = static_cast<int>(y.size());
        const KernelSpec spec = to_spec(theta, 0.0);

        Eigen::ArrayXXd Mx, Ws, Wx, Delta;
        Eigen::MatrixXd Ds2, Dx2; // scaled squared distances per factor
        Eigen::ArrayXXd Ms;
        Dx2 = detail::scaled_sqdist(X, X, spec.action_lengthscales);
        {
            Eigen::ArrayXXd rx = Dx2.array().sqrt();
            Eigen::ArrayXXd ex = (-kSqrt5 * rx).exp();
            Mx = (1.0 + kSqrt5 * rx + 5.0 * Dx2.array() / 3.0) * ex;
            Wx = (5.0 / 3.0) * (1.0 + kSqrt5 * rx) * ex;
        }
        Eigen::MatrixXd K;
        if (family == KernelFamily::FactorizedMatern) {
            if (d_s > 0) {
                Ds2 = detail::scaled_sqdist(S, S, spec.state_lengthscales);
                Eigen::ArrayXXd rs = Ds2.array().sqrt();
                Eigen::ArrayXXd es = (-kSqrt5 * rs).exp();
                Ms = (1.0 + kSqrt5 * rs + 5.0 * Ds2.array() / 3.0) * es;
                Ws = (5.0 / 3.0) * (1.0 + kSqrt5 * rs) * es;
            } else {
                Ms = Eigen::ArrayXXd::Ones(n, n);
                Ws = Eigen::ArrayXXd::Zero(n, n);
            }
            K = (spec.amplitude * Ms * Mx).matrix();
        } else {
            Delta = detail::state_match(S, S);
            K = (spec.amplitude * Mx + Delta * (spec.state_amplitude * Mx + spec.offset_amplitude))
                    .matrix();
        }
        K.diagonal().array() += spec.noise_variance + 1e-10;

        Eigen::LLT<Eigen::MatrixXd> llt(K);
        if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();

        Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
        Eigen::VectorXd Kiy = llt.solve(y);
        Eigen::VectorXd Ki1 = llt.solve(ones);
        double mu0 = ones.dot(Kiy) / ones.dot(Ki1);
        if (mu0_out) *mu0_out = mu0;
        Eigen::VectorXd alpha = Kiy - mu0 * Ki1; // K^{-1}(y - mu0)

        double logdet = 0.0;
        for (int i = 0; i < n; ++i) logdet += std::log(llt.matrixL()(i, i));
        double lml = -0.5 * (y.array() - mu0).matrix().dot(alpha) - logdet -
                     0.5 * n * std::log(2.0 * M_PI);

        if (grad) {
            // d lml / d theta_j = 0.5 tr((alpha alpha^T - K^{-1}) dK/dtheta_j)
            Eigen::MatrixXd Kinv = llt.solve(Eigen::MatrixXd::Identity(n, n));
            Eigen::ArrayXXd Q = (alpha * alpha.transpose() - Kinv).array();
            grad->resize(n_params());
            auto trace_with = [&](const Eigen::ArrayXXd& dK) { return 0.5 * (Q * dK).sum(); };

            auto sqdist_dim = [](const Eigen::MatrixXd& P, int d, double l) {
                Eigen::ArrayXXd diff =
                    (P.col(d).replicate(1, P.rows()) - P.col(d).transpose().replicate(P.rows(), 1))
                        .array() /
                    l;
                return (diff * diff).eval();
            };

            if (family == KernelFamily::FactorizedMatern) {
                Eigen::ArrayXXd Ksig = spec.amplitude * Ms * Mx;
                (*grad)[0] = trace_with(Ksig);
                for (int d = 0; d < d_s; ++d)
                    (*grad)[1 + d] = trace_with(spec.amplitude * Mx * Ws *
                                                sqdist_dim(S, d, spec.state_lengthscales[d]));
                for (int d = 0; d < d_x; ++d)
                    (*grad)[1 + d_s + d] = trace_with(
                        spec.amplitude * Ms * Wx * sqdist_dim(X, d, spec.action_lengthscales[d]));
                (*grad)[1 + d_s + d_x] = 0.5 * spec.noise_variance * Q.matrix().trace();
            } else {
                (*grad)[0] = trace_with(spec.amplitude * Mx);
                (*grad)[1] = trace_with(spec.state_amplitude * Delta * Mx);
                (*grad)[2] = trace_with(spec.offset_amplitude * Delta);
                Eigen::ArrayXXd amp = spec.amplitude + spec.state_amplitude * Delta;
                for (int d = 0; d < d_x; ++d)
                    (*grad)[3 + d] =
                        trace_with(amp * Wx * sqdist_dim(X, d, spec.action_lengthscales[d]));
                (*grad)[3 + d_x] = 0.5 * spec.noise_variance * Q.matrix().trace();
            }
        }
        return lml;
    }
};

inline Eigen::VectorXd default_theta(const LogMlWorkspace& ws, const HyperBounds& bounds)
{
    Eigen::VectorXd theta(ws.n_params());
    if (ws.family == KernelFamily::FactorizedMatern) {
        theta[0] = 0.0; // sigma0^2 = 1 in standardized units
        for (int d = 0; d < ws.d_s + ws.d_x; ++d) {
            // 0.3 of the corresponding lengthscale bound range's upper/2 heuristic
            double lo = bounds.lo[1 + d], hi = bounds.hi[1 + d];
            theta[1 + d] = lo + 0.65 * (hi - lo);
        }
        theta[1 + ws.d_s + ws.d_x] = std::log(1e-2);
    } else {
        theta[0] = std::log(0.5);
        theta[1] = std::log(0.5);
        theta[2] = std::log(0.1);
        for (int d = 0; d < ws.d_x; ++d) {
            double lo = bounds.lo[3 + d], hi = bounds.hi[3 + d];
            theta[3 + d] = lo + 0.65 * (hi - lo);
        }
        theta[3 + ws.d_x] = std::log(1e-2);
    }
    return theta.cwiseMax(bounds.lo).cwiseMin(bounds.hi);
}

} // namespace detail

// Maximum-marginal-likelihood kernel fit: multi-start Adam ascent over
// log-transformed parameters, deterministic given the seed. Outputs are
// standardized internally; the returned spec is in problem units.
inline FitResult fit_hyperparameters(const Dataset& data, KernelFamily family, int d_s, int d_x,
                                     const HyperBounds& bounds, const FitOptions& opt = {})
{
    data.validate(d_s, d_x);
    const int n = data.size();
    if (n < 3) throw UsageError("fit_hyperparameters: need at least 3 observations");

    detail::LogMlWorkspace ws;
    ws.family = family;
    ws.d_s = d_s;
    ws.d_x = d_x;
    Eigen::MatrixXd J = data.joint_matrix(d_s, d_x);
    ws.S = J.leftCols(d_s);
    ws.X = J.rightCols(d_x);

    double ym = data.y.mean();
    double ysd = std::sqrt((data.y.array() - ym).square().sum() / std::max(1, n - 1));
    bool degenerate = !(ysd > 1e-12);
    if (degenerate) ysd = 1.0;
    ws.y = (data.y.array() - ym) / ysd;

    if (bounds.lo.size() != ws.n_params() || bounds.hi.size() != ws.n_params())
        throw UsageError("fit_hyperparameters: bounds size mismatch");

    const Eigen::VectorXd theta0 = detail::default_theta(ws, bounds);
    double mu0_def = 0.0;
    const double lml_default = ws.eval(theta0, nullptr, &mu0_def);

    Rng rng(mix_seed(opt.seed, hash_string("hyperfit")));
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    Eigen::VectorXd best_theta = theta0;
    double best_lml = -std::numeric_limits<double>::infinity();

    for (int s = 0; s < opt.n_starts; ++s) {
        Eigen::VectorXd theta(ws.n_params());
        if (s == 0) theta = theta0;
        else
            for (int j = 0; j < theta.size(); ++j)
                theta[j] = bounds.lo[j] + unif(rng) * (bounds.hi[j] - bounds.lo[j]);

        Eigen::VectorXd m = Eigen::VectorXd::Zero(theta.size());
        Eigen::VectorXd v = Eigen::VectorXd::Zero(theta.size());
        double lml = -std::numeric_limits<double>::infinity();
        for (int t = 1; t <= opt.n_iters; ++t) {
            Eigen::VectorXd g;
            lml = ws.eval(theta, &g, nullptr);
            if (!std::isfinite(lml)) break;
            if (lml > best_lml) {
                best_lml = lml;
                best_theta = theta;
            }
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v.array() + 0.001 * g.array().square();
            double bc1 = 1.0 - std::pow(0.9, t), bc2 = 1.0 - std::pow(0.999, t);
            Eigen::VectorXd step =
                opt.step * (m / bc1).array() / ((v / bc2).array().sqrt() + 1e-8);
            theta = (theta + step).cwiseMax(bounds.lo).cwiseMin(bounds.hi);
        }
        if (std::isfinite(lml) && lml > best_lml) {
            best_lml = lml;
            best_theta = theta;
        }
    }

    FitResult res;
    if (!(best_lml > lml_default)) {
        best_theta = theta0;
        best_lml = lml_default;
        res.fell_back_to_default = true;
    }
    double mu0 = 0.0;
    res.log_ml = ws.eval(best_theta, nullptr, &mu0);
    if (degenerate) mu0 = 0.0; // y constant: profiled mean equals it exactly after rescaling

    KernelSpec spec = ws.to_spec(best_theta, 0.0);
    // Undo output standardization: variances scale by ysd^2, mean shifts back.
    spec.amplitude *= ysd * ysd;
    spec.state_amplitude *= ysd * ysd;
    spec.offset_amplitude *= ysd * ysd;
    spec.noise_variance *= ysd * ysd;
    spec.prior_mean = ym + mu0 * ysd;
    res.spec = spec;
    return res;
}

} // namespace conbo
