#pragma once

// Test-side reference implementations, kept independent of the library's
// computation paths: scalar kernel formulas, dense from-scratch posterior
// solves, and Monte-Carlo helpers.

#include <conbo/gp.hpp>
#include <conbo/kernel.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

namespace ref {

inline double matern52(double r)
{
    const double s5 = std::sqrt(5.0);
    return (1.0 + s5 * r + 5.0 * r * r / 3.0) * std::exp(-s5 * r);
}

inline double kernel(const conbo::KernelSpec& k, const Eigen::VectorXd& a,
                     const Eigen::VectorXd& b)
{
    double rx2 = 0.0;
    for (int i = 0; i < k.d_x; ++i) {
        double d = (a[k.d_s + i] - b[k.d_s + i]) / k.action_lengthscales[i];
        rx2 += d * d;
    }
    double mx = matern52(std::sqrt(rx2));
    if (k.family == conbo::KernelFamily::FactorizedMatern) {
        double rs2 = 0.0;
        for (int i = 0; i < k.d_s; ++i) {
            double d = (a[i] - b[i]) / k.state_lengthscales[i];
            rs2 += d * d;
        }
        return k.amplitude * matern52(std::sqrt(rs2)) * mx;
    }
    bool same = true;
    for (int i = 0; i < k.d_s; ++i)
        if (std::abs(a[i] - b[i]) > 1e-9) same = false;
    return k.amplitude * mx + (same ? k.state_amplitude * mx + k.offset_amplitude : 0.0);
}

// From-scratch dense posterior via pivoted LU, no factorization caching.
struct DensePosterior {
    conbo::KernelSpec spec;
    Eigen::MatrixXd J;
    Eigen::VectorXd y;

    Eigen::MatrixXd gram(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) const
    {
        Eigen::MatrixXd G(A.rows(), B.rows());
        for (Eigen::Index i = 0; i < A.rows(); ++i)
            for (Eigen::Index j = 0; j < B.rows(); ++j)
                G(i, j) = kernel(spec, A.row(i).transpose(), B.row(j).transpose());
        return G;
    }

    double mean(const Eigen::VectorXd& q) const
    {
        if (J.rows() == 0) return spec.prior_mean;
        Eigen::MatrixXd K = gram(J, J);
        K.diagonal().array() += spec.noise_variance;
        Eigen::VectorXd rhs = y.array() - spec.prior_mean;
        Eigen::VectorXd w = K.fullPivLu().solve(rhs);
        Eigen::MatrixXd kq = gram(q.transpose(), J);
        return spec.prior_mean + (kq * w)(0);
    }

    double cov(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const
    {
        double prior = kernel(spec, a, b);
        if (J.rows() == 0) return prior;
        Eigen::MatrixXd K = gram(J, J);
        K.diagonal().array() += spec.noise_variance;
        Eigen::MatrixXd ka = gram(a.transpose(), J);
        Eigen::MatrixXd kb = gram(J, b.transpose());
        return prior - (ka * K.fullPivLu().solve(kb))(0);
    }
};

struct McEstimate {
    double mean = 0.0;
    double se = 0.0;
};

template <typename F>
McEstimate mc_estimate(F&& f, long n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    double sum = 0.0, sumsq = 0.0;
    for (long i = 0; i < n; ++i) {
        double v = f(rng);
        sum += v;
        sumsq += v * v;
    }
    McEstimate e;
    e.mean = sum / n;
    double var = (sumsq / n - e.mean * e.mean) * n / (n - 1.0);
    e.se = std::sqrt(std::max(var, 0.0) / n);
    return e;
}

// One-sample Kolmogorov-Smirnov statistic against a CDF.
template <typename Cdf>
double ks_statistic(std::vector<double> xs, Cdf&& cdf)
{
    std::sort(xs.begin(), xs.end());
    double d = 0.0;
    const double n = static_cast<double>(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) {
        double c = cdf(xs[i]);
        d = std::max(d, std::abs((i + 1) / n - c));
        d = std::max(d, std::abs(c - i / n));
    }
    return d;
}

inline conbo::Dataset random_dataset(int n, int d_s, int d_x, std::uint64_t seed,
                                     double y_scale = 1.0)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    conbo::Dataset data;
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd s(d_s), x(d_x);
        for (int k = 0; k < d_s; ++k) s[k] = unif(rng);
        for (int k = 0; k < d_x; ++k) x[k] = unif(rng);
        data.add(conbo::JointPoint(s, x), y_scale * normal(rng));
    }
    return data;
}

} // namespace ref
