#pragma once

#include <conbo/math.hpp>

#include <Eigen/Dense>

#include <cmath>

namespace conbo {

// A (state, action) coordinate in S x X, the GP's input space.
struct JointPoint {
    Eigen::VectorXd state;
    Eigen::VectorXd action;

    JointPoint() = default;
    JointPoint(Eigen::VectorXd s, Eigen::VectorXd x)
        : state(std::move(s)), action(std::move(x)) {}

    Eigen::VectorXd joint() const
    {
        Eigen::VectorXd j(state.size() + action.size());
        j << state, action;
        return j;
    }
    static JointPoint split(const Eigen::VectorXd& j, int d_s)
    {
        if (d_s < 0 || d_s > j.size()) throw UsageError("JointPoint::split: bad state dim");
        return JointPoint(j.head(d_s), j.tail(j.size() - d_s));
    }
};

enum class KernelFamily { FactorizedMatern, TrendPlusOffset };

// Prior covariance over the joint space.
//
// FactorizedMatern:  k((s,x),(s',x')) = amplitude * M52(s,s'; l_s) * M52(x,x'; l_x)
// TrendPlusOffset:   k((s,x),(s',x')) = amplitude * M52(x,x'; l_x)
//                    + [s == s'] * (state_amplitude * M52(x,x'; l_x) + offset_amplitude)
//
// TrendPlusOffset treats states as labels and is only meaningful when the
// state space is a finite set.
struct KernelSpec {
    KernelFamily family = KernelFamily::FactorizedMatern;
    int d_s = 0;
    int d_x = 0;
    double amplitude = 1.0; // signal variance sigma0^2
    Eigen::VectorXd state_lengthscales;
    Eigen::VectorXd action_lengthscales;
    double state_amplitude = 1.0;  // sigma1^2 (TrendPlusOffset only)
    double offset_amplitude = 1.0; // sigma3^2 (TrendPlusOffset only)
    double noise_variance = 0.0;   // sigma_eps^2
    double prior_mean = 0.0;       // mu0

    static KernelSpec factorized(Eigen::VectorXd l_s, Eigen::VectorXd l_x,
                                 double amplitude = 1.0, double noise = 0.0,
                                 double mean = 0.0)
    {
        KernelSpec k;
        k.family = KernelFamily::FactorizedMatern;
        k.d_s = static_cast<int>(l_s.size());
        k.d_x = static_cast<int>(l_x.size());
        k.state_lengthscales = std::move(l_s);
        k.action_lengthscales = std::move(l_x);
        k.amplitude = amplitude;
        k.noise_variance = noise;
        k.prior_mean = mean;
        k.validate();
        return k;
    }

    static KernelSpec trend_plus_offset(int d_s, Eigen::VectorXd l_x, double trend_amp,
                                        double state_amp, double offset_amp,
                                        double noise = 0.0, double mean = 0.0)
    {
        KernelSpec k;
        k.family = KernelFamily::TrendPlusOffset;
        k.d_s = d_s;
        k.d_x = static_cast<int>(l_x.size());
        k.action_lengthscales = std::move(l_x);
        k.amplitude = trend_amp;
        k.state_amplitude = state_amp;
        k.offset_amplitude = offset_amp;
        k.noise_variance = noise;
        k.prior_mean = mean;
        k.validate();
        return k;
    }

    int joint_dim() const { return d_s + d_x; }

    void validate() const
    {
        if (d_s < 0 || d_x < 1) throw UsageError("KernelSpec: bad dimensions");
        if (!(amplitude > 0.0)) throw UsageError("KernelSpec: amplitude must be > 0");
        if (!(noise_variance >= 0.0)) throw UsageError("KernelSpec: negative noise variance");
        if (family == KernelFamily::FactorizedMatern) {
            if (state_lengthscales.size() != d_s || action_lengthscales.size() != d_x)
                throw UsageError("KernelSpec: lengthscale size mismatch");
            if (d_s > 0 && (state_lengthscales.array() <= 0.0).any())
                throw UsageError("KernelSpec: state lengthscales must be > 0");
        } else {
            if (!(state_amplitude > 0.0) || !(offset_amplitude > 0.0))
                throw UsageError("KernelSpec: amplitudes must be > 0");
            if (action_lengthscales.size() != d_x)
                throw UsageError("KernelSpec: lengthscale size mismatch");
        }
        if ((action_lengthscales.array() <= 0.0).any())
            throw UsageError("KernelSpec: action lengthscales must be > 0");
    }

    // Prior variance k0(p, p); stationary in both families.
    double prior_variance() const
    {
        return family == KernelFamily::FactorizedMatern
                   ? amplitude
                   : amplitude + state_amplitude + offset_amplitude;
    }
};

namespace detail {

constexpr double kSqrt5 = 2.23606797749978969640917366873;

// Matern 5/2 on scaled distance r: (1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r).
inline double matern52(double r)
{
    double z = kSqrt5 * r;
    return (1.0 + z + z * z / 3.0) * std::exp(-z);
}

// dM/dr = -(5/3) r (1 + sqrt5 r) exp(-sqrt5 r); the factor
// weight(r) = (5/3)(1 + sqrt5 r) exp(-sqrt5 r) satisfies
// dM/da_i = -weight(r) (a_i - b_i) / l_i^2, smooth through r = 0.
inline double matern52_weight(double r)
{
    double z = kSqrt5 * r;
    return (5.0 / 3.0) * (1.0 + z) * std::exp(-z);
}

// Scaled squared distances between row blocks: out(i,j) = sum_d ((A(i,d)-B(j,d))/l_d)^2.
inline Eigen::MatrixXd scaled_sqdist(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                     const Eigen::VectorXd& l)
{
    Eigen::MatrixXd As = A.array().rowwise() / l.transpose().array();
    Eigen::MatrixXd Bs = B.array().rowwise() / l.transpose().array();
    Eigen::VectorXd an = As.rowwise().squaredNorm();
    Eigen::VectorXd bn = Bs.rowwise().squaredNorm();
    Eigen::MatrixXd D = (-2.0 * As * Bs.transpose());
    D.colwise() += an;
    D.rowwise() += bn.transpose();
    return D.cwiseMax(0.0);
}

inline Eigen::ArrayXXd matern52_from_sqdist(const Eigen::MatrixXd& D)
{
    Eigen::ArrayXXd r = D.array().sqrt();
    Eigen::ArrayXXd z = kSqrt5 * r;
    return (1.0 + z + z.square() / 3.0) * (-z).exp();
}

// State-equality indicator matrix for the TrendPlusOffset kernel.
inline Eigen::ArrayXXd state_match(const Eigen::MatrixXd& Sa, const Eigen::MatrixXd& Sb,
                                   double tol = 1e-9)
{
    Eigen::ArrayXXd out(Sa.rows(), Sb.rows());
    for (Eigen::Index i = 0; i < Sa.rows(); ++i)
        for (Eigen::Index j = 0; j < Sb.rows(); ++j)
            out(i, j) = ((Sa.row(i) - Sb.row(j)).lpNorm<Eigen::Infinity>() <= tol) ? 1.0 : 0.0;
    return out;
}

} // namespace detail

// Gram matrix of the prior kernel between two point sets given as joint rows.
inline Eigen::MatrixXd kernel_gram(const KernelSpec& k, const Eigen::MatrixXd& A,
                                   const Eigen::MatrixXd& B)
{
    if (A.cols() != k.joint_dim() || B.cols() != k.joint_dim())
        throw UsageError("kernel_gram: dimension mismatch");
    const Eigen::MatrixXd Ax = A.rightCols(k.d_x);
    const Eigen::MatrixXd Bx = B.rightCols(k.d_x);
    Eigen::ArrayXXd Mx =
        detail::matern52_from_sqdist(detail::scaled_sqdist(Ax, Bx, k.action_lengthscales));
    if (k.family == KernelFamily::FactorizedMatern) {
        if (k.d_s == 0) return (k.amplitude * Mx).matrix();
        Eigen::ArrayXXd Ms = detail::matern52_from_sqdist(
            detail::scaled_sqdist(A.leftCols(k.d_s), B.leftCols(k.d_s), k.state_lengthscales));
        return (k.amplitude * Ms * Mx).matrix();
    }
    Eigen::ArrayXXd delta = detail::state_match(A.leftCols(k.d_s), B.leftCols(k.d_s));
    return (k.amplitude * Mx + delta * (k.state_amplitude * Mx + k.offset_amplitude)).matrix();
}

// Prior covariance k0(a, b); symmetric in its arguments.
inline double kernel_eval(const KernelSpec& k, const JointPoint& a, const JointPoint& b)
{
    if (a.state.size() != k.d_s || b.state.size() != k.d_s || a.action.size() != k.d_x ||
        b.action.size() != k.d_x)
        throw UsageError("kernel_eval: dimension mismatch");
    double rx = 0.0;
    for (int i = 0; i < k.d_x; ++i) {
        double d = (a.action[i] - b.action[i]) / k.action_lengthscales[i];
        rx += d * d;
    }
    double mx = detail::matern52(std::sqrt(rx));
    if (k.family == KernelFamily::FactorizedMatern) {
        double rs = 0.0;
        for (int i = 0; i < k.d_s; ++i) {
            double d = (a.state[i] - b.state[i]) / k.state_lengthscales[i];
            rs += d * d;
        }
        return k.amplitude * detail::matern52(std::sqrt(rs)) * mx;
    }
    bool same = (a.state - b.state).lpNorm<Eigen::Infinity>() <= 1e-9;
    return k.amplitude * mx + (same ? k.state_amplitude * mx + k.offset_amplitude : 0.0);
}

// Kernel row k0(q, B) together with its gradient with respect to q.
// kvec is length m; grad is m x (d_s + d_x) with grad(i, d) = d k0(q, B_i) / d q_d.
// For TrendPlusOffset the state coordinates are labels, so state-gradient
// entries are zero.
inline void kernel_vec_grad(const KernelSpec& k, const Eigen::VectorXd& q,
                            const Eigen::MatrixXd& B, Eigen::VectorXd& kvec,
                            Eigen::MatrixXd* grad)
{
    const Eigen::Index m = B.rows();
    if (q.size() != k.joint_dim() || B.cols() != k.joint_dim())
        throw UsageError("kernel_vec_grad: dimension mismatch");
    const int ds = k.d_s, dx = k.d_x;

    Eigen::MatrixXd dx_mat = B.rightCols(dx).rowwise() - q.tail(dx).transpose(); // b - q
    Eigen::ArrayXXd dx_scaled =
        dx_mat.array().rowwise() / k.action_lengthscales.transpose().array();
    Eigen::ArrayXd rx = dx_scaled.square().rowwise().sum().sqrt();
    Eigen::ArrayXd zx = detail::kSqrt5 * rx;
    Eigen::ArrayXd ex = (-zx).exp();
    Eigen::ArrayXd mx = (1.0 + zx + zx.square() / 3.0) * ex;
    Eigen::ArrayXd wx = (5.0 / 3.0) * (1.0 + zx) * ex;

    if (k.family == KernelFamily::FactorizedMatern) {
        Eigen::ArrayXd ms = Eigen::ArrayXd::Ones(m), ws = Eigen::ArrayXd::Zero(m);
        Eigen::MatrixXd ds_mat;
        if (ds > 0) {
            ds_mat = B.leftCols(ds).rowwise() - q.head(ds).transpose();
            Eigen::ArrayXXd ds_scaled =
                ds_mat.array().rowwise() / k.state_lengthscales.transpose().array();
            Eigen::ArrayXd rs = ds_scaled.square().rowwise().sum().sqrt();
            Eigen::ArrayXd zs = detail::kSqrt5 * rs;
            Eigen::ArrayXd es = (-zs).exp();
            ms = (1.0 + zs + zs.square() / 3.0) * es;
            ws = (5.0 / 3.0) * (1.0 + zs) * es;
        }
        kvec = (k.amplitude * ms * mx).matrix();
        if (grad) {
            grad->resize(m, ds + dx);
            // d k / d q_d = amplitude * mx * weight_s * (b_d - q_d) / l_d^2  (state dims)
            for (int d = 0; d < ds; ++d)
                grad->col(d) = (k.amplitude * mx * ws * ds_mat.col(d).array() /
                                (k.state_lengthscales[d] * k.state_lengthscales[d]))
                                   .matrix();
            for (int d = 0; d < dx; ++d)
                grad->col(ds + d) = (k.amplitude * ms * wx * dx_mat.col(d).array() /
                                     (k.action_lengthscales[d] * k.action_lengthscales[d]))
                                        .matrix();
        }
        return;
    }

    Eigen::ArrayXd delta(m);
    for (Eigen::Index i = 0; i < m; ++i)
        delta[i] = ((B.row(i).head(ds).transpose() - q.head(ds)).lpNorm<Eigen::Infinity>() <= 1e-9)
                       ? 1.0
                       : 0.0;
    kvec = (k.amplitude * mx + delta * (k.state_amplitude * mx + k.offset_amplitude)).matrix();
    if (grad) {
        grad->setZero(m, ds + dx);
        Eigen::ArrayXd amp = k.amplitude + delta * k.state_amplitude;
        for (int d = 0; d < dx; ++d)
            grad->col(ds + d) = (amp * wx * dx_mat.col(d).array() /
                                 (k.action_lengthscales[d] * k.action_lengthscales[d]))
                                    .matrix();
    }
}

inline Eigen::VectorXd kernel_vec(const KernelSpec& k, const Eigen::VectorXd& q,
                                  const Eigen::MatrixXd& B)
{
    Eigen::VectorXd kv;
    kernel_vec_grad(k, q, B, kv, nullptr);
    return kv;
}

} // namespace conbo
