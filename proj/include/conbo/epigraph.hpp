#pragma once

#include <conbo/math.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

namespace conbo {

// A set of lines mu_i + sigma_i z in the scalar z; the piecewise-linear
// family of future posterior-mean peaks.
struct LinearEnsemble {
    Eigen::VectorXd mu;
    Eigen::VectorXd sigma;

    void validate() const
    {
        if (mu.size() != sigma.size()) throw UsageError("LinearEnsemble: length mismatch");
        if (mu.size() < 1) throw UsageError("LinearEnsemble: needs at least one line");
        if (!mu.allFinite() || !sigma.allFinite())
            throw UsageError("LinearEnsemble: entries must be finite");
    }
};

namespace detail {

struct EpigraphSweep {
    std::vector<int> index;   // lines on the upper envelope, slope-increasing
    std::vector<double> cuts; // interior intersection z-scores (size index.size()-1)
    int argmax_mu = 0;        // over the full ensemble
};

// Upper-envelope sweep over lines sorted by slope. Equal slopes are
// deduplicated keeping the larger intercept; equal intersection z-scores are
// resolved by strict '<' when popping.
inline EpigraphSweep epigraph_sweep(const LinearEnsemble& ens)
{
    const int m = static_cast<int>(ens.mu.size());
    std::vector<int> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (ens.sigma[a] != ens.sigma[b]) return ens.sigma[a] < ens.sigma[b];
        return ens.mu[a] < ens.mu[b];
    });

    // keep one line per slope: the one with the largest intercept
    std::vector<int> lines;
    for (int i = 0; i < m; ++i) {
        int id = order[i];
        if (!lines.empty() && ens.sigma[lines.back()] == ens.sigma[id]) lines.back() = id;
        else lines.push_back(id);
    }

    EpigraphSweep sweep;
    sweep.argmax_mu = 0;
    for (int i = 1; i < m; ++i)
        if (ens.mu[i] > ens.mu[sweep.argmax_mu]) sweep.argmax_mu = i;

    std::vector<int>& I = sweep.index;
    std::vector<double>& Z = sweep.cuts;
    I.push_back(lines[0]);
    for (size_t i = 1; i < lines.size(); ++i) {
        int cur = lines[i];
        for (;;) {
            int j = I.back();
            double z = (ens.mu[cur] - ens.mu[j]) / (ens.sigma[j] - ens.sigma[cur]);
            double last = Z.empty() ? -std::numeric_limits<double>::infinity() : Z.back();
            if (z < last) {
                I.pop_back();
                Z.pop_back();
                continue;
            }
            I.push_back(cur);
            Z.push_back(z);
            break;
        }
    }
    return sweep;
}

} // namespace detail

// E_Z[max_i (mu_i + sigma_i Z)] - max_i mu_i for Z ~ N(0,1), computed exactly
// from the epigraph segments: each segment [z_k, z_{k+1}] held by line i
// contributes mu_i (Phi(z_{k+1}) - Phi(z_k)) - sigma_i (phi(z_{k+1}) - phi(z_k)).
// Nonnegative by Jensen; round-off negatives are clamped to zero.
inline double kg_epigraph(const LinearEnsemble& ens)
{
    ens.validate();
    if (ens.mu.size() == 1) return 0.0;
    auto sweep = detail::epigraph_sweep(ens);
    const size_t segs = sweep.index.size();
    if (segs == 1) return 0.0;
    double acc = 0.0;
    for (size_t k = 0; k < segs; ++k) {
        double zl = k == 0 ? -std::numeric_limits<double>::infinity() : sweep.cuts[k - 1];
        double zr = k + 1 == segs ? std::numeric_limits<double>::infinity() : sweep.cuts[k];
        double B = (std::isinf(zr) ? 1.0 : norm_cdf(zr)) - (std::isinf(zl) ? 0.0 : norm_cdf(zl));
        double A = (std::isinf(zr) ? 0.0 : norm_pdf(zr)) - (std::isinf(zl) ? 0.0 : norm_pdf(zl));
        int i = sweep.index[k];
        acc += B * ens.mu[i] - A * ens.sigma[i];
    }
    acc -= ens.mu[sweep.argmax_mu];
    return acc < 0.0 ? 0.0 : acc;
}

// kg_epigraph together with its gradient with respect to the ensemble
// entries, holding the envelope structure fixed (exact a.e.; the envelope is
// continuous at structure changes).
inline double kg_epigraph_grad(const LinearEnsemble& ens, Eigen::VectorXd& dmu,
                               Eigen::VectorXd& dsigma)
{
    ens.validate();
    const int m = static_cast<int>(ens.mu.size());
    dmu = Eigen::VectorXd::Zero(m);
    dsigma = Eigen::VectorXd::Zero(m);
    if (m == 1) return 0.0;
    auto sweep = detail::epigraph_sweep(ens);
    const size_t segs = sweep.index.size();
    if (segs == 1) return 0.0;
    double acc = 0.0;
    for (size_t k = 0; k < segs; ++k) {
        double zl = k == 0 ? -std::numeric_limits<double>::infinity() : sweep.cuts[k - 1];
        double zr = k + 1 == segs ? std::numeric_limits<double>::infinity() : sweep.cuts[k];
        double B = (std::isinf(zr) ? 1.0 : norm_cdf(zr)) - (std::isinf(zl) ? 0.0 : norm_cdf(zl));
        double A = (std::isinf(zr) ? 0.0 : norm_pdf(zr)) - (std::isinf(zl) ? 0.0 : norm_pdf(zl));
        int i = sweep.index[k];
        acc += B * ens.mu[i] - A * ens.sigma[i];
        dmu[i] += B;
        dsigma[i] -= A;
    }
    acc -= ens.mu[sweep.argmax_mu];
    dmu[sweep.argmax_mu] -= 1.0;
    return acc < 0.0 ? 0.0 : acc;
}

} // namespace conbo
