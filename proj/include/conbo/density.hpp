#pragma once

#include <conbo/math.hpp>

#include <Eigen/Dense>

namespace conbo {

enum class DensityKind { Uniform, Triangular, TruncatedGaussian, Finite };

// State distribution P[s]: the weighting of states in the total-reward
// objective. Triangular is the peak-at-upper-bound kind used by the
// synthetic benchmarks; Finite replaces Monte-Carlo integration by exact
// summation.
struct StateDensity {
    DensityKind kind = DensityKind::Uniform;
    Box bounds;
    Eigen::VectorXd center, sd; // truncated Gaussian
    Eigen::MatrixXd states;     // finite support, rows
    Eigen::VectorXd probs;

    static StateDensity uniform(Box b)
    {
        StateDensity d;
        d.kind = DensityKind::Uniform;
        d.bounds = std::move(b);
        return d;
    }

    static StateDensity triangular(Box b)
    {
        StateDensity d;
        d.kind = DensityKind::Triangular;
        d.bounds = std::move(b);
        return d;
    }

    static StateDensity truncated_gaussian(Box b, Eigen::VectorXd center, Eigen::VectorXd sd)
    {
        if (center.size() != b.dim() || sd.size() != b.dim() || (sd.array() <= 0.0).any())
            throw UsageError("StateDensity: bad truncated-gaussian parameters");
        StateDensity d;
        d.kind = DensityKind::TruncatedGaussian;
        d.bounds = std::move(b);
        d.center = std::move(center);
        d.sd = std::move(sd);
        return d;
    }

    static StateDensity finite(Eigen::MatrixXd states, Eigen::VectorXd probs)
    {
        if (states.rows() != probs.size() || states.rows() < 1)
            throw UsageError("StateDensity: finite support size mismatch");
        if ((probs.array() < 0.0).any()) throw UsageError("StateDensity: negative probability");
        double total = probs.sum();
        if (!(total > 0.0)) throw UsageError("StateDensity: zero total probability");
        StateDensity d;
        d.kind = DensityKind::Finite;
        Eigen::VectorXd lo = states.colwise().minCoeff();
        Eigen::VectorXd hi = states.colwise().maxCoeff();
        d.bounds = Box(lo, hi);
        d.states = std::move(states);
        d.probs = probs / total;
        return d;
    }

    bool is_finite() const { return kind == DensityKind::Finite; }
    int dim() const { return kind == DensityKind::Finite ? static_cast<int>(states.cols()) : bounds.dim(); }

    double pdf(const Eigen::VectorXd& s) const
    {
        switch (kind) {
        case DensityKind::Uniform: {
            if (!bounds.contains(s, 0.0)) return 0.0;
            return 1.0 / bounds.width().prod();
        }
        case DensityKind::Triangular: {
            if (!bounds.contains(s, 0.0)) return 0.0;
            double p = 1.0;
            for (int d = 0; d < bounds.dim(); ++d) {
                double w = bounds.hi[d] - bounds.lo[d];
                p *= 2.0 * (s[d] - bounds.lo[d]) / (w * w);
            }
            return p;
        }
        case DensityKind::TruncatedGaussian: {
            if (!bounds.contains(s, 0.0)) return 0.0;
            double p = 1.0;
            for (int d = 0; d < bounds.dim(); ++d) {
                double a = (bounds.lo[d] - center[d]) / sd[d];
                double b = (bounds.hi[d] - center[d]) / sd[d];
                double z = norm_cdf(b) - norm_cdf(a);
                p *= norm_pdf((s[d] - center[d]) / sd[d]) / (sd[d] * z);
            }
            return p;
        }
        case DensityKind::Finite: {
            for (Eigen::Index i = 0; i < states.rows(); ++i)
                if ((states.row(i).transpose() - s).lpNorm<Eigen::Infinity>() <= 1e-9)
                    return probs[i];
            return 0.0;
        }
        }
        return 0.0;
    }

    Eigen::VectorXd sample(Rng& rng) const
    {
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        switch (kind) {
        case DensityKind::Uniform:
            return bounds.sample(rng);
        case DensityKind::Triangular: {
            Eigen::VectorXd s(bounds.dim());
            for (int d = 0; d < bounds.dim(); ++d)
                s[d] = bounds.lo[d] + (bounds.hi[d] - bounds.lo[d]) * std::sqrt(unif(rng));
            return s;
        }
        case DensityKind::TruncatedGaussian: {
            Eigen::VectorXd s(bounds.dim());
            for (int d = 0; d < bounds.dim(); ++d) s[d] = trunc_gauss_quantile(d, unif(rng));
            return s;
        }
        case DensityKind::Finite: {
            double u = unif(rng), acc = 0.0;
            for (Eigen::Index i = 0; i < probs.size(); ++i) {
                acc += probs[i];
                if (u <= acc) return states.row(i).transpose();
            }
            return states.row(states.rows() - 1).transpose();
        }
        }
        throw ModelError("StateDensity: unreachable");
    }

    // Per-dimension quantile at probability level q.
    double dim_quantile(int d, double q) const
    {
        switch (kind) {
        case DensityKind::Uniform:
            return bounds.lo[d] + q * (bounds.hi[d] - bounds.lo[d]);
        case DensityKind::Triangular:
            return bounds.lo[d] + std::sqrt(q) * (bounds.hi[d] - bounds.lo[d]);
        case DensityKind::TruncatedGaussian:
            return trunc_gauss_quantile(d, q);
        default:
            throw UsageError("dim_quantile: not defined for finite densities");
        }
    }

    // Test grid: mid-quantiles (2j-1)/(2m) per dimension, tensor product.
    // Finite densities return their support directly.
    Eigen::MatrixXd quantile_grid(int per_dim) const
    {
        if (kind == DensityKind::Finite) return states;
        const int d = bounds.dim();
        int total = 1;
        for (int k = 0; k < d; ++k) total *= per_dim;
        Eigen::MatrixXd grid(total, d);
        for (int i = 0; i < total; ++i) {
            int idx = i;
            for (int k = 0; k < d; ++k) {
                int j = idx % per_dim;
                idx /= per_dim;
                grid(i, k) = dim_quantile(k, (2.0 * j + 1.0) / (2.0 * per_dim));
            }
        }
        return grid;
    }

private:
    double trunc_gauss_quantile(int d, double q) const
    {
        double a = norm_cdf((bounds.lo[d] - center[d]) / sd[d]);
        double b = norm_cdf((bounds.hi[d] - center[d]) / sd[d]);
        double p = a + q * (b - a);
        p = std::min(std::max(p, 1e-15), 1.0 - 1e-15);
        double s = center[d] + sd[d] * norm_ppf(p);
        return std::min(std::max(s, bounds.lo[d]), bounds.hi[d]);
    }
};

} // namespace conbo
