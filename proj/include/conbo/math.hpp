#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace conbo {

// Usage errors (bad arguments, malformed config) map to CLI exit code 2,
// model/runtime errors to exit code 3.
struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown when a lookahead candidate is fully observed and noiseless; the
// predictive variance of a new sample there is zero and acquisitions are 0.
struct DegenerateCandidate : ModelError {
    using ModelError::ModelError;
};

struct SamplingError : ModelError {
    using ModelError::ModelError;
};

using Rng = std::mt19937_64;

// ------------------------------- seeding -------------------------------

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derive an independent stream seed from a base seed and one or two tags.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag)
{
    return splitmix64(base ^ splitmix64(tag));
}

inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag_a, std::uint64_t tag_b)
{
    return mix_seed(mix_seed(base, tag_a), tag_b);
}

inline std::uint64_t hash_string(const std::string& s)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t hash_vector(const Eigen::VectorXd& v)
{
    std::uint64_t h = 0x9e3779b97f4a7c15ULL;
    for (int i = 0; i < v.size(); ++i) {
        std::uint64_t bits;
        double x = v[i];
        std::memcpy(&bits, &x, sizeof(bits));
        h = splitmix64(h ^ bits);
    }
    return h;
}

// -------------------------- normal distribution --------------------------

inline double norm_pdf(double z)
{
    static const double inv_sqrt_2pi = 0.3989422804014326779;
    return inv_sqrt_2pi * std::exp(-0.5 * z * z);
}

inline double norm_cdf(double z)
{
    return 0.5 * std::erfc(-z * 0.70710678118654752440);
}

// Inverse standard-normal CDF: Acklam's rational approximation polished by
// one Halley step, accurate to ~1e-15 over (0, 1).
inline double norm_ppf(double p)
{
    if (!(p > 0.0 && p < 1.0)) {
        if (p == 0.0) return -std::numeric_limits<double>::infinity();
        if (p == 1.0) return std::numeric_limits<double>::infinity();
        throw UsageError("norm_ppf: p must lie in [0, 1]");
    }
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425;
    double x;
    if (p < plow) {
        double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
        double q = p - 0.5;
        double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // Halley refinement against the erfc-based CDF.
    double e = norm_cdf(x) - p;
    double u = e / norm_pdf(x);
    x = x - u / (1.0 + 0.5 * x * u);
    return x;
}

// ------------------------------- box bounds -------------------------------

// Axis-aligned box; the domain type for states, actions, and joint points.
struct Box {
    Eigen::VectorXd lo;
    Eigen::VectorXd hi;

    Box() = default;
    Box(Eigen::VectorXd lo_, Eigen::VectorXd hi_) : lo(std::move(lo_)), hi(std::move(hi_))
    {
        if (lo.size() != hi.size()) throw UsageError("Box: bound size mismatch");
        for (int i = 0; i < lo.size(); ++i)
            if (!(lo[i] <= hi[i])) throw UsageError("Box: lo > hi");
    }
    static Box unit(int dim)
    {
        return Box(Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim));
    }
    static Box join(const Box& a, const Box& b)
    {
        Eigen::VectorXd lo(a.dim() + b.dim()), hi(a.dim() + b.dim());
        lo << a.lo, b.lo;
        hi << a.hi, b.hi;
        return Box(std::move(lo), std::move(hi));
    }

    int dim() const { return static_cast<int>(lo.size()); }
    Eigen::VectorXd width() const { return hi - lo; }
    Eigen::VectorXd mid() const { return 0.5 * (lo + hi); }

    bool contains(const Eigen::VectorXd& v, double tol = 1e-9) const
    {
        if (v.size() != lo.size()) return false;
        for (int i = 0; i < v.size(); ++i)
            if (v[i] < lo[i] - tol || v[i] > hi[i] + tol) return false;
        return true;
    }

    Eigen::VectorXd clip(const Eigen::VectorXd& v) const
    {
        return v.cwiseMax(lo).cwiseMin(hi);
    }

    Eigen::VectorXd sample(Rng& rng) const
    {
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        Eigen::VectorXd v(dim());
        for (int i = 0; i < dim(); ++i) v[i] = lo[i] + (hi[i] - lo[i]) * unif(rng);
        return v;
    }

    // Normalized (unit-cube) coordinates; degenerate axes map to 0.
    Eigen::VectorXd to_unit(const Eigen::VectorXd& v) const
    {
        Eigen::VectorXd u(dim());
        for (int i = 0; i < dim(); ++i) {
            double w = hi[i] - lo[i];
            u[i] = w > 0 ? (v[i] - lo[i]) / w : 0.0;
        }
        return u;
    }
    Eigen::VectorXd from_unit(const Eigen::VectorXd& u) const
    {
        return lo.array() + u.array() * (hi - lo).array();
    }
};

// Latin hypercube design: n points in the box, one per stratum and axis.
inline Eigen::MatrixXd latin_hypercube(const Box& box, int n, Rng& rng)
{
    if (n < 1) throw UsageError("latin_hypercube: n must be >= 1");
    const int d = box.dim();
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Eigen::MatrixXd pts(n, d);
    std::vector<int> perm(n);
    for (int j = 0; j < d; ++j) {
        for (int i = 0; i < n; ++i) perm[i] = i;
        std::shuffle(perm.begin(), perm.end(), rng);
        for (int i = 0; i < n; ++i) {
            double u = (perm[i] + unif(rng)) / n;
            pts(i, j) = box.lo[j] + u * (box.hi[j] - box.lo[j]);
        }
    }
    return pts;
}

// ------------------------------- small stats -------------------------------

inline double median(std::vector<double> v)
{
    if (v.empty()) throw UsageError("median of empty set");
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Inclusive (type-7) quantile with linear interpolation, matching the
// common spreadsheet convention.
inline double quantile(std::vector<double> v, double p)
{
    if (v.empty()) throw UsageError("quantile of empty set");
    std::sort(v.begin(), v.end());
    double pos = p * (v.size() - 1);
    size_t k = static_cast<size_t>(std::floor(pos));
    double frac = pos - static_cast<double>(k);
    if (k + 1 >= v.size()) return v.back();
    return v[k] * (1.0 - frac) + v[k + 1] * frac;
}

} // namespace conbo
