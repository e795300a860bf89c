#include "test_helpers.hpp"

#include <conbo/acquisition.hpp>

#include <boost/math/distributions/normal.hpp>
#include <catch2/catch_amalgamated.hpp>

#include <random>

using namespace conbo;

namespace {

KernelSpec toy_spec(double noise = 0.0, double mean = 0.0)
{
    return KernelSpec::factorized(Eigen::VectorXd::Constant(1, 0.35),
                                  Eigen::VectorXd::Constant(1, 0.25), 1.2, noise, mean);
}

JointPoint jp(double s, double x)
{
    return JointPoint(Eigen::VectorXd::Constant(1, s), Eigen::VectorXd::Constant(1, x));
}

GpPosterior random_posterior(int n, std::uint64_t seed, double noise = 0.05)
{
    return GpPosterior(ref::random_dataset(n, 1, 1, seed), toy_spec(noise, 0.0));
}

Eigen::MatrixXd action_grid(int m)
{
    Eigen::MatrixXd g(m, 1);
    for (int i = 0; i < m; ++i) g(i, 0) = m == 1 ? 0.5 : static_cast<double>(i) / (m - 1);
    return g;
}

} // namespace

TEST_CASE("z quantiles match a vetted inverse CDF", "[acquisition]")
{
    boost::math::normal dist;
    ZGrid g = z_quantiles(5);
    for (int j = 0; j < 5; ++j) {
        double expect = boost::math::quantile(dist, (2.0 * j + 1.0) / 10.0);
        REQUIRE(g.values[j] == Catch::Approx(expect).margin(1e-10));
    }
    REQUIRE(g.values[2] == 0.0);
    REQUIRE(z_quantiles(3).values[1] == 0.0);
    for (int n : {3, 5, 7, 11}) REQUIRE(std::abs(z_quantiles(n).values.sum()) < 1e-12);
    REQUIRE_THROWS_AS(z_quantiles(4), UsageError);
    REQUIRE_THROWS_AS(z_quantiles(1), UsageError);
}

TEST_CASE("inner optimizer finds a quadratic peak", "[acquisition]")
{
    InnerObjective f;
    auto val = [](double x) { return -(x - 0.37) * (x - 0.37); };
    f.batch = [&](const Eigen::MatrixXd& Q) {
        Eigen::VectorXd v(Q.rows());
        for (int i = 0; i < Q.rows(); ++i) v[i] = val(Q(i, 0));
        return v;
    };
    f.point = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
        if (g) {
            g->resize(1);
            (*g)[0] = -2.0 * (x[0] - 0.37);
        }
        return val(x[0]);
    };
    InnerOptimizer opt;
    opt.n_ascent = 40;
    auto res = maximize_inner(f, Box::unit(1), opt, 1);
    REQUIRE(std::abs(res.x[0] - 0.37) < 1e-3);

    // enumeration mode picks the exact grid argmax (lowest index on ties)
    opt.finite_actions = action_grid(11);
    auto res2 = maximize_inner(f, Box::unit(1), opt, 1);
    REQUIRE(res2.x[0] == Catch::Approx(0.4));
}

TEST_CASE("kg_d basics", "[acquisition]")
{
    GpPosterior post = random_posterior(6, 10);
    LookaheadContext ctx = post.lookahead(jp(0.5, 0.5));
    Eigen::VectorXd state = Eigen::VectorXd::Constant(1, 0.5);
    // single action: single line, zero gain
    REQUIRE(kg_d(post, ctx, state, action_grid(1)) == 0.0);
    // far state slice: all sigma-tilde entries ~0
    GpPosterior tight(ref::random_dataset(5, 1, 1, 3),
                      KernelSpec::factorized(Eigen::VectorXd::Constant(1, 0.005),
                                             Eigen::VectorXd::Constant(1, 0.25), 1.0, 0.01));
    LookaheadContext tctx = tight.lookahead(jp(0.0, 0.5));
    REQUIRE(kg_d(tight, tctx, Eigen::VectorXd::Constant(1, 1.0), action_grid(20)) <= 1e-10);
}

TEST_CASE("kg_d agrees with a Monte-Carlo oracle on the same grid", "[acquisition]")
{
    GpPosterior post = random_posterior(8, 42, 0.04);
    JointPoint cand = jp(0.45, 0.55);
    LookaheadContext ctx = post.lookahead(cand);
    Eigen::VectorXd state = Eigen::VectorXd::Constant(1, 0.4);
    Eigen::MatrixXd grid = action_grid(200);
    double exact = kg_d(post, ctx, state, grid);

    // oracle: sample Z, maximize mu + st * z over the identical grid
    Eigen::MatrixXd Q(grid.rows(), 2);
    Q.col(0).setConstant(0.4);
    Q.col(1) = grid.col(0);
    ref::DensePosterior dense{post.spec(), post.joint_inputs(), post.data().y};
    Eigen::VectorXd mu(grid.rows()), st(grid.rows());
    Eigen::VectorXd cj = cand.joint();
    double denom = std::sqrt(dense.cov(cj, cj) + post.spec().noise_variance);
    for (int i = 0; i < grid.rows(); ++i) {
        Eigen::VectorXd q = Q.row(i).transpose();
        mu[i] = dense.mean(q);
        st[i] = dense.cov(q, cj) / denom;
    }
    auto est = ref::mc_estimate(
        [&](std::mt19937_64& rng) {
            std::normal_distribution<double> normal(0.0, 1.0);
            double z = normal(rng);
            return (mu.array() + z * st.array()).maxCoeff();
        },
        1000000, 2025);
    double oracle = est.mean - mu.maxCoeff();
    REQUIRE(std::abs(exact - oracle) < 3.0 * est.se);
}

TEST_CASE("kg_mc is zero with no information and agrees with dense kg_d", "[acquisition]")
{
    Box action_box = Box::unit(1);
    InnerOptimizer inner;
    inner.seed = 5;

    // sigma_tilde = 0 over the slice: far-away candidate
    GpPosterior tight(ref::random_dataset(6, 1, 1, 3),
                      KernelSpec::factorized(Eigen::VectorXd::Constant(1, 0.004),
                                             Eigen::VectorXd::Constant(1, 0.25), 1.0, 0.01));
    LookaheadContext tctx = tight.lookahead(jp(0.0, 0.5));
    Rng rng(1);
    REQUIRE(std::abs(kg_mc(tight, tctx, Eigen::VectorXd::Constant(1, 1.0), action_box, 50, inner,
                           rng)) <= 1e-6);

    // toy agreement: kg_mc vs dense-grid kg_d within 3 SE
    GpPosterior post = random_posterior(8, 42, 0.04);
    LookaheadContext ctx = post.lookahead(jp(0.45, 0.55));
    Eigen::VectorXd state = Eigen::VectorXd::Constant(1, 0.4);
    double dense_kg = kg_d(post, ctx, state, action_grid(2000));

    const int n_z = 2000;
    Rng rng2(99);
    double est = kg_mc(post, ctx, state, action_box, n_z, inner, rng2);
    // SE of the MC average from an auxiliary run of per-z maxima
    Rng rng3(99);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> vals;
    Eigen::MatrixXd grid = action_grid(2000);
    Eigen::MatrixXd Q(grid.rows(), 2);
    Q.col(0).setConstant(0.4);
    Q.col(1) = grid.col(0);
    Eigen::VectorXd mu, st;
    post.predict_lookahead(ctx, Q, mu, st);
    for (int j = 0; j < n_z; ++j) {
        double z = normal(rng3);
        vals.push_back((mu.array() + z * st.array()).maxCoeff());
    }
    double mean = 0.0, var = 0.0;
    for (double v : vals) mean += v;
    mean /= vals.size();
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= (vals.size() - 1.0);
    double se = std::sqrt(var / vals.size());
    REQUIRE(std::abs(est - dense_kg) < 3.0 * se + 1e-3);
}

TEST_CASE("kg_hybrid properties", "[acquisition]")
{
    Box action_box = Box::unit(1);
    InnerOptimizer inner;
    inner.seed = 17;
    ZGrid grid5 = z_quantiles(5);

    // fully observed noiseless candidate has zero acquisition
    Dataset data;
    data.add(jp(0.4, 0.6), 1.0);
    GpPosterior noiseless(data, toy_spec(0.0, 0.0));
    REQUIRE(kg_hybrid_at(noiseless, jp(0.4, 0.6), Eigen::VectorXd::Constant(1, 0.4), action_box,
                         grid5, inner) == 0.0);

    // nonnegative on random instances (Theorem 3 shape)
    std::mt19937_64 seed_rng(1);
    for (int rep = 0; rep < 25; ++rep) {
        GpPosterior post = random_posterior(5 + rep % 6, 700 + rep, 0.02 + 0.01 * (rep % 3));
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        JointPoint cand = jp(unif(seed_rng), unif(seed_rng));
        double v = kg_hybrid_at(post, cand, Eigen::VectorXd::Constant(1, unif(seed_rng)),
                                action_box, grid5, inner);
        REQUIRE(v >= 0.0);
    }

    // lower bound of continuous KG: compare to a high-sample kg_mc
    GpPosterior post = random_posterior(8, 42, 0.04);
    LookaheadContext ctx = post.lookahead(jp(0.45, 0.55));
    Eigen::VectorXd state = Eigen::VectorXd::Constant(1, 0.4);
    double hybrid = kg_hybrid(post, ctx, state, action_box, grid5, inner);
    Rng rng(7);
    double mc = kg_mc(post, ctx, state, action_box, 5000, inner, rng);
    REQUIRE(hybrid <= mc + 0.01);
    REQUIRE(hybrid >= 0.0);
}

TEST_CASE("lower-bound ordering across discretizations", "[acquisition]")
{
    GpPosterior post = random_posterior(7, 55, 0.03);
    LookaheadContext ctx = post.lookahead(jp(0.5, 0.3));
    Eigen::VectorXd state = Eigen::VectorXd::Constant(1, 0.55);

    Eigen::MatrixXd sparse = action_grid(5);
    // dense superset containing the sparse grid and the policy argmax region
    Eigen::MatrixXd dense = action_grid(401);
    double v_sparse = kg_d(post, ctx, state, sparse);
    double v_dense = kg_d(post, ctx, state, dense);
    REQUIRE(v_sparse <= v_dense + 1e-12);

    InnerOptimizer inner;
    inner.seed = 2;
    Rng rng(3);
    double mc = kg_mc(post, ctx, state, Box::unit(1), 4000, inner, rng);
    REQUIRE(v_dense <= mc + 0.01);
}

TEST_CASE("expected improvement closed forms and oracle", "[acquisition]")
{
    // v = 0, mean below incumbent
    Dataset data;
    data.add(jp(0.4, 0.6), 1.0);
    GpPosterior post(data, toy_spec(0.0, 0.0));
    REQUIRE(expected_improvement(post, jp(0.4, 0.6), 2.0) == 0.0);

    // m = incumbent, v = 1 via the empty prior
    KernelSpec unit_spec = KernelSpec::factorized(Eigen::VectorXd::Constant(1, 0.35),
                                                  Eigen::VectorXd::Constant(1, 0.25), 1.0, 0.0,
                                                  0.0);
    GpPosterior prior(Dataset{}, unit_spec);
    REQUIRE(expected_improvement(prior, jp(0.5, 0.5), 0.0) ==
            Catch::Approx(norm_pdf(0.0)).epsilon(1e-12));

    // Monte-Carlo oracle on a random instance
    GpPosterior rp = random_posterior(6, 77, 0.05);
    JointPoint q = jp(0.3, 0.7);
    double incumbent = rp.data().y.maxCoeff();
    double m = rp.mean(q), v = rp.variance(q);
    auto est = ref::mc_estimate(
        [&](std::mt19937_64& rng) {
            std::normal_distribution<double> normal(0.0, 1.0);
            return std::max(m + std::sqrt(v) * normal(rng) - incumbent, 0.0);
        },
        1000000, 11);
    REQUIRE(std::abs(expected_improvement(rp, q, incumbent) - est.mean) < 3.0 * est.se);
    REQUIRE(expected_improvement(rp, q, incumbent) >= 0.0);
}

TEST_CASE("expected improvement gradient matches finite differences", "[acquisition]")
{
    GpPosterior post = random_posterior(7, 131, 0.04);
    double incumbent = post.data().y.maxCoeff() - 0.2;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> unif(0.1, 0.9);
    for (int rep = 0; rep < 20; ++rep) {
        Eigen::VectorXd q(2);
        q << unif(rng), unif(rng);
        Eigen::VectorXd g;
        expected_improvement_grad(post, q, incumbent, g);
        const double h = 1e-6;
        for (int d = 0; d < 2; ++d) {
            Eigen::VectorXd qp = q, qm = q;
            qp[d] += h;
            qm[d] -= h;
            double fd = (expected_improvement(post, JointPoint::split(qp, 1), incumbent) -
                         expected_improvement(post, JointPoint::split(qm, 1), incumbent)) /
                        (2.0 * h);
            REQUIRE(g[d] == Catch::Approx(fd).margin(1e-5));
        }
    }
}

TEST_CASE("kg_mc with all-zero draws is exactly zero", "[acquisition]")
{
    GpPosterior post = random_posterior(7, 99, 0.05);
    LookaheadContext ctx = post.lookahead(jp(0.4, 0.6));
    InnerOptimizer inner;
    inner.seed = 3;
    Eigen::VectorXd zeros = Eigen::VectorXd::Zero(8);
    REQUIRE(kg_mc_at(post, ctx, Eigen::VectorXd::Constant(1, 0.5), Box::unit(1), zeros, inner) ==
            0.0);
}
