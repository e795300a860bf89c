#include "test_helpers.hpp"

#include <conbo/math.hpp>

#include <boost/math/distributions/normal.hpp>
#include <catch2/catch_amalgamated.hpp>

using namespace conbo;

TEST_CASE("norm_ppf matches a vetted inverse CDF", "[math]")
{
    boost::math::normal dist;
    for (double p : {1e-8, 1e-4, 0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 1.0 - 1e-6}) {
        double expect = boost::math::quantile(dist, p);
        REQUIRE(norm_ppf(p) == Catch::Approx(expect).margin(1e-10));
    }
    REQUIRE(norm_ppf(0.5) == 0.0);
}

TEST_CASE("norm_cdf and norm_pdf basics", "[math]")
{
    REQUIRE(norm_cdf(0.0) == Catch::Approx(0.5));
    REQUIRE(norm_pdf(0.0) == Catch::Approx(0.39894228040143267794));
    boost::math::normal dist;
    for (double z : {-3.0, -1.0, 0.3, 2.5}) {
        REQUIRE(norm_cdf(z) == Catch::Approx(boost::math::cdf(dist, z)).margin(1e-14));
    }
}

TEST_CASE("Box clip, contains, normalization", "[math]")
{
    Box b(Eigen::Vector2d(-1.0, 0.0), Eigen::Vector2d(1.0, 10.0));
    REQUIRE(b.contains(Eigen::Vector2d(0.0, 5.0)));
    REQUIRE_FALSE(b.contains(Eigen::Vector2d(2.0, 5.0)));
    Eigen::VectorXd c = b.clip(Eigen::Vector2d(2.0, -3.0));
    REQUIRE(c[0] == 1.0);
    REQUIRE(c[1] == 0.0);
    Eigen::VectorXd u = b.to_unit(Eigen::Vector2d(0.0, 5.0));
    REQUIRE(u[0] == Catch::Approx(0.5));
    REQUIRE(u[1] == Catch::Approx(0.5));
    REQUIRE((b.from_unit(u) - Eigen::Vector2d(0.0, 5.0)).norm() < 1e-14);
    REQUIRE_THROWS_AS(Box(Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(0.0, 1.0)), UsageError);
}

TEST_CASE("latin hypercube stratifies each axis", "[math]")
{
    Rng rng(7);
    Box b = Box::unit(3);
    const int n = 50;
    Eigen::MatrixXd pts = latin_hypercube(b, n, rng);
    for (int j = 0; j < 3; ++j) {
        std::vector<bool> hit(n, false);
        for (int i = 0; i < n; ++i) {
            int stratum = std::min(n - 1, static_cast<int>(pts(i, j) * n));
            REQUIRE_FALSE(hit[stratum]);
            hit[stratum] = true;
        }
    }
}

TEST_CASE("median and inclusive quantile", "[math]")
{
    std::vector<double> v{3.0, 1.0, 2.0};
    REQUIRE(median(v) == 2.0);
    REQUIRE(quantile(v, 0.25) == Catch::Approx(1.5));
    REQUIRE(quantile(v, 0.75) == Catch::Approx(2.5));
    REQUIRE(median({1.0, 2.0, 3.0, 4.0}) == Catch::Approx(2.5));
}

TEST_CASE("seed mixing separates streams", "[math]")
{
    REQUIRE(mix_seed(1, 2) != mix_seed(1, 3));
    REQUIRE(mix_seed(1, 2) != mix_seed(2, 2));
    REQUIRE(hash_string("conbo") != hash_string("revi"));
}
