#include "doctest.h"

#include <cmath>
#include <numbers>

#include "sof/continuous.hpp"
#include "sof/error.hpp"
#include "sof/rng.hpp"

using namespace sof;

namespace {

constexpr double kPi = std::numbers::pi;

// TV(rho, f) = 1 - E_{x ~ f}[min(1, rho(x) / f(x))], sampled from f itself.
double tv_oracle(const BivariateNormal& f, std::size_t n, std::uint64_t seed) {
    Rng rng(seed, 77);
    const double rho = 4.0 / kPi;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = rng.normal(f.mean[0], f.sigma);
        const double y = rng.normal(f.mean[1], f.sigma);
        const bool inside = x >= 0 && y >= 0 && x * x + y * y <= 1;
        if (inside) acc += std::min(1.0, rho / normal_pdf(f, {x, y}));
    }
    return 1.0 - acc / double(n);
}

} // namespace

TEST_CASE("quarter disc region") {
    const Region r = quarter_disc_region();
    CHECK(r.contains(0.5, 0.5));
    CHECK_FALSE(r.contains(-0.1, 0.5));
    CHECK_FALSE(r.contains(0.5, -0.1));
    CHECK_FALSE(r.contains(0.8, 0.8));
    CHECK(r.measure == doctest::Approx(kPi / 4).epsilon(1e-15));
    REQUIRE(r.polar.has_value());
    CHECK(r.polar->theta_max == doctest::Approx(kPi / 2).epsilon(1e-15));
    CHECK_NOTHROW(r.validate());

    Region bad = r;
    bad.measure = 0.0;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("polar quadrature integrates known functions") {
    const QuadratureGrid g = polar_quadrature(256, 256);
    CHECK(g.size() == 256 * 256);
    for (double w : g.weights) CHECK(w > 0.0);
    CHECK(std::abs(integrate([](double, double) { return 1.0; }, g) - kPi / 4) < 1e-6);
    // Midpoint in r leaves exactly -h^2/12 on the integral of r^2; Gauss-Legendre removes it.
    const PointFunction radius = [](double x, double y) { return std::hypot(x, y); };
    const double h = 1.0 / 256;
    CHECK(std::abs(integrate(radius, g) - kPi / 2 * (1.0 / 3 - h * h / 12)) < 1e-12);
    CHECK(std::abs(integrate(radius, polar_quadrature(256, 256, QuadratureRule::gauss_legendre)) - kPi / 6) < 1e-6);
    CHECK(std::abs(g.total_weight() - kPi / 4) < 1e-6);

    const QuadratureGrid gl = polar_quadrature(16, 16, QuadratureRule::gauss_legendre);
    CHECK(std::abs(integrate([](double, double) { return 1.0; }, gl) - kPi / 4) < 1e-13);
    CHECK(std::abs(integrate([](double x, double) { return x; }, gl) - 1.0 / 3.0) < 1e-13);

    CHECK_THROWS_AS(polar_quadrature(1, 10), Error);
    CHECK_THROWS_AS(polar_quadrature(10, 1), Error);
}

TEST_CASE("Gauss-Legendre nodes integrate polynomials exactly") {
    for (std::size_t n = 1; n <= 12; ++n) {
        std::vector<double> x, w;
        gauss_legendre(n, x, w);
        REQUIRE(x.size() == n);
        for (std::size_t deg = 0; deg < 2 * n; ++deg) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += w[i] * std::pow(x[i], double(deg));
            const double exact = deg % 2 ? 0.0 : 2.0 / double(deg + 1);
            CHECK(std::abs(acc - exact) < 1e-13);
        }
    }
}

TEST_CASE("W integral examples") {
    const QuadratureGrid g = polar_quadrature(256, 256);
    CHECK(std::abs(w_integral([](double, double) { return 4.0 / kPi; }, g) - 1.0) < 1e-6);
    const BivariateNormal far{{10.0, 10.0}, 0.35};
    CHECK(w_integral([&](double x, double y) { return normal_pdf(far, {x, y}); }, g) < 1e-10);
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
        const BivariateNormal f{{rng.uniform(-1, 2), rng.uniform(-1, 2)}, rng.uniform(0.1, 1.0)};
        const double w = w_integral([&](double x, double y) { return normal_pdf(f, {x, y}); }, g);
        CHECK(w >= 0.0);
        CHECK(w <= 1.0 + 1e-6);
    }
    CHECK_THROWS_AS(w_integral([](double, double) { return std::nan(""); }, g), Error);
}

TEST_CASE("continuous KL") {
    const Region r = quarter_disc_region();
    const QuadratureGrid g = polar_quadrature(128, 128);
    CHECK(std::abs(kl_continuous(r, [](double, double) { return 4.0 / kPi; }, g)) < 1e-12);
    Rng rng(4);
    for (int i = 0; i < 20; ++i) {
        const BivariateNormal f{{rng.uniform(-1, 2), rng.uniform(-1, 2)}, rng.uniform(0.1, 1.0)};
        CHECK(kl_continuous(r, f, g) > 0.0);
    }
    CHECK_THROWS_AS(kl_continuous(r, [](double, double) { return 0.0; }, g), Error);

    // Closed-form and differentiable versions agree.
    const BivariateNormal f{{0.3, 0.6}, 0.35};
    ad::Graph graph;
    const ad::Var mean = graph.constant(Tensor::column({0.3, 0.6}));
    const double via_ad = ad::kl_continuous(r, ad::normal_log_density(mean, 0.35, g), g).scalar();
    CHECK(via_ad == doctest::Approx(kl_continuous(r, f, g)).epsilon(1e-12));
}

TEST_CASE("KL gradient vanishes at the centroid") {
    const Region r = quarter_disc_region();
    const QuadratureGrid g = polar_quadrature(64, 64, QuadratureRule::gauss_legendre);
    for (double sigma : {0.2, 0.35, 0.5}) {
        CAPTURE(sigma);
        const ad::ScalarFunction fn = [&](ad::Graph&, std::span<const ad::Var> p) {
            return ad::kl_continuous(r, ad::normal_log_density(p[0], sigma, g), g);
        };
        const std::vector<Tensor> at_centroid{Tensor::column({kQuarterDiscCentroid, kQuarterDiscCentroid})};
        const auto e = ad::evaluate(fn, at_centroid);
        CHECK(std::hypot(e.gradient[0].data[0], e.gradient[0].data[1]) < 1e-6);
        const std::vector<Tensor> off{Tensor::column({0.5, 0.3})};
        CHECK(std::hypot(ad::evaluate(fn, off).gradient[0].data[0], ad::evaluate(fn, off).gradient[0].data[1]) > 1e-2);
    }
    CHECK(kQuarterDiscCentroid == doctest::Approx(4.0 / (3.0 * kPi)).epsilon(1e-15));
}

TEST_CASE("total variation") {
    const Region r = quarter_disc_region();
    const QuadratureGrid g = polar_quadrature(256, 256);
    CHECK(std::abs(tv_continuous(r, [](double, double) { return 4.0 / kPi; }, g)) < 1e-12);
    CHECK(std::abs(tv_continuous(r, BivariateNormal{{10.0, 10.0}, 0.35}, g) - 1.0) < 1e-6);

    const BivariateNormal centred{{kQuarterDiscCentroid, kQuarterDiscCentroid}, 0.35};
    const double quad = tv_continuous(r, centred, g);
    const double mc = tv_oracle(centred, 1'000'000, 1);
    CHECK(std::abs(quad - mc) < 2e-3);

    const QuadratureGrid elsewhere = polar_quadrature(16, 16, QuadratureRule::midpoint, {0.0, 2.0, 0.0, kPi});
    CHECK_THROWS_AS(tv_continuous(r, centred, elsewhere), Error);
}

TEST_CASE("Monte Carlo integration") {
    const Region r = quarter_disc_region();
    const auto area = monte_carlo_integrate([](double, double) { return 1.0; }, r, 1'000'000, 5);
    CHECK(area.standard_error > 0.0);
    CHECK(std::abs(area.estimate - kPi / 4) < 3 * area.standard_error);
    const auto zero = monte_carlo_integrate([](double, double) { return 0.0; }, r, 1000, 5);
    CHECK(zero.estimate == 0.0);
    const auto again = monte_carlo_integrate([](double, double) { return 1.0; }, r, 1'000'000, 5);
    CHECK(again.estimate == area.estimate);
    CHECK_THROWS_AS(monte_carlo_integrate([](double, double) { return 1.0; }, r, 0, 5), Error);
}

TEST_CASE("quadrature agrees with Monte Carlo on random normals") {
    const Region r = quarter_disc_region();
    const QuadratureGrid g = polar_quadrature(256, 256);
    Rng rng(9);
    for (int i = 0; i < 10; ++i) {
        const BivariateNormal f{{rng.uniform(-0.2, 1.2), rng.uniform(-0.2, 1.2)}, rng.uniform(0.2, 0.6)};
        const PointFunction pdf = [&](double x, double y) { return normal_pdf(f, {x, y}); };
        const auto mc = monte_carlo_integrate(pdf, r, 1'000'000, 100 + i);
        CHECK(std::abs(w_integral(pdf, g) - mc.estimate) <= 3 * mc.standard_error);
    }
}

TEST_CASE("regions from inequalities") {
    const Region r = region_from_constraints("disc", Box{0, 1, 0, 1}, {"x^2 + y^2 <= 1", "x >= 0", "y >= 0"});
    CHECK(std::abs(r.measure - kPi / 4) < 2e-3);
    CHECK(r.contains(0.5, 0.5));
    CHECK_FALSE(r.contains(0.9, 0.9));
    CHECK_FALSE(r.polar.has_value());

    const Region tri = region_from_constraints("triangle", Box{0, 1, 0, 1}, {"y < 1 - x"});
    CHECK(std::abs(tri.measure - 0.5) < 2e-3);
    const QuadratureGrid g = region_quadrature(tri, 200, 200);
    CHECK(std::abs(g.total_weight() - 0.5) < 1e-2);

    const Region fancy = region_from_constraints(
        "fancy", Box{-2, 2, -2, 2}, {"sqrt(x*x + y*y) <= 1 + 0.5 * sin(3 * x)", "-(x) < 2^2 / 4", "abs(y) <= exp(0)"});
    CHECK(fancy.contains(0.0, 0.0));
    CHECK_FALSE(fancy.contains(-1.5, 0.0));

    CHECK_THROWS_AS(region_from_constraints("bad", Box{0, 1, 0, 1}, {"x +* y <= 1"}), ParseError);
    CHECK_THROWS_AS(region_from_constraints("bad", Box{0, 1, 0, 1}, {"x + y"}), ParseError);
    CHECK_THROWS_AS(region_from_constraints("bad", Box{0, 1, 0, 1}, {"z <= 1"}), ParseError);
    CHECK_THROWS_AS(region_from_constraints("empty", Box{0, 1, 0, 1}, {"x > 2"}), Error);
    CHECK_THROWS_AS(region_from_constraints("flat", Box{0, 0, 0, 1}, {"x >= 0"}), Error);
}
