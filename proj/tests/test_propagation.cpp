#include <doctest.h>

#include <cmath>

#include "approx.hpp"
#include "dlecho/propagation.hpp"

using namespace dlecho;

TEST_CASE("weak pulse: ln 2 feature transmits half the intensity on resonance")
{
    const Medium m = medium_from_distribution(std::numbers::ln2, {Shape::gaussian, 1e6});
    const auto out = transmit_weak_pulse(m, {0.0}, {cplx(1.0, 0.0)});
    CHECK(std::norm(out[0]) == approx(0.5).epsilon(1e-12));
}

TEST_CASE("weak pulse: zero depth is the identity")
{
    const Medium m = medium_from_distribution(0.0, {Shape::gaussian, 1e6});
    const std::vector<double> f{-2e6, 0.0, 3e5};
    const std::vector<cplx> in{cplx(0.3, -0.1), cplx(1.0, 0.0), cplx(-0.2, 0.7)};
    const auto out = transmit_weak_pulse(m, f, in);
    for (std::size_t k = 0; k < in.size(); ++k) CHECK(out[k] == in[k]);
}

TEST_CASE("weak pulse: an inverted feature amplifies by exp(alphaL)")
{
    const double alphaL = 0.2;
    const Medium m = medium_from_distribution(alphaL, {Shape::lorentzian, 5e5});
    const auto out = transmit_weak_pulse(m, {0.0}, {cplx(1.0, 0.0)}, [](double) { return -1.0; });
    // Oracle: product of per-slice field factors through 1000 thin slices.
    double e = 1.0;
    for (int k = 0; k < 1000; ++k) e *= 1.0 + 0.5 * alphaL / 1000.0 + std::pow(0.5 * alphaL / 1000.0, 2) / 2.0;
    CHECK(std::norm(out[0]) == approx(std::exp(alphaL)).epsilon(1e-12));
    CHECK(std::norm(out[0]) == approx(e * e).epsilon(1e-6));
}

TEST_CASE("weak pulse: off-resonant components follow the profile")
{
    const Distribution d{Shape::gaussian, 2e5};
    const Medium m = medium_from_distribution(1.0, d);
    const auto out = transmit_weak_pulse(m, {2e5}, {cplx(1.0, 0.0)});
    CHECK(out[0].real() == approx(std::exp(-0.5 * std::exp(-0.5))).epsilon(1e-12));
}

TEST_CASE("slab: source-free slices reproduce Beer-Lambert")
{
    for (double b : {0.0, 0.5 * std::numbers::ln2, 1.0, -0.1}) CHECK(slab_transmission(b, 64) == approx(std::exp(-b)).epsilon(1e-4));
}

TEST_CASE("slab: sliced echo gain matches the closed form")
{
    const std::vector<std::pair<double, double>> cases{{0.0, 0.0}, {0.35, 0.35}, {0.35, -0.35}, {0.1, 0.6}, {1.2, 0.0}};
    for (const auto& [bi, bo] : cases) {
        CHECK(slab_gain(bi, bo, 64) == approx(slab_gain_exact(bi, bo)).epsilon(1e-6));
        // Doubling the slice count is stable well below 0.5 %.
        CHECK(std::abs(slab_gain(bi, bo, 128) / slab_gain(bi, bo, 64) - 1.0) < 5e-3);
    }
    CHECK(slab_gain_exact(0.0, 0.0) == 1.0);
    CHECK(slab_gain_exact(0.3, 0.3) == approx(std::exp(-0.3)));
    CHECK(slab_gain_exact(0.3, 0.3 + 1e-9) == approx(std::exp(-0.3)).epsilon(1e-8));
}

TEST_CASE("slab: coarse slicing of a deep medium fails the doubling check")
{
    CHECK_THROWS_AS(slab_gain(40.0, 40.0, 1, 1e-6), NumericalError);
    CHECK_THROWS_AS(slab_gain(0.1, 0.1, 0), ModelError);
}

TEST_CASE("slab: echo amplitude grows monotonically with depth up to alphaL = 1")
{
    // Echo amplitude ~ alphaL * gain for an absorbing input and absorbing echo.
    double prev = 0.0;
    for (double alphaL = 0.05; alphaL <= 1.0 + 1e-12; alphaL += 0.05) {
        const double a = alphaL * slab_gain(0.5 * alphaL, 0.5 * alphaL, 64);
        CHECK(a > prev);
        prev = a;
    }
}

TEST_CASE("medium: tabulated profile interpolates and normalizes")
{
    const Medium m = medium_from_table(1.0, {-1e6, 0.0, 1e6}, {0.0, 2.0, 1.0});
    CHECK(m.profile(0.0) == approx(1.0));
    CHECK(m.profile(5e5) == approx(0.75));
    CHECK(m.profile(-5e5) == approx(0.5));
    CHECK(m.profile(2e6) == 0.0);
    CHECK_THROWS_AS(medium_from_table(1.0, {0.0, -1.0}, {1.0, 1.0}), ModelError);
    CHECK_THROWS_AS(medium_from_table(1.0, {0.0}, {1.0}), ModelError);
    CHECK_THROWS_AS(medium_from_distribution(-1.0, {Shape::gaussian, 1e6}), ModelError);
    CHECK_THROWS_AS(medium_from_distribution(1.0, {Shape::gaussian, 1e6}, 4), ModelError);
}

TEST_CASE("thin coupling: scales with depth and inversely with the line density")
{
    const Distribution d{Shape::gaussian, 1e5};
    const double k = thin_sample_coupling(0.4, d, 2e6);
    CHECK(k == approx(2.0 * 0.4 / (d.peak_density() * 2e6)));
    CHECK(thin_sample_coupling(0.4, {Shape::gaussian, 0.0}, 2e6) == 1.0);
    CHECK_THROWS_AS(thin_sample_coupling(0.4, d, 0.0), ModelError);
}
