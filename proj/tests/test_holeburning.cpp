#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "approx.hpp"
#include "dlecho/holeburning.hpp"

using namespace dlecho;

namespace {

/// One grid point with a single strong transition 1 -> excited 1.
PopulationGrid two_level_point(double beta_self)
{
    PopulationGrid g;
    g.detuning = {0.0};
    g.n = Eigen::MatrixX3d::Zero(1, 3);
    g.n(0, 0) = 1.0;
    g.offset = Eigen::Matrix3d::Constant(1e12);
    g.offset(0, 0) = 0.0;
    g.strength = Eigen::Matrix3d::Zero();
    g.strength(0, 0) = 1.0;
    g.branching = Eigen::Matrix3d::Zero();
    g.branching(0, 0) = beta_self;
    g.branching(1, 0) = 1.0 - beta_self;
    return g;
}

PumpField resonant(double rate, double duration)
{
    PumpField f;
    f.center = 0.0;
    f.sweep_half_width = 0.0;
    f.rate = rate;
    f.duration = duration;
    return f;
}

double max_in_window(const PopulationGrid& g, int col, double half)
{
    double m = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k)
        if (std::abs(g.detuning[k]) <= half) m = std::max(m, g.n(static_cast<Eigen::Index>(k), col));
    return m;
}

}  // namespace

TEST_CASE("pump: zero duration is the identity")
{
    const auto ls = build_default_system();
    const auto g = PopulationGrid::uniform(ls, 2e6, 25e3);
    const auto out = apply_pump(g, PumpField::on(ls, ls.lambda().input(), 0.0));
    CHECK(out.n == g.n);
}

TEST_CASE("pump: a two-level point empties as exp(-R t)")
{
    const double rate = 1e3;
    for (double t : {1e-4, 1e-3, 5e-3}) {
        const auto out = apply_pump(two_level_point(0.0), resonant(rate, t));
        CHECK(out.n(0, 0) == approx(std::exp(-rate * t)).epsilon(1e-12));
        CHECK(out.n(0, 1) == approx(1.0 - std::exp(-rate * t)).epsilon(1e-12));
    }
    // Decay back into the pumped level does not count as loss.
    const auto out = apply_pump(two_level_point(0.3), resonant(rate, 2e-3));
    CHECK(out.n(0, 0) == approx(std::exp(-0.7 * rate * 2e-3)).epsilon(1e-12));
}

TEST_CASE("pump: swept overlap is a Lorentzian averaged over the sweep")
{
    PumpField f;
    f.center = 1e5;
    f.sweep_half_width = 4e5;
    f.linewidth = 5e4;
    const double h = 0.5 * f.linewidth;
    auto averaged = [&](double d) {
        // Midpoint rule over the sweep.
        const int n = 200000;
        double s = 0.0;
        for (int k = 0; k < n; ++k) {
            const double u = -f.sweep_half_width + (k + 0.5) * 2.0 * f.sweep_half_width / n;
            s += h * h / (h * h + (d - u) * (d - u));
        }
        return s;
    };
    const double norm = averaged(0.0);
    for (double d : {0.0, 2e5, 3.9e5, 4.5e5, 1.5e6}) CHECK(f.overlap(f.center + d) == approx(averaged(d) / norm).epsilon(1e-6));
    f.sweep_half_width = 0.0;
    CHECK(f.overlap(f.center + h) == approx(0.5));
}

TEST_CASE("pump: invalid fields are rejected")
{
    const auto ls = build_default_system();
    CHECK_THROWS_AS(PumpField::on(ls, ls.lambda().input(), -1.0), ModelError);
    CHECK_THROWS_AS(PumpField::on(ls, ls.lambda().input(), 1e-3, 1e6, 0.0), ModelError);
    CHECK_THROWS_AS(PumpField::on(ls, {1, 2}, 1e-3), ModelError);
    CHECK_THROWS_AS(PopulationGrid::uniform(ls, 1e6, 30e3), ModelError);
    auto a = PumpField::on(ls, ls.lambda().input(), 1e-3);
    auto b = PumpField::on(ls, ls.lambda().echo(), 2e-3);
    CHECK_THROWS_AS(apply_pump(PopulationGrid::uniform(ls, 1e6), std::vector<PumpField>{a, b}), ModelError);
}

TEST_CASE("pump: longer pumping never raises the pumped population")
{
    const auto ls = build_default_system();
    const auto g = PopulationGrid::uniform(ls, 3e6, 25e3);
    PopulationGrid prev = g;
    for (double t : {1e-3, 2e-3, 5e-3, 1e-2, 3e-2}) {
        const auto out = apply_pump(g, PumpField::on(ls, ls.lambda().input(), t));
        for (long k = 0; k < g.n.rows(); ++k) CHECK(out.n(k, 1) <= prev.n(k, 1) + 1e-15);
        prev = out;
    }
}

TEST_CASE("absorption: uniform populations absorb with the summed strengths")
{
    const auto ls = build_default_system();
    const auto g = PopulationGrid::uniform(ls, 50e6, 25e3);
    double total = 0.0;
    for (int i = 1; i <= 3; ++i)
        for (int j = 4; j <= 6; ++j) total += std::pow(ls.dipole(i, j), 2);
    const auto a = absorption_spectrum(g);
    CHECK(a[g.size() / 2] == approx(total / 3.0).epsilon(1e-12));
}

TEST_CASE("isolation: the pit holds no |2> or |3> population and is a fixed point")
{
    const auto ls = build_default_system();
    const HoleburningConfig cfg;
    const auto iso = isolate_subgroup(PopulationGrid::uniform(ls, cfg.window_half_width, cfg.step), ls, cfg);
    CHECK(max_in_window(iso, 1, cfg.sweep_half_width) < 1e-3);
    CHECK(max_in_window(iso, 2, cfg.sweep_half_width) < 1e-3);
    CHECK(iso.conservation_error() < 1e-9);

    const auto again = isolate_subgroup(iso, ls, cfg);
    double change = 0.0;
    for (std::size_t k = 0; k < iso.size(); ++k)
        if (std::abs(iso.detuning[k]) <= cfg.sweep_half_width)
            change = std::max(change, std::abs(again.n(static_cast<Eigen::Index>(k), 1) - iso.n(static_cast<Eigen::Index>(k), 1)));
    CHECK(change < 1e-6);
}

TEST_CASE("prepare: 200 kHz feature at ln 2 depth with |3> empty")
{
    const auto ls = build_default_system();
    const HoleburningConfig cfg;
    const auto pf = prepare_feature(ls, cfg);
    CHECK(std::abs(pf.fwhm / 200e3 - 1.0) < 0.1);
    CHECK(std::abs(feature_fwhm(pf.grid) / 200e3 - 1.0) < 0.1);
    CHECK(max_in_window(pf.grid, 2, cfg.sweep_half_width) < 1e-3);
    CHECK(pf.grid.conservation_error() < 1e-9);
    CHECK(pf.medium.alphaL == approx(std::numbers::ln2));
    const auto out = transmit_weak_pulse(pf.medium, {0.0}, {cplx(1.0, 0.0)});
    CHECK(std::norm(out[0]) == approx(0.5).epsilon(1e-9));
    CHECK(pf.max_alphaL > std::numbers::ln2);
}

TEST_CASE("prepare: a wider request gives a wider feature")
{
    const auto ls = build_default_system();
    HoleburningConfig cfg;
    cfg.feature_width = 400e3;
    const auto pf = prepare_feature(ls, cfg);
    CHECK(std::abs(pf.fwhm / 400e3 - 1.0) < 0.1);
}

TEST_CASE("prepare: unreachable depth or width reports the attainable value")
{
    const auto ls = build_default_system();
    HoleburningConfig cfg;
    cfg.alphaL = 10.0;
    try {
        prepare_feature(ls, cfg);
        FAIL("expected ModelError");
    } catch (const ModelError& e) {
        CHECK(std::string(e.what()).find("at most") != std::string::npos);
    }
    cfg.alphaL = std::numbers::ln2;
    cfg.feature_width = 20e3;
    CHECK_THROWS_AS(prepare_feature(ls, cfg), ModelError);
}

TEST_CASE("csv: grid export has one row per point")
{
    const auto ls = build_default_system();
    const auto g = PopulationGrid::uniform(ls, 1e6, 25e3);
    const auto path = (std::filesystem::temp_directory_path() / "dlecho_grid_test.csv").string();
    write_grid_csv(g, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "detuning_hz,n1,n2,n3,absorption");
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == g.size());
    std::filesystem::remove(path);
}
