#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "approx.hpp"
#include "dlecho/ensemble.hpp"

using namespace dlecho;

namespace {

const double pi = std::numbers::pi;

double total_weight(const std::vector<AtomClass>& cs)
{
    double s = 0.0;
    for (const auto& c : cs) s += c.weight;
    return s;
}

std::string slurp(const std::string& path)
{
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Peak |E| on a transition over all samples of one window.
double window_peak(const EmissionRecord& rec, std::size_t w, const Transition& t, double* at = nullptr)
{
    const auto& we = rec.windows[w];
    Eigen::Index k = 0;
    const double v = we.field.col(rec.pair_index(t)).cwiseAbs().maxCoeff(&k);
    if (at) *at = we.time(static_cast<std::size_t>(k));
    return v;
}

// Four-level program with short pulses and a single sample at the echo.
std::string four_level_text(double ta, double tb)
{
    std::ostringstream s;
    s.precision(17);
    s << "let ta = " << ta * 1e6 << "us\nlet tb = " << tb * 1e6 << "us\n"
      << "pulse at=0us trans=w25 area=0.05pi env=gauss(fwhm=50ns)\n"
      << "pulse at=ta trans=w35 area=pi env=gauss(fwhm=50ns)\n"
      << "pulse at=ta+tb trans=w24 area=pi env=gauss(fwhm=50ns)\n"
      << "observe from=2*ta+tb to=2*ta+tb rate=1MHz\n";
    return s.str();
}

}  // namespace

TEST_CASE("sampling: zero widths give identical classes of weight 1/n")
{
    for (Sampling s : {Sampling::monte_carlo, Sampling::grid, Sampling::gauss_quadrature}) {
        EnsembleSpec spec;
        spec.sampling = s;
        spec.n_classes = 7;
        const auto cs = sample_classes(spec);
        REQUIRE(cs.size() == 7);
        for (const auto& c : cs) {
            CHECK(c.delta_opt == 0.0);
            CHECK(c.delta_g == 0.0);
            CHECK(c.delta_e == 0.0);
            CHECK(c.weight == approx(1.0 / 7.0));
        }
    }
}

TEST_CASE("sampling: Monte Carlo standard deviation converges")
{
    EnsembleSpec spec;
    spec.model.optical = {Shape::gaussian, 3e5};
    spec.sampling = Sampling::monte_carlo;
    spec.n_classes = 100000;
    spec.seed = 11;
    const auto cs = sample_classes(spec);
    double m = 0.0, m2 = 0.0;
    for (const auto& c : cs) {
        m += c.delta_opt;
        m2 += c.delta_opt * c.delta_opt;
    }
    m /= static_cast<double>(cs.size());
    const double sd = std::sqrt(m2 / static_cast<double>(cs.size()) - m * m);
    CHECK(std::abs(sd / 3e5 - 1.0) < 0.02);
    CHECK(total_weight(cs) == approx(1.0));
    // Same seed, same draws.
    CHECK(sample_classes(spec)[12345].delta_opt == cs[12345].delta_opt);
}

TEST_CASE("sampling: quadrature and Monte Carlo agree on the dephasing integral")
{
    const double sigma = 1e4;
    const double tau = 20e-6;
    auto mean_phase = [&](const std::vector<AtomClass>& cs) {
        cplx s = 0.0;
        for (const auto& c : cs) s += c.weight * std::polar(1.0, -two_pi * c.delta_g * tau);
        return s;
    };
    EnsembleSpec q;
    q.model.ground = {Shape::gaussian, sigma};
    q.n_classes = 64;
    EnsembleSpec mc = q;
    mc.sampling = Sampling::monte_carlo;
    mc.n_classes = 1000000;
    const cplx a = mean_phase(sample_classes(q));
    const cplx b = mean_phase(sample_classes(mc));
    const double oracle = std::exp(-0.5 * std::pow(two_pi * sigma * tau, 2));
    CHECK(std::abs(a - b) < 1e-3);
    CHECK(std::abs(a - oracle) < 1e-10);
}

TEST_CASE("sampling: quadrature rules integrate polynomials exactly")
{
    std::vector<double> x, w;
    gauss_hermite(10, x, w);
    double m2 = 0.0, m4 = 0.0, m6 = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        m2 += w[k] * std::pow(x[k], 2);
        m4 += w[k] * std::pow(x[k], 4);
        m6 += w[k] * std::pow(x[k], 6);
    }
    CHECK(m2 == approx(1.0));
    CHECK(m4 == approx(3.0));
    CHECK(m6 == approx(15.0));
    gauss_legendre_unit(5, x, w);
    double i5 = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) i5 += w[k] * std::pow(x[k], 5);
    CHECK(i5 == approx(1.0 / 6.0));
}

TEST_CASE("sampling: grids are normalized and tensor products cover every axis")
{
    EnsembleSpec spec;
    spec.model.optical = {Shape::lorentzian, 1e5};
    spec.model.ground = {Shape::uniform, 2e4};
    spec.sampling = Sampling::grid;
    spec.n_classes = 100;
    const auto cs = sample_classes(spec);
    CHECK(cs.size() == 100);
    CHECK(total_weight(cs) == approx(1.0));
    for (const auto& c : cs) CHECK(std::abs(c.delta_g) < 1e4);
    // A +-4 HWHM Lorentzian grid holds about 84 % of the line.
    CHECK(sampled_mass(spec) == approx(2.0 / pi * std::atan(4.0)).epsilon(2e-3));
    spec.sampling = Sampling::gauss_quadrature;
    CHECK(sampled_mass(spec) == 1.0);
}

TEST_CASE("sampling: invalid specs are rejected")
{
    EnsembleSpec spec;
    spec.n_classes = 0;
    CHECK_THROWS_AS(sample_classes(spec), ModelError);
    spec.n_classes = 4;
    spec.area.factors = {-1.0};
    CHECK_THROWS_AS(sample_classes(spec), ModelError);
    spec.area.factors = {0.9, 1.1};
    spec.area.weights = {0.5, 0.6};
    CHECK_THROWS_AS(sample_classes(spec), ModelError);
    CHECK_THROWS_AS(sampling_from_string("sobol"), ModelError);
}

TEST_CASE("area spread: Gaussian factors have unit mean and lose transfer")
{
    const AreaSpread a = AreaSpread::gaussian(0.1);
    CHECK(std::accumulate(a.weights.begin(), a.weights.end(), 0.0) == approx(1.0));
    double mean = 0.0, var = 0.0;
    for (std::size_t k = 0; k < a.factors.size(); ++k) mean += a.weights[k] * a.factors[k];
    for (std::size_t k = 0; k < a.factors.size(); ++k) var += a.weights[k] * std::pow(a.factors[k] - mean, 2);
    CHECK(mean == approx(1.0));
    CHECK(std::sqrt(var) == approx(0.1));
    // <sin^2(a pi/2)> for a ~ N(1, s^2): (1 + exp(-pi^2 s^2 / 2)) / 2.
    const double transfer = 0.5 * (1.0 + std::exp(-0.5 * pi * pi * 0.01));
    CHECK(a.effective_factor() == approx(2.0 / pi * std::asin(std::sqrt(transfer))).epsilon(1e-6));
    CHECK(AreaSpread{}.effective_factor() == approx(1.0));
}

TEST_CASE("emit: a single resonant class radiates its coherence")
{
    const LevelSystem ls = build_default_system();
    const auto tl = parse_sequence("pulse at=0us trans=w25 area=0.5pi env=square(dur=0.2us)\n"
                                   "observe from=1us to=3us rate=10MHz\n");
    const AtomClass c{0.0, 0.0, 0.0, 1.0};
    const ClassTraces tr = run_class(tl, c, ls, relaxation_from_system(ls));
    const EmissionRecord rec = emit({c}, {tr}, ls, 1.0);
    const int q = rec.pair_index({2, 5});
    const auto& coh = tr.windows[0].coherence;
    for (Eigen::Index k = 0; k < coh.rows(); ++k)
        CHECK(std::abs(rec.windows[0].field(k, q)) == approx(ls.dipole(2, 5) * std::abs(coh(k, q))));
    CHECK_THROWS_AS(emit({c, c}, {tr}, ls, 1.0), ModelError);
}

TEST_CASE("ensemble: two-level echo peaks at twice the delay")
{
    const LevelSystem ls = build_default_system();
    // The line is broad enough that the echo is much shorter than the delay.
    const auto tl = parse_sequence("pulse at=0us trans=w25 area=0.05pi env=gauss(fwhm=0.2us)\n"
                                   "pulse at=4us trans=w25 area=pi env=gauss(fwhm=50ns)\n"
                                   "observe from=7.5us to=8.5us rate=50MHz\n");
    EnsembleSpec spec;
    spec.model.optical = {Shape::gaussian, 1e6};
    spec.n_classes = 96;
    const auto rec = run_experiment(tl, ls, spec, no_relaxation(ls));
    double at = 0.0;
    window_peak(rec, 0, {2, 5}, &at);
    CHECK(std::abs(at - 8e-6) <= 0.5 / 50e6);
}

TEST_CASE("ensemble: spin inhomogeneity decays the storage with a Gaussian law")
{
    const LevelSystem ls = build_default_system();
    const double sigma = 1e4;
    EnsembleSpec spec;
    spec.model.ground = {Shape::gaussian, sigma};
    spec.n_classes = 48;
    const auto r = no_relaxation(ls);
    const double ta = 2e-6;
    const double a0 = window_peak(run_experiment(parse_sequence(four_level_text(ta, 0.0)), ls, spec, r), 0, {3, 4});
    // The storage shift is carried by the spin coherence during tb and by the
    // echo transition during the second ta, so the phase is delta_g (ta + tb).
    for (double tb : {5e-6, 10e-6, 20e-6}) {
        const double a = window_peak(run_experiment(parse_sequence(four_level_text(ta, tb)), ls, spec, r), 0, {3, 4});
        const double oracle = std::exp(-0.5 * std::pow(two_pi * sigma, 2) * (std::pow(ta + tb, 2) - ta * ta));
        CHECK(a / a0 == approx(oracle).epsilon(1e-4));
    }
}

TEST_CASE("ensemble: a homogeneous spin transition stores without loss")
{
    const LevelSystem ls = build_default_system();
    EnsembleSpec spec;
    spec.model.optical = {Shape::gaussian, 1e5};
    spec.n_classes = 32;
    const auto r = no_relaxation(ls);
    const double a0 = window_peak(run_experiment(parse_sequence(four_level_text(3e-6, 0.0)), ls, spec, r), 0, {3, 4});
    const double a1 = window_peak(run_experiment(parse_sequence(four_level_text(3e-6, 30e-6)), ls, spec, r), 0, {3, 4});
    CHECK(a1 / a0 == approx(1.0).epsilon(5e-3));
}

TEST_CASE("ensemble: pulse-area spread leaves a free-induction tail")
{
    const LevelSystem ls = build_default_system();
    const auto tl = parse_sequence("pulse at=2us trans=w25 area=pi env=gauss(fwhm=0.1us)\n"
                                   "observe from=2.5us to=2.6us rate=100MHz\n");
    EnsembleSpec spec;
    spec.model.optical = {Shape::gaussian, 2e4};
    spec.n_classes = 32;
    const auto r = no_relaxation(ls);
    const double ideal = window_peak(run_experiment(tl, ls, spec, r), 0, {2, 5});
    // sin(theta) is odd about pi, so a spread symmetric in the factors would
    // cancel in the summed field; this one is weighted toward short pulses.
    spec.area.factors = {0.8, 1.0, 1.2};
    spec.area.weights = {0.5, 0.3, 0.2};
    const double spread = window_peak(run_experiment(tl, ls, spec, r), 0, {2, 5});
    CHECK(spread > 20.0 * ideal);
    // Narrow line: every class keeps -i sin(f pi)/2, dephased by the line
    // over the 0.5 us after the pulse centre.
    double residual = 0.0;
    for (std::size_t k = 0; k < 3; ++k) residual += spec.area.weights[k] * 0.5 * std::sin(spec.area.factors[k] * pi);
    const double omega = tl.pulses[0].peak_rabi();
    const double oracle = thin_sample_coupling(spec.alphaL, spec.model.optical, omega) * ls.dipole(2, 5) *
                          std::abs(residual) * std::exp(-0.5 * std::pow(two_pi * 2e4 * 0.5e-6, 2));
    CHECK(spread == approx(oracle).epsilon(0.01));
}

TEST_CASE("ensemble: identical seeds give byte-identical output at any thread count")
{
    const LevelSystem ls = build_default_system();
    const auto tl = parse_sequence(four_level_text(2e-6, 1e-6) + "observe from=0us to=1us rate=20MHz\n");
    EnsembleSpec spec;
    spec.model.optical = {Shape::gaussian, 2e5};
    spec.model.ground = {Shape::gaussian, 1e4};
    spec.sampling = Sampling::monte_carlo;
    spec.n_classes = 100;
    spec.seed = 99;
    const auto r = relaxation_from_system(ls);
    std::vector<std::string> outputs;
    for (int threads : {1, 3}) {
#ifdef _OPENMP
        omp_set_num_threads(threads);
#endif
        const auto rec = run_experiment(tl, ls, spec, r);
        const std::string path =
            (std::filesystem::temp_directory_path() / ("dlecho_determinism_" + std::to_string(threads) + ".csv")).string();
        write_emission_csv(rec, path);
        outputs.push_back(slurp(path));
        CHECK(emission_manifest(rec)["seed"] == 99);
    }
    CHECK(outputs[0] == outputs[1]);
    CHECK(!outputs[0].empty());
}

TEST_CASE("ensemble: doubling the quadrature order leaves the echo unchanged")
{
    const LevelSystem ls = build_default_system();
    const auto tl = parse_sequence(four_level_text(3e-6, 2e-6));
    EnsembleSpec spec;
    spec.model.optical = {Shape::gaussian, 1e5};
    spec.model.ground = {Shape::gaussian, 1e4};
    spec.model.excited = {Shape::gaussian, 1e4};
    spec.n_classes = 216;
    const auto r = relaxation_from_system(ls);
    const double a = window_peak(run_experiment(tl, ls, spec, r), 0, {3, 4});
    spec.n_classes = 1728;
    const double b = window_peak(run_experiment(tl, ls, spec, r), 0, {3, 4});
    CHECK(std::abs(b / a - 1.0) < 2e-3);
}

TEST_CASE("efficiency: thin-sample echo matches the first-order response")
{
    const LevelSystem ls = build_default_system();
    const double alphaL = 0.01;
    const double sigma = 2e5;
    const double fwhm = 1e-6;
    const double theta = 0.01 * pi;
    const auto tl = parse_sequence("pulse at=0us trans=w25 area=0.01pi env=gauss(fwhm=1us)\n"
                                   "pulse at=6us trans=w25 area=pi env=gauss(fwhm=50ns)\n"
                                   "observe from=11.9us to=12.1us rate=100MHz\n");
    EnsembleSpec spec;
    spec.model.optical = {Shape::gaussian, sigma};
    spec.n_classes = 64;
    spec.alphaL = alphaL;
    const auto rec = run_experiment(tl, ls, spec, no_relaxation(ls));
    const double eta = efficiency(rec, {2, 5}, 11.9e-6, 12.1e-6);
    // First order: every class rephases its share of the input spectrum,
    // eta = alphaL / (p0 Omega_peak) * int p(D) |Omega^(D)| dD, with
    // Omega^(D) = theta exp(-(pi F D)^2 / (4 ln 2)) for a Gaussian envelope.
    const Distribution line{Shape::gaussian, sigma};
    const double omega_peak = theta * 2.0 * std::sqrt(std::numbers::ln2 / pi) / fwhm;
    double integral = 0.0;
    const int n = 20000;
    const double h = 16.0 * sigma / n;
    for (int k = 0; k < n; ++k) {
        const double d = -8.0 * sigma + (k + 0.5) * h;
        integral += h * line.pdf(d) * theta * std::exp(-std::pow(pi * fwhm * d, 2) / (4.0 * std::numbers::ln2));
    }
    const double oracle = alphaL * integral / (line.peak_density() * omega_peak);
    CHECK(eta == approx(oracle).epsilon(0.02));
}

TEST_CASE("efficiency: a timeline without an input has no echo")
{
    const LevelSystem ls = build_default_system();
    const auto tl = parse_sequence("pulse at=2us trans=w35 area=pi env=gauss(fwhm=50ns)\n"
                                   "pulse at=3us trans=w24 area=pi env=gauss(fwhm=50ns)\n"
                                   "observe from=3.5us to=4.5us rate=10MHz\n");
    EnsembleSpec spec;
    spec.model.optical = {Shape::gaussian, 1e5};
    spec.n_classes = 8;
    const auto rec = run_experiment(tl, ls, spec, no_relaxation(ls));
    CHECK_THROWS_AS(efficiency(rec, {3, 4}, 3.5e-6, 4.5e-6), NumericalError);
}
