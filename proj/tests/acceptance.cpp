// End-to-end acceptance run: one PASS/FAIL line per criterion, exit status 1
// if any criterion fails. Expected values come from closed forms evaluated
// here, independently of the library code under test.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dlecho/cli.hpp"

using namespace dlecho;
namespace fs = std::filesystem;

namespace {

constexpr double pi = std::numbers::pi;
constexpr double two_pi = 2.0 * std::numbers::pi;

struct Outcome {
    bool pass = true;
    std::string detail;
};

std::string fmt(const char* f, double a)
{
    char b[64];
    std::snprintf(b, sizeof b, f, a);
    return b;
}

std::string fmt(const char* f, double a, double b)
{
    char s[96];
    std::snprintf(s, sizeof s, f, a, b);
    return s;
}

std::string config_path(const std::string& name)
{
    return (fs::path(DLECHO_CONFIG_DIR) / name).string();
}

std::string read_text(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("dlecho_acceptance_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

cli::RunConfig load(const std::string& name, const std::vector<std::string>& overrides = {})
{
    nlohmann::json c = cli::load_config(config_path(name));
    for (const auto& o : overrides) cli::apply_override(c, o);
    return cli::resolve_config(c, DLECHO_CONFIG_DIR);
}

cli::SimulateResult simulate(const cli::RunConfig& rc, const std::string& tag)
{
    std::ostringstream log;
    return cli::simulate(rc, scratch(tag).string(), log);
}

SequenceTimeline four_level(double ta, double tb)
{
    ParseOptions po;
    po.base_dir = DLECHO_CONFIG_DIR;
    po.overrides = {{"ta", ta}, {"tb", tb}};
    return parse_sequence(read_text(config_path("four_level.seq")), po);
}

SequenceTimeline two_level(double tau)
{
    ParseOptions po;
    po.base_dir = DLECHO_CONFIG_DIR;
    po.overrides = {{"tau", tau}};
    return parse_sequence(read_text(config_path("two_level.seq")), po);
}

double echo_of(const EmissionRecord& rec, const SequenceTimeline& tl, const LevelSystem& ls, double* at = nullptr)
{
    const auto pred = predict_pathway(tl, ls);
    const EchoPeak e = extract_echo(rec, pred, default_gate_half_width(tl));
    if (at) *at = e.time;
    return e.normalized > 0.0 ? e.normalized : std::abs(e.amplitude);
}

/// Frequency of the largest spectral amplitude within `span` of f.
double local_peak(const AmplitudeSpectrum& s, double f, double span)
{
    double best = -1.0;
    double at = f;
    for (std::size_t k = 0; k < s.frequency.size(); ++k)
        if (std::abs(s.frequency[k] - f) <= span && s.amplitude[k] > best) {
            best = s.amplitude[k];
            at = s.frequency[k];
        }
    return at;
}

// ---------------------------------------------------------------------------

Outcome rabi_oracle()
{
    const auto start = std::chrono::steady_clock::now();
    const LevelSystem ls = build_default_system();
    const auto r = no_relaxation(ls);
    double worst = 0.0;
    for (auto kind : {Envelope::Kind::square, Envelope::Kind::gaussian})
        for (double theta : {0.5 * pi, pi, 2.0 * pi}) {
            Pulse p;
            p.transition = {2, 5};
            p.area = theta;
            p.envelope = {kind, 1e-6};
            const auto rho = apply_pulse(pure_state(ls, 2), p, class_detunings(ls, {}), r);
            worst = std::max(worst, std::abs(rho(4, 4).real() - std::pow(std::sin(theta / 2), 2)));
        }
    double worst_detuned = 0.0;
    for (double theta : {0.5 * pi, pi, 2.0 * pi})
        for (double ratio : {0.3, 1.0}) {
            Pulse p;
            p.transition = {2, 5};
            p.area = theta;
            p.envelope = {Envelope::Kind::square, 1e-6};
            const double omega = theta / 1e-6;
            const double delta = ratio * omega;  // rad/s
            const auto rho = apply_pulse(pure_state(ls, 2), p, class_detunings(ls, {delta / two_pi, 0.0, 0.0, 1.0}), r);
            const double gen = std::hypot(omega, delta);
            const double expected = omega * omega / (gen * gen) * std::pow(std::sin(gen * 1e-6 / 2), 2);
            worst_detuned = std::max(worst_detuned, std::abs(rho(4, 4).real() - expected));
        }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {worst < 1e-6 && worst_detuned < 1e-6 && secs < 5.0,
            "max resonant error " + fmt("%.2e", worst) + ", max detuned error " + fmt("%.2e", worst_detuned) +
                " (limit 1e-6, runtime limit 5 s)"};
}

Outcome echo_timing()
{
    const auto start = std::chrono::steady_clock::now();
    const LevelSystem ls = build_default_system();
    EnsembleSpec spec;
    spec.model.optical = {Shape::gaussian, 1e6};
    spec.sampling = Sampling::grid;
    spec.n_classes = 4096;
    const auto r = relaxation_from_system(ls);
    std::mt19937_64 rng(20240601);
    std::uniform_real_distribution<double> ua(5e-6, 40e-6);
    std::uniform_real_distribution<double> ub(0.0, 40e-6);

    bool ok = true;
    double worst_time = 0.0;
    double worst_beat = 0.0;
    int wrong_pair = 0;
    for (int run = 0; run < 20; ++run) {
        const double ta = ua(rng);
        const double tb = ub(rng);
        const auto tl = four_level(ta, tb);
        const auto pred = predict_pathway(tl, ls);
        const auto rec = run_experiment(tl, ls, spec, r);
        const double fwhm = tl.pulses.front().fwhm();
        const EchoPeak e = extract_echo(rec, pred, default_gate_half_width(tl));
        const double dt = std::abs(e.time - (2.0 * ta + tb));
        worst_time = std::max(worst_time, dt);
        ok = ok && dt <= fwhm && pred.echo_transition == Transition{3, 4};

        // The echo transition carries the largest field in the gate.
        const auto& w = rec.windows[e.window];
        double others = 0.0;
        for (std::size_t q = 0; q < rec.pairs.size(); ++q) {
            if (rec.pairs[q] == Transition{3, 4}) continue;
            for (Eigen::Index k = 0; k < w.field.rows(); ++k)
                if (std::abs(w.time(static_cast<std::size_t>(k)) - pred.echo_time) <= fwhm)
                    others = std::max(others, std::abs(w.field(k, static_cast<Eigen::Index>(q))));
        }
        if (others >= std::abs(e.amplitude)) ++wrong_pair;

        // Heterodyne beats: input window against echo window.
        const auto in = heterodyne(rec, 0, ls);
        const auto out = heterodyne(rec, e.window, ls);
        const auto s_in = amplitude_spectrum(in, in.time(0), in.time(in.samples.size() - 1), Taper::hann, 4);
        const auto s_out = amplitude_spectrum(out, out.time(0), out.time(out.samples.size() - 1), Taper::hann, 4);
        const double f_in = local_peak(s_in, in.beat_of({2, 5}), 1e6);
        const double f_out = local_peak(s_out, out.beat_of({3, 4}), 1e6);
        const double offset = std::abs(f_in - f_out);
        const double miss = std::abs(offset - 14.8e6) / std::max(s_in.bin_width(), s_out.bin_width());
        worst_beat = std::max(worst_beat, miss);
        ok = ok && miss <= 1.0;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ok = ok && wrong_pair == 0 && secs < 120.0;
    return {ok, "20 runs at 4096 classes (runtime limit 120 s); worst |t_echo - (2ta+tb)| " + fmt("%.3g ns", worst_time * 1e9) +
                    " (limit 1 us); beat offset off 14.8 MHz by at most " + fmt("%.2f bins", worst_beat) +
                    "; runs where another pair outshines (3,4): " + std::to_string(wrong_pair)};
}

Outcome two_level_decay()
{
    const auto rc = load("two_level_decay.json");
    const auto res = simulate(rc, "c3");
    const double t2 = res.fit->param("T2");
    const double target = rc.system.params().t2_opt;
    const double rel = std::abs(t2 / target - 1.0);
    return {rel < 0.02, "fitted T2 " + fmt("%.4g us", t2 * 1e6) + " against configured " + fmt("%.4g us", target * 1e6) +
                            " (" + fmt("%.3g%%", rel * 100) + ", limit 2%)"};
}

Outcome excess_dephasing()
{
    const LevelSystem ls = build_default_system();
    const auto r = no_relaxation(ls);
    const double sigma = 4e3;
    EnsembleSpec ref;
    ref.model.optical = {Shape::gaussian, 1e5};
    ref.nodes = {8, 1, 1};
    ref.n_classes = 8;
    EnsembleSpec spread = ref;
    spread.model.ground = {Shape::gaussian, sigma};
    spread.model.excited = {Shape::gaussian, sigma};
    spread.nodes = {8, 12, 12};
    spread.n_classes = 8 * 12 * 12;
    double worst = 0.0;
    for (double ta : {5e-6, 10e-6, 20e-6, 30e-6, 40e-6}) {
        const auto tl = four_level(ta, 0.0);
        const double ratio = echo_of(run_experiment(tl, ls, spread, r), tl, ls) / echo_of(run_experiment(tl, ls, ref, r), tl, ls);
        // delta_g + delta_e is Gaussian with variance 2 sigma^2.
        const double oracle = std::exp(-0.5 * std::pow(two_pi * ta, 2) * 2.0 * sigma * sigma);
        worst = std::max(worst, std::abs(ratio / oracle - 1.0));
    }

    const auto rc = load("echo_decay.json");
    const auto res = simulate(rc, "c4");
    const double sigma_cal = *res.calibrated_sigma;
    const double model_t2 = effective_t2(*rc.calibration, sigma_cal);
    const double t2 = res.fit->param("T2");
    const double round_trip = std::abs(t2 / 34e-6 - 1.0);
    const bool ok = worst < 0.01 && std::abs(model_t2 / 34e-6 - 1.0) < 1e-6 && round_trip < 0.05;
    return {ok, "tau_a law worst deviation " + fmt("%.2e", worst) + " (limit 1%); calibrated sigma " +
                    fmt("%.1f Hz", sigma_cal) + "; simulated refit T2 " + fmt("%.4g us", t2 * 1e6) + " (" +
                    fmt("%.2f%%", round_trip * 100) + " off 34 us, limit 5%)"};
}

Outcome storage_decay()
{
    const auto rc = load("spin_storage.json");
    const double ta = rc.sweep[0].values[0];
    const double sigma = rc.ensemble.model.ground.width;
    const double t2_spin = rc.system.params().t2_spin;
    auto storage_ratio = [&](const cli::SimulateResult& res, std::size_t i) {
        return res.points[i].echo_amplitude / res.points[0].echo_amplitude;
    };
    const auto spread = simulate(rc, "c5a");
    double worst = 0.0;
    for (std::size_t i = 0; i < spread.points.size(); ++i) {
        const double tb = spread.points[i].axes[1].second;
        const double oracle = std::exp(-0.5 * std::pow(two_pi * sigma, 2) * (std::pow(ta + tb, 2) - ta * ta)) *
                              std::exp(-tb / t2_spin);
        worst = std::max(worst, std::abs(storage_ratio(spread, i) / oracle - 1.0));
    }
    const auto flat = simulate(load("spin_storage.json", {"ensemble.ground.width=0", "ensemble.nodes=[160,1,1]",
                                                          "ensemble.n_classes=160"}),
                               "c5b");
    double worst_flat = 0.0;
    for (std::size_t i = 0; i < flat.points.size(); ++i) {
        const double tb = flat.points[i].axes[1].second;
        worst_flat = std::max(worst_flat, std::abs(storage_ratio(flat, i) / std::exp(-tb / t2_spin) - 1.0));
    }
    return {worst < 0.03 && worst_flat < 0.005,
            "10 kHz Gaussian law worst deviation " + fmt("%.2e", worst) + " (limit 3%); zero-width storage " +
                "drift " + fmt("%.2e", worst_flat) + " (limit 0.5%)"};
}

Outcome beer_lambert()
{
    const LevelSystem ls = build_default_system();
    HoleburningConfig cfg;
    cfg.alphaL = std::numbers::ln2;
    const PreparedFeature f = prepare_feature(ls, cfg);
    const auto out = transmit_weak_pulse(f.medium, {0.0}, {cplx{1.0, 0.0}});
    const double transmission = std::norm(out[0]);
    const bool half = std::abs(transmission - 0.5) < 1e-3;

    // Thin-sample echo at alphaL = 0.01 against the first-order oracle.
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
    const Distribution line{Shape::gaussian, sigma};
    const double omega_peak = theta * 2.0 * std::sqrt(std::numbers::ln2 / pi) / fwhm;
    double integral = 0.0;
    const int n = 20000;
    const double h = 16.0 * sigma / n;
    for (int k = 0; k < n; ++k) {
        const double d = -8.0 * sigma + (k + 0.5) * h;
        integral += h * line.pdf(d) * theta * std::exp(-std::pow(pi * fwhm * d, 2) / (4.0 * std::numbers::ln2));
    }
    const double overlap = integral / (line.peak_density() * omega_peak);
    const double oracle = alphaL * overlap;
    const double vs_oracle = std::abs(eta / oracle - 1.0);
    // The stated target: efficiency alphaL/2 once the line covers the input.
    const double vs_half = std::abs(eta / overlap / (0.5 * alphaL) - 1.0);
    const bool ok = half && vs_oracle < 0.02 && vs_half < 0.02;
    return {ok, "ln 2 feature transmits " + fmt("%.6f", transmission) + " (limit 1e-3); echo efficiency " +
                    fmt("%.4g", eta) + " is " + fmt("%.3g%%", vs_oracle * 100) +
                    " off the first-order oracle alphaL*overlap but " + fmt("%.3g x alphaL/2", eta / overlap / (0.5 * alphaL)) +
                    " after removing the spectral overlap; the alphaL/2 target conflicts with the Beer-Lambert coupling "
                    "(see README)"};
}

Outcome efficiency_parity()
{
    const LevelSystem ls = build_default_system();
    const auto r = relaxation_from_system(ls);
    EnsembleSpec spec;
    spec.model.optical = {Shape::gaussian, 3e5};
    spec.sampling = Sampling::grid;
    spec.n_classes = 256;
    spec.alphaL = std::numbers::ln2;
    auto extrapolate = [&](const std::vector<SequenceTimeline>& runs) {
        std::vector<double> x;
        std::vector<double> y;
        for (const auto& tl : runs) {
            const auto pred = predict_pathway(tl, ls);
            x.push_back(pred.echo_time - pred.input_time);
            y.push_back(echo_of(run_experiment(tl, ls, spec, r), tl, ls));
        }
        return fit_decay(x, y, DecayModel::exponential).amplitude;
    };
    const std::vector<double> delays{5e-6, 10e-6, 20e-6};
    auto both = [&]() {
        std::vector<SequenceTimeline> two;
        std::vector<SequenceTimeline> four;
        for (double d : delays) {
            two.push_back(two_level(d));
            four.push_back(four_level(d, 0.0));
        }
        return std::pair{extrapolate(two), extrapolate(four)};
    };
    const auto [ideal2, ideal4] = both();
    spec.area = AreaSpread::gaussian(0.05, 5);
    const auto [e2, e4] = both();
    const double rel = std::abs(e2 / e4 - 1.0);
    return {rel < 0.10, "zero-delay efficiency with 5% area spread: 2LE " + fmt("%.4f", e2) + ", 4LE " + fmt("%.4f", e4) +
                            " (" + fmt("%.2f%%", rel * 100) + " apart, limit 10%); ideal pulses at alphaL = ln 2 give " +
                            fmt("%.3f and %.3f", ideal2, ideal4) + " (documented only)"};
}

Outcome fid_isolation()
{
    const LevelSystem ls = build_default_system();
    const auto r = no_relaxation(ls);
    EnsembleSpec spec;
    spec.model.optical = {Shape::gaussian, 1e5};
    spec.n_classes = 32;
    spec.area = AreaSpread::gaussian(0.10, 9);
    // The strongest area factors need a finer step to pass the halving check.
    spec.integrator.step_scale = 0.5;

    // No input: FID windows after each transfer pulse and the echo gate.
    const double ta = 10e-6;
    const double tb = 5e-6;
    const auto silent = parse_sequence("pulse at=10us trans=w35 area=1pi env=gauss(fwhm=0.6us)\n"
                                       "pulse at=15us trans=w24 area=1pi env=gauss(fwhm=0.6us)\n"
                                       "observe from=11.8us to=14us rate=100MHz\n"
                                       "observe from=16.8us to=19us rate=100MHz\n"
                                       "observe from=22us to=28us rate=100MHz\n");
    const auto rec = run_experiment(silent, ls, spec, r);
    auto peak = [&](std::size_t w, const Transition& t, double from, double to) {
        double v = 0.0;
        const auto& we = rec.windows[w];
        for (Eigen::Index k = 0; k < we.field.rows(); ++k) {
            const double t_k = we.time(static_cast<std::size_t>(k));
            if (t_k >= from && t_k <= to) v = std::max(v, std::abs(we.field(k, rec.pair_index(t))));
        }
        return v;
    };
    const double fid = std::max({peak(0, {3, 5}, 0, 1), peak(1, {2, 4}, 0, 1), peak(0, {2, 4}, 0, 1),
                                 peak(1, {3, 5}, 0, 1)});
    const double gate = peak(2, {3, 4}, 2 * ta + tb - 3e-6, 2 * ta + tb + 3e-6);
    const double leak = fid > 0.0 ? gate / fid : 1.0;

    // With the input: the spread against a uniform factor of equal mean transfer.
    const auto tl = four_level(ta, tb);
    const double with_spread = echo_of(run_experiment(tl, ls, spec, r), tl, ls);
    EnsembleSpec matched = spec;
    matched.area.factors = {spec.area.effective_factor()};
    matched.area.weights = {1.0};
    const double uniform = echo_of(run_experiment(tl, ls, matched, r), tl, ls);
    const double rel = std::abs(with_spread / uniform - 1.0);
    return {fid > 0.0 && leak < 1e-6 && rel < 0.005,
            "no input: echo gate " + fmt("%.2e", gate) + " against FID peak " + fmt("%.2e", fid) +
                " (ratio limit 1e-6); echo with 10% spread differs from the matched uniform area by " +
                fmt("%.3f%%", rel * 100) + " (limit 0.5%)"};
}

Outcome holeburning()
{
    const LevelSystem ls = build_default_system();
    HoleburningConfig cfg;
    const auto start = PopulationGrid::uniform(ls, cfg.window_half_width, cfg.step);
    const auto iso = isolate_subgroup(start, ls, cfg);
    double off_target = 0.0;
    for (std::size_t i = 0; i < iso.size(); ++i)
        if (std::abs(iso.detuning[i]) <= cfg.sweep_half_width)
            off_target = std::max({off_target, iso.n(static_cast<Eigen::Index>(i), 1), iso.n(static_cast<Eigen::Index>(i), 2)});
    const PreparedFeature f = prepare_feature(ls, cfg);
    double n3 = 0.0;
    for (std::size_t i = 0; i < f.grid.size(); ++i)
        if (std::abs(f.grid.detuning[i]) <= cfg.sweep_half_width)
            n3 = std::max(n3, f.grid.n(static_cast<Eigen::Index>(i), 2));
    const double conservation = std::max(iso.conservation_error(), f.grid.conservation_error());
    return {off_target < 1e-3 && n3 < 1e-3 && conservation < 1e-9,
            "isolated pit |2>,|3> at most " + fmt("%.2e", off_target) + "; |3> after burn-back " + fmt("%.2e", n3) +
                "; conservation " + fmt("%.1e", conservation) + "; feature FWHM " + fmt("%.4g kHz", f.fwhm / 1e3)};
}

Outcome phase_matching()
{
    const LevelSystem ls = build_default_system();
    const auto& lam = ls.lambda();
    const double l0 = 605.977e-9;
    const double length = 20e-3;
    auto beam = [&](const Transition& t, double tilt) {
        return Beam{{std::sin(tilt), 0.0, std::cos(tilt)}, transition_wavelength(ls, t, l0)};
    };
    const double echo = transition_wavelength(ls, lam.echo(), l0);
    const auto collinear =
        phase_match_four_level(beam(lam.input(), 0), beam(lam.first_transfer(), 0), beam(lam.second_transfer(), 0), echo, length);
    const auto norm = [](const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); };
    const double dkl = norm(collinear.delta_k) * length;
    const auto tilted = phase_match_four_level(beam(lam.input(), 10e-3), beam(lam.first_transfer(), 0),
                                               beam(lam.second_transfer(), 0), echo, length);
    const double dk = norm(tilted.delta_k);
    cplx s{};
    const int n = 200000;
    for (int m = 0; m < n; ++m) s += std::polar(1.0, dk * (m + 0.5) * length / n);
    const double brute = std::norm(s / static_cast<double>(n));
    const double diff = std::abs(tilted.penalty - brute);
    return {std::abs(collinear.penalty - 1.0) < 1e-4 && diff < 1e-6,
            "collinear penalty " + fmt("%.8f", collinear.penalty) + " (dk L = " + fmt("%.2e rad", dkl) +
                "); 10 mrad input tilt penalty " + fmt("%.6f", tilted.penalty) + ", slice sum differs by " +
                fmt("%.1e", diff)};
}

Outcome determinism_convergence()
{
    const LevelSystem ls = build_default_system();
    const auto r = relaxation_from_system(ls);
    const auto tl = four_level(6e-6, 3e-6);
    const fs::path dir = scratch("c11");

    EnsembleSpec mc;
    mc.model.optical = {Shape::gaussian, 3e5};
    mc.model.ground = {Shape::gaussian, 1e4};
    mc.sampling = Sampling::monte_carlo;
    mc.n_classes = 256;
    mc.seed = 42;
    std::vector<std::string> bytes;
    for (int threads : {1, 2, 4}) {
#ifdef _OPENMP
        omp_set_num_threads(threads);
#endif
        const auto path = (dir / ("run_" + std::to_string(threads) + ".csv")).string();
        write_emission_csv(run_experiment(tl, ls, mc, r), path);
        bytes.push_back(read_text(path));
    }
#ifdef _OPENMP
    omp_set_num_threads(omp_get_num_procs());
#endif
    const bool identical = bytes[0] == bytes[1] && bytes[1] == bytes[2] && !bytes[0].empty();

    // The ensemble of the calibrated decay run; classes doubled along the
    // optical and along the spin axes.
    const auto decay = four_level(20e-6, 2e-6);
    EnsembleSpec q;
    q.model.optical = {Shape::gaussian, 1e6};
    q.model.ground = {Shape::gaussian, 5e3};
    q.model.excited = {Shape::gaussian, 5e3};
    q.nodes = {160, 5, 5};
    q.n_classes = 4000;
    const double a = echo_of(run_experiment(decay, ls, q, r), decay, ls);
    q.nodes = {320, 5, 5};
    q.n_classes = 8000;
    const double b = echo_of(run_experiment(decay, ls, q, r), decay, ls);
    q.nodes = {160, 10, 5};
    const double b2 = echo_of(run_experiment(decay, ls, q, r), decay, ls);
    const double classes = std::max(std::abs(b / a - 1.0), std::abs(b2 / a - 1.0));

    EnsembleSpec slab;
    slab.model.optical = {Shape::gaussian, 3e5};
    slab.n_classes = 64;
    slab.mode = PropagationMode::slab;
    slab.n_slices = 32;
    const double c = echo_of(run_experiment(tl, ls, slab, r), tl, ls);
    slab.n_slices = 64;
    const double d = echo_of(run_experiment(tl, ls, slab, r), tl, ls);
    const double slices = std::abs(d / c - 1.0);
    return {identical && classes < 0.005 && slices < 0.005,
            std::string("outputs at 1, 2 and 4 threads ") + (identical ? "byte-identical" : "DIFFER") +
                "; doubling quadrature classes changes the echo by " + fmt("%.2e", classes) + ", doubling slices by " +
                fmt("%.2e", slices) + " (limit 5e-3)"};
}

}  // namespace

int main()
{
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"Rabi oracle", rabi_oracle},
        {"echo timing and beat offset", echo_timing},
        {"two-level decay fit", two_level_decay},
        {"four-level excess dephasing and calibration", excess_dephasing},
        {"spin-storage decay", storage_decay},
        {"Beer-Lambert and thin-sample efficiency", beer_lambert},
        {"2LE/4LE efficiency parity", efficiency_parity},
        {"FID isolation", fid_isolation},
        {"holeburning preparation", holeburning},
        {"phase matching", phase_matching},
        {"determinism and convergence", determinism_convergence},
    };
    int failed = 0;
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (!o.pass) ++failed;
        std::cout << "criterion " << i + 1 << " " << (o.pass ? "PASS" : "FAIL") << " [" << criteria[i].first << "] "
                  << o.detail << fmt(" (%.1f s)", secs) << std::endl;
    }
    const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << criteria.size() - failed << " of " << criteria.size() << " criteria pass" << fmt(" (%.1f s)", total)
              << std::endl;
    return failed == 0 ? 0 : 1;
}
