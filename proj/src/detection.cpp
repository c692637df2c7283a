#include "dlecho/detection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/tools/toms748_solve.hpp>
#include <unsupported/Eigen/FFT>
#include <unsupported/Eigen/LevenbergMarquardt>

namespace dlecho {

namespace {

std::string fmt(double v)
{
    char b[32];
    std::snprintf(b, sizeof b, "%.6g", v);
    return b;
}

}  // namespace

// ---------------------------------------------------------------------------
// Heterodyne detection

double HeterodyneTrace::beat_of(const Transition& t) const
{
    for (std::size_t p = 0; p < pairs.size(); ++p)
        if (pairs[p] == t) return beat[p];
    throw ModelError("transition " + to_string(t) + " is not in the trace");
}

double default_lo_frequency(const LevelSystem& ls)
{
    const Transition e = ls.lambda().echo();
    return transition_frequency(ls, e.ground, e.excited) - 5e6;
}

double envelope_bandwidth(const std::vector<cplx>& envelope, double sample_rate, double fraction)
{
    const std::size_t n = envelope.size();
    if (n < 2) return 0.0;
    // The taper keeps the window edges from posing as bandwidth.
    std::vector<cplx> tapered(envelope);
    for (std::size_t k = 0; k < n; ++k)
        tapered[k] *= 0.5 * (1.0 - std::cos(two_pi * static_cast<double>(k) / static_cast<double>(n - 1)));
    Eigen::FFT<double> fft;
    std::vector<cplx> spec;
    fft.fwd(spec, tapered);
    std::vector<std::pair<double, double>> bins(n);
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const auto signed_k = k <= n / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
        bins[k] = {std::abs(signed_k) * sample_rate / static_cast<double>(n), std::norm(spec[k])};
        total += bins[k].second;
    }
    if (total == 0.0) return 0.0;
    std::sort(bins.begin(), bins.end());
    double outside = total;
    for (const auto& [f, e] : bins) {
        outside -= e;
        if (outside <= fraction * total) return f;
    }
    return bins.back().first;
}

HeterodyneTrace heterodyne(const EmissionRecord& rec, std::size_t window, const LevelSystem& ls,
                           const HeterodyneConfig& cfg)
{
    if (window >= rec.windows.size()) throw ModelError("observation window " + std::to_string(window) + " does not exist");
    if (!(cfg.noise_stdev >= 0.0)) throw ModelError("noise stdev must be non-negative");
    const WindowEmission& w = rec.windows[window];
    const double lo = std::isnan(cfg.lo_frequency) ? default_lo_frequency(ls) : cfg.lo_frequency;
    const auto ns = static_cast<std::size_t>(w.field.rows());

    HeterodyneTrace out;
    out.t0 = w.window.from;
    out.sample_rate = w.window.rate;
    out.pairs = rec.pairs;
    out.noise_stdev = cfg.noise_stdev;

    std::vector<std::vector<cplx>> env(rec.pairs.size(), std::vector<cplx>(ns));
    std::vector<double> peaks;
    double global = 0.0;
    for (std::size_t p = 0; p < rec.pairs.size(); ++p) {
        out.beat.push_back(transition_frequency(ls, rec.pairs[p].ground, rec.pairs[p].excited) - lo);
        double peak = 0.0;
        for (std::size_t k = 0; k < ns; ++k) {
            const auto r = static_cast<Eigen::Index>(k);
            const auto c = static_cast<Eigen::Index>(p);
            env[p][k] = w.field(r, c) + (cfg.include_drive ? w.drive(r, c) : cplx{});
            peak = std::max(peak, std::abs(env[p][k]));
        }
        peaks.push_back(peak);
        global = std::max(global, peak);
    }
    // Pairs carrying only round-off do not constrain the LO or the sample rate.
    std::vector<std::size_t> active;
    for (std::size_t p = 0; p < peaks.size(); ++p)
        if (peaks[p] > 1e-6 * global) active.push_back(p);

    double bandwidth = cfg.bandwidth;
    double max_beat = 0.0;
    for (std::size_t a = 0; a < active.size(); ++a) {
        const double fa = out.beat[active[a]];
        max_beat = std::max(max_beat, std::abs(fa));
        if (cfg.bandwidth <= 0.0) bandwidth = std::max(bandwidth, envelope_bandwidth(env[active[a]], w.window.rate));
        for (std::size_t b = a + 1; b < active.size(); ++b) {
            const double fb = out.beat[active[b]];
            if (std::abs(fa - fb) < 1e3 || std::abs(fa + fb) < 1e3)
                throw ModelError("transitions " + to_string(rec.pairs[active[a]]) + " and " + to_string(rec.pairs[active[b]]) +
                                 " share a beat frequency; move the LO");
        }
    }
    if (!active.empty() && !(w.window.rate > 2.0 * (max_beat + bandwidth)))
        throw ModelError("sample rate " + fmt(w.window.rate) + " Hz aliases beats up to " + fmt(max_beat) +
                         " Hz with bandwidth " + fmt(bandwidth) + " Hz");

    out.samples.assign(ns, 0.0);
    for (std::size_t p = 0; p < peaks.size(); ++p) {
        if (peaks[p] == 0.0) continue;
        const double omega = two_pi * out.beat[p];
        for (std::size_t k = 0; k < ns; ++k) out.samples[k] += (env[p][k] * std::polar(1.0, omega * w.time(k))).real();
    }
    if (cfg.noise_stdev > 0.0) {
        std::mt19937_64 rng(cfg.seed);
        std::normal_distribution<double> noise(0.0, cfg.noise_stdev);
        for (double& s : out.samples) s += noise(rng);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Spectra

Taper taper_from_string(const std::string& s)
{
    if (s == "hann") return Taper::hann;
    if (s == "rectangular") return Taper::rectangular;
    throw ModelError("unknown taper '" + s + "'");
}

double AmplitudeSpectrum::bin_width() const
{
    return frequency.size() > 1 ? frequency[1] - frequency[0] : 0.0;
}

double AmplitudeSpectrum::amplitude_near(double f) const
{
    const double df = bin_width();
    double best = 0.0;
    for (std::size_t k = 0; k < frequency.size(); ++k)
        if (std::abs(frequency[k] - f) <= df * (1.0 + 1e-9)) best = std::max(best, amplitude[k]);
    return best;
}

AmplitudeSpectrum amplitude_spectrum(const HeterodyneTrace& trace, double from, double to, Taper taper, int pad_factor)
{
    if (pad_factor < 1) throw ModelError("pad factor must be at least 1");
    if (trace.samples.empty()) throw ModelError("empty trace");
    const double half = 0.5 / trace.sample_rate;
    if (!(to >= from) || from < trace.time(0) - half || to > trace.time(trace.samples.size() - 1) + half)
        throw ModelError("spectrum window [" + fmt(from) + ", " + fmt(to) + "] s is not inside the trace");
    std::vector<double> x;
    for (std::size_t k = 0; k < trace.samples.size(); ++k) {
        const double t = trace.time(k);
        if (t >= from - 1e-6 * half && t <= to + 1e-6 * half) x.push_back(trace.samples[k]);
    }
    if (x.empty()) throw ModelError("spectrum window holds no samples");

    AmplitudeSpectrum s;
    s.n_window = x.size();
    s.n_fft = x.size() * static_cast<std::size_t>(pad_factor);
    for (std::size_t k = 0; k < x.size(); ++k) {
        double w = 1.0;
        if (taper == Taper::hann && x.size() > 1)
            w = 0.5 * (1.0 - std::cos(two_pi * static_cast<double>(k) / static_cast<double>(x.size() - 1)));
        x[k] *= w;
        s.coherent_gain += w;
        s.windowed_energy += x[k] * x[k];
    }
    if (!(s.coherent_gain > 0.0)) throw ModelError("taper has no weight in a window this short");
    x.resize(s.n_fft, 0.0);

    Eigen::FFT<double> fft;
    std::vector<cplx> spec;
    fft.fwd(spec, x);
    const std::size_t n_half = s.n_fft / 2;
    for (std::size_t k = 0; k <= n_half; ++k) {
        const bool edge = k == 0 || (s.n_fft % 2 == 0 && k == n_half);
        s.frequency.push_back(static_cast<double>(k) * trace.sample_rate / static_cast<double>(s.n_fft));
        s.amplitude.push_back((edge ? 1.0 : 2.0) * std::abs(spec[k]) / s.coherent_gain);
    }
    return s;
}

double spectrum_energy(const AmplitudeSpectrum& s)
{
    const std::size_t n_half = s.n_fft / 2;
    double e = 0.0;
    for (std::size_t k = 0; k < s.amplitude.size(); ++k) {
        const bool edge = k == 0 || (s.n_fft % 2 == 0 && k == n_half);
        const double mag = s.amplitude[k] * s.coherent_gain / (edge ? 1.0 : 2.0);
        e += (edge ? 1.0 : 2.0) * mag * mag;
    }
    return e / static_cast<double>(s.n_fft);
}

void write_spectrum_csv(const AmplitudeSpectrum& s, const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw ModelError("cannot write " + path);
    out << "frequency_hz,amplitude\n";
    char line[96];
    for (std::size_t k = 0; k < s.frequency.size(); ++k) {
        std::snprintf(line, sizeof line, "%.17g,%.17g\n", s.frequency[k], s.amplitude[k]);
        out << line;
    }
}

// ---------------------------------------------------------------------------
// Echo extraction

double default_gate_half_width(const SequenceTimeline& tl)
{
    if (tl.pulses.empty()) throw ModelError("sequence has no pulses");
    return 3.0 * tl.pulses.front().fwhm();
}

EchoPeak extract_echo(const EmissionRecord& rec, const PathwayPrediction& prediction, double gate_half_width, double floor)
{
    if (!(gate_half_width > 0.0)) throw ModelError("gate half width must be positive");
    const auto q = static_cast<Eigen::Index>(rec.pair_index(prediction.echo_transition));
    const double from = prediction.echo_time - gate_half_width;
    const double to = prediction.echo_time + gate_half_width;
    EchoPeak best;
    double peak = -1.0;
    for (std::size_t wi = 0; wi < rec.windows.size(); ++wi) {
        const auto& w = rec.windows[wi];
        for (Eigen::Index k = 0; k < w.field.rows(); ++k) {
            const double t = w.time(static_cast<std::size_t>(k));
            if (t < from || t > to) continue;
            const double a = std::abs(w.field(k, q));
            if (a > peak) {
                peak = a;
                best.time = t;
                best.amplitude = w.field(k, q);
                best.window = wi;
            }
        }
    }
    if (peak < 0.0)
        throw NumericalError("no samples of " + to_string(prediction.echo_transition) + " inside the echo gate [" + fmt(from) +
                             ", " + fmt(to) + "] s");
    if (!(peak > floor))
        throw NumericalError("no echo on " + to_string(prediction.echo_transition) + ": gated peak " + fmt(peak) +
                             " does not exceed the floor " + fmt(floor));
    best.normalized = rec.input_peak > 0.0 ? peak / rec.input_peak : 0.0;
    return best;
}

// ---------------------------------------------------------------------------
// Decay fits

DecayModel decay_model_from_string(const std::string& s)
{
    if (s == "exponential") return DecayModel::exponential;
    if (s == "gaussian") return DecayModel::gaussian;
    if (s == "lorentzian_ft") return DecayModel::lorentzian_ft;
    if (s == "voigt_ft") return DecayModel::voigt_ft;
    throw ModelError("unknown decay model '" + s + "'");
}

std::string to_string(DecayModel m)
{
    switch (m) {
    case DecayModel::exponential: return "exponential";
    case DecayModel::gaussian: return "gaussian";
    case DecayModel::lorentzian_ft: return "lorentzian_ft";
    case DecayModel::voigt_ft: return "voigt_ft";
    }
    return "?";
}

double decay_value(DecayModel m, const std::vector<double>& p, double t)
{
    auto gauss = [&](double sigma) { return std::exp(-0.5 * std::pow(two_pi * sigma * t, 2)); };
    switch (m) {
    case DecayModel::exponential: return p.at(0) * std::exp(-t / p.at(1));
    case DecayModel::gaussian: return p.at(0) * gauss(p.at(1));
    case DecayModel::lorentzian_ft: return p.at(0) * std::exp(-two_pi * p.at(1) * t);
    case DecayModel::voigt_ft: return p.at(0) * std::exp(-t / p.at(1)) * gauss(p.at(2));
    }
    return 0.0;
}

double DecayFit::param(const std::string& name) const
{
    for (std::size_t k = 0; k < names.size(); ++k)
        if (names[k] == name) return params[k];
    throw ModelError("fit has no parameter '" + name + "'");
}

namespace {

/// Scaled model y = A exp(-r tau - q^2 tau^2 / 2) with the unused terms
/// switched off; parameters are (A, r, q) restricted to the active ones.
struct ScaledDecay : Eigen::DenseFunctor<double> {
    const Eigen::VectorXd& tau;
    const Eigen::VectorXd& y;
    bool use_r;
    bool use_q;

    ScaledDecay(const Eigen::VectorXd& tau_, const Eigen::VectorXd& y_, bool r, bool q)
        : DenseFunctor(1 + int(r) + int(q), static_cast<int>(tau_.size())), tau(tau_), y(y_), use_r(r), use_q(q)
    {
    }

    double r_of(const InputType& x) const { return use_r ? x[1] : 0.0; }
    double q_of(const InputType& x) const { return use_q ? x[use_r ? 2 : 1] : 0.0; }

    int operator()(const InputType& x, ValueType& f) const
    {
        const double r = r_of(x);
        const double q = q_of(x);
        for (Eigen::Index i = 0; i < tau.size(); ++i)
            f[i] = x[0] * std::exp(-r * tau[i] - 0.5 * q * q * tau[i] * tau[i]) - y[i];
        return 0;
    }

    int df(const InputType& x, JacobianType& j) const
    {
        const double r = r_of(x);
        const double q = q_of(x);
        for (Eigen::Index i = 0; i < tau.size(); ++i) {
            const double e = std::exp(-r * tau[i] - 0.5 * q * q * tau[i] * tau[i]);
            Eigen::Index c = 0;
            j(i, c++) = e;
            if (use_r) j(i, c++) = -x[0] * tau[i] * e;
            if (use_q) j(i, c++) = -x[0] * q * tau[i] * tau[i] * e;
        }
        return 0;
    }
};

double t_quantile(int dof)
{
    if (dof < 1) return std::numeric_limits<double>::infinity();
    const boost::math::students_t dist(dof);
    return boost::math::quantile(boost::math::complement(dist, 0.025));
}

/// Half-widths from s^2 (J^T J)^-1; infinite where J is rank deficient.
Eigen::VectorXd confidence(const Eigen::MatrixXd& jac, double rss, int dof)
{
    const auto p = jac.cols();
    Eigen::VectorXd half = Eigen::VectorXd::Constant(p, std::numeric_limits<double>::infinity());
    if (dof < 1) return half;
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(jtj);
    lu.setThreshold(1e-12);
    if (!lu.isInvertible()) return half;
    const Eigen::MatrixXd cov = lu.inverse() * (rss / dof);
    const double tq = t_quantile(dof);
    for (Eigen::Index k = 0; k < p; ++k) half[k] = tq * std::sqrt(std::max(0.0, cov(k, k)));
    return half;
}

}  // namespace

DecayFit fit_decay(const std::vector<double>& delay, const std::vector<double>& amplitude, DecayModel model)
{
    const std::size_t n = delay.size();
    if (amplitude.size() != n) throw ModelError("delay and amplitude lists differ in length");
    const std::size_t n_params = model == DecayModel::voigt_ft ? 3 : 2;
    if (n < n_params) throw ModelError("fit needs at least " + std::to_string(n_params) + " points");
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(delay[i])) throw ModelError("delays must be finite");
        if (!(amplitude[i] > 0.0) || !std::isfinite(amplitude[i])) throw ModelError("amplitudes must be positive");
        for (std::size_t k = 0; k < i; ++k)
            if (delay[k] == delay[i]) throw ModelError("delays must be distinct");
    }

    double ts = 0.0;
    for (const double t : delay) ts = std::max(ts, std::abs(t));
    if (!(ts > 0.0)) throw NumericalError("degenerate design matrix: all delays are zero");
    const double a_scale = *std::max_element(amplitude.begin(), amplitude.end());
    Eigen::VectorXd tau(static_cast<Eigen::Index>(n));
    Eigen::VectorXd y(static_cast<Eigen::Index>(n));
    Eigen::VectorXd ly(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        tau[static_cast<Eigen::Index>(i)] = delay[i] / ts;
        y[static_cast<Eigen::Index>(i)] = amplitude[i] / a_scale;
        ly[static_cast<Eigen::Index>(i)] = std::log(y[static_cast<Eigen::Index>(i)]);
    }

    // Log-polynomial least squares: the exponential fit itself and the start
    // for the nonlinear models.
    auto log_fit = [&](bool linear, bool quadratic) {
        const Eigen::Index cols = 1 + int(linear) + int(quadratic);
        Eigen::MatrixXd d(static_cast<Eigen::Index>(n), cols);
        for (Eigen::Index i = 0; i < d.rows(); ++i) {
            Eigen::Index c = 0;
            d(i, c++) = 1.0;
            if (linear) d(i, c++) = tau[i];
            if (quadratic) d(i, c++) = tau[i] * tau[i];
        }
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d);
        if (qr.rank() < cols) throw NumericalError("degenerate design matrix for the " + to_string(model) + " fit");
        return std::pair<Eigen::MatrixXd, Eigen::VectorXd>{d, qr.solve(ly)};
    };

    DecayFit fit;
    fit.model = model;
    fit.dof = static_cast<int>(n) - static_cast<int>(n_params);

    if (model == DecayModel::exponential) {
        const auto [d, b] = log_fit(true, false);
        if (!(b[1] < 0.0)) throw NumericalError("exponential fit gives a non-positive T2 (amplitude does not decay)");
        const double a0 = a_scale * std::exp(b[0]);
        const double t2 = -ts / b[1];
        const Eigen::VectorXd res = ly - d * b;
        const Eigen::VectorXd half = confidence(d, res.squaredNorm(), fit.dof);
        fit.names = {"A", "T2"};
        fit.params = {a0, t2};
        fit.ci_half_width = {a0 * half[0], t2 * t2 / ts * half[1]};
    } else {
        const bool use_r = model != DecayModel::gaussian;
        const bool use_q = model != DecayModel::lorentzian_ft;
        const auto [d, b] = log_fit(use_r, use_q);
        Eigen::VectorXd x(static_cast<Eigen::Index>(n_params));
        x[0] = std::exp(b[0]);
        Eigen::Index c = 1;
        if (use_r) x[c++] = std::max(-b[1], 1e-3);
        if (use_q) x[c++] = std::sqrt(std::max(-2.0 * b[use_r ? 2 : 1], 1e-3));

        ScaledDecay f(tau, y, use_r, use_q);
        Eigen::LevenbergMarquardt<ScaledDecay> lm(f);
        lm.setXtol(1e-15);
        lm.setFtol(1e-15);
        lm.setGtol(0.0);
        lm.setMaxfev(4000);
        const auto status = lm.minimize(x);
        if (status == Eigen::LevenbergMarquardtSpace::ImproperInputParameters)
            throw NumericalError("Levenberg-Marquardt rejected the " + to_string(model) + " problem");

        Eigen::VectorXd fv(static_cast<Eigen::Index>(n));
        Eigen::MatrixXd jac(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n_params));
        f(x, fv);
        f.df(x, jac);
        const Eigen::VectorXd half = confidence(jac, fv.squaredNorm(), fit.dof);

        const double a0 = a_scale * x[0];
        fit.params.push_back(a0);
        fit.ci_half_width.push_back(a_scale * half[0]);
        fit.names.push_back("A");
        c = 1;
        if (use_r) {
            const double r = x[c];
            if (!(r > 0.0)) throw NumericalError(to_string(model) + " fit gives a non-positive decay rate");
            if (model == DecayModel::lorentzian_ft) {
                fit.names.push_back("gamma");
                fit.params.push_back(r / (two_pi * ts));
                fit.ci_half_width.push_back(half[c] / (two_pi * ts));
            } else {
                fit.names.push_back("T2");
                fit.params.push_back(ts / r);
                fit.ci_half_width.push_back(ts / (r * r) * half[c]);
            }
            ++c;
        }
        if (use_q) {
            fit.names.push_back("sigma");
            fit.params.push_back(std::abs(x[c]) / (two_pi * ts));
            fit.ci_half_width.push_back(half[c] / (two_pi * ts));
        }
    }
    fit.amplitude = fit.params[0];
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) rss += std::pow(amplitude[i] - fit.value(delay[i]), 2);
    fit.residual_norm = std::sqrt(rss);
    return fit;
}

nlohmann::json to_json(const DecayFit& f)
{
    nlohmann::json params = nlohmann::json::object();
    nlohmann::json ci = nlohmann::json::object();
    for (std::size_t k = 0; k < f.names.size(); ++k) {
        params[f.names[k]] = f.params[k];
        // JSON has no infinity; a missing half width is written as null.
        ci[f.names[k]] = std::isfinite(f.ci_half_width[k]) ? nlohmann::json(f.ci_half_width[k]) : nlohmann::json(nullptr);
    }
    return {{"model", to_string(f.model)}, {"params", params},       {"ci_half_width", ci},
            {"amplitude", f.amplitude},   {"residual_norm", f.residual_norm}, {"dof", f.dof}};
}

double four_level_decay(double tau_a, double tau_b, double t2_opt, double sigma_g, double sigma_e)
{
    const double optical = t2_opt > 0.0 ? std::exp(-2.0 * tau_a / t2_opt) : 1.0;
    const double g = two_pi * sigma_g * (tau_a + tau_b);
    const double e = two_pi * sigma_e * tau_a;
    return optical * std::exp(-0.5 * (g * g + e * e));
}

double effective_t2(const WidthCalibration& c, double sigma_g)
{
    std::vector<double> t;
    std::vector<double> a;
    for (const double ta : c.tau_a) {
        t.push_back(2.0 * ta + c.tau_b);
        a.push_back(four_level_decay(ta, c.tau_b, c.t2_opt, sigma_g, c.sigma_e_ratio * sigma_g));
    }
    return fit_decay(t, a, DecayModel::exponential).param("T2");
}

double calibrate_gaussian_width(const WidthCalibration& c)
{
    if (c.tau_a.size() < 2) throw ModelError("calibration needs at least two tau_a values");
    if (!(c.target_t2 > 0.0) || !(c.target_t2 < c.t2_opt))
        throw ModelError("target T2 " + fmt(c.target_t2) + " s must lie below the optical T2 " + fmt(c.t2_opt) + " s");
    auto f = [&](double sigma) {
        try {
            return effective_t2(c, sigma) - c.target_t2;
        } catch (const ModelError&) {
            // Amplitudes underflowed: far too much dephasing.
            return -c.target_t2;
        }
    };
    double lo = 0.0;
    double f_lo = f(lo);
    double hi = 1e3;
    double f_hi = f(hi);
    for (int k = 0; k < 60 && f_hi > 0.0; ++k) {
        lo = hi;
        f_lo = f_hi;
        hi *= 2.0;
        f_hi = f(hi);
    }
    if (f_hi > 0.0) throw ModelError("no Gaussian width reaches the target T2 " + fmt(c.target_t2) + " s");
    boost::uintmax_t iters = 200;
    const auto [a, b] = boost::math::tools::toms748_solve(f, lo, hi, f_lo, f_hi,
                                                          boost::math::tools::eps_tolerance<double>(45), iters);
    return 0.5 * (a + b);
}

// ---------------------------------------------------------------------------
// Phase matching

namespace {

constexpr double speed_of_light = 299792458.0;

Vec3 wavevector(const Beam& b)
{
    const double norm = std::sqrt(b.direction[0] * b.direction[0] + b.direction[1] * b.direction[1] +
                                  b.direction[2] * b.direction[2]);
    if (!(norm > 0.0)) throw ModelError("beam direction must be non-zero");
    if (!(b.wavelength > 0.0)) throw ModelError("beam wavelength must be positive");
    const double k = two_pi / b.wavelength / norm;
    return {k * b.direction[0], k * b.direction[1], k * b.direction[2]};
}

PhaseMatchResult close(const Vec3& k_echo, double echo_wavelength, double length)
{
    if (!(echo_wavelength > 0.0)) throw ModelError("echo wavelength must be positive");
    if (!(length > 0.0)) throw ModelError("sample length must be positive");
    const double mag = std::sqrt(k_echo[0] * k_echo[0] + k_echo[1] * k_echo[1] + k_echo[2] * k_echo[2]);
    if (!(mag > 0.0)) throw ModelError("echo wavevector vanishes");
    PhaseMatchResult r;
    r.k_echo = k_echo;
    const double dk = mag - two_pi / echo_wavelength;
    for (int c = 0; c < 3; ++c) r.delta_k[c] = dk * k_echo[c] / mag;
    const double x = 0.5 * std::abs(dk) * length;
    const double sinc = x == 0.0 ? 1.0 : std::sin(x) / x;
    r.penalty = sinc * sinc;
    return r;
}

}  // namespace

double transition_wavelength(const LevelSystem& ls, const Transition& t, double input_wavelength)
{
    if (!(input_wavelength > 0.0)) throw ModelError("input wavelength must be positive");
    const Transition in = ls.lambda().input();
    const double nu = speed_of_light / input_wavelength + transition_frequency(ls, t.ground, t.excited) -
                      transition_frequency(ls, in.ground, in.excited);
    return speed_of_light / nu;
}

PhaseMatchResult phase_match_four_level(const Beam& in, const Beam& pi1, const Beam& pi2, double echo_wavelength,
                                        double length)
{
    const Vec3 a = wavevector(in);
    const Vec3 b = wavevector(pi1);
    const Vec3 c = wavevector(pi2);
    return close({-a[0] + b[0] + c[0], -a[1] + b[1] + c[1], -a[2] + b[2] + c[2]}, echo_wavelength, length);
}

PhaseMatchResult phase_match_two_level(const Beam& in, const Beam& pi, double echo_wavelength, double length)
{
    const Vec3 a = wavevector(in);
    const Vec3 b = wavevector(pi);
    return close({2.0 * b[0] - a[0], 2.0 * b[1] - a[1], 2.0 * b[2] - a[2]}, echo_wavelength, length);
}

nlohmann::json to_json(const PhaseMatchResult& r)
{
    const double dk = std::sqrt(r.delta_k[0] * r.delta_k[0] + r.delta_k[1] * r.delta_k[1] + r.delta_k[2] * r.delta_k[2]);
    return {{"k_echo", r.k_echo}, {"delta_k", r.delta_k}, {"delta_k_norm", dk}, {"penalty", r.penalty}};
}

}  // namespace dlecho
