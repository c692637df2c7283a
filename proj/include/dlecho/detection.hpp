// Heterodyne synthesis, amplitude spectra, echo extraction, decay fits and
// phase matching: the analysis applied to EmissionRecords.

#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dlecho/ensemble.hpp"

namespace dlecho {

// ---------------------------------------------------------------------------
// Heterodyne detection

struct HeterodyneConfig {
    /// LO frequency in the manifold-offset convention (Hz); NaN selects the
    /// echo transition minus 5 MHz.
    double lo_frequency = std::numeric_limits<double>::quiet_NaN();
    /// Standard deviation of additive white noise.
    double noise_stdev = 0.0;
    std::uint64_t seed = 1;
    /// Add the incident drive to the emitted field (the detected light).
    bool include_drive = true;
    /// One-sided signal bandwidth (Hz); 0 estimates it from the record.
    double bandwidth = 0.0;
};

struct HeterodyneTrace {
    double t0 = 0.0;
    double sample_rate = 0.0;
    std::vector<double> samples;
    std::vector<Transition> pairs;
    /// Beat frequency of each pair against the LO (Hz).
    std::vector<double> beat;
    double noise_stdev = 0.0;

    double time(std::size_t k) const { return t0 + static_cast<double>(k) / sample_rate; }
    /// Beat frequency of a transition; throws ModelError if absent.
    double beat_of(const Transition& t) const;
};

/// Echo transition minus 5 MHz: every double-Lambda beat is then positive and
/// distinct.
double default_lo_frequency(const LevelSystem& ls);

/// s(t) = sum_ij Re[E_ij(t) exp(i 2 pi f_ij t)] + noise on one observation
/// window, with f_ij = omega_ij - f_LO. Throws ModelError when two carrying
/// pairs share a beat or the sample rate aliases the beats.
HeterodyneTrace heterodyne(const EmissionRecord& rec, std::size_t window, const LevelSystem& ls,
                           const HeterodyneConfig& cfg = {});

/// Smallest B such that all but `fraction` of the energy of the
/// Hann-tapered complex envelope lies within |f| <= B.
double envelope_bandwidth(const std::vector<cplx>& envelope, double sample_rate, double fraction = 1e-6);

// ---------------------------------------------------------------------------
// Spectra

enum class Taper { hann, rectangular };

Taper taper_from_string(const std::string& s);

struct AmplitudeSpectrum {
    std::vector<double> frequency;
    /// Single-sided amplitude; a unit sinusoid on a bin reads 1.
    std::vector<double> amplitude;
    /// Sum of the taper weights.
    double coherent_gain = 0.0;
    std::size_t n_window = 0;
    std::size_t n_fft = 0;
    /// Energy of the tapered samples, sum (w x)^2.
    double windowed_energy = 0.0;

    double bin_width() const;
    /// Largest amplitude within one bin of f.
    double amplitude_near(double f) const;
};

/// DFT magnitude of the samples with time in [from, to], tapered and zero
/// padded to `pad_factor` times the window length. Throws ModelError for an
/// empty window or one outside the trace.
AmplitudeSpectrum amplitude_spectrum(const HeterodyneTrace& trace, double from, double to, Taper taper = Taper::hann,
                                     int pad_factor = 1);

/// Energy recovered from the spectrum by Parseval's theorem; equals
/// windowed_energy.
double spectrum_energy(const AmplitudeSpectrum& s);

void write_spectrum_csv(const AmplitudeSpectrum& s, const std::string& path);

// ---------------------------------------------------------------------------
// Echo extraction

struct EchoPeak {
    double time = 0.0;
    cplx amplitude{};
    /// |amplitude| over the peak incident input amplitude, 0 without input.
    double normalized = 0.0;
    std::size_t window = 0;
};

/// Default gate: three input-pulse FWHM either side of the predicted time.
double default_gate_half_width(const SequenceTimeline& tl);

/// Peak |E| on the predicted transition within the gate around the
/// predicted time. Throws NumericalError if the peak does not exceed the
/// floor; the message states the floor.
EchoPeak extract_echo(const EmissionRecord& rec, const PathwayPrediction& prediction, double gate_half_width,
                      double floor = 1e-12);

// ---------------------------------------------------------------------------
// Decay fits

enum class DecayModel { exponential, gaussian, lorentzian_ft, voigt_ft };

DecayModel decay_model_from_string(const std::string& s);
std::string to_string(DecayModel m);

/// Amplitude of a decay model at delay t for parameters in DecayFit order.
double decay_value(DecayModel m, const std::vector<double>& params, double t);

struct DecayFit {
    DecayModel model = DecayModel::exponential;
    /// exponential: A, T2 (s). gaussian: A, sigma (Hz) with exp(-(2 pi sigma t)^2/2).
    /// lorentzian_ft: A, gamma (Hz HWHM) with exp(-2 pi gamma t).
    /// voigt_ft: A, T2 (s), sigma (Hz).
    std::vector<std::string> names;
    std::vector<double> params;
    /// 95 % confidence half-widths (Student t); infinite without spare points.
    std::vector<double> ci_half_width;
    /// Zero-delay extrapolation A.
    double amplitude = 0.0;
    /// Euclidean norm of the amplitude residuals.
    double residual_norm = 0.0;
    int dof = 0;

    double param(const std::string& name) const;
    double value(double t) const { return decay_value(model, params, t); }
};

/// Exponential fits are linear least squares in log amplitude, the others
/// Levenberg-Marquardt in amplitude. Throws ModelError for non-positive
/// amplitudes, repeated delays or too few points, NumericalError for a
/// degenerate design or a non-positive decay constant.
DecayFit fit_decay(const std::vector<double>& delay, const std::vector<double>& amplitude, DecayModel model);

nlohmann::json to_json(const DecayFit& f);

/// Echo amplitude of the four-level echo with optical T2 and Gaussian
/// ground and excited spreads, normalized to 1 at zero delay: the optical
/// coherence lives 2 tau_a, delta_g dephases over tau_a + tau_b and
/// delta_e over tau_a.
double four_level_decay(double tau_a, double tau_b, double t2_opt, double sigma_g, double sigma_e);

struct WidthCalibration {
    double t2_opt = 150e-6;
    double target_t2 = 34e-6;
    std::vector<double> tau_a;
    double tau_b = 0.0;
    /// sigma_e = ratio * sigma_g.
    double sigma_e_ratio = 1.0;
};

/// Effective T2 of an exponential fit to four_level_decay against the total
/// delay 2 tau_a + tau_b.
double effective_t2(const WidthCalibration& c, double sigma_g);

/// Ground spread sigma_g (Hz) for which effective_t2 meets the target.
/// Throws ModelError if the target is not below t2_opt.
double calibrate_gaussian_width(const WidthCalibration& c);

// ---------------------------------------------------------------------------
// Phase matching

struct Beam {
    Vec3 direction{0.0, 0.0, 1.0};
    double wavelength = 605.977e-9;
};

struct PhaseMatchResult {
    Vec3 k_echo{};
    /// (|k_echo| - 2 pi / lambda_echo) along the echo direction (rad/m).
    Vec3 delta_k{};
    double penalty = 1.0;
};

/// Vacuum wavelength of a transition given the wavelength of the input
/// transition.
double transition_wavelength(const LevelSystem& ls, const Transition& t, double input_wavelength = 605.977e-9);

/// Four-level echo: k_echo = -k_in + k_pi1 + k_pi2.
PhaseMatchResult phase_match_four_level(const Beam& in, const Beam& pi1, const Beam& pi2, double echo_wavelength,
                                        double length);
/// Two-level echo: k_echo = 2 k_pi - k_in.
PhaseMatchResult phase_match_two_level(const Beam& in, const Beam& pi, double echo_wavelength, double length);

nlohmann::json to_json(const PhaseMatchResult& r);

}  // namespace dlecho
