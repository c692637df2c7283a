// Pulse-sequence language: timed optical pulses and observation windows,
// plus coherence-pathway bookkeeping that predicts when and where an echo
// appears.
//
// Grammar (one statement per line, '#' starts a comment):
//
//   system <file>
//   let <name> = <duration-expr>
//   pulse at=<time> trans=<wIJ|I-J> area=<x>pi env=gauss(fwhm=<dur>)|square(dur=<dur>)
//         [phase=<x>pi] [detune=<freq>] [k=(x,y,z)]
//   observe from=<time> to=<time> rate=<freq>
//
// Times are absolute and refer to the pulse centre. Time expressions may
// combine `let` names and quantities with + - * and parentheses, e.g.
// `at=2*ta+tb`. Units: ns, us, ms, s; Hz, kHz, MHz, GHz.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dlecho/core_model.hpp"

namespace dlecho {

using Vec3 = std::array<double, 3>;

class ParseError : public std::runtime_error {
public:
    ParseError(int line, int column, const std::string& what);
    int line() const { return line_; }
    int column() const { return column_; }

private:
    int line_;
    int column_;
};

/// Gaussian envelopes are truncated at this many FWHM on either side.
inline constexpr double gaussian_truncation_fwhm = 3.0;

struct Envelope {
    enum class Kind { gaussian, square };
    Kind kind = Kind::gaussian;
    double width = 1e-6;  // FWHM for gaussian, duration for square

    friend bool operator==(const Envelope&, const Envelope&) = default;
};

struct Pulse {
    double t_center = 0.0;
    Envelope envelope;
    Transition transition;
    double area = 0.0;             // rad
    double carrier_detuning = 0.0; // Hz
    double phase = 0.0;            // rad
    Vec3 k{0.0, 0.0, 1.0};

    double support_begin() const;
    double support_end() const;
    /// Amplitude FWHM of the envelope; the duration for square pulses.
    double fwhm() const { return envelope.width; }
    /// Peak Rabi frequency (rad/s) giving `area` over the truncated support.
    double peak_rabi() const;
    /// Envelope value in [0, 1] at absolute time t.
    double shape(double t) const;
    double rabi(double t) const { return peak_rabi() * shape(t); }

    friend bool operator==(const Pulse&, const Pulse&) = default;
};

struct ObservationWindow {
    double from = 0.0;
    double to = 0.0;
    double rate = 0.0;  // samples per second

    std::size_t n_samples() const;
    double time(std::size_t k) const { return from + static_cast<double>(k) / rate; }

    friend bool operator==(const ObservationWindow&, const ObservationWindow&) = default;
};

struct SequenceTimeline {
    std::vector<Pulse> pulses;  // sorted by t_center
    std::vector<ObservationWindow> windows;
    std::map<std::string, double> parameters;  // `let` bindings, seconds
    std::string system_file;

    double start_time() const;
    double end_time() const;
    /// Stable 64-bit digest of the canonical printed form.
    std::uint64_t hash() const;

    friend bool operator==(const SequenceTimeline&, const SequenceTimeline&) = default;
};

struct ParseOptions {
    /// Used to resolve named transitions when the program has no `system` line.
    const LevelSystem* system = nullptr;
    /// Directory that relative `system` paths are resolved against.
    std::string base_dir = ".";
    /// Replace the values of `let` bindings (sweeps).
    std::map<std::string, double> overrides;
};

SequenceTimeline parse_sequence(const std::string& text, const ParseOptions& opts = {});
SequenceTimeline parse_sequence_file(const std::string& path, ParseOptions opts = {});

/// Canonical printer; parse(print(t)) reproduces t exactly.
std::string print_sequence(const SequenceTimeline& tl);

/// Throws ParseError(0, 0, ...) on structural problems (overlap of pulses on
/// the same transition, negative times, empty windows).
void validate_timeline(const SequenceTimeline& tl);

/// Warnings for pulses whose bandwidth exceeds 20% of the smallest splitting.
std::vector<std::string> bandwidth_warnings(const SequenceTimeline& tl, const LevelSystem& ls);

// ---------------------------------------------------------------------------

struct PathwayPrediction {
    double echo_time = 0.0;
    Transition echo_transition;
    Vec3 echo_k{};
    int phase_conjugation_count = 0;
    double input_time = 0.0;
    /// Coherence labels |a><b| visited, starting from the input coherence.
    std::vector<std::pair<int, int>> labels;
};

class PathwayError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Follows the coherence written by the first (input) pulse through the
/// remaining pulses treated as ideal transfer pulses.
PathwayPrediction predict_pathway(const SequenceTimeline& tl, const LevelSystem& ls);

/// Canonical two- and four-level echo programs used by the tools and tests.
struct EchoProgram {
    double input_area = 0.05 * std::numbers::pi;
    double input_fwhm = 1e-6;
    double pi_fwhm = 0.6e-6;
    double pi_area = std::numbers::pi;
    double window_half_width = 3e-6;
    double sample_rate = 100e6;
    bool observe_input = true;
    bool include_input = true;
};

std::string two_level_echo_program(double tau, const EchoProgram& p = {});
std::string four_level_echo_program(double tau_a, double tau_b, const EchoProgram& p = {});

}  // namespace dlecho
