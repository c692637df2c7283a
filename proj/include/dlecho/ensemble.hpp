// Inhomogeneous ensemble: class sampling, per-class dynamics and reduction to
// macroscopic emitted fields.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dlecho/dynamics.hpp"
#include "dlecho/propagation.hpp"

namespace dlecho {

enum class Sampling { monte_carlo, grid, gauss_quadrature };

Sampling sampling_from_string(const std::string& s);
std::string to_string(Sampling s);

/// Discrete set of multiplicative pulse-area factors (beam inhomogeneity).
struct AreaSpread {
    std::vector<double> factors{1.0};
    std::vector<double> weights{1.0};
    /// Only pulses at least this large are scaled, so weak inputs keep their area.
    double min_area = 0.5 * std::numbers::pi;

    /// Gaussian spread of relative standard deviation `rel_sigma` discretized
    /// with `n` Gauss-Hermite nodes.
    static AreaSpread gaussian(double rel_sigma, int n = 9);
    /// (2/pi) asin(sqrt(<sin^2(a pi/2)>)): the single factor whose pi-pulse
    /// transfers the same mean population.
    double effective_factor() const;
    void validate() const;
};

enum class PropagationMode { thin, slab };

struct EnsembleSpec {
    DetuningModel model;
    std::size_t n_classes = 256;
    Sampling sampling = Sampling::gauss_quadrature;
    std::uint64_t seed = 1;
    /// Per-dimension node counts (Delta, delta_g, delta_e); zero entries are
    /// derived from n_classes.
    std::array<int, 3> nodes{0, 0, 0};
    /// Grid half-span in units of the distribution width.
    double grid_span = 4.0;
    AreaSpread area;

    PropagationMode mode = PropagationMode::thin;
    double alphaL = std::numbers::ln2;
    int n_slices = 64;
    /// Rabi frequency mapped to unit drive amplitude; 0 picks the first pulse
    /// on the input transition.
    double reference_rabi = 0.0;

    IntegratorOptions integrator;
    /// Every `verify_stride`-th class is run twice for the step-halving check.
    std::size_t verify_stride = 64;
    Eigen::VectorXd initial_populations;

    void validate() const;
};

/// Deterministic given the spec; weights sum to 1.
std::vector<AtomClass> sample_classes(const EnsembleSpec& spec);

/// Probability mass covered by the sampled classes: below 1 only for a grid
/// whose span truncates the distributions.
double sampled_mass(const EnsembleSpec& spec);

/// Gauss-Hermite (probabilists') nodes and weights normalized to sum 1.
void gauss_hermite(int n, std::vector<double>& x, std::vector<double>& w);
/// Gauss-Legendre nodes on [0, 1], weights sum 1.
void gauss_legendre_unit(int n, std::vector<double>& x, std::vector<double>& w);

struct WindowEmission {
    ObservationWindow window;
    /// Samples x optical pairs, in units of the reference drive amplitude.
    Eigen::MatrixXcd field;
    /// Incident drive of every pulse, same layout.
    Eigen::MatrixXcd drive;

    double time(std::size_t k) const { return window.time(k); }
};

struct EmissionRecord {
    std::vector<Transition> pairs;
    std::vector<WindowEmission> windows;

    std::uint64_t seed = 0;
    std::size_t n_classes = 0;
    std::uint64_t timeline_hash = 0;
    double coupling = 1.0;
    double reference_rabi = 0.0;
    /// Peak incident drive amplitude of the input (the first pulse on the
    /// input transition).
    double input_peak = 0.0;
    std::string mode = "thin";
    double alphaL = 0.0;

    int pair_index(const Transition& t) const;
};

/// Thin-sample field E = i kappa sum_k w_k d rho_ge^(k); all class traces are
/// already in the common frame.
EmissionRecord emit(const std::vector<AtomClass>& classes, const std::vector<ClassTraces>& traces, const LevelSystem& ls,
                    double coupling);

/// Incident drive E_in(t) = (Omega(t)/Omega_ref) e^{-i phi} e^{i 2 pi detune t}.
cplx drive_field(const Pulse& p, double t, double reference_rabi);

/// Samples, runs and reduces the whole ensemble. Classes are processed in
/// fixed-size chunks summed in index order, so the result does not depend on
/// the number of threads.
EmissionRecord run_experiment(const SequenceTimeline& tl, const LevelSystem& ls, const EnsembleSpec& spec,
                              const RelaxationSpec& r);

/// Peak |E| on `echo` inside [gate_from, gate_to] divided by the peak incident
/// input amplitude. Throws NumericalError without an input pulse or when the
/// gated field never exceeds `floor`.
double efficiency(const EmissionRecord& rec, const Transition& echo, double gate_from, double gate_to,
                  double floor = 1e-12);

void write_emission_csv(const EmissionRecord& rec, const std::string& path);
nlohmann::json emission_manifest(const EmissionRecord& rec);

}  // namespace dlecho
