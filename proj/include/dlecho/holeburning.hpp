// Rate-equation model of the spectral preparation: isolate one frequency
// subgroup of the inhomogeneous line and burn a narrow feature back into
// |2>.
//
// A grid point stands for the ions whose omega_25 transition sits at that
// offset from the nominal omega_25. Excited populations are eliminated, so
// pumping moves ground population directly through the branching ratios.

#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dlecho/propagation.hpp"

namespace dlecho {

struct PopulationGrid {
    /// omega_25 offset of the ions at each point (Hz).
    std::vector<double> detuning;
    /// Rows are grid points, columns the ground populations n1, n2, n3.
    Eigen::MatrixX3d n;
    /// offset(i, j) = omega_ij - omega_25 for ground i and excited j
    /// (0-based within the manifolds).
    Eigen::Matrix3d offset;
    /// Squared dipole strengths, same layout.
    Eigen::Matrix3d strength;
    /// Branching beta(i, j) from excited j into ground i.
    Eigen::Matrix3d branching;

    /// Uniform grid over [-half_width, half_width] with equal ground
    /// populations. The step must not exceed 25 kHz.
    static PopulationGrid uniform(const LevelSystem& ls, double half_width = 20e6, double step = 25e3);

    std::size_t size() const { return detuning.size(); }
    /// Largest |n1 + n2 + n3 - 1| over the grid.
    double conservation_error() const;
};

struct PumpField {
    /// Centre of the sweep as an offset from the nominal omega_25 (Hz).
    double center = 0.0;
    double sweep_half_width = 1e6;
    /// Pump rate for a unit-strength transition at full overlap (1/s).
    double rate = 1e3;
    double duration = 0.0;
    /// Homogeneous (Lorentzian FWHM) linewidth of the interaction (Hz).
    double linewidth = 50e3;

    /// Field centred on a named optical transition.
    static PumpField on(const LevelSystem& ls, const Transition& t, double duration, double sweep_half_width = 1e6,
                        double rate = 1e3, double linewidth = 50e3);

    /// Time-averaged overlap with a transition at offset f: a flat top over
    /// the sweep convolved with the Lorentzian, normalized to 1 at the centre.
    double overlap(double f) const;
    void validate() const;
};

/// Fields applied together; they must share one duration.
PopulationGrid apply_pump(const PopulationGrid& grid, const std::vector<PumpField>& fields);
PopulationGrid apply_pump(const PopulationGrid& grid, const PumpField& field);

struct HoleburningConfig {
    double window_half_width = 20e6;
    double step = 25e3;

    double pump_rate = 1e3;
    double linewidth = 50e3;
    double sweep_half_width = 1e6;

    int isolation_cycles = 5;
    double isolation_duration = 12e-3;
    double repump_duration = 2e-3;
    double burn_duration = 10e-3;
    /// omega_35 and omega_34 sweeps alone after the burn, emptying |3>.
    double cleanup_duration = 4e-3;

    /// Requested FWHM of the burned feature (Hz).
    double feature_width = 200e3;
    /// Requested peak optical depth of the feature (intensity convention).
    double alphaL = std::numbers::ln2;
    /// Depth the subgroup would have with all of it in |2>.
    double max_alphaL = 3.0;
    int n_slices = 64;

    void validate() const;
};

/// Stage one: alternate the four swept double-Lambda fields with the omega_15
/// field, finishing with the swept fields, so every other subgroup in the
/// window is parked in a dark state and the target subgroup sits in |1>.
PopulationGrid isolate_subgroup(const PopulationGrid& grid, const LevelSystem& ls, const HoleburningConfig& cfg);

/// Stage two: omega_35 and omega_34 sweeps keep |3> empty while an omega_15
/// sweep of the given half width pumps the target subgroup back into |2>;
/// the two sweeps then run alone for the cleanup duration.
PopulationGrid burn_feature(const PopulationGrid& grid, const LevelSystem& ls, const HoleburningConfig& cfg,
                            double burn_half_width);

/// FWHM of n2 around the origin by linear interpolation; 0 if n2 never
/// reaches half its peak on both sides.
double feature_fwhm(const PopulationGrid& grid);

/// Absorption on omega_25 relative to a full |2>, sum over the nine
/// transitions of the population of the ions resonant at each grid offset.
std::vector<double> absorption_spectrum(const PopulationGrid& grid);

struct PreparedFeature {
    PopulationGrid grid;
    Medium medium;
    double burn_half_width = 0.0;
    double fwhm = 0.0;
    /// Largest depth the prepared population supports.
    double max_alphaL = 0.0;
};

/// Runs both stages, choosing the omega_15 sweep by bisection so the feature
/// FWHM matches the request, and scales the n2 profile to the requested
/// depth. Throws ModelError if the depth or width cannot be reached; the
/// message states the attainable value.
PreparedFeature prepare_feature(const LevelSystem& ls, const HoleburningConfig& cfg);

/// CSV with columns detuning_hz, n1, n2, n3, absorption.
void write_grid_csv(const PopulationGrid& grid, const std::string& path);

}  // namespace dlecho
