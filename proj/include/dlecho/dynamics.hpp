// Single-class density-matrix dynamics.
//
// All levels share one interaction picture defined by the nominal level
// energies, so a class enters only through its diagonal shift Hamiltonian
// 2*pi*shift(l)|l><l| and every coherence is already expressed in the common
// frame of the nominal transition frequencies. A pulse on (i, j) adds
// (Omega(t)/2) e^{-i phi} e^{i 2 pi detune t} |i><j| + h.c.

#pragma once

#include <vector>

#include "dlecho/core_model.hpp"
#include "dlecho/sequence.hpp"

namespace dlecho {

using DensityMatrix = Eigen::MatrixXcd;

/// Pure population in one level (1-based).
DensityMatrix pure_state(const LevelSystem& ls, int level);
/// Diagonal state with the given level populations.
DensityMatrix diagonal_state(const Eigen::VectorXd& populations);

/// Throws NumericalError unless rho is Hermitian to 1e-12, has unit trace to
/// 1e-9 and no eigenvalue below -1e-7.
void check_density_matrix(const DensityMatrix& rho);

struct RelaxationSpec {
    Eigen::MatrixXd dephasing;    // gamma_ab for a != b, s^-1
    Eigen::VectorXd decay;        // population decay rate of each level, s^-1
    Eigen::MatrixXd branching;    // (ground, level): share of decay from level landing in ground
    double spin_relaxation = 0.0; // ground populations relax to their mean at this rate
    int n_ground = 0;

    void validate() const;
};

struct RelaxationToggles {
    bool optical_dephasing = true;
    bool optical_decay = true;
    bool spin_dephasing = true;
    bool spin_relaxation = true;
};

RelaxationSpec relaxation_from_system(const LevelSystem& ls, const RelaxationToggles& on = {});
RelaxationSpec no_relaxation(const LevelSystem& ls);

struct IntegratorOptions {
    /// Maximum change of any element when the step is halved; <= 0 skips
    /// the comparison.
    double tol = 1e-6;
    /// Multiplies the default step bound.
    double step_scale = 1.0;
    bool check_invariants = true;
};

/// Largest RK4 step for the given pulses and class.
double max_step(const std::vector<const Pulse*>& active, const DetuningTable& d, double step_scale = 1.0);

/// Integrates over the truncated support of one pulse.
DensityMatrix apply_pulse(const DensityMatrix& rho, const Pulse& p, const DetuningTable& d, const RelaxationSpec& r,
                          double tol = 1e-6);

/// Integrates from t0 to t1 with the given pulses on. Steps never exceed
/// `h_max`.
DensityMatrix integrate_driven(const DensityMatrix& rho, double t0, double t1, const std::vector<const Pulse*>& active,
                               const DetuningTable& d, const RelaxationSpec& r, double h_max);

/// Exact free evolution for `duration` seconds.
DensityMatrix free_evolve(const DensityMatrix& rho, double duration, const DetuningTable& d, const RelaxationSpec& r);

struct WindowTrace {
    ObservationWindow window;
    /// Samples x optical pairs, rho(ground, excited) in the common frame.
    Eigen::MatrixXcd coherence;
    /// Level populations at the first sample of the window.
    Eigen::VectorXd populations;
};

struct ClassTraces {
    std::vector<Transition> pairs;
    std::vector<WindowTrace> windows;
    DetuningTable table;
    DensityMatrix final_state;
};

struct RunOptions {
    IntegratorOptions integrator;
    /// Multiplies the area of every pulse with area >= min_scaled_area.
    double area_scale = 1.0;
    double min_scaled_area = 0.5 * std::numbers::pi;
    /// Starting populations; empty means all population in the input ground
    /// level of the double-Lambda.
    Eigen::VectorXd initial_populations;
};

/// Evolves one class through the timeline and samples every observation
/// window. When `integrator.tol > 0` the whole run is repeated at half step
/// and the traces compared.
ClassTraces run_class(const SequenceTimeline& tl, const AtomClass& c, const LevelSystem& ls, const RelaxationSpec& r,
                      const RunOptions& opts = {});

}  // namespace dlecho
