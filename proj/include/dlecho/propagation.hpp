// Weak-field forward propagation through an optically thick feature.
//
// alphaL is the intensity optical depth (transmission e^{-alphaL}); field
// exponents carry alphaL/2. The population factor s is +1 for an absorbing
// class and -1 for a fully inverted one.

#pragma once

#include <functional>
#include <vector>

#include "dlecho/core_model.hpp"

namespace dlecho {

struct Medium {
    double alphaL = 0.0;
    /// Normalized absorption lineshape vs optical detuning (Hz), max 1.
    std::function<double(double)> profile = [](double) { return 1.0; };
    int n_slices = 64;

    void validate() const;
};

/// Profile proportional to the optical detuning distribution, peak 1.
Medium medium_from_distribution(double alphaL, const Distribution& optical, int n_slices = 64);
/// Linear interpolation in a sampled profile (zero outside the table).
Medium medium_from_table(double alphaL, std::vector<double> detuning_hz, std::vector<double> profile, int n_slices = 64);

/// E_out = E_in exp(-(alphaL/2) profile(f) s(f)) for each spectral sample.
std::vector<cplx> transmit_weak_pulse(const Medium& m, const std::vector<double>& freq_hz, const std::vector<cplx>& spectrum,
                                      const std::function<double(double)>& s = [](double) { return 1.0; });

/// Exit amplitude, relative to the thin-sample value, of a field radiated by
/// a uniform slab whose source follows the input attenuation
/// exp(-b_in zeta) while the emitted field sees exp(-b_out zeta). Solves
/// dG/dzeta = -b_out G + exp(-b_in zeta), G(0) = 0 with RK4 over `n_slices`;
/// throws NumericalError if doubling the slices changes G by more than `tol`
/// (relative).
double slab_gain(double b_in, double b_out, int n_slices, double tol = 5e-3);

/// Exit amplitude of a field with no source: dE/dzeta = -b E, E(0) = 1,
/// integrated with RK4 over `n_slices`.
double slab_transmission(double b, int n_slices);

/// Same quantity as slab_gain in closed form.
double slab_gain_exact(double b_in, double b_out);

/// Coupling constant of the thin-sample emission, chosen so that a weak
/// pulse produces the forward field -(alphaL/2) E_in at the line centre.
double thin_sample_coupling(double alphaL, const Distribution& optical, double reference_rabi);

}  // namespace dlecho
