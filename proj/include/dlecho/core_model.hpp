// Level structure, transition frequencies and inhomogeneous detuning model
// for a double-Lambda rare-earth ensemble.
//
// Levels are numbered from 1. Ground manifold comes first, then the excited
// manifold. All frequencies are rotating-frame offsets in Hz; the optical gap
// itself never appears.

#pragma once

#include <array>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace dlecho {

using cplx = std::complex<double>;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

/// Raised for malformed model parameters or configuration.
class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when an integration fails its accuracy or invariant checks.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Ground/excited level pair of an optical transition (1-based indices).
struct Transition {
    int ground = 0;
    int excited = 0;

    friend bool operator==(const Transition&, const Transition&) = default;
    friend auto operator<=>(const Transition&, const Transition&) = default;
};

std::string to_string(const Transition& t);

/// Roles of the four levels forming the double-Lambda loop. The input
/// transition is (input_ground, input_excited), the echo transition is
/// (storage_ground, echo_excited).
struct DoubleLambda {
    int input_ground = 2;
    int storage_ground = 3;
    int echo_excited = 4;
    int input_excited = 5;

    Transition input() const { return {input_ground, input_excited}; }
    Transition echo() const { return {storage_ground, echo_excited}; }
    Transition first_transfer() const { return {storage_ground, input_excited}; }
    Transition second_transfer() const { return {input_ground, echo_excited}; }
};

struct LevelSystemParams {
    // Consecutive splittings inside each manifold, Hz. Manifold size is
    // splittings.size() + 1.
    std::vector<double> ground_splittings_hz{17.3e6, 10.2e6};
    std::vector<double> excited_splittings_hz{4.6e6, 4.8e6};
    // Rows: ground levels, columns: excited levels.
    Eigen::MatrixXd dipole_strengths;
    Eigen::MatrixXd branching;
    double t1_opt = 160e-6;
    double t2_opt = 150e-6;
    double t1_spin = 100.0;
    double t2_spin = 1.0;
    DoubleLambda lambda{};
};

class LevelSystem {
public:
    explicit LevelSystem(LevelSystemParams params);

    int n_levels() const { return n_ground_ + n_excited_; }
    int n_ground() const { return n_ground_; }
    int n_excited() const { return n_excited_; }
    bool is_ground(int level) const { return level >= 1 && level <= n_ground_; }
    bool is_excited(int level) const { return level > n_ground_ && level <= n_levels(); }

    /// Offset of a level relative to the lowest level of its manifold, Hz.
    double level_energy(int level) const;
    const std::vector<double>& level_energies() const { return energies_; }

    double dipole(int ground, int excited) const;
    double dipole(const Transition& t) const { return dipole(t.ground, t.excited); }
    /// Probability that decay from `excited` lands in `ground`.
    double branching(int ground, int excited) const;

    double t1_opt() const { return p_.t1_opt; }
    double t2_opt() const { return p_.t2_opt; }
    double t1_spin() const { return p_.t1_spin; }
    double t2_spin() const { return p_.t2_spin; }
    const DoubleLambda& lambda() const { return p_.lambda; }
    const LevelSystemParams& params() const { return p_; }

    /// All ground x excited pairs, ordered by ground then excited.
    std::vector<Transition> optical_transitions() const;
    bool is_optical(const Transition& t) const { return is_ground(t.ground) && is_excited(t.excited); }

    /// Offset between the input and echo transition frequencies
    /// (storage ground splitting plus echo/input excited splitting).
    double input_echo_offset() const;

    /// Throws ModelError when an invariant is broken.
    void validate() const;

private:
    LevelSystemParams p_;
    int n_ground_ = 0;
    int n_excited_ = 0;
    std::vector<double> energies_;
};

/// Six-level Pr:Y2SiO5 site-1 model. The ground and excited splittings are
/// configurable; the defaults place the echo 14.8 MHz below the input.
LevelSystem build_default_system();
LevelSystem build_default_system(double storage_splitting_hz, double excited_splitting_hz);

/// Default input-to-echo frequency offset checked on the default system.
inline constexpr double default_input_echo_offset_hz = 14.8e6;

/// omega_ij = E_j - E_i in the manifold-offset convention; antisymmetric.
double transition_frequency(const LevelSystem& ls, int i, int j);

nlohmann::json to_json(const LevelSystem& ls);
LevelSystem level_system_from_json(const nlohmann::json& j);
LevelSystem load_level_system(const std::string& path);
void save_level_system(const LevelSystem& ls, const std::string& path);

// ---------------------------------------------------------------------------
// Inhomogeneous broadening

enum class Shape { gaussian, lorentzian, uniform };

Shape shape_from_string(const std::string& s);
std::string to_string(Shape s);

/// One-dimensional symmetric detuning distribution centred on zero.
/// `width` is the standard deviation (gaussian), the half width at half
/// maximum (lorentzian) or the full width (uniform). Zero width is a point
/// mass at the origin.
struct Distribution {
    Shape shape = Shape::gaussian;
    double width = 0.0;

    bool is_point() const { return width == 0.0; }
    double pdf(double x) const;
    double peak_density() const;
    double cdf(double x) const;
    double quantile(double u) const;
};

/// Optical shift is common to all optical transitions of one ion; the ground
/// and excited hyperfine shifts perturb the storage and echo splittings.
struct DetuningModel {
    Distribution optical;
    Distribution ground;
    Distribution excited;

    void validate() const;
};

/// One frequency class of the ensemble.
struct AtomClass {
    double delta_opt = 0.0;
    double delta_g = 0.0;
    double delta_e = 0.0;
    double weight = 1.0;
};

/// Per-level frequency shifts of one class. A coherence |a><b| rotates at
/// shift(a) - shift(b); the detuning of transition (i, j) is shift(j) - shift(i).
struct DetuningTable {
    std::vector<double> shift;

    double detuning(int i, int j) const { return shift.at(j - 1) - shift.at(i - 1); }
    double detuning(const Transition& t) const { return detuning(t.ground, t.excited); }
    double max_abs_detuning() const;
};

DetuningTable class_detunings(const LevelSystem& ls, const AtomClass& c);

}  // namespace dlecho
