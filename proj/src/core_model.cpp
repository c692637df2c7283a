#include "dlecho/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <boost/math/special_functions/erf.hpp>

namespace dlecho {

std::string to_string(const Transition& t)
{
    return "w" + std::to_string(t.ground) + std::to_string(t.excited);
}

LevelSystem::LevelSystem(LevelSystemParams params) : p_(std::move(params))
{
    n_ground_ = static_cast<int>(p_.ground_splittings_hz.size()) + 1;
    n_excited_ = static_cast<int>(p_.excited_splittings_hz.size()) + 1;

    if (p_.dipole_strengths.size() == 0)
        p_.dipole_strengths = Eigen::MatrixXd::Ones(n_ground_, n_excited_);
    if (p_.branching.size() == 0)
        p_.branching = Eigen::MatrixXd::Constant(n_ground_, n_excited_, 1.0 / n_ground_);

    energies_.assign(n_levels(), 0.0);
    for (int g = 1; g < n_ground_; ++g)
        energies_[g] = energies_[g - 1] + p_.ground_splittings_hz[g - 1];
    for (int e = 1; e < n_excited_; ++e)
        energies_[n_ground_ + e] = energies_[n_ground_ + e - 1] + p_.excited_splittings_hz[e - 1];

    validate();
}

double LevelSystem::level_energy(int level) const
{
    if (level < 1 || level > n_levels())
        throw ModelError("level index " + std::to_string(level) + " out of range");
    return energies_[level - 1];
}

double LevelSystem::dipole(int ground, int excited) const
{
    if (!is_ground(ground) || !is_excited(excited))
        throw ModelError("not an optical transition: " + std::to_string(ground) + "-" + std::to_string(excited));
    return p_.dipole_strengths(ground - 1, excited - 1 - n_ground_);
}

double LevelSystem::branching(int ground, int excited) const
{
    if (!is_ground(ground) || !is_excited(excited))
        throw ModelError("not an optical transition: " + std::to_string(ground) + "-" + std::to_string(excited));
    return p_.branching(ground - 1, excited - 1 - n_ground_);
}

std::vector<Transition> LevelSystem::optical_transitions() const
{
    std::vector<Transition> out;
    for (int g = 1; g <= n_ground_; ++g)
        for (int e = n_ground_ + 1; e <= n_levels(); ++e)
            out.push_back({g, e});
    return out;
}

double LevelSystem::input_echo_offset() const
{
    return transition_frequency(*this, p_.lambda.input_ground, p_.lambda.input_excited) -
           transition_frequency(*this, p_.lambda.storage_ground, p_.lambda.echo_excited);
}

void LevelSystem::validate() const
{
    if (n_ground_ < 1 || n_excited_ < 1)
        throw ModelError("each manifold needs at least one level");
    for (double s : p_.ground_splittings_hz)
        if (!(s >= 0.0)) throw ModelError("ground splittings must be non-negative");
    for (double s : p_.excited_splittings_hz)
        if (!(s >= 0.0)) throw ModelError("excited splittings must be non-negative");
    if (p_.dipole_strengths.rows() != n_ground_ || p_.dipole_strengths.cols() != n_excited_)
        throw ModelError("dipole_strengths must be n_ground x n_excited");
    if (p_.branching.rows() != n_ground_ || p_.branching.cols() != n_excited_)
        throw ModelError("branching must be n_ground x n_excited");
    if (p_.dipole_strengths.minCoeff() < 0.0 || std::abs(p_.dipole_strengths.maxCoeff() - 1.0) > 1e-12)
        throw ModelError("dipole strengths must be non-negative with maximum normalized to 1");
    if (p_.branching.minCoeff() < 0.0)
        throw ModelError("branching ratios must be non-negative");
    for (int e = 0; e < n_excited_; ++e)
        if (std::abs(p_.branching.col(e).sum() - 1.0) > 1e-12)
            throw ModelError("branching ratios out of excited level " + std::to_string(n_ground_ + e + 1) +
                             " must sum to 1");
    for (double t : {p_.t1_opt, p_.t2_opt, p_.t1_spin, p_.t2_spin})
        if (!(t > 0.0)) throw ModelError("lifetimes and coherence times must be positive");
    if (1.0 / p_.t2_opt < 1.0 / (2.0 * p_.t1_opt) * (1.0 - 1e-12))
        throw ModelError("T2_opt exceeds 2*T1_opt");
    if (1.0 / p_.t2_spin < 1.0 / (2.0 * p_.t1_spin) * (1.0 - 1e-12))
        throw ModelError("T2_spin exceeds 2*T1_spin");

    const auto& l = p_.lambda;
    if (!is_ground(l.input_ground) || !is_ground(l.storage_ground) || l.input_ground == l.storage_ground ||
        !is_excited(l.echo_excited) || !is_excited(l.input_excited) || l.echo_excited == l.input_excited)
        throw ModelError("double-lambda roles must name two distinct ground and two distinct excited levels");
}

LevelSystem build_default_system()
{
    return build_default_system(10.2e6, 4.6e6);
}

LevelSystem build_default_system(double storage_splitting_hz, double excited_splitting_hz)
{
    LevelSystemParams p;
    p.ground_splittings_hz = {17.3e6, storage_splitting_hz};
    p.excited_splittings_hz = {excited_splitting_hz, 4.8e6};
    LevelSystem ls(p);
    if (storage_splitting_hz == 10.2e6 && excited_splitting_hz == 4.6e6 &&
        std::abs(ls.input_echo_offset() - default_input_echo_offset_hz) > 1e-6)
        throw ModelError("default splittings do not reproduce the 14.8 MHz input/echo offset");
    return ls;
}

double transition_frequency(const LevelSystem& ls, int i, int j)
{
    return ls.level_energy(j) - ls.level_energy(i);
}

// ---------------------------------------------------------------------------
// JSON

namespace {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m)
{
    auto rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        auto row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j)
{
    if (!j.is_array() || j.empty()) throw ModelError("expected a non-empty matrix");
    Eigen::MatrixXd m(j.size(), j[0].size());
    for (std::size_t r = 0; r < j.size(); ++r) {
        if (j[r].size() != j[0].size()) throw ModelError("ragged matrix");
        for (std::size_t c = 0; c < j[r].size(); ++c) m(r, c) = j[r][c].get<double>();
    }
    return m;
}

}  // namespace

nlohmann::json to_json(const LevelSystem& ls)
{
    const auto& p = ls.params();
    nlohmann::json j;
    j["manifolds"]["ground"]["splittings_hz"] = p.ground_splittings_hz;
    j["manifolds"]["excited"]["splittings_hz"] = p.excited_splittings_hz;
    j["lifetimes_s"] = {{"T1_opt", p.t1_opt}, {"T2_opt", p.t2_opt}, {"T1_spin", p.t1_spin}, {"T2_spin", p.t2_spin}};
    j["dipole_strengths"] = matrix_to_json(p.dipole_strengths);
    j["branching"] = matrix_to_json(p.branching);
    j["double_lambda"] = {p.lambda.input_ground, p.lambda.storage_ground, p.lambda.echo_excited,
                          p.lambda.input_excited};
    return j;
}

LevelSystem level_system_from_json(const nlohmann::json& j)
{
    try {
        LevelSystemParams p;
        const auto& m = j.at("manifolds");
        p.ground_splittings_hz = m.at("ground").at("splittings_hz").get<std::vector<double>>();
        p.excited_splittings_hz = m.at("excited").at("splittings_hz").get<std::vector<double>>();
        if (j.contains("lifetimes_s")) {
            const auto& l = j["lifetimes_s"];
            p.t1_opt = l.value("T1_opt", p.t1_opt);
            p.t2_opt = l.value("T2_opt", p.t2_opt);
            p.t1_spin = l.value("T1_spin", p.t1_spin);
            p.t2_spin = l.value("T2_spin", p.t2_spin);
        }
        if (j.contains("dipole_strengths")) p.dipole_strengths = matrix_from_json(j["dipole_strengths"]);
        if (j.contains("branching")) p.branching = matrix_from_json(j["branching"]);
        if (j.contains("double_lambda")) {
            auto v = j["double_lambda"].get<std::vector<int>>();
            if (v.size() != 4) throw ModelError("double_lambda needs four levels");
            p.lambda = {v[0], v[1], v[2], v[3]};
        }
        return LevelSystem(std::move(p));
    } catch (const nlohmann::json::exception& e) {
        throw ModelError(std::string("levels.json: ") + e.what());
    }
}

LevelSystem load_level_system(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ModelError("cannot open level system file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ModelError(path + ": " + e.what());
    }
    return level_system_from_json(j);
}

void save_level_system(const LevelSystem& ls, const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw ModelError("cannot write " + path);
    out << to_json(ls).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Distributions

Shape shape_from_string(const std::string& s)
{
    if (s == "gaussian") return Shape::gaussian;
    if (s == "lorentzian") return Shape::lorentzian;
    if (s == "uniform") return Shape::uniform;
    throw ModelError("unknown distribution shape '" + s + "'");
}

std::string to_string(Shape s)
{
    switch (s) {
    case Shape::gaussian: return "gaussian";
    case Shape::lorentzian: return "lorentzian";
    case Shape::uniform: return "uniform";
    }
    return "?";
}

double Distribution::pdf(double x) const
{
    if (is_point()) return x == 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    switch (shape) {
    case Shape::gaussian:
        return std::exp(-0.5 * x * x / (width * width)) / (width * std::sqrt(two_pi));
    case Shape::lorentzian:
        return width / (std::numbers::pi * (x * x + width * width));
    case Shape::uniform:
        return std::abs(x) <= 0.5 * width ? 1.0 / width : 0.0;
    }
    return 0.0;
}

double Distribution::peak_density() const
{
    return pdf(0.0);
}

double Distribution::cdf(double x) const
{
    if (is_point()) return x < 0.0 ? 0.0 : 1.0;
    switch (shape) {
    case Shape::gaussian: return 0.5 * std::erfc(-x / (width * std::numbers::sqrt2));
    case Shape::lorentzian: return 0.5 + std::atan(x / width) / std::numbers::pi;
    case Shape::uniform: return std::clamp(x / width + 0.5, 0.0, 1.0);
    }
    return 0.0;
}

double Distribution::quantile(double u) const
{
    if (!(u > 0.0 && u < 1.0)) throw ModelError("quantile argument must lie in (0, 1)");
    if (is_point()) return 0.0;
    switch (shape) {
    case Shape::gaussian: return width * std::numbers::sqrt2 * boost::math::erf_inv(2.0 * u - 1.0);
    case Shape::lorentzian: return width * std::tan(std::numbers::pi * (u - 0.5));
    case Shape::uniform: return width * (u - 0.5);
    }
    return 0.0;
}

void DetuningModel::validate() const
{
    for (const auto* d : {&optical, &ground, &excited})
        if (!(d->width >= 0.0) || !std::isfinite(d->width))
            throw ModelError("distribution widths must be finite and non-negative");
}

double DetuningTable::max_abs_detuning() const
{
    if (shift.empty()) return 0.0;
    auto [lo, hi] = std::minmax_element(shift.begin(), shift.end());
    return *hi - *lo;
}

DetuningTable class_detunings(const LevelSystem& ls, const AtomClass& c)
{
    // Ground levels other than the storage level carry no hyperfine shift;
    // excited levels other than the echo level carry the bare optical shift.
    const auto& l = ls.lambda();
    DetuningTable t;
    t.shift.assign(ls.n_levels(), 0.0);
    for (int e = ls.n_ground() + 1; e <= ls.n_levels(); ++e) t.shift[e - 1] = c.delta_opt;
    t.shift[l.storage_ground - 1] = c.delta_g;
    t.shift[l.echo_excited - 1] = c.delta_opt - c.delta_e;
    return t;
}

}  // namespace dlecho
