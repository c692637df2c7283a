#include "dlecho/holeburning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <unsupported/Eigen/MatrixFunctions>

namespace dlecho {

namespace {

void require_three_by_three(const LevelSystem& ls)
{
    if (ls.n_ground() != 3 || ls.n_excited() != 3)
        throw ModelError("holeburning needs three ground and three excited levels");
}

/// The ground level outside the double-Lambda loop.
int spare_ground(const LevelSystem& ls)
{
    for (int g = 1; g <= 3; ++g)
        if (g != ls.lambda().input_ground && g != ls.lambda().storage_ground) return g;
    throw ModelError("no spare ground level");
}

double input_frequency(const LevelSystem& ls)
{
    return transition_frequency(ls, ls.lambda().input_ground, ls.lambda().input_excited);
}

}  // namespace

PopulationGrid PopulationGrid::uniform(const LevelSystem& ls, double half_width, double step)
{
    require_three_by_three(ls);
    if (!(half_width > 0.0)) throw ModelError("grid half width must be positive");
    if (!(step > 0.0) || step > 25e3) throw ModelError("grid step must be in (0, 25 kHz]");
    const auto half = static_cast<long>(std::ceil(half_width / step - 1e-9));
    PopulationGrid g;
    for (long k = -half; k <= half; ++k) g.detuning.push_back(static_cast<double>(k) * step);
    g.n = Eigen::MatrixX3d::Constant(static_cast<Eigen::Index>(g.detuning.size()), 3, 1.0 / 3.0);
    const double f25 = input_frequency(ls);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            g.offset(i, j) = transition_frequency(ls, i + 1, j + 4) - f25;
            g.strength(i, j) = std::pow(ls.dipole(i + 1, j + 4), 2);
            g.branching(i, j) = ls.branching(i + 1, j + 4);
        }
    return g;
}

double PopulationGrid::conservation_error() const
{
    if (n.rows() == 0) return 0.0;
    return (n.rowwise().sum().array() - 1.0).abs().maxCoeff();
}

// ---------------------------------------------------------------------------

PumpField PumpField::on(const LevelSystem& ls, const Transition& t, double duration, double sweep_half_width,
                        double rate, double linewidth)
{
    if (!ls.is_optical(t)) throw ModelError("pump transition " + to_string(t) + " is not optical");
    PumpField f;
    f.center = transition_frequency(ls, t.ground, t.excited) - input_frequency(ls);
    f.sweep_half_width = sweep_half_width;
    f.rate = rate;
    f.duration = duration;
    f.linewidth = linewidth;
    f.validate();
    return f;
}

double PumpField::overlap(double f) const
{
    const double h = 0.5 * linewidth;
    const double d = f - center;
    if (sweep_half_width == 0.0) return h * h / (h * h + d * d);
    const double w = sweep_half_width;
    return (std::atan((d + w) / h) - std::atan((d - w) / h)) / (2.0 * std::atan(w / h));
}

void PumpField::validate() const
{
    if (!std::isfinite(center)) throw ModelError("pump centre must be finite");
    if (!(sweep_half_width >= 0.0)) throw ModelError("pump sweep half width must be non-negative");
    if (!(rate > 0.0)) throw ModelError("pump rate must be positive");
    if (!(duration >= 0.0)) throw ModelError("pump duration must be non-negative");
    if (!(linewidth > 0.0)) throw ModelError("pump linewidth must be positive");
}

PopulationGrid apply_pump(const PopulationGrid& grid, const std::vector<PumpField>& fields)
{
    if (fields.empty()) return grid;
    for (const auto& f : fields) {
        f.validate();
        if (f.duration != fields.front().duration) throw ModelError("simultaneous pump fields need one duration");
    }
    const double t = fields.front().duration;
    PopulationGrid out = grid;
    if (t == 0.0) return out;
    for (std::size_t p = 0; p < grid.size(); ++p) {
        // dn/dt = M n: ground i is pumped through excited j at rate r and
        // returns to every ground k with probability beta(k, j).
        Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double r = 0.0;
                for (const auto& f : fields) r += f.rate * grid.strength(i, j) * f.overlap(grid.detuning[p] + grid.offset(i, j));
                if (r == 0.0) continue;
                for (int k = 0; k < 3; ++k) m(k, i) += r * grid.branching(k, j);
                m(i, i) -= r;
            }
        const auto row = static_cast<Eigen::Index>(p);
        const Eigen::Vector3d n0 = grid.n.row(row).transpose();
        out.n.row(row) = ((m * t).exp() * n0).transpose();
    }
    return out;
}

PopulationGrid apply_pump(const PopulationGrid& grid, const PumpField& field)
{
    return apply_pump(grid, std::vector<PumpField>{field});
}

// ---------------------------------------------------------------------------

void HoleburningConfig::validate() const
{
    if (!(window_half_width > 0.0)) throw ModelError("window half width must be positive");
    if (!(step > 0.0) || step > 25e3) throw ModelError("grid step must be in (0, 25 kHz]");
    if (!(pump_rate > 0.0) || !(linewidth > 0.0) || !(sweep_half_width > 0.0))
        throw ModelError("pump rate, linewidth and sweep must be positive");
    if (isolation_cycles < 1) throw ModelError("isolation needs at least one cycle");
    if (!(isolation_duration >= 0.0) || !(repump_duration >= 0.0) || !(burn_duration >= 0.0) ||
        !(cleanup_duration >= 0.0))
        throw ModelError("stage durations must be non-negative");
    if (!(feature_width > 0.0)) throw ModelError("feature width must be positive");
    if (!(alphaL > 0.0) || !(max_alphaL > 0.0)) throw ModelError("optical depths must be positive");
    if (n_slices < 8) throw ModelError("n_slices must be at least 8");
}

PopulationGrid isolate_subgroup(const PopulationGrid& grid, const LevelSystem& ls, const HoleburningConfig& cfg)
{
    require_three_by_three(ls);
    cfg.validate();
    const auto& lam = ls.lambda();
    auto swept = [&](const Transition& t) {
        return PumpField::on(ls, t, cfg.isolation_duration, cfg.sweep_half_width, cfg.pump_rate, cfg.linewidth);
    };
    const std::vector<PumpField> loop{swept(lam.input()), swept(lam.first_transfer()), swept(lam.second_transfer()),
                                      swept(lam.echo())};
    const PumpField repump =
        PumpField::on(ls, {spare_ground(ls), lam.input_excited}, cfg.repump_duration, 0.0, cfg.pump_rate, cfg.linewidth);
    PopulationGrid g = grid;
    for (int c = 0; c < cfg.isolation_cycles; ++c) {
        g = apply_pump(g, loop);
        g = apply_pump(g, repump);
    }
    return apply_pump(g, loop);
}

PopulationGrid burn_feature(const PopulationGrid& grid, const LevelSystem& ls, const HoleburningConfig& cfg,
                            double burn_half_width)
{
    require_three_by_three(ls);
    cfg.validate();
    const auto& lam = ls.lambda();
    const std::vector<PumpField> fields{
        PumpField::on(ls, lam.first_transfer(), cfg.burn_duration, cfg.sweep_half_width, cfg.pump_rate, cfg.linewidth),
        PumpField::on(ls, lam.echo(), cfg.burn_duration, cfg.sweep_half_width, cfg.pump_rate, cfg.linewidth),
        PumpField::on(ls, {spare_ground(ls), lam.input_excited}, cfg.burn_duration, burn_half_width, cfg.pump_rate,
                      cfg.linewidth),
    };
    const std::vector<PumpField> cleanup{
        PumpField::on(ls, lam.first_transfer(), cfg.cleanup_duration, cfg.sweep_half_width, cfg.pump_rate, cfg.linewidth),
        PumpField::on(ls, lam.echo(), cfg.cleanup_duration, cfg.sweep_half_width, cfg.pump_rate, cfg.linewidth),
    };
    return apply_pump(apply_pump(grid, fields), cleanup);
}

double feature_fwhm(const PopulationGrid& grid)
{
    if (grid.size() < 3) return 0.0;
    const auto n2 = grid.n.col(1);
    // Peak nearest the origin.
    std::size_t centre = 0;
    for (std::size_t k = 0; k < grid.size(); ++k)
        if (std::abs(grid.detuning[k]) < std::abs(grid.detuning[centre])) centre = k;
    const double half = 0.5 * n2[static_cast<Eigen::Index>(centre)];
    if (!(half > 0.0)) return 0.0;
    auto crossing = [&](int dir) {
        for (auto k = static_cast<long>(centre); k + dir >= 0 && k + dir < static_cast<long>(grid.size()); k += dir) {
            const double a = n2[k];
            const double b = n2[k + dir];
            if (b <= half) {
                const double u = (a - half) / (a - b);
                return grid.detuning[static_cast<std::size_t>(k)] +
                       u * (grid.detuning[static_cast<std::size_t>(k + dir)] - grid.detuning[static_cast<std::size_t>(k)]);
            }
        }
        return std::nan("");
    };
    const double lo = crossing(-1);
    const double hi = crossing(+1);
    if (std::isnan(lo) || std::isnan(hi)) return 0.0;
    return hi - lo;
}

std::vector<double> absorption_spectrum(const PopulationGrid& grid)
{
    std::vector<double> a(grid.size(), 0.0);
    if (grid.size() < 2) return a;
    const double x0 = grid.detuning.front();
    const double step = grid.detuning[1] - grid.detuning[0];
    for (std::size_t p = 0; p < grid.size(); ++p)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                // Ions resonant at this offset on (i, j) sit at x = f - offset.
                const double u = (grid.detuning[p] - grid.offset(i, j) - x0) / step;
                if (u < 0.0 || u > static_cast<double>(grid.size() - 1)) continue;
                const auto k = std::min(static_cast<std::size_t>(u), grid.size() - 2);
                const double w = u - static_cast<double>(k);
                const double ni = (1.0 - w) * grid.n(static_cast<Eigen::Index>(k), i) +
                                  w * grid.n(static_cast<Eigen::Index>(k + 1), i);
                a[p] += grid.strength(i, j) * ni;
            }
    return a;
}

PreparedFeature prepare_feature(const LevelSystem& ls, const HoleburningConfig& cfg)
{
    cfg.validate();
    if (cfg.burn_duration == 0.0) throw ModelError("a zero burn duration prepares no feature");
    const PopulationGrid start = PopulationGrid::uniform(ls, cfg.window_half_width, cfg.step);
    const PopulationGrid isolated = isolate_subgroup(start, ls, cfg);

    auto width_for = [&](double s) { return feature_fwhm(burn_feature(isolated, ls, cfg, s)); };
    double lo = 0.0;
    double hi = cfg.sweep_half_width;
    const double w_lo = width_for(lo);
    const double w_hi = width_for(hi);
    char msg[160];
    if (cfg.feature_width < w_lo || cfg.feature_width > w_hi) {
        std::snprintf(msg, sizeof msg, "feature width %.4g Hz unreachable: attainable range [%.4g, %.4g] Hz",
                      cfg.feature_width, w_lo, w_hi);
        throw ModelError(msg);
    }
    // The width grows monotonically with the omega_15 sweep.
    for (int it = 0; it < 60 && hi - lo > 1e-4 * cfg.step; ++it) {
        const double mid = 0.5 * (lo + hi);
        (width_for(mid) < cfg.feature_width ? lo : hi) = mid;
    }
    PreparedFeature out;
    out.burn_half_width = 0.5 * (lo + hi);
    out.grid = burn_feature(isolated, ls, cfg, out.burn_half_width);
    out.fwhm = feature_fwhm(out.grid);

    const auto n2 = out.grid.n.col(1);
    const double peak = n2.maxCoeff();
    const Transition in = ls.lambda().input();
    out.max_alphaL = cfg.max_alphaL * std::pow(ls.dipole(in), 2) * peak;
    if (cfg.alphaL > out.max_alphaL) {
        std::snprintf(msg, sizeof msg, "requested alphaL %.4g unreachable: the prepared feature supports at most %.4g",
                      cfg.alphaL, out.max_alphaL);
        throw ModelError(msg);
    }
    std::vector<double> profile(n2.data(), n2.data() + n2.size());
    out.medium = medium_from_table(cfg.alphaL, out.grid.detuning, profile, cfg.n_slices);
    return out;
}

void write_grid_csv(const PopulationGrid& grid, const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw ModelError("cannot write " + path);
    const auto a = absorption_spectrum(grid);
    out << "detuning_hz,n1,n2,n3,absorption\n";
    char line[160];
    for (std::size_t p = 0; p < grid.size(); ++p) {
        const auto r = static_cast<Eigen::Index>(p);
        std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g,%.17g,%.17g\n", grid.detuning[p], grid.n(r, 0), grid.n(r, 1),
                      grid.n(r, 2), a[p]);
        out << line;
    }
}

}  // namespace dlecho
