#include "dlecho/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <random>

#include <Eigen/Eigenvalues>

namespace dlecho {

Sampling sampling_from_string(const std::string& s)
{
    if (s == "monte_carlo") return Sampling::monte_carlo;
    if (s == "grid") return Sampling::grid;
    if (s == "gauss_quadrature") return Sampling::gauss_quadrature;
    throw ModelError("unknown sampling '" + s + "'");
}

std::string to_string(Sampling s)
{
    switch (s) {
    case Sampling::monte_carlo: return "monte_carlo";
    case Sampling::grid: return "grid";
    case Sampling::gauss_quadrature: return "gauss_quadrature";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Quadrature rules (Golub-Welsch)

namespace {

void golub_welsch(const Eigen::VectorXd& diag, const Eigen::VectorXd& sub, std::vector<double>& x, std::vector<double>& w)
{
    const auto n = diag.size();
    x.assign(static_cast<std::size_t>(n), 0.0);
    w.assign(static_cast<std::size_t>(n), 0.0);
    if (n == 1) {
        x[0] = diag[0];
        w[0] = 1.0;
        return;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
    double total = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
        x[static_cast<std::size_t>(k)] = es.eigenvalues()[k];
        const double v = es.eigenvectors()(0, k);
        w[static_cast<std::size_t>(k)] = v * v;
        total += v * v;
    }
    for (auto& v : w) v /= total;
}

}  // namespace

void gauss_hermite(int n, std::vector<double>& x, std::vector<double>& w)
{
    if (n < 1) throw ModelError("quadrature order must be positive");
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd sub(std::max(n - 1, 0));
    for (int k = 1; k < n; ++k) sub[k - 1] = std::sqrt(static_cast<double>(k));
    golub_welsch(diag, sub, x, w);
    // Symmetrize against rounding so that the rule is exactly even.
    for (int k = 0; k < n / 2; ++k) {
        const double a = 0.5 * (x[n - 1 - k] - x[k]);
        const double b = 0.5 * (w[k] + w[n - 1 - k]);
        x[k] = -a;
        x[n - 1 - k] = a;
        w[k] = w[n - 1 - k] = b;
    }
    if (n % 2 == 1) x[n / 2] = 0.0;
}

void gauss_legendre_unit(int n, std::vector<double>& x, std::vector<double>& w)
{
    if (n < 1) throw ModelError("quadrature order must be positive");
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd sub(std::max(n - 1, 0));
    for (int k = 1; k < n; ++k) sub[k - 1] = k / std::sqrt(4.0 * k * k - 1.0);
    golub_welsch(diag, sub, x, w);
    for (auto& v : x) v = 0.5 * (v + 1.0);
}

// ---------------------------------------------------------------------------

AreaSpread AreaSpread::gaussian(double rel_sigma, int n)
{
    AreaSpread a;
    if (rel_sigma == 0.0) return a;
    std::vector<double> x, w;
    gauss_hermite(n, x, w);
    a.factors.clear();
    a.weights.clear();
    for (int k = 0; k < n; ++k) {
        a.factors.push_back(1.0 + rel_sigma * x[k]);
        a.weights.push_back(w[k]);
    }
    a.validate();
    return a;
}

double AreaSpread::effective_factor() const
{
    double mean = 0.0;
    for (std::size_t k = 0; k < factors.size(); ++k) mean += weights[k] * std::pow(std::sin(0.5 * std::numbers::pi * factors[k]), 2);
    return 2.0 / std::numbers::pi * std::asin(std::sqrt(mean));
}

void AreaSpread::validate() const
{
    if (factors.empty() || factors.size() != weights.size()) throw ModelError("area spread needs matching factors and weights");
    double sum = 0.0;
    for (std::size_t k = 0; k < factors.size(); ++k) {
        if (!(factors[k] > 0.0)) throw ModelError("area factors must be positive");
        if (!(weights[k] >= 0.0)) throw ModelError("area weights must be non-negative");
        sum += weights[k];
    }
    if (std::abs(sum - 1.0) > 1e-12) throw ModelError("area weights must sum to 1");
}

void EnsembleSpec::validate() const
{
    model.validate();
    area.validate();
    if (n_classes < 1) throw ModelError("n_classes must be at least 1");
    if (!(grid_span > 0.0)) throw ModelError("grid_span must be positive");
    if (!(alphaL >= 0.0)) throw ModelError("alphaL must be non-negative");
    if (n_slices < 8) throw ModelError("n_slices must be at least 8");
    if (verify_stride < 1) throw ModelError("verify_stride must be at least 1");
    for (int n : nodes)
        if (n < 0) throw ModelError("node counts must be non-negative");
}

// ---------------------------------------------------------------------------
// Class sampling

namespace {

struct Axis {
    std::vector<double> x{0.0};
    std::vector<double> w{1.0};
    double mass = 1.0;  // probability captured by a truncated grid
};

Axis axis_nodes(const Distribution& d, int m, Sampling s, double span)
{
    Axis a;
    if (d.is_point()) return a;
    if (s == Sampling::gauss_quadrature) {
        if (d.shape == Shape::gaussian) {
            gauss_hermite(m, a.x, a.w);
            for (auto& v : a.x) v *= d.width;
        } else {
            gauss_legendre_unit(m, a.x, a.w);
            for (auto& v : a.x) v = d.quantile(v);
        }
        return a;
    }
    // Grid: cell centres, weights from the density.
    a.x.resize(static_cast<std::size_t>(m));
    a.w.resize(static_cast<std::size_t>(m));
    const double half = d.shape == Shape::uniform ? 0.5 * d.width : span * d.width;
    double total = 0.0;
    for (int k = 0; k < m; ++k) {
        a.x[k] = -half + (k + 0.5) * 2.0 * half / m;
        a.w[k] = d.pdf(a.x[k]);
        total += a.w[k];
    }
    for (auto& v : a.w) v /= total;
    a.mass = std::min(1.0, total * 2.0 * half / m);
    return a;
}

double uniform_open(std::mt19937_64& rng)
{
    // 53-bit mantissa, strictly inside (0, 1); independent of the standard
    // library's distribution implementation.
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

namespace {

int default_nodes(const EnsembleSpec& spec, int active)
{
    return std::max(1, static_cast<int>(std::floor(std::pow(static_cast<double>(spec.n_classes), 1.0 / active) + 1e-9)));
}

}  // namespace

double sampled_mass(const EnsembleSpec& spec)
{
    if (spec.sampling != Sampling::grid) return 1.0;
    const std::array<const Distribution*, 3> dist{&spec.model.optical, &spec.model.ground, &spec.model.excited};
    int active = 0;
    for (auto* d : dist) active += d->is_point() ? 0 : 1;
    if (active == 0) return 1.0;
    double mass = 1.0;
    for (int d = 0; d < 3; ++d) {
        const int m = spec.nodes[d] > 0 ? spec.nodes[d] : default_nodes(spec, active);
        mass *= axis_nodes(*dist[d], m, spec.sampling, spec.grid_span).mass;
    }
    return mass;
}

std::vector<AtomClass> sample_classes(const EnsembleSpec& spec)
{
    spec.validate();
    const std::array<const Distribution*, 3> dist{&spec.model.optical, &spec.model.ground, &spec.model.excited};
    int active = 0;
    for (auto* d : dist) active += d->is_point() ? 0 : 1;
    const std::size_t n = spec.n_classes;
    std::vector<AtomClass> out;

    if (active == 0) {
        out.assign(n, AtomClass{0.0, 0.0, 0.0, 1.0 / static_cast<double>(n)});
        return out;
    }

    if (spec.sampling == Sampling::monte_carlo) {
        std::mt19937_64 rng(spec.seed);
        out.reserve(n);
        for (std::size_t k = 0; k < n; ++k) {
            std::array<double, 3> v{};
            for (int d = 0; d < 3; ++d) {
                const double u = uniform_open(rng);
                v[d] = dist[d]->is_point() ? 0.0 : dist[d]->quantile(u);
            }
            out.push_back({v[0], v[1], v[2], 1.0 / static_cast<double>(n)});
        }
        return out;
    }

    const int m_default = default_nodes(spec, active);
    std::array<Axis, 3> axes;
    for (int d = 0; d < 3; ++d) {
        const int m = spec.nodes[d] > 0 ? spec.nodes[d] : m_default;
        axes[d] = axis_nodes(*dist[d], m, spec.sampling, spec.grid_span);
    }
    double wmax = 0.0;
    for (double a : axes[0].w)
        for (double b : axes[1].w)
            for (double c : axes[2].w) wmax = std::max(wmax, a * b * c);
    double total = 0.0;
    for (std::size_t i = 0; i < axes[0].x.size(); ++i)
        for (std::size_t j = 0; j < axes[1].x.size(); ++j)
            for (std::size_t k = 0; k < axes[2].x.size(); ++k) {
                const double w = axes[0].w[i] * axes[1].w[j] * axes[2].w[k];
                if (w < 1e-16 * wmax) continue;
                out.push_back({axes[0].x[i], axes[1].x[j], axes[2].x[k], w});
                total += w;
            }
    for (auto& c : out) c.weight /= total;
    return out;
}

// ---------------------------------------------------------------------------

int EmissionRecord::pair_index(const Transition& t) const
{
    for (std::size_t q = 0; q < pairs.size(); ++q)
        if (pairs[q] == t) return static_cast<int>(q);
    throw ModelError("transition " + to_string(t) + " is not recorded");
}

cplx drive_field(const Pulse& p, double t, double reference_rabi)
{
    const double a = p.rabi(t) / reference_rabi;
    if (a == 0.0) return 0.0;
    return std::polar(a, -p.phase + two_pi * p.carrier_detuning * t);
}

EmissionRecord emit(const std::vector<AtomClass>& classes, const std::vector<ClassTraces>& traces, const LevelSystem& ls,
                    double coupling)
{
    if (classes.size() != traces.size()) throw ModelError("emit: class and trace counts differ");
    EmissionRecord rec;
    rec.pairs = ls.optical_transitions();
    rec.coupling = coupling;
    rec.n_classes = classes.size();
    if (traces.empty()) return rec;
    for (const auto& wt : traces.front().windows) {
        WindowEmission we;
        we.window = wt.window;
        we.field = Eigen::MatrixXcd::Zero(wt.coherence.rows(), wt.coherence.cols());
        we.drive = we.field;
        rec.windows.push_back(std::move(we));
    }
    const cplx ik(0.0, coupling);
    for (std::size_t k = 0; k < classes.size(); ++k) {
        if (traces[k].windows.size() != rec.windows.size()) throw ModelError("emit: window counts differ");
        for (std::size_t w = 0; w < rec.windows.size(); ++w)
            for (std::size_t q = 0; q < rec.pairs.size(); ++q)
                rec.windows[w].field.col(static_cast<Eigen::Index>(q)) +=
                    (ik * classes[k].weight * ls.dipole(rec.pairs[q])) *
                    traces[k].windows[w].coherence.col(static_cast<Eigen::Index>(q));
    }
    return rec;
}

namespace {

double reference_rabi_for(const SequenceTimeline& tl, const LevelSystem& ls, double configured)
{
    if (configured > 0.0) return configured;
    for (const auto& p : tl.pulses)
        if (p.transition == ls.lambda().input() && p.peak_rabi() > 0.0) return p.peak_rabi();
    for (const auto& p : tl.pulses)
        if (p.peak_rabi() > 0.0) return p.peak_rabi();
    return 1.0;
}

bool window_overlaps_pulse(const SequenceTimeline& tl, const ObservationWindow& w)
{
    for (const auto& p : tl.pulses)
        if (p.support_begin() <= w.to && p.support_end() >= w.from) return true;
    return false;
}

std::vector<AtomClass> coalesce(std::vector<AtomClass> classes)
{
    std::vector<AtomClass> out;
    for (const auto& c : classes) {
        if (!out.empty() && out.back().delta_opt == c.delta_opt && out.back().delta_g == c.delta_g &&
            out.back().delta_e == c.delta_e)
            out.back().weight += c.weight;
        else
            out.push_back(c);
    }
    return out;
}

constexpr std::size_t chunk_size = 32;

}  // namespace

EmissionRecord run_experiment(const SequenceTimeline& tl, const LevelSystem& ls, const EnsembleSpec& spec,
                              const RelaxationSpec& r)
{
    spec.validate();
    r.validate();
    validate_timeline(tl);
    const std::vector<AtomClass> classes = coalesce(sample_classes(spec));

    EmissionRecord rec;
    rec.pairs = ls.optical_transitions();
    rec.seed = spec.seed;
    rec.n_classes = classes.size();
    rec.timeline_hash = tl.hash();
    rec.reference_rabi = reference_rabi_for(tl, ls, spec.reference_rabi);
    // A truncated grid keeps the density of the classes it holds, not their
    // renormalized share.
    rec.coupling = thin_sample_coupling(spec.alphaL, spec.model.optical, rec.reference_rabi) * sampled_mass(spec);
    rec.mode = spec.mode == PropagationMode::thin ? "thin" : "slab";
    rec.alphaL = spec.alphaL;
    // The input is the first pulse on the input transition; later ones (the
    // two-level rephasing pulse) are not the signal.
    for (const auto& p : tl.pulses)
        if (p.transition == ls.lambda().input()) {
            rec.input_peak = p.peak_rabi() / rec.reference_rabi;
            break;
        }

    const std::size_t np = rec.pairs.size();
    std::vector<double> dip(np);
    for (std::size_t q = 0; q < np; ++q) dip[q] = ls.dipole(rec.pairs[q]);

    std::vector<bool> slab_window(tl.windows.size(), false);
    for (std::size_t w = 0; w < tl.windows.size(); ++w) {
        WindowEmission we;
        we.window = tl.windows[w];
        const auto ns = static_cast<Eigen::Index>(we.window.n_samples());
        we.field = Eigen::MatrixXcd::Zero(ns, static_cast<Eigen::Index>(np));
        we.drive = we.field;
        for (const auto& p : tl.pulses) {
            const auto q = static_cast<Eigen::Index>(rec.pair_index(p.transition));
            for (Eigen::Index k = 0; k < ns; ++k)
                we.drive(k, q) += drive_field(p, we.window.time(static_cast<std::size_t>(k)), rec.reference_rabi);
        }
        rec.windows.push_back(std::move(we));
        slab_window[w] = spec.mode == PropagationMode::slab && !window_overlaps_pulse(tl, tl.windows[w]);
    }

    // Population difference on the input transition before any pulse.
    Eigen::VectorXd initial = spec.initial_populations;
    if (initial.size() == 0) {
        initial = Eigen::VectorXd::Zero(ls.n_levels());
        initial[ls.lambda().input_ground - 1] = 1.0;
    }
    const Transition in = ls.lambda().input();
    const double s_in = initial[in.ground - 1] - initial[in.excited - 1];
    const Medium medium = medium_from_distribution(spec.alphaL, spec.model.optical, spec.n_slices);

    const std::size_t n_chunks = (classes.size() + chunk_size - 1) / chunk_size;
    std::vector<std::vector<Eigen::MatrixXcd>> partial(n_chunks);
    std::vector<std::exception_ptr> errors(n_chunks);

#pragma omp parallel for schedule(dynamic, 1)
    for (long chunk = 0; chunk < static_cast<long>(n_chunks); ++chunk) {
        const auto c = static_cast<std::size_t>(chunk);
        try {
            auto& sums = partial[c];
            for (const auto& we : rec.windows) sums.push_back(Eigen::MatrixXcd::Zero(we.field.rows(), we.field.cols()));
            const std::size_t end = std::min(classes.size(), (c + 1) * chunk_size);
            for (std::size_t k = c * chunk_size; k < end; ++k) {
                const AtomClass& cls = classes[k];
                const double a = 0.5 * spec.alphaL * medium.profile(cls.delta_opt);
                for (std::size_t f = 0; f < spec.area.factors.size(); ++f) {
                    RunOptions ro;
                    ro.integrator = spec.integrator;
                    if (k % spec.verify_stride != 0) ro.integrator.tol = 0.0;
                    ro.area_scale = spec.area.factors[f];
                    ro.min_scaled_area = spec.area.min_area;
                    ro.initial_populations = spec.initial_populations;
                    const ClassTraces tr = run_class(tl, cls, ls, r, ro);
                    const double weight = cls.weight * spec.area.weights[f];
                    for (std::size_t w = 0; w < sums.size(); ++w) {
                        const auto& coh = tr.windows[w].coherence;
                        for (std::size_t q = 0; q < np; ++q) {
                            const auto col = static_cast<Eigen::Index>(q);
                            cplx factor(0.0, rec.coupling * weight * dip[q]);
                            if (slab_window[w]) {
                                if (coh.col(col).cwiseAbs().maxCoeff() == 0.0) continue;
                                const auto& pop = tr.windows[w].populations;
                                const Transition& t = rec.pairs[q];
                                const double s = pop[t.ground - 1] - pop[t.excited - 1];
                                const double b_in = a * ls.dipole(in) * ls.dipole(in) * s_in;
                                const double b_out = a * dip[q] * dip[q] * s;
                                factor *= slab_gain(b_in, b_out, spec.n_slices);
                            }
                            sums[w].col(col) += factor * coh.col(col);
                        }
                    }
                }
            }
        } catch (...) {
            errors[c] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    for (std::size_t c = 0; c < n_chunks; ++c)
        for (std::size_t w = 0; w < rec.windows.size(); ++w) rec.windows[w].field += partial[c][w];
    return rec;
}

double efficiency(const EmissionRecord& rec, const Transition& echo, double gate_from, double gate_to, double floor)
{
    if (!(rec.input_peak > 0.0)) throw NumericalError("no echo: the timeline has no input pulse");
    const auto q = static_cast<Eigen::Index>(rec.pair_index(echo));
    double peak = 0.0;
    for (const auto& we : rec.windows)
        for (Eigen::Index k = 0; k < we.field.rows(); ++k) {
            const double t = we.time(static_cast<std::size_t>(k));
            if (t >= gate_from && t <= gate_to) peak = std::max(peak, std::abs(we.field(k, q)));
        }
    if (!(peak > floor)) throw NumericalError("no echo above the numerical floor on " + to_string(echo));
    return peak / rec.input_peak;
}

// ---------------------------------------------------------------------------

namespace {

std::string num(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void write_emission_csv(const EmissionRecord& rec, const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw ModelError("cannot write " + path);
    out << "window,time_s";
    for (const auto& t : rec.pairs) out << ",re_" << to_string(t) << ",im_" << to_string(t);
    out << '\n';
    for (std::size_t w = 0; w < rec.windows.size(); ++w) {
        const auto& we = rec.windows[w];
        for (Eigen::Index k = 0; k < we.field.rows(); ++k) {
            out << w << ',' << num(we.time(static_cast<std::size_t>(k)));
            for (Eigen::Index q = 0; q < we.field.cols(); ++q) out << ',' << num(we.field(k, q).real()) << ',' << num(we.field(k, q).imag());
            out << '\n';
        }
    }
}

nlohmann::json emission_manifest(const EmissionRecord& rec)
{
    char hash[24];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(rec.timeline_hash));
    nlohmann::json j;
    j["seed"] = rec.seed;
    j["n_classes"] = rec.n_classes;
    j["timeline_hash"] = hash;
    j["coupling"] = rec.coupling;
    j["reference_rabi_rad_s"] = rec.reference_rabi;
    j["input_peak"] = rec.input_peak;
    j["mode"] = rec.mode;
    j["alphaL"] = rec.alphaL;
    j["conventions"] = {
        {"alphaL", "intensity optical depth, transmission exp(-alphaL); field exponents use alphaL/2"},
        {"field", "complex envelope in units of the reference drive amplitude, common frame of the nominal transitions"},
    };
    auto windows = nlohmann::json::array();
    for (const auto& we : rec.windows)
        windows.push_back({{"from_s", we.window.from}, {"to_s", we.window.to}, {"rate_hz", we.window.rate}});
    j["windows"] = windows;
    return j;
}

}  // namespace dlecho
