#include "dlecho/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

namespace dlecho {

DensityMatrix pure_state(const LevelSystem& ls, int level)
{
    if (level < 1 || level > ls.n_levels()) throw ModelError("level out of range");
    DensityMatrix rho = DensityMatrix::Zero(ls.n_levels(), ls.n_levels());
    rho(level - 1, level - 1) = 1.0;
    return rho;
}

DensityMatrix diagonal_state(const Eigen::VectorXd& populations)
{
    DensityMatrix rho = DensityMatrix::Zero(populations.size(), populations.size());
    for (Eigen::Index k = 0; k < populations.size(); ++k) rho(k, k) = populations[k];
    return rho;
}

void check_density_matrix(const DensityMatrix& rho)
{
    const double herm = (rho - rho.adjoint()).cwiseAbs().maxCoeff();
    if (herm > 1e-12) throw NumericalError("density matrix not Hermitian (" + std::to_string(herm) + ")");
    const double tr = rho.trace().real();
    if (std::abs(tr - 1.0) > 1e-9) throw NumericalError("density matrix trace " + std::to_string(tr));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(rho, Eigen::EigenvaluesOnly);
    // Slack well below the default step-halving tolerance.
    if (es.eigenvalues().minCoeff() < -1e-7)
        throw NumericalError("density matrix has eigenvalue " + std::to_string(es.eigenvalues().minCoeff()));
}

// ---------------------------------------------------------------------------

void RelaxationSpec::validate() const
{
    const auto n = decay.size();
    if (dephasing.rows() != n || dephasing.cols() != n || branching.cols() != n || branching.rows() != n_ground)
        throw ModelError("relaxation spec has inconsistent sizes");
    if ((dephasing.array() < 0.0).any() || (decay.array() < 0.0).any() || spin_relaxation < 0.0)
        throw ModelError("relaxation rates must be non-negative");
    for (Eigen::Index l = 0; l < n; ++l)
        if (decay[l] > 0.0 && std::abs(branching.col(l).sum() - 1.0) > 1e-12)
            throw ModelError("branching out of a decaying level must sum to 1");
}

RelaxationSpec relaxation_from_system(const LevelSystem& ls, const RelaxationToggles& on)
{
    const int n = ls.n_levels();
    const int ng = ls.n_ground();
    RelaxationSpec r;
    r.n_ground = ng;
    r.decay = Eigen::VectorXd::Zero(n);
    r.branching = Eigen::MatrixXd::Zero(ng, n);
    r.dephasing = Eigen::MatrixXd::Zero(n, n);
    const double g_opt = on.optical_dephasing ? 1.0 / ls.t2_opt() : 0.0;
    const double g_spin = on.spin_dephasing ? 1.0 / ls.t2_spin() : 0.0;
    const double decay = on.optical_decay ? 1.0 / ls.t1_opt() : 0.0;
    for (int e = ng + 1; e <= n; ++e) {
        r.decay[e - 1] = decay;
        for (int g = 1; g <= ng; ++g) r.branching(g - 1, e - 1) = ls.branching(g, e);
    }
    r.spin_relaxation = on.spin_relaxation ? 1.0 / ls.t1_spin() : 0.0;
    for (int a = 1; a <= n; ++a)
        for (int b = 1; b <= n; ++b) {
            if (a == b) continue;
            double g = 0.0;
            if (ls.is_ground(a) && ls.is_ground(b))
                g = g_spin;
            else if (ls.is_excited(a) && ls.is_excited(b))
                g = std::max(g_opt, 0.5 * (r.decay[a - 1] + r.decay[b - 1]));
            else
                g = g_opt;
            r.dephasing(a - 1, b - 1) = g;
        }
    return r;
}

RelaxationSpec no_relaxation(const LevelSystem& ls)
{
    return relaxation_from_system(ls, {false, false, false, false});
}

// ---------------------------------------------------------------------------
// Driven integration
//
// Only elements that a pulse can change are integrated: every population and
// every coherence between live levels with at least one index on a driven
// level. The remaining (spectator) coherences evolve in closed form over the
// segment.

namespace {

struct Coupling {
    int i = 0;  // 0-based ground index
    int j = 0;  // 0-based excited index
    const Pulse* pulse = nullptr;
    double peak = 0.0;
};

// d(elem) += coef * [conj?] state[src], with coef = -i * (v or conj v) * sign.
struct Term {
    int elem;
    int src;
    bool src_conj;
    int coupling;
    bool conj_v;
    double sign;
};

std::vector<bool> live_levels(const DensityMatrix& rho, const std::vector<const Pulse*>& pulses)
{
    const auto n = rho.rows();
    std::vector<bool> live(static_cast<std::size_t>(n), false);
    for (Eigen::Index a = 0; a < n; ++a)
        for (Eigen::Index b = 0; b < n; ++b)
            if (rho(a, b) != 0.0) live[static_cast<std::size_t>(a)] = live[static_cast<std::size_t>(b)] = true;
    for (bool changed = true; changed;) {
        changed = false;
        for (const Pulse* p : pulses) {
            const auto i = static_cast<std::size_t>(p->transition.ground - 1);
            const auto j = static_cast<std::size_t>(p->transition.excited - 1);
            if (live[i] != live[j]) {
                live[i] = live[j] = true;
                changed = true;
            }
        }
    }
    return live;
}

class SegmentIntegrator {
public:
    SegmentIntegrator(const DensityMatrix& rho, double t0, const std::vector<const Pulse*>& active, const DetuningTable& d,
                      const RelaxationSpec& r, const std::vector<bool>& live)
        : rho0_(rho), t0_(t0), t_(t0), r_(r), n_(static_cast<int>(rho.rows()))
    {
        h_.resize(n_);
        for (int a = 0; a < n_; ++a) h_[a] = two_pi * d.shift[a];
        std::vector<bool> driven(n_, false);
        for (const Pulse* p : active) {
            couplings_.push_back({p->transition.ground - 1, p->transition.excited - 1, p, p->peak_rabi()});
            driven[p->transition.ground - 1] = driven[p->transition.excited - 1] = true;
        }
        lookup_.assign(static_cast<std::size_t>(n_ * n_), -1);
        for (int a = 0; a < n_; ++a) add_element(a, a);
        for (int a = 0; a < n_; ++a)
            for (int b = a + 1; b < n_; ++b)
                if (live[a] && live[b] && (driven[a] || driven[b])) add_element(a, b);
        const int m = static_cast<int>(elems_.size());
        y_.resize(m);
        for (int e = 0; e < m; ++e) y_[e] = rho(elems_[e].first, elems_[e].second);
        k1_ = k2_ = k3_ = k4_ = tmp_ = y_;
        rate_.resize(m);
        for (int e = 0; e < m; ++e) {
            const auto [a, b] = elems_[e];
            rate_[e] = a == b ? cplx(0.0) : cplx(-r.dephasing(a, b), -(h_[a] - h_[b]));
        }
        for (int c = 0; c < static_cast<int>(couplings_.size()); ++c) {
            const int i = couplings_[c].i;
            const int j = couplings_[c].j;
            for (int e = 0; e < m; ++e) {
                const auto [a, b] = elems_[e];
                // -i [V, rho]_ab with V = v|i><j| + conj(v)|j><i|
                if (a == i) add_term(e, j, b, c, false, 1.0);
                if (a == j) add_term(e, i, b, c, true, 1.0);
                if (b == j) add_term(e, a, i, c, false, -1.0);
                if (b == i) add_term(e, a, j, c, true, -1.0);
            }
        }
    }

    void advance(double t1, double h_max)
    {
        if (!(t1 > t_)) return;
        const auto n = std::max(1L, static_cast<long>(std::ceil((t1 - t_) / h_max - 1e-9)));
        const double h = (t1 - t_) / static_cast<double>(n);
        const double start = t_;
        for (long k = 0; k < n; ++k) step(start + static_cast<double>(k) * h, h);
        t_ = t1;
    }

    cplx element(int a, int b) const
    {
        const int idx = lookup_[static_cast<std::size_t>(a * n_ + b)];
        if (idx >= 0) return y_[idx];
        const int tr = lookup_[static_cast<std::size_t>(b * n_ + a)];
        if (tr >= 0) return std::conj(y_[tr]);
        return spectator(a, b);
    }

    DensityMatrix state() const
    {
        DensityMatrix out(n_, n_);
        for (int a = 0; a < n_; ++a)
            for (int b = 0; b < n_; ++b) out(a, b) = element(a, b);
        return out;
    }

private:
    void add_element(int a, int b)
    {
        lookup_[static_cast<std::size_t>(a * n_ + b)] = static_cast<int>(elems_.size());
        elems_.emplace_back(a, b);
    }

    void add_term(int e, int x, int y, int c, bool conj_v, double sign)
    {
        int src = lookup_[static_cast<std::size_t>(x * n_ + y)];
        bool cj = false;
        if (src < 0) {
            src = lookup_[static_cast<std::size_t>(y * n_ + x)];
            cj = true;
        }
        if (src < 0) return;  // coherence with a dead level: identically zero
        terms_.push_back({e, src, cj, c, conj_v, sign});
    }

    cplx spectator(int a, int b) const
    {
        const double dt = t_ - t0_;
        if (a == b || dt == 0.0 || rho0_(a, b) == 0.0) return rho0_(a, b);
        return rho0_(a, b) * std::exp(cplx(-r_.dephasing(a, b) * dt, -(h_[a] - h_[b]) * dt));
    }

    // Coupling values at time t; the end of one step is the start of the next,
    // so the last evaluation is cached.
    void couplings_at(double t, std::vector<cplx>& v)
    {
        if (t == cached_t_) {
            v = cached_v_;
            return;
        }
        v.resize(couplings_.size());
        for (std::size_t c = 0; c < couplings_.size(); ++c) {
            const Pulse& p = *couplings_[c].pulse;
            // Segments never extend past the support, so the envelope is
            // evaluated without truncation to keep it smooth at the edges.
            double omega = couplings_[c].peak;
            if (p.envelope.kind == Envelope::Kind::gaussian) {
                const double x = (t - p.t_center) / p.envelope.width;
                omega *= std::exp(-4.0 * std::numbers::ln2 * x * x);
            }
            v[c] = 0.5 * omega * std::polar(1.0, -p.phase + two_pi * p.carrier_detuning * t);
        }
        cached_t_ = t;
        cached_v_ = v;
    }

    void derivative(const std::vector<cplx>& s, const std::vector<cplx>& v, std::vector<cplx>& out) const
    {
        const std::size_t m = elems_.size();
        for (std::size_t e = 0; e < m; ++e) {
            // Written out: std::complex multiplication carries a slow NaN path.
            const double rr = rate_[e].real(), ri = rate_[e].imag();
            const double sr = s[e].real(), si = s[e].imag();
            out[e] = cplx(rr * sr - ri * si, rr * si + ri * sr);
        }
        for (const Term& tm : terms_) {
            const cplx vc = v[static_cast<std::size_t>(tm.coupling)];
            const double vr = vc.real();
            const double vi = tm.conj_v ? -vc.imag() : vc.imag();
            const cplx sc = s[static_cast<std::size_t>(tm.src)];
            const double sr = sc.real();
            const double si = tm.src_conj ? -sc.imag() : sc.imag();
            const double pr = vr * sr - vi * si;
            const double pi = vr * si + vi * sr;
            // -i * sign * (v src)
            out[static_cast<std::size_t>(tm.elem)] += cplx(tm.sign * pi, -tm.sign * pr);
        }
        // Populations occupy the first n_ slots.
        double ground_total = 0.0;
        for (int g = 0; g < r_.n_ground; ++g) ground_total += s[g].real();
        const double mean = ground_total / r_.n_ground;
        for (int l = 0; l < n_; ++l) {
            const double dr = r_.decay[l];
            if (dr == 0.0) continue;
            const double flow = dr * s[l].real();
            out[l] -= flow;
            for (int g = 0; g < r_.n_ground; ++g) out[g] += r_.branching(g, l) * flow;
        }
        if (r_.spin_relaxation > 0.0)
            for (int g = 0; g < r_.n_ground; ++g) out[g] -= r_.spin_relaxation * (s[g].real() - mean);
    }

    void step(double t, double h)
    {
        const std::size_t m = elems_.size();
        couplings_at(t, v0_);
        couplings_at(t + 0.5 * h, vh_);
        couplings_at(t + h, v1_);
        derivative(y_, v0_, k1_);
        for (std::size_t e = 0; e < m; ++e) tmp_[e] = y_[e] + 0.5 * h * k1_[e];
        derivative(tmp_, vh_, k2_);
        for (std::size_t e = 0; e < m; ++e) tmp_[e] = y_[e] + 0.5 * h * k2_[e];
        derivative(tmp_, vh_, k3_);
        for (std::size_t e = 0; e < m; ++e) tmp_[e] = y_[e] + h * k3_[e];
        derivative(tmp_, v1_, k4_);
        for (std::size_t e = 0; e < m; ++e) y_[e] += (h / 6.0) * (k1_[e] + 2.0 * k2_[e] + 2.0 * k3_[e] + k4_[e]);
    }

    DensityMatrix rho0_;
    double t0_;
    double t_;
    const RelaxationSpec& r_;
    int n_;
    std::vector<double> h_;
    std::vector<Coupling> couplings_;
    std::vector<std::pair<int, int>> elems_;
    std::vector<int> lookup_;
    std::vector<Term> terms_;
    std::vector<cplx> rate_;
    std::vector<cplx> v0_, vh_, v1_, cached_v_;
    double cached_t_ = std::numeric_limits<double>::quiet_NaN();
    std::vector<cplx> y_, k1_, k2_, k3_, k4_, tmp_;
};

void hermitize(DensityMatrix& rho)
{
    rho = 0.5 * (rho + rho.adjoint()).eval();
}

}  // namespace

double max_step(const std::vector<const Pulse*>& active, const DetuningTable& d, double step_scale)
{
    double fastest = d.max_abs_detuning();
    double h = std::numeric_limits<double>::infinity();
    for (const Pulse* p : active) {
        h = std::min(h, p->fwhm() / 30.0);
        const double rabi = std::abs(p->peak_rabi());
        if (rabi > 0.0) h = std::min(h, 0.05 / rabi);
        fastest = std::max(fastest, d.max_abs_detuning() + std::abs(p->carrier_detuning));
    }
    if (fastest > 0.0) h = std::min(h, 1.0 / (30.0 * fastest));
    return h * step_scale;
}

DensityMatrix integrate_driven(const DensityMatrix& rho, double t0, double t1, const std::vector<const Pulse*>& active,
                               const DetuningTable& d, const RelaxationSpec& r, double h_max)
{
    if (!(t1 > t0)) return rho;
    SegmentIntegrator seg(rho, t0, active, d, r, live_levels(rho, active));
    seg.advance(t1, h_max);
    return seg.state();
}

DensityMatrix apply_pulse(const DensityMatrix& rho, const Pulse& p, const DetuningTable& d, const RelaxationSpec& r,
                          double tol)
{
    const std::vector<const Pulse*> active{&p};
    const double h = max_step(active, d);
    DensityMatrix fine = integrate_driven(rho, p.support_begin(), p.support_end(), active, d, r, 0.5 * h);
    if (tol > 0.0) {
        const DensityMatrix coarse = integrate_driven(rho, p.support_begin(), p.support_end(), active, d, r, h);
        const double diff = (fine - coarse).cwiseAbs().maxCoeff();
        if (diff > tol)
            throw NumericalError("pulse on " + to_string(p.transition) + ": step halving changed rho by " +
                                 std::to_string(diff));
    }
    hermitize(fine);
    check_density_matrix(fine);
    return fine;
}

// ---------------------------------------------------------------------------
// Free evolution

namespace {

// (e^{-a t} - e^{-b t}) / (b - a) without overflow or cancellation.
double exp_difference(double a, double b, double t)
{
    const double lo = std::min(a, b);
    const double hi = std::max(a, b);
    const double x = (hi - lo) * t;
    if (x < 1e-12) return t * std::exp(-lo * t);
    return std::exp(-lo * t) * (-std::expm1(-x)) / (hi - lo);
}

void evolve_populations(DensityMatrix& rho, double t, const RelaxationSpec& r)
{
    const int n = static_cast<int>(rho.rows());
    const int ng = r.n_ground;
    // Excited levels are assumed to share one decay rate per level; the ground
    // feeding is accumulated level by level.
    Eigen::VectorXd pop(n);
    for (int l = 0; l < n; ++l) pop[l] = rho(l, l).real();
    Eigen::VectorXd out = pop;

    const double gs = r.spin_relaxation;
    double ground_total = 0.0;
    for (int g = 0; g < ng; ++g) ground_total += pop[g];
    const double mean0 = ground_total / ng;

    Eigen::VectorXd feed_dev = Eigen::VectorXd::Zero(ng);  // deviation from the mean feed
    double mean_gain = 0.0;
    for (int l = 0; l < n; ++l) {
        const double G = r.decay[l];
        if (G == 0.0 || pop[l] == 0.0) continue;
        out[l] = pop[l] * std::exp(-G * t);
        const double lost = -pop[l] * std::expm1(-G * t);
        double share_mean = 0.0;
        for (int g = 0; g < ng; ++g) share_mean += r.branching(g, l);
        share_mean /= ng;
        mean_gain += share_mean * lost;
        const double kernel = G * pop[l] * exp_difference(G, gs, t);
        for (int g = 0; g < ng; ++g) feed_dev[g] += (r.branching(g, l) - share_mean) * kernel;
    }
    const double mean = mean0 + mean_gain;
    const double spin_factor = std::exp(-gs * t);
    for (int g = 0; g < ng; ++g) out[g] = mean + (pop[g] - mean0) * spin_factor + feed_dev[g];
    for (int l = 0; l < n; ++l) rho(l, l) = out[l];
}

}  // namespace

DensityMatrix free_evolve(const DensityMatrix& rho, double duration, const DetuningTable& d, const RelaxationSpec& r)
{
    if (duration < 0.0) throw ModelError("negative free-evolution duration");
    DensityMatrix out = rho;
    if (duration == 0.0) return out;
    const int n = static_cast<int>(rho.rows());
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
            if (a == b) continue;
            const cplx z(-r.dephasing(a, b) * duration, -two_pi * (d.shift[a] - d.shift[b]) * duration);
            out(a, b) *= std::exp(z);
        }
    evolve_populations(out, duration, r);
    return out;
}

// ---------------------------------------------------------------------------
// Whole-timeline evolution of one class

namespace {

struct Sample {
    double t;
    std::size_t window;
    std::size_t index;
};

ClassTraces run_once(const SequenceTimeline& tl, const AtomClass& c, const LevelSystem& ls, const RelaxationSpec& r,
                     const RunOptions& opts, double step_scale)
{
    ClassTraces out;
    out.pairs = ls.optical_transitions();
    out.table = class_detunings(ls, c);
    const auto& d = out.table;
    const int n = ls.n_levels();

    std::vector<Pulse> pulses = tl.pulses;
    for (auto& p : pulses)
        if (p.area >= opts.min_scaled_area) p.area *= opts.area_scale;

    DensityMatrix rho;
    if (opts.initial_populations.size() == 0) {
        rho = pure_state(ls, ls.lambda().input_ground);
    } else {
        if (opts.initial_populations.size() != n) throw ModelError("initial populations have the wrong size");
        rho = diagonal_state(opts.initial_populations);
    }

    std::vector<Sample> samples;
    for (std::size_t w = 0; w < tl.windows.size(); ++w) {
        WindowTrace wt;
        wt.window = tl.windows[w];
        const std::size_t ns = wt.window.n_samples();
        wt.coherence = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(ns), static_cast<Eigen::Index>(out.pairs.size()));
        wt.populations = Eigen::VectorXd::Zero(n);
        out.windows.push_back(std::move(wt));
        for (std::size_t k = 0; k < ns; ++k) samples.push_back({tl.windows[w].time(k), w, k});
    }
    std::stable_sort(samples.begin(), samples.end(), [](const Sample& a, const Sample& b) { return a.t < b.t; });

    std::vector<double> edges;
    for (const auto& p : pulses) {
        edges.push_back(p.support_begin());
        edges.push_back(p.support_end());
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

    double t = tl.start_time();
    std::size_t next_sample = 0;
    while (next_sample < samples.size() && samples[next_sample].t < t) ++next_sample;  // cannot happen; start_time covers windows

    auto active_at = [&](double a, double b) {
        std::vector<const Pulse*> act;
        for (const auto& p : pulses)
            if (p.support_begin() < b && p.support_end() > a) act.push_back(&p);
        return act;
    };

    std::size_t e = 0;
    const double t_end = std::max(tl.end_time(), samples.empty() ? t : samples.back().t);
    while (t < t_end || next_sample < samples.size()) {
        while (e < edges.size() && edges[e] <= t) ++e;
        const double seg_end = e < edges.size() ? edges[e] : std::max(t_end, samples.empty() ? t : samples.back().t);
        const auto act = active_at(t, seg_end);
        if (act.empty()) {
            // Free stretch: sample with closed-form coherence factors. Uniform
            // sample spacing lets the factor advance by one multiplication.
            std::vector<cplx> rate(out.pairs.size()), value(out.pairs.size()), stride(out.pairs.size());
            for (std::size_t q = 0; q < out.pairs.size(); ++q) {
                const int g = out.pairs[q].ground - 1;
                const int x = out.pairs[q].excited - 1;
                rate[q] = cplx(-r.dephasing(g, x), -two_pi * (d.shift[g] - d.shift[x]));
            }
            std::size_t last_window = tl.windows.size();
            std::size_t last_index = 0;
            while (next_sample < samples.size() && samples[next_sample].t <= seg_end) {
                const Sample& s = samples[next_sample];
                auto& wt = out.windows[s.window];
                const bool chained = s.window == last_window && s.index == last_index + 1;
                for (std::size_t q = 0; q < out.pairs.size(); ++q) {
                    const cplx start = rho(out.pairs[q].ground - 1, out.pairs[q].excited - 1);
                    if (start == 0.0) continue;
                    if (chained) {
                        value[q] *= stride[q];
                    } else {
                        value[q] = start * std::exp(rate[q] * (s.t - t));
                        stride[q] = std::exp(rate[q] / wt.window.rate);
                    }
                    wt.coherence(static_cast<Eigen::Index>(s.index), static_cast<Eigen::Index>(q)) = value[q];
                }
                if (s.index == 0) {
                    const DensityMatrix at = free_evolve(rho, s.t - t, d, r);
                    for (int l = 0; l < n; ++l) wt.populations[l] = at(l, l).real();
                }
                last_window = s.window;
                last_index = s.index;
                ++next_sample;
            }
            rho = free_evolve(rho, seg_end - t, d, r);
        } else {
            const double h = max_step(act, d, step_scale);
            SegmentIntegrator seg(rho, t, act, d, r, live_levels(rho, act));
            while (next_sample < samples.size() && samples[next_sample].t <= seg_end) {
                const Sample& s = samples[next_sample];
                seg.advance(s.t, h);
                auto& wt = out.windows[s.window];
                for (std::size_t q = 0; q < out.pairs.size(); ++q)
                    wt.coherence(static_cast<Eigen::Index>(s.index), static_cast<Eigen::Index>(q)) =
                        seg.element(out.pairs[q].ground - 1, out.pairs[q].excited - 1);
                if (s.index == 0)
                    for (int l = 0; l < n; ++l) wt.populations[l] = seg.element(l, l).real();
                ++next_sample;
            }
            seg.advance(seg_end, h);
            rho = seg.state();
            hermitize(rho);
            if (opts.integrator.check_invariants) check_density_matrix(rho);
        }
        t = seg_end;
        if (e >= edges.size() && next_sample >= samples.size()) break;
    }
    out.final_state = rho;
    return out;
}

}  // namespace

ClassTraces run_class(const SequenceTimeline& tl, const AtomClass& c, const LevelSystem& ls, const RelaxationSpec& r,
                      const RunOptions& opts)
{
    const double scale = opts.integrator.step_scale;
    if (opts.integrator.tol <= 0.0) return run_once(tl, c, ls, r, opts, scale);
    ClassTraces fine = run_once(tl, c, ls, r, opts, 0.5 * scale);
    const ClassTraces coarse = run_once(tl, c, ls, r, opts, scale);
    double diff = 0.0;
    for (std::size_t w = 0; w < fine.windows.size(); ++w)
        if (fine.windows[w].coherence.size() > 0)
            diff = std::max(diff, (fine.windows[w].coherence - coarse.windows[w].coherence).cwiseAbs().maxCoeff());
    diff = std::max(diff, (fine.final_state - coarse.final_state).cwiseAbs().maxCoeff());
    if (diff > opts.integrator.tol)
        throw NumericalError("step halving changed the class traces by " + std::to_string(diff) + " (tol " +
                             std::to_string(opts.integrator.tol) + ")");
    return fine;
}

}  // namespace dlecho
