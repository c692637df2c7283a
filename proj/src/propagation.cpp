#include "dlecho/propagation.hpp"

#include <algorithm>
#include <cmath>

namespace dlecho {

void Medium::validate() const
{
    if (!(alphaL >= 0.0) || !std::isfinite(alphaL)) throw ModelError("alphaL must be finite and non-negative");
    if (n_slices < 8) throw ModelError("n_slices must be at least 8");
    if (!profile) throw ModelError("medium has no profile");
}

Medium medium_from_distribution(double alphaL, const Distribution& optical, int n_slices)
{
    Medium m;
    m.alphaL = alphaL;
    m.n_slices = n_slices;
    if (optical.is_point())
        m.profile = [](double) { return 1.0; };
    else
        m.profile = [optical, peak = optical.peak_density()](double f) { return optical.pdf(f) / peak; };
    m.validate();
    return m;
}

Medium medium_from_table(double alphaL, std::vector<double> detuning_hz, std::vector<double> profile, int n_slices)
{
    if (detuning_hz.size() != profile.size() || detuning_hz.size() < 2) throw ModelError("profile table needs >= 2 matching rows");
    if (!std::is_sorted(detuning_hz.begin(), detuning_hz.end())) throw ModelError("profile table must be sorted");
    const double peak = *std::max_element(profile.begin(), profile.end());
    if (!(peak > 0.0) || *std::min_element(profile.begin(), profile.end()) < 0.0)
        throw ModelError("profile must be non-negative with a positive maximum");
    for (auto& p : profile) p /= peak;
    Medium m;
    m.alphaL = alphaL;
    m.n_slices = n_slices;
    m.profile = [x = std::move(detuning_hz), y = std::move(profile)](double f) {
        if (f < x.front() || f > x.back()) return 0.0;
        const auto it = std::upper_bound(x.begin(), x.end(), f);
        if (it == x.end()) return y.back();
        const auto k = static_cast<std::size_t>(it - x.begin());
        const double u = (f - x[k - 1]) / (x[k] - x[k - 1]);
        return y[k - 1] + u * (y[k] - y[k - 1]);
    };
    m.validate();
    return m;
}

std::vector<cplx> transmit_weak_pulse(const Medium& m, const std::vector<double>& freq_hz, const std::vector<cplx>& spectrum,
                                      const std::function<double(double)>& s)
{
    if (freq_hz.size() != spectrum.size()) throw ModelError("frequency and spectrum sizes differ");
    m.validate();
    std::vector<cplx> out(spectrum.size());
    for (std::size_t k = 0; k < spectrum.size(); ++k)
        out[k] = spectrum[k] * std::exp(-0.5 * m.alphaL * m.profile(freq_hz[k]) * s(freq_hz[k]));
    return out;
}

namespace {

double integrate_gain(double b_in, double b_out, int n)
{
    const double h = 1.0 / n;
    double g = 0.0;
    auto f = [&](double z, double y) { return -b_out * y + std::exp(-b_in * z); };
    for (int k = 0; k < n; ++k) {
        const double z = k * h;
        const double k1 = f(z, g);
        const double k2 = f(z + 0.5 * h, g + 0.5 * h * k1);
        const double k3 = f(z + 0.5 * h, g + 0.5 * h * k2);
        const double k4 = f(z + h, g + h * k3);
        g += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return g;
}

}  // namespace

double slab_gain(double b_in, double b_out, int n_slices, double tol)
{
    if (n_slices < 1) throw ModelError("n_slices must be positive");
    const double g = integrate_gain(b_in, b_out, n_slices);
    const double g2 = integrate_gain(b_in, b_out, 2 * n_slices);
    if (std::abs(g2 - g) > tol * std::max(std::abs(g2), 1e-300))
        throw NumericalError("slab propagation not converged: " + std::to_string(g) + " vs " + std::to_string(g2) +
                             " under slice doubling");
    return g2;
}

double slab_transmission(double b, int n_slices)
{
    if (n_slices < 1) throw ModelError("n_slices must be positive");
    const double h = 1.0 / n_slices;
    double e = 1.0;
    for (int k = 0; k < n_slices; ++k) {
        const double k1 = -b * e;
        const double k2 = -b * (e + 0.5 * h * k1);
        const double k3 = -b * (e + 0.5 * h * k2);
        const double k4 = -b * (e + h * k3);
        e += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return e;
}

double slab_gain_exact(double b_in, double b_out)
{
    const double d = b_out - b_in;
    if (std::abs(d) < 1e-12) return std::exp(-b_in);
    // (e^{-b_in} - e^{-b_out}) / (b_out - b_in), written around the smaller rate.
    const double lo = std::min(b_in, b_out);
    return std::exp(-lo) * (-std::expm1(-std::abs(d))) / std::abs(d);
}

double thin_sample_coupling(double alphaL, const Distribution& optical, double reference_rabi)
{
    if (optical.is_point()) return 1.0;
    if (!(reference_rabi > 0.0)) throw ModelError("reference Rabi frequency must be positive");
    return 2.0 * alphaL / (optical.peak_density() * reference_rabi);
}

}  // namespace dlecho
