#include "dlecho/sequence.hpp"

#include <cmath>

namespace dlecho {

namespace {

// Coefficient of each shift source (Delta, delta_g, delta_e) in the rotation
// rate of |a><b|, i.e. shift(a) - shift(b).
std::array<double, 3> rate_coefficients(const std::array<DetuningTable, 3>& unit, int a, int b)
{
    std::array<double, 3> r{};
    for (int s = 0; s < 3; ++s) r[s] = unit[s].shift.at(a - 1) - unit[s].shift.at(b - 1);
    return r;
}

}  // namespace

PathwayPrediction predict_pathway(const SequenceTimeline& tl, const LevelSystem& ls)
{
    if (tl.pulses.size() < 2) throw PathwayError("need an input pulse followed by at least one transfer pulse");
    const Pulse& input = tl.pulses.front();
    if (!(input.area > 0.0) || input.area >= std::numbers::pi)
        throw PathwayError("the first pulse must have an area strictly between 0 and pi");

    const std::array<DetuningTable, 3> unit = {class_detunings(ls, {1.0, 0.0, 0.0, 1.0}),
                                               class_detunings(ls, {0.0, 1.0, 0.0, 1.0}),
                                               class_detunings(ls, {0.0, 0.0, 1.0, 1.0})};

    PathwayPrediction out;
    out.input_time = input.t_center;
    int a = input.transition.ground;
    int b = input.transition.excited;
    out.labels.emplace_back(a, b);

    Vec3 K{-input.k[0], -input.k[1], -input.k[2]};
    double phase = 0.0;  // accumulated coefficient of Delta, in units of seconds
    double t_prev = input.t_center;
    double prev_rate = rate_coefficients(unit, a, b)[0];
    int conjugations = 0;

    for (std::size_t n = 1; n < tl.pulses.size(); ++n) {
        const Pulse& p = tl.pulses[n];
        if (std::abs(p.area - std::numbers::pi) > 0.5 * std::numbers::pi)
            throw PathwayError("pulse at t=" + std::to_string(p.t_center) + " s is not a transfer (pi) pulse");
        const double rate = rate_coefficients(unit, a, b)[0];
        phase += rate * (p.t_center - t_prev);
        t_prev = p.t_center;

        const int i = p.transition.ground;
        const int j = p.transition.excited;
        auto add = [&](double sign) {
            for (int c = 0; c < 3; ++c) K[c] += sign * p.k[c];
        };
        // Ket and bra indices swap independently; signs follow the field
        // factor picked up on each side.
        if (a == i) { a = j; add(+1); }
        else if (a == j) { a = i; add(-1); }
        if (b == i) { b = j; add(-1); }
        else if (b == j) { b = i; add(+1); }
        if (out.labels.back() != std::pair{a, b}) out.labels.emplace_back(a, b);

        const double new_rate = rate_coefficients(unit, a, b)[0];
        if (new_rate != 0.0) {
            if (prev_rate != 0.0 && (new_rate > 0.0) != (prev_rate > 0.0)) ++conjugations;
            prev_rate = new_rate;
        }
    }

    const double final_rate = rate_coefficients(unit, a, b)[0];
    const bool optical = (ls.is_ground(a) && ls.is_excited(b)) || (ls.is_excited(a) && ls.is_ground(b));
    if (!optical || final_rate == 0.0) throw PathwayError("the final coherence does not radiate");
    const double t_echo = t_prev - phase / final_rate;
    if (!(t_echo > t_prev - 1e-15)) throw PathwayError("no rephasing time after the last pulse");

    out.echo_time = t_echo;
    out.phase_conjugation_count = conjugations;
    out.echo_transition = ls.is_ground(a) ? Transition{a, b} : Transition{b, a};
    // |e><g| radiates along K; |g><e| along -K.
    const double sign = ls.is_excited(a) ? 1.0 : -1.0;
    for (int c = 0; c < 3; ++c) out.echo_k[c] = sign * K[c];
    return out;
}

}  // namespace dlecho
