#include "dlecho/sequence.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>

namespace dlecho {

ParseError::ParseError(int line, int column, const std::string& what)
    : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what
                                  : what),
      line_(line), column_(column)
{
}

// ---------------------------------------------------------------------------
// Pulse / window / timeline helpers

namespace {

const double four_ln2 = 4.0 * std::numbers::ln2;

double truncated_gaussian_integral(double fwhm)
{
    const double a = four_ln2 / (fwhm * fwhm);
    const double half = gaussian_truncation_fwhm * fwhm;
    return std::sqrt(std::numbers::pi / a) * std::erf(half * std::sqrt(a));
}

}  // namespace

double Pulse::support_begin() const
{
    return envelope.kind == Envelope::Kind::gaussian ? t_center - gaussian_truncation_fwhm * envelope.width
                                                     : t_center - 0.5 * envelope.width;
}

double Pulse::support_end() const
{
    return envelope.kind == Envelope::Kind::gaussian ? t_center + gaussian_truncation_fwhm * envelope.width
                                                     : t_center + 0.5 * envelope.width;
}

double Pulse::peak_rabi() const
{
    if (envelope.kind == Envelope::Kind::square) return area / envelope.width;
    return area / truncated_gaussian_integral(envelope.width);
}

double Pulse::shape(double t) const
{
    if (t < support_begin() || t > support_end()) return 0.0;
    if (envelope.kind == Envelope::Kind::square) return 1.0;
    const double x = (t - t_center) / envelope.width;
    return std::exp(-four_ln2 * x * x);
}

std::size_t ObservationWindow::n_samples() const
{
    if (!(rate > 0.0) || to < from) return 0;
    return static_cast<std::size_t>(std::floor((to - from) * rate + 1e-9)) + 1;
}

double SequenceTimeline::start_time() const
{
    double t = 0.0;
    for (const auto& p : pulses) t = std::min(t, p.support_begin());
    for (const auto& w : windows) t = std::min(t, w.from);
    return t;
}

double SequenceTimeline::end_time() const
{
    double t = 0.0;
    for (const auto& p : pulses) t = std::max(t, p.support_end());
    for (const auto& w : windows) t = std::max(t, w.time(w.n_samples() == 0 ? 0 : w.n_samples() - 1));
    return t;
}

std::uint64_t SequenceTimeline::hash() const
{
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : print_sequence(*this)) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// ---------------------------------------------------------------------------
// Scanner and expression evaluation

namespace {

enum class Dim { none, time, freq, angle };

const char* dim_name(Dim d)
{
    switch (d) {
    case Dim::none: return "dimensionless";
    case Dim::time: return "time";
    case Dim::freq: return "frequency";
    case Dim::angle: return "angle";
    }
    return "?";
}

struct Quantity {
    double value = 0.0;
    Dim dim = Dim::none;
};

class LineScanner {
public:
    LineScanner(const std::string& text, int line, const std::map<std::string, double>& lets)
        : s_(text), line_(line), lets_(lets)
    {
    }

    [[noreturn]] void fail(const std::string& msg) const { throw ParseError(line_, static_cast<int>(pos_) + 1, msg); }
    [[noreturn]] void fail_at(std::size_t pos, const std::string& msg) const
    {
        throw ParseError(line_, static_cast<int>(pos) + 1, msg);
    }

    void skip_ws()
    {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }
    bool at_end()
    {
        skip_ws();
        return pos_ >= s_.size();
    }
    std::size_t pos() const { return pos_; }
    char peek()
    {
        skip_ws();
        return pos_ < s_.size() ? s_[pos_] : '\0';
    }
    bool accept(char c)
    {
        if (peek() == c) {
            ++pos_;
            return true;
        }
        return false;
    }
    void expect(char c)
    {
        if (!accept(c)) fail(std::string("expected '") + c + "'");
    }

    std::string identifier()
    {
        skip_ws();
        std::size_t b = pos_;
        while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
        if (b == pos_ || std::isdigit(static_cast<unsigned char>(s_[b]))) {
            pos_ = b;
            fail("expected an identifier");
        }
        return s_.substr(b, pos_ - b);
    }

    /// Raw non-space word (used for transition names and file paths).
    std::string word()
    {
        skip_ws();
        std::size_t b = pos_;
        while (pos_ < s_.size() && !std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
        if (b == pos_) fail("expected a value");
        return s_.substr(b, pos_ - b);
    }

    Quantity expression()
    {
        Quantity lhs = term();
        for (;;) {
            char c = peek();
            if (c != '+' && c != '-') break;
            std::size_t at = pos_;
            ++pos_;
            Quantity rhs = term();
            if (lhs.dim != rhs.dim) fail_at(at, std::string("cannot combine ") + dim_name(lhs.dim) + " and " +
                                                    dim_name(rhs.dim));
            lhs.value = c == '+' ? lhs.value + rhs.value : lhs.value - rhs.value;
        }
        return lhs;
    }

    Quantity expression_of(Dim expected, bool allow_none = false)
    {
        std::size_t at = (skip_ws(), pos_);
        Quantity q = expression();
        if (q.dim != expected && !(allow_none && q.dim == Dim::none))
            fail_at(at, std::string("expected a ") + dim_name(expected) + ", got " + dim_name(q.dim));
        return q;
    }

private:
    Quantity term()
    {
        Quantity lhs = factor();
        while (peek() == '*' || peek() == '/') {
            char op = s_[pos_];
            std::size_t at = pos_;
            ++pos_;
            Quantity rhs = factor();
            if (op == '*') {
                if (lhs.dim != Dim::none && rhs.dim != Dim::none) fail_at(at, "product of two dimensioned values");
                lhs.value *= rhs.value;
                if (lhs.dim == Dim::none) lhs.dim = rhs.dim;
            } else {
                if (rhs.dim != Dim::none) fail_at(at, "division by a dimensioned value");
                lhs.value /= rhs.value;
            }
        }
        return lhs;
    }

    Quantity factor()
    {
        char c = peek();
        if (c == '-') {
            ++pos_;
            Quantity q = factor();
            q.value = -q.value;
            return q;
        }
        if (c == '+') {
            ++pos_;
            return factor();
        }
        if (c == '(') {
            ++pos_;
            Quantity q = expression();
            expect(')');
            return q;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number_with_unit();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t at = pos_;
            std::string name = identifier();
            if (name == "pi") return {std::numbers::pi, Dim::angle};
            auto it = lets_.find(name);
            if (it == lets_.end()) fail_at(at, "unknown name '" + name + "'");
            return {it->second, Dim::time};
        }
        fail("expected a number, name or '('");
    }

    Quantity number_with_unit()
    {
        std::size_t b = pos_;
        while (pos_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.')) ++pos_;
        if (pos_ < s_.size() && (s_[pos_] == 'e' || s_[pos_] == 'E')) {
            std::size_t save = pos_;
            ++pos_;
            if (pos_ < s_.size() && (s_[pos_] == '+' || s_[pos_] == '-')) ++pos_;
            if (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
                while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
            } else {
                pos_ = save;
            }
        }
        const std::string num = s_.substr(b, pos_ - b);
        double v = 0.0;
        try {
            std::size_t used = 0;
            v = std::stod(num, &used);
            if (used != num.size()) throw std::invalid_argument(num);
        } catch (const std::exception&) {
            fail_at(b, "malformed number '" + num + "'");
        }
        std::size_t ub = pos_;
        while (pos_ < s_.size() && std::isalpha(static_cast<unsigned char>(s_[pos_]))) ++pos_;
        const std::string unit = s_.substr(ub, pos_ - ub);
        if (unit.empty()) return {v, Dim::none};
        static const std::map<std::string, Quantity> units = {
            {"ns", {1e-9, Dim::time}},  {"us", {1e-6, Dim::time}},    {"ms", {1e-3, Dim::time}},
            {"s", {1.0, Dim::time}},    {"Hz", {1.0, Dim::freq}},     {"kHz", {1e3, Dim::freq}},
            {"MHz", {1e6, Dim::freq}},  {"GHz", {1e9, Dim::freq}},    {"pi", {std::numbers::pi, Dim::angle}},
        };
        auto it = units.find(unit);
        if (it == units.end()) fail_at(ub, "unknown unit '" + unit + "'");
        return {v * it->second.value, it->second.dim};
    }

    const std::string& s_;
    std::size_t pos_ = 0;
    int line_;
    const std::map<std::string, double>& lets_;
};

Transition resolve_transition(const std::string& name, const LevelSystem& ls, LineScanner& sc, std::size_t at)
{
    int a = 0;
    int b = 0;
    auto is_digits = [](const std::string& s) {
        return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
    };
    if (name.size() == 3 && name[0] == 'w' && is_digits(name.substr(1))) {
        a = name[1] - '0';
        b = name[2] - '0';
    } else if (auto dash = name.find('-'); dash != std::string::npos && is_digits(name.substr(0, dash)) &&
                                          is_digits(name.substr(dash + 1))) {
        a = std::stoi(name.substr(0, dash));
        b = std::stoi(name.substr(dash + 1));
    } else {
        sc.fail_at(at, "unknown transition '" + name + "'");
    }
    if (ls.is_excited(a) && ls.is_ground(b)) std::swap(a, b);
    if (!ls.is_ground(a) || !ls.is_excited(b)) sc.fail_at(at, "unknown transition '" + name + "' (not a ground-excited pair)");
    return {a, b};
}

std::string fmt(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct PulseSource {
    Pulse pulse;
    int line;
};

}  // namespace

// ---------------------------------------------------------------------------

SequenceTimeline parse_sequence(const std::string& text, const ParseOptions& opts)
{
    SequenceTimeline tl;
    std::optional<LevelSystem> own_system;
    const LevelSystem* system = opts.system;
    std::map<std::string, double> lets;
    std::vector<PulseSource> pulses;
    std::vector<int> window_lines;
    std::map<std::string, bool> override_used;
    for (const auto& [k, v] : opts.overrides) override_used[k] = false;

    auto need_system = [&]() -> const LevelSystem& {
        if (!system) {
            own_system.emplace(build_default_system());
            system = &*own_system;
        }
        return *system;
    };

    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
        LineScanner sc(raw, line_no, lets);
        if (sc.at_end()) continue;
        const std::size_t kw_at = sc.pos();
        const std::string kw = sc.identifier();

        if (kw == "system") {
            std::string file = sc.word();
            if (!pulses.empty()) sc.fail_at(kw_at, "'system' must precede all pulses");
            std::filesystem::path p(file);
            if (p.is_relative()) p = std::filesystem::path(opts.base_dir) / p;
            try {
                own_system.emplace(load_level_system(p.string()));
            } catch (const ModelError& e) {
                sc.fail_at(kw_at, e.what());
            }
            system = &*own_system;
            tl.system_file = file;
        } else if (kw == "let") {
            const std::size_t name_at = sc.pos();
            std::string name = sc.identifier();
            if (name == "pi") sc.fail_at(name_at, "'pi' is reserved");
            if (lets.count(name)) sc.fail_at(name_at, "'" + name + "' is already defined");
            sc.expect('=');
            const std::size_t val_at = (sc.skip_ws(), sc.pos());
            double v = sc.expression_of(Dim::time).value;
            if (auto it = opts.overrides.find(name); it != opts.overrides.end()) {
                v = it->second;
                override_used[name] = true;
            }
            if (v < 0.0) sc.fail_at(val_at, "negative time for '" + name + "'");
            lets[name] = v;
            tl.parameters[name] = v;
        } else if (kw == "pulse") {
            Pulse p;
            bool have_at = false, have_trans = false, have_area = false, have_env = false;
            while (!sc.at_end()) {
                const std::size_t key_at = sc.pos();
                std::string key = sc.identifier();
                sc.expect('=');
                const std::size_t val_at = (sc.skip_ws(), sc.pos());
                if (key == "at") {
                    p.t_center = sc.expression_of(Dim::time).value;
                    if (p.t_center < 0.0) sc.fail_at(val_at, "negative time");
                    have_at = true;
                } else if (key == "trans") {
                    p.transition = resolve_transition(sc.word(), need_system(), sc, val_at);
                    have_trans = true;
                } else if (key == "area") {
                    p.area = sc.expression_of(Dim::angle, true).value;
                    if (p.area < 0.0) sc.fail_at(val_at, "pulse area must be non-negative");
                    have_area = true;
                } else if (key == "phase") {
                    p.phase = sc.expression_of(Dim::angle, true).value;
                } else if (key == "detune") {
                    p.carrier_detuning = sc.expression_of(Dim::freq).value;
                } else if (key == "env") {
                    const std::size_t env_at = sc.pos();
                    std::string kind = sc.identifier();
                    sc.expect('(');
                    std::string arg = sc.identifier();
                    sc.expect('=');
                    const std::size_t w_at = (sc.skip_ws(), sc.pos());
                    double w = sc.expression_of(Dim::time).value;
                    sc.expect(')');
                    if (kind == "gauss" && arg == "fwhm")
                        p.envelope = {Envelope::Kind::gaussian, w};
                    else if (kind == "square" && arg == "dur")
                        p.envelope = {Envelope::Kind::square, w};
                    else
                        sc.fail_at(env_at, "expected gauss(fwhm=...) or square(dur=...)");
                    if (!(w > 0.0)) sc.fail_at(w_at, "envelope width must be positive");
                    have_env = true;
                } else if (key == "k") {
                    sc.expect('(');
                    Vec3 k{};
                    for (int i = 0; i < 3; ++i) {
                        if (i) sc.expect(',');
                        k[i] = sc.expression_of(Dim::none).value;
                    }
                    sc.expect(')');
                    const double n = std::sqrt(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]);
                    if (!(n > 0.0)) sc.fail_at(val_at, "wavevector direction must be non-zero");
                    if (std::abs(n - 1.0) > 1e-12)
                        for (auto& x : k) x /= n;
                    p.k = k;
                } else {
                    sc.fail_at(key_at, "unknown pulse attribute '" + key + "'");
                }
            }
            if (!have_at || !have_trans || !have_area || !have_env)
                sc.fail_at(kw_at, "pulse needs at=, trans=, area= and env=");
            pulses.push_back({p, line_no});
        } else if (kw == "observe") {
            ObservationWindow w;
            bool have_from = false, have_to = false, have_rate = false;
            while (!sc.at_end()) {
                const std::size_t key_at = sc.pos();
                std::string key = sc.identifier();
                sc.expect('=');
                const std::size_t val_at = (sc.skip_ws(), sc.pos());
                if (key == "from") {
                    w.from = sc.expression_of(Dim::time).value;
                    have_from = true;
                } else if (key == "to") {
                    w.to = sc.expression_of(Dim::time).value;
                    have_to = true;
                } else if (key == "rate") {
                    w.rate = sc.expression_of(Dim::freq).value;
                    if (!(w.rate > 0.0)) sc.fail_at(val_at, "sample rate must be positive");
                    have_rate = true;
                } else {
                    sc.fail_at(key_at, "unknown observe attribute '" + key + "'");
                }
            }
            if (!have_from || !have_to || !have_rate) sc.fail_at(kw_at, "observe needs from=, to= and rate=");
            if (w.to < w.from) sc.fail_at(kw_at, "observation window must have to >= from");
            tl.windows.push_back(w);
            window_lines.push_back(line_no);
        } else {
            sc.fail_at(kw_at, "unknown statement '" + kw + "'");
        }
    }

    for (const auto& [name, used] : override_used)
        if (!used) throw ParseError(0, 0, "override for undefined parameter '" + name + "'");

    std::stable_sort(pulses.begin(), pulses.end(),
                     [](const PulseSource& a, const PulseSource& b) { return a.pulse.t_center < b.pulse.t_center; });
    for (std::size_t i = 0; i < pulses.size(); ++i)
        for (std::size_t j = 0; j < i; ++j) {
            const auto& a = pulses[j].pulse;
            const auto& b = pulses[i].pulse;
            if (a.transition == b.transition && b.support_begin() < a.support_end() && a.support_begin() < b.support_end())
                throw ParseError(std::max(pulses[i].line, pulses[j].line), 1,
                                 "overlapping pulses on " + to_string(a.transition));
        }
    for (auto& ps : pulses) tl.pulses.push_back(ps.pulse);
    return tl;
}

SequenceTimeline parse_sequence_file(const std::string& path, ParseOptions opts)
{
    std::ifstream in(path);
    if (!in) throw ParseError(0, 0, "cannot open sequence file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    if (opts.base_dir == ".") opts.base_dir = std::filesystem::path(path).parent_path().string();
    if (opts.base_dir.empty()) opts.base_dir = ".";
    return parse_sequence(ss.str(), opts);
}

std::string print_sequence(const SequenceTimeline& tl)
{
    std::ostringstream out;
    if (!tl.system_file.empty()) out << "system " << tl.system_file << '\n';
    for (const auto& [name, v] : tl.parameters) out << "let " << name << " = " << fmt(v) << "s\n";
    for (const auto& p : tl.pulses) {
        out << "pulse at=" << fmt(p.t_center) << "s trans=" << p.transition.ground << '-' << p.transition.excited
            << " area=" << fmt(p.area) << " env=";
        if (p.envelope.kind == Envelope::Kind::gaussian)
            out << "gauss(fwhm=" << fmt(p.envelope.width) << "s)";
        else
            out << "square(dur=" << fmt(p.envelope.width) << "s)";
        out << " phase=" << fmt(p.phase) << " detune=" << fmt(p.carrier_detuning) << "Hz k=(" << fmt(p.k[0]) << ','
            << fmt(p.k[1]) << ',' << fmt(p.k[2]) << ")\n";
    }
    for (const auto& w : tl.windows)
        out << "observe from=" << fmt(w.from) << "s to=" << fmt(w.to) << "s rate=" << fmt(w.rate) << "Hz\n";
    return out.str();
}

void validate_timeline(const SequenceTimeline& tl)
{
    for (std::size_t i = 0; i < tl.pulses.size(); ++i) {
        const auto& b = tl.pulses[i];
        if (b.t_center < 0.0) throw ParseError(0, 0, "negative pulse time");
        if (!(b.envelope.width > 0.0)) throw ParseError(0, 0, "envelope width must be positive");
        if (b.area < 0.0) throw ParseError(0, 0, "pulse area must be non-negative");
        if (i > 0 && tl.pulses[i - 1].t_center > b.t_center) throw ParseError(0, 0, "pulses not sorted by time");
        for (std::size_t j = 0; j < i; ++j) {
            const auto& a = tl.pulses[j];
            if (a.transition == b.transition && b.support_begin() < a.support_end() && a.support_begin() < b.support_end())
                throw ParseError(0, 0, "overlapping pulses on " + to_string(a.transition));
        }
    }
    for (const auto& w : tl.windows)
        if (!(w.rate > 0.0) || w.to < w.from) throw ParseError(0, 0, "empty observation window");
}

std::vector<std::string> bandwidth_warnings(const SequenceTimeline& tl, const LevelSystem& ls)
{
    double smallest = std::numeric_limits<double>::infinity();
    for (double s : ls.params().ground_splittings_hz)
        if (s > 0.0) smallest = std::min(smallest, s);
    for (double s : ls.params().excited_splittings_hz)
        if (s > 0.0) smallest = std::min(smallest, s);
    std::vector<std::string> out;
    for (const auto& p : tl.pulses) {
        // Half width at half maximum of the amplitude spectrum.
        const double bw = p.envelope.kind == Envelope::Kind::gaussian ? 2.0 * std::numbers::ln2 / (std::numbers::pi * p.fwhm())
                                                                      : 0.6034 / p.fwhm();
        if (bw > 0.2 * smallest)
            out.push_back("pulse at t=" + fmt(p.t_center) + " s on " + to_string(p.transition) + " has bandwidth " +
                          fmt(bw) + " Hz, more than 20% of the smallest splitting");
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string time_literal(double seconds)
{
    return fmt(seconds * 1e6) + "us";
}

std::string common_header(const EchoProgram& p)
{
    std::string s;
    if (p.include_input)
        s += "pulse at=0us trans=w25 area=" + fmt(p.input_area / std::numbers::pi) +
             "pi env=gauss(fwhm=" + time_literal(p.input_fwhm) + ")\n";
    return s;
}

std::string observe_line(const std::string& centre, const EchoProgram& p)
{
    const std::string hw = time_literal(p.window_half_width);
    return "observe from=" + centre + "-" + hw + " to=" + centre + "+" + hw + " rate=" + fmt(p.sample_rate) + "Hz\n";
}

}  // namespace

std::string two_level_echo_program(double tau, const EchoProgram& p)
{
    std::string s = "let tau = " + time_literal(tau) + "\n" + common_header(p);
    s += "pulse at=tau trans=w25 area=" + fmt(p.pi_area / std::numbers::pi) + "pi env=gauss(fwhm=" +
         time_literal(p.pi_fwhm) + ")\n";
    if (p.observe_input) s += observe_line("0us", p);
    s += observe_line("(2*tau)", p);
    return s;
}

std::string four_level_echo_program(double tau_a, double tau_b, const EchoProgram& p)
{
    std::string s = "let ta = " + time_literal(tau_a) + "\nlet tb = " + time_literal(tau_b) + "\n" + common_header(p);
    const std::string pi = fmt(p.pi_area / std::numbers::pi) + "pi env=gauss(fwhm=" + time_literal(p.pi_fwhm) + ")\n";
    s += "pulse at=ta trans=w35 area=" + pi;
    s += "pulse at=ta+tb trans=w24 area=" + pi;
    if (p.observe_input) s += observe_line("0us", p);
    s += observe_line("(2*ta+tb)", p);
    return s;
}

}  // namespace dlecho
