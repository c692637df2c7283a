#include "dlecho/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

namespace dlecho::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where)
{
    if (!j.is_object()) throw ModelError(where + " must be an object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) throw ModelError("unknown key '" + key + "' in " + where);
}

template <typename T>
T get_or(const json& j, const char* key, T fallback)
{
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ModelError(std::string("key '") + key + "' has the wrong type");
    }
}

std::string read_text(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ModelError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json read_json_file(const std::string& path)
{
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw ModelError("invalid JSON in " + path + ": " + e.what());
    }
}

std::string resolve_path(const std::string& base_dir, const std::string& p)
{
    fs::path path(p);
    if (path.is_relative()) path = fs::path(base_dir) / path;
    return path.string();
}

/// The level system is carried by the config, so `system` lines in the
/// program are neutralized.
std::string strip_system_lines(const std::string& program)
{
    std::istringstream in(program);
    std::string out;
    std::string line;
    while (std::getline(in, line)) {
        const auto first = line.find_first_not_of(" \t");
        if (first != std::string::npos && line.compare(first, 6, "system") == 0 &&
            (line.size() == first + 6 || std::isspace(static_cast<unsigned char>(line[first + 6]))))
            out += "# " + line.substr(first) + " (embedded in the config)\n";
        else
            out += line + "\n";
    }
    return out;
}

/// The file named by the first `system` line of a program, if any.
std::optional<std::string> system_line(const std::string& program)
{
    std::istringstream in(program);
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream words(line);
        std::string kw;
        std::string file;
        if (words >> kw && kw == "system" && words >> file) return file;
    }
    return std::nullopt;
}

Distribution distribution_from_json(const json& j, const std::string& where)
{
    check_keys(j, {"shape", "width"}, where);
    Distribution d;
    d.shape = shape_from_string(get_or<std::string>(j, "shape", "gaussian"));
    d.width = get_or<double>(j, "width", 0.0);
    if (!(d.width >= 0.0)) throw ModelError(where + ".width must be non-negative");
    return d;
}

std::string num(double v)
{
    char b[32];
    std::snprintf(b, sizeof b, "%.17g", v);
    return b;
}

std::string indexed(const std::string& stem, std::size_t i, const std::string& suffix)
{
    char b[16];
    std::snprintf(b, sizeof b, "%04zu", i);
    return stem + "_" + b + suffix;
}

void write_json(const json& j, const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw ModelError("cannot write " + path);
    out << j.dump(2) << '\n';
}

json base_manifest(const RunConfig& rc, const std::string& command)
{
    const std::string canonical = rc.config.dump();
    return {{"tool", "dlecho"},
            {"version", version},
            {"command", command},
            {"config_hash", digest(canonical)},
            {"seed", rc.seed},
            {"config", rc.config}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Config plumbing

json load_config(const std::string& path)
{
    json j = read_json_file(path);
    if (j.is_object() && j.contains("config") && j.contains("config_hash")) return j.at("config");
    return j;
}

void apply_override(json& config, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ModelError("override '" + assignment + "' is not key=value");
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json* node = &config;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ModelError("override path '" + path + "' has an empty component");
        if (!node->is_object()) {
            if (!node->is_null()) throw ModelError("override path '" + path + "' runs through a non-object");
            *node = json::object();
        }
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

std::string digest(const std::string& bytes)
{
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char b[24];
    std::snprintf(b, sizeof b, "%016llx", static_cast<unsigned long long>(h));
    return b;
}

std::string file_digest(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelError("cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return digest(ss.str());
}

EnsembleSpec ensemble_from_json(const json& j, std::uint64_t seed)
{
    check_keys(j,
               {"optical", "ground", "excited", "n_classes", "sampling", "nodes", "grid_span", "area_spread", "mode",
                "alphaL", "n_slices", "reference_rabi", "integrator", "verify_stride", "initial_populations"},
               "ensemble");
    EnsembleSpec s;
    s.seed = seed;
    if (j.contains("optical")) s.model.optical = distribution_from_json(j["optical"], "ensemble.optical");
    if (j.contains("ground")) s.model.ground = distribution_from_json(j["ground"], "ensemble.ground");
    if (j.contains("excited")) s.model.excited = distribution_from_json(j["excited"], "ensemble.excited");
    const auto n = get_or<long long>(j, "n_classes", 256);
    if (n < 1) throw ModelError("ensemble.n_classes must be positive");
    s.n_classes = static_cast<std::size_t>(n);
    s.sampling = sampling_from_string(get_or<std::string>(j, "sampling", "gauss_quadrature"));
    if (j.contains("nodes")) s.nodes = j["nodes"].get<std::array<int, 3>>();
    s.grid_span = get_or<double>(j, "grid_span", s.grid_span);
    if (j.contains("area_spread")) {
        const json& a = j["area_spread"];
        check_keys(a, {"rel_sigma", "nodes", "factors", "weights", "min_area"}, "ensemble.area_spread");
        if (a.contains("rel_sigma")) {
            s.area = AreaSpread::gaussian(a["rel_sigma"].get<double>(), get_or<int>(a, "nodes", 9));
        } else if (a.contains("factors")) {
            s.area.factors = a["factors"].get<std::vector<double>>();
            s.area.weights = get_or<std::vector<double>>(a, "weights", std::vector<double>(s.area.factors.size(),
                                                                                            1.0 / s.area.factors.size()));
        }
        s.area.min_area = get_or<double>(a, "min_area", s.area.min_area);
    }
    const auto mode = get_or<std::string>(j, "mode", "thin");
    if (mode == "thin")
        s.mode = PropagationMode::thin;
    else if (mode == "slab")
        s.mode = PropagationMode::slab;
    else
        throw ModelError("ensemble.mode must be 'thin' or 'slab'");
    s.alphaL = get_or<double>(j, "alphaL", s.alphaL);
    s.n_slices = get_or<int>(j, "n_slices", s.n_slices);
    s.reference_rabi = get_or<double>(j, "reference_rabi", s.reference_rabi);
    if (j.contains("integrator")) {
        const json& i = j["integrator"];
        check_keys(i, {"tol", "step_scale", "check_invariants"}, "ensemble.integrator");
        s.integrator.tol = get_or<double>(i, "tol", s.integrator.tol);
        s.integrator.step_scale = get_or<double>(i, "step_scale", s.integrator.step_scale);
        s.integrator.check_invariants = get_or<bool>(i, "check_invariants", s.integrator.check_invariants);
    }
    const auto stride = get_or<long long>(j, "verify_stride", static_cast<long long>(s.verify_stride));
    if (stride < 1) throw ModelError("ensemble.verify_stride must be positive");
    s.verify_stride = static_cast<std::size_t>(stride);
    if (j.contains("initial_populations")) {
        const auto p = j["initial_populations"].get<std::vector<double>>();
        s.initial_populations = Eigen::Map<const Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
    }
    s.validate();
    return s;
}

HoleburningConfig preparation_from_json(const json& j)
{
    check_keys(j,
               {"window_half_width", "step", "pump_rate", "linewidth", "sweep_half_width", "isolation_cycles",
                "isolation_duration", "repump_duration", "burn_duration", "cleanup_duration", "feature_width", "alphaL",
                "transmission", "max_alphaL", "n_slices"},
               "preparation");
    HoleburningConfig c;
    c.window_half_width = get_or<double>(j, "window_half_width", c.window_half_width);
    c.step = get_or<double>(j, "step", c.step);
    c.pump_rate = get_or<double>(j, "pump_rate", c.pump_rate);
    c.linewidth = get_or<double>(j, "linewidth", c.linewidth);
    c.sweep_half_width = get_or<double>(j, "sweep_half_width", c.sweep_half_width);
    c.isolation_cycles = get_or<int>(j, "isolation_cycles", c.isolation_cycles);
    c.isolation_duration = get_or<double>(j, "isolation_duration", c.isolation_duration);
    c.repump_duration = get_or<double>(j, "repump_duration", c.repump_duration);
    c.burn_duration = get_or<double>(j, "burn_duration", c.burn_duration);
    c.cleanup_duration = get_or<double>(j, "cleanup_duration", c.cleanup_duration);
    c.feature_width = get_or<double>(j, "feature_width", c.feature_width);
    if (j.contains("transmission") && j.contains("alphaL"))
        throw ModelError("preparation: give either alphaL or transmission, not both");
    if (j.contains("transmission")) {
        const double t = j["transmission"].get<double>();
        if (!(t > 0.0 && t < 1.0)) throw ModelError("preparation.transmission must lie in (0, 1)");
        c.alphaL = -std::log(t);
    }
    c.alphaL = get_or<double>(j, "alphaL", c.alphaL);
    c.max_alphaL = get_or<double>(j, "max_alphaL", c.max_alphaL);
    c.n_slices = get_or<int>(j, "n_slices", c.n_slices);
    c.validate();
    return c;
}

RelaxationSpec relaxation_from_json(const json& j, const LevelSystem& ls)
{
    check_keys(j, {"enabled", "optical_dephasing", "optical_decay", "spin_dephasing", "spin_relaxation"}, "relaxation");
    if (!get_or<bool>(j, "enabled", true)) return no_relaxation(ls);
    RelaxationToggles t;
    t.optical_dephasing = get_or<bool>(j, "optical_dephasing", t.optical_dephasing);
    t.optical_decay = get_or<bool>(j, "optical_decay", t.optical_decay);
    t.spin_dephasing = get_or<bool>(j, "spin_dephasing", t.spin_dephasing);
    t.spin_relaxation = get_or<bool>(j, "spin_relaxation", t.spin_relaxation);
    return relaxation_from_system(ls, t);
}

std::size_t RunConfig::n_points() const
{
    std::size_t n = 1;
    for (const auto& a : sweep) n *= a.values.size();
    return n;
}

RunConfig resolve_config(json config, const std::string& base_dir)
{
    check_keys(config,
               {"system", "sequence", "ensemble", "relaxation", "detection", "analysis", "calibration", "sweep",
                "preparation", "phasematch", "output", "seed", "description"},
               "config");
    RunConfig rc;
    rc.base_dir = base_dir;
    rc.seed = get_or<std::uint64_t>(config, "seed", 1);
    rc.output = get_or<std::string>(config, "output", "out");

    // Sequence first: a `system` line names the level system when the config does not.
    if (config.contains("sequence")) {
        json& seq = config["sequence"];
        check_keys(seq, {"file", "program"}, "sequence");
        if (seq.contains("file") == seq.contains("program"))
            throw ModelError("sequence needs exactly one of 'file' and 'program'");
        std::string program;
        std::string program_dir = base_dir;
        if (seq.contains("file")) {
            const std::string path = resolve_path(base_dir, seq["file"].get<std::string>());
            program = read_text(path);
            program_dir = fs::path(path).parent_path().string();
        } else {
            program = seq["program"].get<std::string>();
        }
        if (!config.contains("system"))
            if (const auto file = system_line(program))
                config["system"] = fs::absolute(resolve_path(program_dir, *file)).lexically_normal().string();
        rc.program = strip_system_lines(program);
        config["sequence"] = {{"program", rc.program}};
    }

    json system_json = to_json(build_default_system());
    if (config.contains("system")) {
        json& s = config["system"];
        if (s.is_string()) {
            system_json = read_json_file(resolve_path(base_dir, s.get<std::string>()));
        } else if (s.is_object() && s.contains("file")) {
            system_json = read_json_file(resolve_path(base_dir, s["file"].get<std::string>()));
            json patch = s;
            patch.erase("file");
            system_json.merge_patch(patch);
        } else if (s.is_object()) {
            system_json = s;
        } else {
            throw ModelError("system must be a file name or an object");
        }
    }
    rc.system = level_system_from_json(system_json);
    config["system"] = to_json(rc.system);

    const json empty = json::object();
    rc.ensemble = ensemble_from_json(config.value("ensemble", empty), rc.seed);
    rc.relaxation = relaxation_from_json(config.value("relaxation", empty), rc.system);

    const json det = config.value("detection", empty);
    check_keys(det, {"lo_frequency", "noise_stdev", "include_drive", "bandwidth", "taper", "pad_factor", "spectra",
                     "emission", "gate_half_width"},
               "detection");
    rc.heterodyne.lo_frequency = get_or<double>(det, "lo_frequency", rc.heterodyne.lo_frequency);
    rc.heterodyne.noise_stdev = get_or<double>(det, "noise_stdev", 0.0);
    if (!(rc.heterodyne.noise_stdev >= 0.0)) throw ModelError("detection.noise_stdev must be non-negative");
    rc.heterodyne.include_drive = get_or<bool>(det, "include_drive", true);
    rc.heterodyne.bandwidth = get_or<double>(det, "bandwidth", 0.0);
    rc.heterodyne.seed = rc.seed;
    rc.taper = taper_from_string(get_or<std::string>(det, "taper", "hann"));
    rc.pad_factor = get_or<int>(det, "pad_factor", 1);
    if (rc.pad_factor < 1) throw ModelError("detection.pad_factor must be at least 1");
    rc.write_spectra = get_or<bool>(det, "spectra", true);
    rc.write_emission = get_or<bool>(det, "emission", true);
    rc.gate_half_width = get_or<double>(det, "gate_half_width", 0.0);
    if (!(rc.gate_half_width >= 0.0)) throw ModelError("detection.gate_half_width must be non-negative");

    const json an = config.value("analysis", empty);
    check_keys(an, {"fit"}, "analysis");
    if (an.contains("fit")) {
        const json& f = an["fit"];
        check_keys(f, {"model", "x"}, "analysis.fit");
        FitRequest fr;
        fr.model = decay_model_from_string(get_or<std::string>(f, "model", "exponential"));
        fr.x = get_or<std::string>(f, "x", fr.x);
        rc.fit = fr;
    }

    if (config.contains("calibration")) {
        const json& c = config["calibration"];
        check_keys(c, {"t2_opt", "target_t2", "tau_a", "tau_b", "sigma_e_ratio"}, "calibration");
        WidthCalibration w;
        w.t2_opt = get_or<double>(c, "t2_opt", w.t2_opt);
        w.target_t2 = get_or<double>(c, "target_t2", w.target_t2);
        w.tau_a = get_or<std::vector<double>>(c, "tau_a", {});
        w.tau_b = get_or<double>(c, "tau_b", 0.0);
        w.sigma_e_ratio = get_or<double>(c, "sigma_e_ratio", 1.0);
        if (w.tau_a.size() < 2) throw ModelError("calibration.tau_a needs at least two values");
        rc.calibration = w;
    }

    std::map<std::string, double> lets;
    if (!rc.program.empty()) {
        ParseOptions po;
        po.system = &rc.system;
        po.base_dir = base_dir;
        const auto tl = parse_sequence(rc.program, po);
        validate_timeline(tl);
        lets = tl.parameters;
    }
    if (config.contains("sweep")) {
        const json& sw = config["sweep"];
        if (!sw.is_object()) throw ModelError("sweep must map axis names to value lists");
        for (const auto& [name, values] : sw.items()) {
            SweepAxis a;
            a.name = name;
            if (!values.is_array()) throw ModelError("sweep axis '" + name + "' must be a list");
            a.values = values.get<std::vector<double>>();
            if (a.values.empty()) throw ModelError("sweep axis '" + name + "' is empty");
            a.is_let = name.find('.') == std::string::npos;
            if (a.is_let && !lets.count(name)) throw ModelError("sweep axis '" + name + "' is not a let binding of the sequence");
            if (!a.is_let) {
                // Dry run of the override so bad paths fail here.
                json probe = config;
                apply_override(probe, name + "=" + num(a.values.front()));
                ensemble_from_json(probe.value("ensemble", empty), rc.seed);
            }
            rc.sweep.push_back(std::move(a));
        }
    }
    if (rc.fit && rc.fit->x != "total_delay") {
        bool found = false;
        for (const auto& a : rc.sweep) found = found || a.name == rc.fit->x;
        if (!found) throw ModelError("analysis.fit.x '" + rc.fit->x + "' is neither total_delay nor a sweep axis");
    }

    rc.preparation = preparation_from_json(config.value("preparation", empty));
    rc.config = std::move(config);
    return rc;
}

std::vector<std::pair<std::string, double>> sweep_point(const RunConfig& rc, std::size_t index)
{
    std::vector<std::pair<std::string, double>> out(rc.sweep.size());
    for (std::size_t a = rc.sweep.size(); a-- > 0;) {
        const auto& axis = rc.sweep[a];
        out[a] = {axis.name, axis.values[index % axis.values.size()]};
        index /= axis.values.size();
    }
    return out;
}

// ---------------------------------------------------------------------------
// simulate

SimulateResult simulate(const RunConfig& rc, const std::string& out_dir, std::ostream& log)
{
    if (rc.program.empty()) throw ModelError("simulate needs a sequence");
    fs::create_directories(out_dir);
    SimulateResult res;
    json manifest = base_manifest(rc, "simulate");
    json files = json::object();

    json config = rc.config;
    if (rc.calibration) {
        const double sigma = calibrate_gaussian_width(*rc.calibration);
        res.calibrated_sigma = sigma;
        apply_override(config, "ensemble.ground.width=" + num(sigma));
        apply_override(config, "ensemble.excited.width=" + num(rc.calibration->sigma_e_ratio * sigma));
        manifest["calibration"] = {{"sigma_g_hz", sigma}, {"sigma_e_hz", rc.calibration->sigma_e_ratio * sigma}};
        log << "calibrated ground width " << sigma << " Hz\n";
    }
    const json empty = json::object();

    std::ofstream points(fs::path(out_dir) / "points.csv");
    if (!points) throw ModelError("cannot write into " + out_dir);
    points << "index";
    for (const auto& a : rc.sweep) points << ',' << a.name;
    points << ",predicted_time_s,total_delay_s,echo_time_s,echo_amplitude,echo_phase_rad,efficiency,status\n";

    json point_meta = json::array();
    for (std::size_t i = 0; i < rc.n_points(); ++i) {
        PointResult pr;
        pr.axes = sweep_point(rc, i);
        json point_config = config;
        ParseOptions po;
        po.system = &rc.system;
        po.base_dir = rc.base_dir;
        for (const auto& [name, value] : pr.axes) {
            bool is_let = true;
            for (const auto& a : rc.sweep)
                if (a.name == name) is_let = a.is_let;
            if (is_let)
                po.overrides[name] = value;
            else
                apply_override(point_config, name + "=" + num(value));
        }
        const EnsembleSpec spec = ensemble_from_json(point_config.value("ensemble", empty), rc.seed);
        const SequenceTimeline tl = parse_sequence(rc.program, po);
        validate_timeline(tl);
        for (const auto& w : bandwidth_warnings(tl, rc.system)) log << "warning: " << w << '\n';

        const EmissionRecord rec = run_experiment(tl, rc.system, spec, rc.relaxation);
        try {
            const PathwayPrediction pred = predict_pathway(tl, rc.system);
            pr.predicted_time = pred.echo_time;
            pr.total_delay = pred.echo_time - pred.input_time;
            const double gate = rc.gate_half_width > 0.0 ? rc.gate_half_width : default_gate_half_width(tl);
            const EchoPeak e = extract_echo(rec, pred, gate);
            pr.echo_time = e.time;
            pr.echo_amplitude = std::abs(e.amplitude);
            pr.echo_phase = std::arg(e.amplitude);
            pr.efficiency = e.normalized;
        } catch (const PathwayError&) {
            pr.status = "no_pathway";
        } catch (const NumericalError&) {
            pr.status = "no_echo";
        }

        if (rc.write_emission) {
            const std::string name = indexed("emission", i, ".csv");
            write_emission_csv(rec, (fs::path(out_dir) / name).string());
            files[name] = file_digest((fs::path(out_dir) / name).string());
        }
        if (rc.write_spectra) {
            for (std::size_t w = 0; w < rec.windows.size(); ++w) {
                const auto trace = heterodyne(rec, w, rc.system, rc.heterodyne);
                if (trace.samples.size() < 2) continue;
                const auto s = amplitude_spectrum(trace, trace.time(0), trace.time(trace.samples.size() - 1), rc.taper,
                                                  rc.pad_factor);
                const std::string name = indexed("spectrum", i, "_w" + std::to_string(w) + ".csv");
                write_spectrum_csv(s, (fs::path(out_dir) / name).string());
                files[name] = file_digest((fs::path(out_dir) / name).string());
            }
        }
        json meta = emission_manifest(rec);
        meta["index"] = i;
        point_meta.push_back(meta);

        points << i;
        for (const auto& [name, value] : pr.axes) points << ',' << num(value);
        points << ',' << num(pr.predicted_time) << ',' << num(pr.total_delay) << ',' << num(pr.echo_time) << ','
               << num(pr.echo_amplitude) << ',' << num(pr.echo_phase) << ',' << num(pr.efficiency) << ',' << pr.status
               << '\n';
        log << "point " << i + 1 << "/" << rc.n_points() << ": " << pr.status << " amplitude " << pr.echo_amplitude << '\n';
        res.points.push_back(std::move(pr));
    }
    points.close();
    files["points.csv"] = file_digest((fs::path(out_dir) / "points.csv").string());

    if (rc.fit) {
        std::vector<double> x;
        std::vector<double> y;
        for (const auto& p : res.points) {
            if (p.status != "ok") continue;
            double xv = p.total_delay;
            for (const auto& [name, value] : p.axes)
                if (name == rc.fit->x) xv = value;
            x.push_back(xv);
            y.push_back(p.echo_amplitude);
        }
        res.fit = fit_decay(x, y, rc.fit->model);
        json fj = to_json(*res.fit);
        fj["x"] = rc.fit->x;
        write_json(fj, (fs::path(out_dir) / "fit.json").string());
        files["fit.json"] = file_digest((fs::path(out_dir) / "fit.json").string());
        manifest["fit"] = fj;
    }

    manifest["points"] = point_meta;
    manifest["files"] = files;
    write_json(manifest, (fs::path(out_dir) / "manifest.json").string());
    res.manifest = manifest;
    return res;
}

// ---------------------------------------------------------------------------
// prepare

PrepareResult prepare(const RunConfig& rc, const std::string& out_dir)
{
    fs::create_directories(out_dir);
    PrepareResult res;
    json manifest = base_manifest(rc, "prepare");
    json files = json::object();
    const HoleburningConfig& cfg = rc.preparation;

    if (cfg.burn_duration == 0.0) {
        const auto start = PopulationGrid::uniform(rc.system, cfg.window_half_width, cfg.step);
        res.grid = isolate_subgroup(start, rc.system, cfg);
        manifest["feature"] = nullptr;
    } else {
        res.feature = prepare_feature(rc.system, cfg);
        res.grid = res.feature->grid;
        manifest["feature"] = {{"alphaL", res.feature->medium.alphaL},
                               {"transmission", std::exp(-res.feature->medium.alphaL)},
                               {"fwhm_hz", res.feature->fwhm},
                               {"burn_half_width_hz", res.feature->burn_half_width},
                               {"max_alphaL", res.feature->max_alphaL},
                               {"n_slices", res.feature->medium.n_slices}};
        const auto path = (fs::path(out_dir) / "medium.csv").string();
        std::ofstream m(path);
        m << "detuning_hz,profile\n";
        for (const double f : res.grid.detuning) m << num(f) << ',' << num(res.feature->medium.profile(f)) << '\n';
        m.close();
        files["medium.csv"] = file_digest(path);
    }
    manifest["conservation_error"] = res.grid.conservation_error();
    const auto grid_path = (fs::path(out_dir) / "grid.csv").string();
    write_grid_csv(res.grid, grid_path);
    files["grid.csv"] = file_digest(grid_path);
    manifest["files"] = files;
    write_json(manifest, (fs::path(out_dir) / "manifest.json").string());
    res.manifest = manifest;
    return res;
}

// ---------------------------------------------------------------------------
// fit

std::vector<double> CsvTable::column(const std::string& name) const
{
    for (std::size_t c = 0; c < header.size(); ++c)
        if (header[c] == name) {
            std::vector<double> v;
            for (const auto& r : rows) v.push_back(r.at(c));
            return v;
        }
    throw ModelError("CSV has no column '" + name + "'");
}

CsvTable read_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ModelError("cannot open " + path);
    CsvTable t;
    std::string line;
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            const auto a = cell.find_first_not_of(" \t\r");
            const auto b = cell.find_last_not_of(" \t\r");
            out.push_back(a == std::string::npos ? "" : cell.substr(a, b - a + 1));
        }
        return out;
    };
    if (!std::getline(in, line)) throw ModelError(path + " is empty");
    t.header = split(line);
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split(line);
        if (cells.size() != t.header.size()) throw ModelError(path + ":" + std::to_string(line_no) + ": wrong number of cells");
        std::vector<double> row;
        for (const auto& c : cells) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(c, &used));
                if (used != c.size()) throw std::invalid_argument(c);
            } catch (const std::exception&) {
                row.push_back(std::nan(""));
            }
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

FitOutcome fit_table(const std::vector<double>& x, const std::vector<double>& y, DecayModel model)
{
    FitOutcome out{fit_decay(x, y, model), {}, std::nullopt};
    double scale = 0.0;
    for (double v : y) scale += v * v;
    const double floor = 1e-9 * std::sqrt(scale);
    double best = std::numeric_limits<double>::infinity();
    DecayModel best_model = model;
    for (DecayModel m : {DecayModel::exponential, DecayModel::gaussian, DecayModel::lorentzian_ft, DecayModel::voigt_ft}) {
        if (m == model) continue;
        try {
            const auto f = fit_decay(x, y, m);
            out.alternatives.emplace_back(m, f.residual_norm);
            if (f.residual_norm < best) {
                best = f.residual_norm;
                best_model = m;
            }
        } catch (const std::exception&) {
            // A model that cannot be fitted is no evidence either way.
        }
    }
    if (out.fit.residual_norm > 10.0 * std::max(best, floor))
        out.warning = "residual " + num(out.fit.residual_norm) + " is more than ten times that of the " +
                      to_string(best_model) + " model (" + num(best) + ")";
    return out;
}

// ---------------------------------------------------------------------------
// phasematch

PhaseMatchResult phasematch(const json& section, const LevelSystem& ls)
{
    check_keys(section, {"scheme", "length", "input_wavelength", "beams", "echo_wavelength"}, "phasematch");
    const auto scheme = get_or<std::string>(section, "scheme", "four_level");
    const double length = get_or<double>(section, "length", 20e-3);
    const double lambda_in = get_or<double>(section, "input_wavelength", 605.977e-9);
    const json beams = section.value("beams", json::object());
    const auto& lam = ls.lambda();

    auto beam = [&](const std::string& name, const Transition& t) {
        Beam b;
        b.wavelength = transition_wavelength(ls, t, lambda_in);
        if (beams.contains(name)) {
            const json& j = beams[name];
            check_keys(j, {"direction", "wavelength"}, "phasematch.beams." + name);
            if (j.contains("direction")) b.direction = j["direction"].get<Vec3>();
            b.wavelength = get_or<double>(j, "wavelength", b.wavelength);
        }
        return b;
    };
    if (scheme == "four_level") {
        check_keys(beams, {"input", "pi1", "pi2"}, "phasematch.beams");
        const double echo = get_or<double>(section, "echo_wavelength", transition_wavelength(ls, lam.echo(), lambda_in));
        return phase_match_four_level(beam("input", lam.input()), beam("pi1", lam.first_transfer()),
                                      beam("pi2", lam.second_transfer()), echo, length);
    }
    if (scheme == "two_level") {
        check_keys(beams, {"input", "pi"}, "phasematch.beams");
        const double echo = get_or<double>(section, "echo_wavelength", transition_wavelength(ls, lam.input(), lambda_in));
        return phase_match_two_level(beam("input", lam.input()), beam("pi", lam.input()), echo, length);
    }
    throw ModelError("phasematch.scheme must be 'four_level' or 'two_level'");
}

// ---------------------------------------------------------------------------
// Command line

int run(int argc, char** argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Four-level photon echo simulator"};
    app.require_subcommand(1);
    app.set_version_flag("--version", version);

    std::string config_path;
    std::string out_dir;
    std::vector<std::string> overrides;
    auto add_config = [&](CLI::App* sub) {
        sub->add_option("-c,--config", config_path, "JSON config or run manifest")->required()->check(CLI::ExistingFile);
        sub->add_option("--set", overrides, "Override a config value, key.path=value (repeatable)");
    };

    auto* sim = app.add_subcommand("simulate", "Run sequences over the sweep and analyse the echoes");
    add_config(sim);
    sim->add_option("-o,--out", out_dir, "Output directory (default: config 'output')");

    auto* prep = app.add_subcommand("prepare", "Run the holeburning preparation");
    add_config(prep);
    prep->add_option("-o,--out", out_dir, "Output directory (default: config 'output')");

    std::string csv_path;
    std::string model_name = "exponential";
    std::string x_col;
    std::string y_col;
    std::string fit_out;
    auto* fit = app.add_subcommand("fit", "Fit a decay model to a two-column CSV");
    fit->add_option("--csv", csv_path, "Input CSV with a header row")->required()->check(CLI::ExistingFile);
    fit->add_option("-m,--model", model_name, "exponential, gaussian, lorentzian_ft or voigt_ft");
    fit->add_option("--x", x_col, "Delay column (default: first)");
    fit->add_option("--y", y_col, "Amplitude column (default: second)");
    fit->add_option("-o,--out", fit_out, "Write the fit JSON here as well as to stdout");

    std::string pm_out;
    auto* pm = app.add_subcommand("phasematch", "Wavevector closure of the echo");
    add_config(pm);
    pm->add_option("-o,--out", pm_out, "Write the result JSON here as well as to stdout");

    auto* val = app.add_subcommand("validate", "Check a config without running it");
    add_config(val);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return exit_config;
    }

    auto load = [&]() {
        json cfg = load_config(config_path);
        for (const auto& o : overrides) apply_override(cfg, o);
        std::string dir = fs::path(config_path).parent_path().string();
        return resolve_config(std::move(cfg), dir.empty() ? "." : dir);
    };

    try {
        if (*val) {
            const RunConfig rc = load();
            out << "config OK: " << rc.n_points() << " sweep point(s), hash " << digest(rc.config.dump()) << '\n';
            return exit_ok;
        }
        if (*sim) {
            const RunConfig rc = load();
            simulate(rc, out_dir.empty() ? rc.output : out_dir, err);
            return exit_ok;
        }
        if (*prep) {
            const RunConfig rc = load();
            try {
                prepare(rc, out_dir.empty() ? rc.output : out_dir);
            } catch (const ModelError& e) {
                // The config was valid; the requested feature is not attainable.
                err << "error: " << e.what() << '\n';
                return exit_numerical;
            }
            return exit_ok;
        }
        if (*pm) {
            const RunConfig rc = load();
            if (!rc.config.contains("phasematch")) throw ModelError("config has no 'phasematch' section");
            const json j = to_json(phasematch(rc.config["phasematch"], rc.system));
            out << j.dump(2) << '\n';
            if (!pm_out.empty()) write_json(j, pm_out);
            return exit_ok;
        }
        if (*fit) {
            const CsvTable t = read_csv(csv_path);
            if (t.header.size() < 2) throw ModelError("fit needs at least two CSV columns");
            const auto x = t.column(x_col.empty() ? t.header[0] : x_col);
            const auto y = t.column(y_col.empty() ? t.header[1] : y_col);
            const FitOutcome f = fit_table(x, y, decay_model_from_string(model_name));
            json j = to_json(f.fit);
            json alt = json::object();
            for (const auto& [m, r] : f.alternatives) alt[to_string(m)] = r;
            j["alternative_residuals"] = alt;
            if (f.warning) j["warning"] = *f.warning;
            out << j.dump(2) << '\n';
            if (!fit_out.empty()) write_json(j, fit_out);
            if (f.warning) {
                err << "warning: " << *f.warning << '\n';
                return exit_warning;
            }
            return exit_ok;
        }
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << '\n';
        return exit_numerical;
    } catch (const ParseError& e) {
        err << "sequence error: " << e.what() << '\n';
        return exit_config;
    } catch (const PathwayError& e) {
        err << "sequence error: " << e.what() << '\n';
        return exit_config;
    } catch (const ModelError& e) {
        err << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (const json::exception& e) {
        err << "config error: " << e.what() << '\n';
        return exit_config;
    }
    return exit_config;
}

}  // namespace dlecho::cli
