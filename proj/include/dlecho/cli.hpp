// Batch front-end: one JSON document configures a run; subcommands simulate,
// prepare, fit, phasematch and validate write CSV and JSON files.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure,
// 4 completed with a warning (a fit whose residual flags the wrong model).

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dlecho/detection.hpp"
#include "dlecho/holeburning.hpp"

namespace dlecho::cli {

inline constexpr const char* version = "0.1.0";

enum Exit : int { exit_ok = 0, exit_config = 2, exit_numerical = 3, exit_warning = 4 };

/// Reads a config file. A run manifest is accepted too: its embedded
/// config is returned, so a manifest reproduces its run.
nlohmann::json load_config(const std::string& path);

/// Applies `a.b.c=value`; the value is parsed as JSON when possible and
/// kept as a string otherwise.
void apply_override(nlohmann::json& config, const std::string& assignment);

/// 64-bit FNV-1a digest as 16 hex digits.
std::string digest(const std::string& bytes);
std::string file_digest(const std::string& path);

EnsembleSpec ensemble_from_json(const nlohmann::json& j, std::uint64_t seed);
HoleburningConfig preparation_from_json(const nlohmann::json& j);
RelaxationSpec relaxation_from_json(const nlohmann::json& j, const LevelSystem& ls);

struct SweepAxis {
    std::string name;
    std::vector<double> values;
    /// Names a `let` binding; otherwise a dotted config path.
    bool is_let = true;
};

struct FitRequest {
    DecayModel model = DecayModel::exponential;
    /// "total_delay" (echo time minus input time) or a sweep axis name.
    std::string x = "total_delay";
};

/// A fully checked run configuration. `config` is self-contained: the level
/// system and the sequence program are embedded, so it is what the manifest
/// records.
struct RunConfig {
    nlohmann::json config;
    std::string base_dir = ".";
    LevelSystem system = build_default_system();
    std::string program;
    std::uint64_t seed = 1;
    std::vector<SweepAxis> sweep;

    EnsembleSpec ensemble;
    RelaxationSpec relaxation;
    HeterodyneConfig heterodyne;
    Taper taper = Taper::hann;
    int pad_factor = 1;
    bool write_spectra = true;
    bool write_emission = true;
    /// 0 picks three input-pulse widths.
    double gate_half_width = 0.0;
    std::optional<FitRequest> fit;
    std::optional<WidthCalibration> calibration;

    HoleburningConfig preparation;
    std::string output = "out";

    /// Number of points in the Cartesian product of the sweep axes.
    std::size_t n_points() const;
};

/// Resolves file references against `base_dir` and checks every section.
/// Throws ModelError, ParseError or PathwayError on invalid input.
RunConfig resolve_config(nlohmann::json config, const std::string& base_dir);

/// Sweep values of point `index`, first axis slowest.
std::vector<std::pair<std::string, double>> sweep_point(const RunConfig& rc, std::size_t index);

struct PointResult {
    std::vector<std::pair<std::string, double>> axes;
    double predicted_time = 0.0;
    double total_delay = 0.0;
    double echo_time = 0.0;
    double echo_amplitude = 0.0;
    double echo_phase = 0.0;
    double efficiency = 0.0;
    std::string status = "ok";
};

struct SimulateResult {
    std::vector<PointResult> points;
    std::optional<DecayFit> fit;
    std::optional<double> calibrated_sigma;
    nlohmann::json manifest;
};

/// Runs every sweep point and writes points.csv, per-point emission and
/// spectrum CSVs, fit.json and manifest.json into `out_dir`.
SimulateResult simulate(const RunConfig& rc, const std::string& out_dir, std::ostream& log);

struct PrepareResult {
    PopulationGrid grid;
    std::optional<PreparedFeature> feature;
    nlohmann::json manifest;
};

/// Runs the holeburning schedule and writes grid.csv, medium.csv (when a
/// feature is burned) and manifest.json. A zero burn duration skips the
/// feature and records only the grid.
PrepareResult prepare(const RunConfig& rc, const std::string& out_dir);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    std::vector<double> column(const std::string& name) const;
};

CsvTable read_csv(const std::string& path);

struct FitOutcome {
    DecayFit fit;
    /// Residual norms of the other models that converged.
    std::vector<std::pair<DecayModel, double>> alternatives;
    /// Set when another model fits at least ten times better.
    std::optional<std::string> warning;
};

FitOutcome fit_table(const std::vector<double>& x, const std::vector<double>& y, DecayModel model);

/// Result of the `phasematch` section.
PhaseMatchResult phasematch(const nlohmann::json& section, const LevelSystem& ls);

/// Full command line entry point; returns the process exit code.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace dlecho::cli
