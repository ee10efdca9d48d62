#pragma once

// Subcommands of the nfid driver. Each writes into a staging directory
// "<out>.partial" that is renamed to <out> only after every file (and the
// manifest) has been written; failures leave no partial output behind.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nfid/normalform.hpp"
#include "nfid/scenarios.hpp"
#include "pipeline.hpp"

namespace nfid::cli {

namespace fs = std::filesystem;

struct OutputOptions {
  std::optional<fs::path> output;  // default: $NFID_OUTPUT_DIR/<command> or ./<command>
  bool force = false;              // replace an existing output directory
  std::optional<std::size_t> threads;  // default: $NFID_THREADS, then the config
};

struct SimulateArgs {
  fs::path config;
  OutputOptions out;
};

struct IdentifyArgs {
  fs::path dataset;
  std::optional<fs::path> config;
  std::optional<int> n_ivars;
  std::optional<std::string> sweep;  // "1..6" or "1,2,3"
  std::optional<int> max_iters;
  std::optional<int> restarts;
  bool svg = false;
  OutputOptions out;
};

struct EvaluateArgs {
  fs::path model;
  fs::path dataset;
  std::string partition = "test";  // train | validation | test | ood | all
  std::optional<fs::path> config;
  bool svg = false;
  bool spectra = false;
  OutputOptions out;
};

struct ClosedLoopArgs {
  fs::path model;
  std::string scenario = "load_step";
  std::optional<fs::path> config;  // plant to compare against and line data
  bool svg = false;
  OutputOptions out;
};

struct ReportArgs {
  std::vector<fs::path> runs;
  std::optional<fs::path> output;  // default: stdout
};

/// Returns the directory written.
fs::path cmd_simulate(const SimulateArgs& args);
fs::path cmd_identify(const IdentifyArgs& args);
fs::path cmd_sweep(IdentifyArgs args);
fs::path cmd_evaluate(const EvaluateArgs& args);
fs::path cmd_closed_loop(const ClosedLoopArgs& args);
std::string cmd_report(const ReportArgs& args);

// ---------------------------------------------------------------------------
// Closed-loop replay shared with the tests.

struct SegmentFrequency {
  double t_start = 0.0;
  double t_end = 0.0;
  double model = 0.0;  // rad/s relative to the frame, mean over the segment's last 20 %
  double plant = 0.0;
  double relative_error = 0.0;  // |model - plant| / |plant|
};

struct ReplayResult {
  DqSeries model;
  std::optional<DqSeries> plant;
  std::optional<double> first_out_of_band;
  std::optional<double> truncated_at;
  double max_abs_dv = 0.0;  // max | |v_model| - |v_plant| |, when a plant ran
  std::vector<SegmentFrequency> segments;
  double max_relative_frequency_error = 0.0;
};

/// Runs the model in closed loop on a single-bus scenario starting from its
/// equilibrium and, when `plant` is set, the plant on the identical event
/// script.
ReplayResult replay(const normalform::HwNormalForm& model, const scenarios::Scenario& scenario,
                    cplx line_admittance, double dt,
                    const std::optional<scenarios::PlantSpec>& plant);

/// Named single-bus scenarios: load_step, stiff_bus, magnitude_step,
/// frequency_step, rapid_small_changes.
scenarios::Scenario named_scenario(const std::string& name, const PipelineConfig& p);

/// Mean rate of change of the voltage angle over [t0, t1], rad/s.
double mean_frequency(const DqSeries& s, double t0, double t1);

}  // namespace nfid::cli
