#include <CLI11.hpp>
#include <iostream>

#include "commands.hpp"
#include "nfid/error.hpp"
#include "nfid/version.hpp"

namespace {

void add_output_options(CLI::App* cmd, nfid::cli::OutputOptions& o) {
  cmd->add_option("-o,--output", o.output, "Output directory (default: $NFID_OUTPUT_DIR/<command>)");
  cmd->add_flag("--force", o.force, "Replace an existing output directory");
  cmd->add_option("-j,--threads", o.threads, "Worker threads (default: $NFID_THREADS, then the config)")
      ->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  using namespace nfid::cli;
  CLI::App app{"Normal-form identification of grid-forming inverters"};
  app.set_version_flag("--version", std::string(nfid::kVersion));
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Simulate the configured plant and scenarios into a dataset");
  c_sim->add_option("config", sim.config, "Pipeline configuration file")->required()->check(CLI::ExistingFile);
  add_output_options(c_sim, sim.out);

  IdentifyArgs ident;
  auto* c_id = app.add_subcommand("identify", "Fit a normal form (or sweep orders) on a dataset");
  c_id->add_option("dataset", ident.dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c_id->add_option("-c,--config", ident.config, "Pipeline configuration (optimizer, sweep)")
      ->check(CLI::ExistingFile);
  c_id->add_option("-n,--n-ivars", ident.n_ivars, "Number of internal variables")->check(CLI::NonNegativeNumber);
  c_id->add_option("--sweep", ident.sweep, "Order range, e.g. 1..6 or 1,2,4");
  c_id->add_option("--max-iters", ident.max_iters, "Optimizer iteration limit")->check(CLI::PositiveNumber);
  c_id->add_option("--restarts", ident.restarts, "Perturbed restarts")->check(CLI::NonNegativeNumber);
  c_id->add_flag("--svg", ident.svg, "Also write SVG charts");
  add_output_options(c_id, ident.out);

  IdentifyArgs sweep;
  auto* c_sw = app.add_subcommand("sweep", "Order sweep (orders from --orders or the config)");
  c_sw->add_option("dataset", sweep.dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c_sw->add_option("-c,--config", sweep.config, "Pipeline configuration")->check(CLI::ExistingFile);
  c_sw->add_option("--orders", sweep.sweep, "Order range, e.g. 1..6");
  c_sw->add_option("--max-iters", sweep.max_iters, "Optimizer iteration limit")->check(CLI::PositiveNumber);
  c_sw->add_option("--restarts", sweep.restarts, "Perturbed restarts")->check(CLI::NonNegativeNumber);
  c_sw->add_flag("--svg", sweep.svg, "Also write an SVG of R2 against order");
  add_output_options(c_sw, sweep.out);

  EvaluateArgs eval;
  auto* c_ev = app.add_subcommand("evaluate", "Open-loop evaluation of a model on a dataset partition");
  c_ev->add_option("model", eval.model, "Model JSON")->required()->check(CLI::ExistingFile);
  c_ev->add_option("dataset", eval.dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c_ev->add_option("-p,--partition", eval.partition, "train | validation | test | ood | all");
  c_ev->add_option("-c,--config", eval.config, "Pipeline configuration ([evaluate])")->check(CLI::ExistingFile);
  c_ev->add_flag("--svg", eval.svg, "Also write SVG overlays and spectra");
  c_ev->add_flag("--spectra", eval.spectra, "Write |v| spectra as CSV");
  add_output_options(c_ev, eval.out);

  ClosedLoopArgs cl;
  auto* c_cl = app.add_subcommand("closed-loop", "Replay a model in closed loop, optionally against the plant");
  c_cl->add_option("model", cl.model, "Model JSON")->required()->check(CLI::ExistingFile);
  c_cl->add_option("-s,--scenario", cl.scenario,
                   "load_step | stiff_bus | magnitude_step | frequency_step | rapid_small_changes");
  c_cl->add_option("-c,--config", cl.config, "Pipeline configuration; its plant is simulated for comparison")
      ->check(CLI::ExistingFile);
  c_cl->add_flag("--svg", cl.svg, "Also write an SVG of |v|");
  add_output_options(c_cl, cl.out);

  ReportArgs rep;
  auto* c_rep = app.add_subcommand("report", "Markdown summary of run directories");
  c_rep->add_option("runs", rep.runs, "Run directories")->required()->check(CLI::ExistingDirectory);
  c_rep->add_option("-o,--output", rep.output, "Write the summary to a file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*c_sim) {
      std::cout << cmd_simulate(sim).generic_string() << "\n";
    } else if (*c_id) {
      std::cout << cmd_identify(ident).generic_string() << "\n";
    } else if (*c_sw) {
      std::cout << cmd_sweep(sweep).generic_string() << "\n";
    } else if (*c_ev) {
      std::cout << cmd_evaluate(eval).generic_string() << "\n";
    } else if (*c_cl) {
      std::cout << cmd_closed_loop(cl).generic_string() << "\n";
    } else if (*c_rep) {
      const auto text = cmd_report(rep);
      if (!rep.output) std::cout << text;
    }
  } catch (const nfid::InputError& e) {
    std::cerr << "nfid: error: " << e.what() << "\n";
    return 2;
  } catch (const nfid::NumericalError& e) {
    std::cerr << "nfid: numerical failure: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "nfid: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
