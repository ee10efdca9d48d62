#pragma once

// Pipeline configuration file (TOML subset, see nfid::config):
//
//   seed = 1
//   threads = 1
//   [plant]            kind, P, v, Q, line_reactance, dt_sim, dt_record, dt
//   [plant.droop]      K_P, K_Q, tau_P, tau_Q, tau_act
//   [plant.dvoc]       eta_gain, alpha_gain, kappa, tau_act
//   [plant.normal_form] A, B, C_re, C_im, D_re, D_im
//   [scenarios]        classes, per_class, ood, protocol knobs
//   [split]            train, validation, test
//   [optimizer]        n_ivars, max_iters, tolerances, restarts, ...
//   [sweep]            orders, epsilon_select, warm_start
//   [evaluate]         harmonics, deficit_threshold_db, prominence_db
//
// Every key is optional; unknown keys are rejected with the file and line.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nfid/config.hpp"
#include "nfid/metrics.hpp"
#include "nfid/scenarios.hpp"
#include "nfid/sysid.hpp"

namespace nfid::cli {

struct PipelineConfig {
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  scenarios::PlantSpec plant;
  bool reactive_setpoint_given = false;

  std::vector<scenarios::ScenarioClass> classes{scenarios::ScenarioClass::MagnitudeStep,
                                                scenarios::ScenarioClass::FrequencyStep,
                                                scenarios::ScenarioClass::RapidSmallChanges};
  std::size_t per_class = 3;
  std::vector<scenarios::ScenarioClass> ood;
  scenarios::ProtocolDefaults protocol;
  scenarios::SplitFractions split;

  sysid::IdentConfig ident;
  std::vector<int> sweep_orders{1, 2, 3, 4, 5, 6};
  sysid::SweepOptions sweep;
  metrics::EvalOptions evaluate;

  std::string canonical;  // canonical text of the file that produced this
};

/// Parses and validates; throws InputError naming the offending key.
PipelineConfig pipeline_from_config(const config::Config& cfg);
PipelineConfig load_pipeline(const std::filesystem::path& path);
/// Defaults only (no file).
PipelineConfig default_pipeline();

std::vector<scenarios::Scenario> build_scenarios(const PipelineConfig& p);
std::vector<scenarios::Scenario> build_ood_scenarios(const PipelineConfig& p);
scenarios::Scenario ood_scenario(scenarios::ScenarioClass cls, const PipelineConfig& p);

/// Plant description stored in dataset manifests.
std::map<std::string, std::string> describe_plant(const scenarios::PlantSpec& plant);

/// "1..6" or "1,2,4" -> orders.
std::vector<int> parse_orders(const std::string& text);

normalform::PhaseRule phase_rule_from_string(const std::string& s);
std::string to_string(normalform::PhaseRule rule);

}  // namespace nfid::cli
