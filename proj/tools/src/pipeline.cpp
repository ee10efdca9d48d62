#include "pipeline.hpp"

#include <charconv>
#include <sstream>

#include "nfid/error.hpp"
#include "nfid/rng.hpp"

namespace nfid::cli {

namespace {

using scenarios::ScenarioClass;

std::vector<ScenarioClass> classes_from(const std::vector<std::string>& names, bool want_ood,
                                        const std::string& key) {
  std::vector<ScenarioClass> out;
  for (const auto& n : names) {
    ScenarioClass c;
    try {
      c = scenarios::scenario_class_from_string(n == "load_step"   ? "ood_load_step"
                                                : n == "islanding" ? "ood_islanding"
                                                                   : n);
    } catch (const InputError&) {
      throw InputError(key + ": unknown scenario class '" + n + "'");
    }
    if (scenarios::is_ood(c) != want_ood) {
      throw InputError(key + ": '" + n + "' belongs in " +
                       (want_ood ? "scenarios.classes" : "scenarios.ood"));
    }
    out.push_back(c);
  }
  return out;
}

normalform::HwNormalForm default_generator(const Setpoints& sp) {
  auto m = normalform::HwNormalForm::zeros(2, sp);
  m.A << -20.0, 0.0, 10.0, -40.0;
  m.B << -125.6, 0.0, 0.0, 0.0, -20.0, 0.0;
  m.C << cplx(0.0, 1.0), cplx(0.5, 0.2);
  m.D << cplx(0.0, 0.0), cplx(-1.0, 0.0), cplx(-10.0, 0.0);
  return m;
}

normalform::HwNormalForm read_generator(const config::Config& cfg, const Setpoints& sp) {
  const std::string s = "plant.normal_form.";
  if (!cfg.has(s + "A")) {
    for (const char* k : {"B", "C_re", "C_im", "D_re", "D_im"}) {
      if (cfg.has(s + k)) throw InputError(s + k + ": given without " + s + "A");
    }
    return default_generator(sp);
  }
  const auto A = cfg.matrix(s + "A");
  const auto n = static_cast<int>(A.size());
  auto m = normalform::HwNormalForm::zeros(n, sp);
  for (int r = 0; r < n; ++r) {
    if (static_cast<int>(A[static_cast<std::size_t>(r)].size()) != n) {
      throw InputError(s + "A: must be square");
    }
    for (int c = 0; c < n; ++c) m.A(r, c) = A[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  }
  const auto B = cfg.matrix(s + "B");
  if (static_cast<int>(B.size()) != n) throw InputError(s + "B: needs one row per state");
  for (int r = 0; r < n; ++r) {
    if (B[static_cast<std::size_t>(r)].size() != 3) throw InputError(s + "B: rows need 3 entries");
    for (int c = 0; c < 3; ++c) m.B(r, c) = B[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  }
  const auto cre = cfg.numbers(s + "C_re", std::vector<double>(static_cast<std::size_t>(n), 0.0));
  const auto cim = cfg.numbers(s + "C_im", std::vector<double>(static_cast<std::size_t>(n), 0.0));
  if (static_cast<int>(cre.size()) != n || static_cast<int>(cim.size()) != n) {
    throw InputError(s + "C_re/C_im: need one entry per state");
  }
  for (int k = 0; k < n; ++k) m.C[k] = {cre[static_cast<std::size_t>(k)], cim[static_cast<std::size_t>(k)]};
  const auto dre = cfg.numbers(s + "D_re", {0.0, 0.0, 0.0});
  const auto dim = cfg.numbers(s + "D_im", {0.0, 0.0, 0.0});
  if (dre.size() != 3 || dim.size() != 3) throw InputError(s + "D_re/D_im: need 3 entries");
  for (int k = 0; k < 3; ++k) m.D[k] = {dre[static_cast<std::size_t>(k)], dim[static_cast<std::size_t>(k)]};
  m.validate();
  return m;
}

std::size_t positive_count(const config::Config& cfg, const std::string& key, long long fallback) {
  const long long v = cfg.integer(key, fallback);
  if (v < 1) throw InputError(key + ": must be >= 1");
  return static_cast<std::size_t>(v);
}

}  // namespace

normalform::PhaseRule phase_rule_from_string(const std::string& s) {
  if (s == "trapezoidal") return normalform::PhaseRule::Trapezoidal;
  if (s == "euler" || s == "forward_euler") return normalform::PhaseRule::ForwardEuler;
  throw InputError("unknown phase rule '" + s + "' (trapezoidal | euler)");
}

std::string to_string(normalform::PhaseRule rule) {
  return rule == normalform::PhaseRule::Trapezoidal ? "trapezoidal" : "euler";
}

std::vector<int> parse_orders(const std::string& text) {
  auto parse_int = [&](std::string_view s) {
    int v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || v < 0) {
      throw InputError("order list '" + text + "': '" + std::string(s) + "' is not a non-negative integer");
    }
    return v;
  };
  std::vector<int> out;
  if (const auto dots = text.find(".."); dots != std::string::npos) {
    const int lo = parse_int(std::string_view(text).substr(0, dots));
    const int hi = parse_int(std::string_view(text).substr(dots + 2));
    if (hi < lo) throw InputError("order range '" + text + "' is empty");
    for (int n = lo; n <= hi; ++n) out.push_back(n);
  } else {
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_int(item));
  }
  if (out.empty()) throw InputError("order list '" + text + "' is empty");
  return out;
}

PipelineConfig pipeline_from_config(const config::Config& cfg) {
  PipelineConfig p;
  p.seed = static_cast<std::uint64_t>(cfg.integer("seed", 1));
  p.threads = positive_count(cfg, "threads", 1);

  auto& plant = p.plant;
  plant.kind = scenarios::plant_kind_from_string(cfg.string("plant.kind", "droop"));
  const double x_line = cfg.number("plant.line_reactance", 0.1);
  if (!(x_line > 0.0)) throw InputError("plant.line_reactance: must be positive");
  plant.line_admittance = cplx{0.0, -1.0 / x_line};
  Setpoints sp;
  sp.P = cfg.number("plant.P", 0.5);
  sp.v = cfg.number("plant.v", 1.0);
  p.reactive_setpoint_given = cfg.has("plant.Q");
  sp.Q = p.reactive_setpoint_given
             ? cfg.number("plant.Q")
             : plants::consistent_reactive_setpoint(sp.P, sp.v, 1.0, plant.line_admittance);
  plant.dt_sim = cfg.number("plant.dt_sim", plant.dt_sim);
  plant.dt_record = cfg.number("plant.dt_record", plant.dt_record);
  plant.target_dt = cfg.number("plant.dt", plant.target_dt);

  auto& d = plant.droop;
  d.sp = sp;
  d.K_P = cfg.number("plant.droop.K_P", d.K_P);
  d.K_Q = cfg.number("plant.droop.K_Q", d.K_Q);
  d.tau_P = cfg.number("plant.droop.tau_P", d.tau_P);
  d.tau_Q = cfg.number("plant.droop.tau_Q", d.tau_Q);
  d.tau_act = cfg.number("plant.droop.tau_act", d.tau_act);
  auto& o = plant.dvoc;
  o.sp = sp;
  o.eta_gain = cfg.number("plant.dvoc.eta_gain", o.eta_gain);
  o.alpha_gain = cfg.number("plant.dvoc.alpha_gain", o.alpha_gain);
  o.kappa = cfg.number("plant.dvoc.kappa", o.kappa);
  o.tau_act = cfg.number("plant.dvoc.tau_act", o.tau_act);
  plant.normal_form = read_generator(cfg, sp);
  plant.validate();

  p.classes = classes_from(cfg.strings("scenarios.classes", {"magnitude_step", "frequency_step",
                                                             "rapid_small_changes"}),
                           false, "scenarios.classes");
  if (p.classes.empty()) throw InputError("scenarios.classes: at least one class needed");
  p.ood = classes_from(cfg.strings("scenarios.ood", {}), true, "scenarios.ood");
  p.per_class = positive_count(cfg, "scenarios.per_class", 3);
  auto& pr = p.protocol;
  pr.magnitude_step = cfg.number("scenarios.magnitude_step", pr.magnitude_step);
  pr.frequency_step_hz = cfg.number("scenarios.frequency_step_hz", pr.frequency_step_hz);
  pr.dwell = cfg.number("scenarios.dwell", pr.dwell);
  pr.cycles = static_cast<int>(positive_count(cfg, "scenarios.cycles", pr.cycles));
  pr.rapid_duration = cfg.number("scenarios.rapid_duration", pr.rapid_duration);
  pr.rapid_period = cfg.number("scenarios.rapid_period", pr.rapid_period);
  pr.rapid_mag_range = cfg.number("scenarios.rapid_mag_range", pr.rapid_mag_range);
  pr.rapid_freq_range_hz = cfg.number("scenarios.rapid_freq_range_hz", pr.rapid_freq_range_hz);
  pr.jitter_low = cfg.number("scenarios.jitter_low", pr.jitter_low);

  p.split.train = cfg.number("split.train", p.split.train);
  p.split.validation = cfg.number("split.validation", p.split.validation);
  p.split.test = cfg.number("split.test", p.split.test);
  p.split.validate();

  auto& id = p.ident;
  id.n_ivars = static_cast<int>(cfg.integer("optimizer.n_ivars", id.n_ivars));
  id.max_iters = static_cast<int>(cfg.integer("optimizer.max_iters", id.max_iters));
  id.gradient_tolerance = cfg.number("optimizer.gradient_tolerance", id.gradient_tolerance);
  id.loss_tolerance = cfg.number("optimizer.loss_tolerance", id.loss_tolerance);
  id.restarts = static_cast<int>(cfg.integer("optimizer.restarts", id.restarts));
  id.perturbation_scale = cfg.number("optimizer.perturbation_scale", id.perturbation_scale);
  id.hankel_rows = static_cast<int>(cfg.integer("optimizer.hankel_rows", id.hankel_rows));
  id.regularization = cfg.number("optimizer.regularization", id.regularization);
  id.rule = phase_rule_from_string(cfg.string("optimizer.rule", "trapezoidal"));
  const auto target = cfg.string("optimizer.init_target", "phase_increment");
  if (target == "phase_increment") {
    id.init_target = sysid::InitTarget::PhaseIncrement;
  } else if (target == "central_difference") {
    id.init_target = sysid::InitTarget::CentralDifference;
  } else {
    throw InputError("optimizer.init_target: unknown value '" + target +
                     "' (phase_increment | central_difference)");
  }
  id.seed = derive_seed(p.seed, "optimizer");
  id.threads = p.threads;
  id.validate();

  if (cfg.has("sweep.orders")) {
    p.sweep_orders.clear();
    for (double v : cfg.numbers("sweep.orders")) {
      if (v < 0.0 || v != static_cast<int>(v)) throw InputError("sweep.orders: non-negative integers only");
      p.sweep_orders.push_back(static_cast<int>(v));
    }
    if (p.sweep_orders.empty()) throw InputError("sweep.orders: empty");
  }
  p.sweep.epsilon_select = cfg.number("sweep.epsilon_select", p.sweep.epsilon_select);
  p.sweep.warm_start = cfg.boolean("sweep.warm_start", p.sweep.warm_start);

  auto& ev = p.evaluate;
  ev.rule = id.rule;
  ev.harmonic_frequencies = cfg.numbers("evaluate.harmonics", ev.harmonic_frequencies);
  ev.deficit_threshold_db = cfg.number("evaluate.deficit_threshold_db", ev.deficit_threshold_db);
  ev.prominence_db = cfg.number("evaluate.prominence_db", ev.prominence_db);

  cfg.reject_unknown();
  p.canonical = cfg.canonical();
  return p;
}

PipelineConfig load_pipeline(const std::filesystem::path& path) {
  return pipeline_from_config(config::Config::load(path));
}

PipelineConfig default_pipeline() { return pipeline_from_config(config::Config::parse("", "<defaults>")); }

std::vector<scenarios::Scenario> build_scenarios(const PipelineConfig& p) {
  std::vector<scenarios::Scenario> out;
  for (auto& s : scenarios::default_scenarios(p.seed, p.per_class, p.protocol)) {
    for (auto c : p.classes) {
      if (s.cls == c) {
        out.push_back(std::move(s));
        break;
      }
    }
  }
  return out;
}

scenarios::Scenario ood_scenario(ScenarioClass cls, const PipelineConfig& p) {
  const Setpoints sp = p.plant.setpoints();
  if (cls == ScenarioClass::OodLoadStep) {
    return scenarios::ood_load_step_scenario(scenarios::LoadStepOptions::for_setpoints(sp));
  }
  if (cls == ScenarioClass::OodIslanding) {
    if (p.plant.kind == scenarios::PlantKind::NormalForm) {
      throw InputError("scenarios.ood: islanding needs a droop or dvoc plant");
    }
    scenarios::IslandingOptions o;
    o.layout.grid_admittance = p.plant.line_admittance;
    return scenarios::ood_islanding_scenario(o);
  }
  throw InputError("not an out-of-distribution class: " + scenarios::to_string(cls));
}

std::vector<scenarios::Scenario> build_ood_scenarios(const PipelineConfig& p) {
  std::vector<scenarios::Scenario> out;
  for (auto c : p.ood) out.push_back(ood_scenario(c, p));
  return out;
}

std::map<std::string, std::string> describe_plant(const scenarios::PlantSpec& plant) {
  std::map<std::string, std::string> m;
  auto num = [](double x) {
    std::ostringstream os;
    os.precision(17);
    os << x;
    return os.str();
  };
  m["plant.kind"] = scenarios::to_string(plant.kind);
  const Setpoints sp = plant.setpoints();
  m["plant.P"] = num(sp.P);
  m["plant.Q"] = num(sp.Q);
  m["plant.v"] = num(sp.v);
  m["plant.line_admittance"] = num(plant.line_admittance.real()) + "," + num(plant.line_admittance.imag());
  m["plant.dt_sim"] = num(plant.dt_sim);
  m["plant.dt"] = num(plant.target_dt);
  if (plant.kind == scenarios::PlantKind::Droop) {
    m["plant.droop.K_P"] = num(plant.droop.K_P);
    m["plant.droop.K_Q"] = num(plant.droop.K_Q);
    m["plant.droop.tau_P"] = num(plant.droop.tau_P);
    m["plant.droop.tau_Q"] = num(plant.droop.tau_Q);
    m["plant.droop.tau_act"] = num(plant.droop.tau_act);
  } else if (plant.kind == scenarios::PlantKind::Dvoc) {
    m["plant.dvoc.eta_gain"] = num(plant.dvoc.eta_gain);
    m["plant.dvoc.alpha_gain"] = num(plant.dvoc.alpha_gain);
    m["plant.dvoc.kappa"] = num(plant.dvoc.kappa);
    m["plant.dvoc.tau_act"] = num(plant.dvoc.tau_act);
  } else {
    m["plant.normal_form.n_ivars"] = std::to_string(plant.normal_form.n_ivars());
  }
  return m;
}

}  // namespace nfid::cli
