#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <json.hpp>
#include <limits>
#include <sstream>

#include "nfid/csv.hpp"
#include "nfid/dataset_io.hpp"
#include "nfid/error.hpp"
#include "nfid/hash.hpp"
#include "nfid/metrics.hpp"
#include "nfid/model_json.hpp"
#include "nfid/rng.hpp"
#include "nfid/sysid.hpp"
#include "nfid/version.hpp"
#include "svg.hpp"

namespace nfid::cli {

using nlohmann::json;

namespace {

// Staging directory renamed into place on commit, removed otherwise.
class StagedDir {
 public:
  StagedDir(fs::path final_dir, bool force) : final_(std::move(final_dir)) {
    if (fs::exists(final_) && !force) {
      throw InputError(final_.string() + " already exists (use --force to replace it)");
    }
    staging_ = final_;
    staging_ += ".partial";
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  }
  StagedDir(const StagedDir&) = delete;
  StagedDir& operator=(const StagedDir&) = delete;
  ~StagedDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(staging_, ec);
    }
  }

  [[nodiscard]] const fs::path& path() const { return staging_; }

  fs::path commit() {
    fs::remove_all(final_);
    fs::rename(staging_, final_);
    committed_ = true;
    return final_;
  }

 private:
  fs::path final_;
  fs::path staging_;
  bool committed_ = false;
};

fs::path output_dir(const OutputOptions& o, const std::string& name) {
  if (o.output) return *o.output;
  if (const char* env = std::getenv("NFID_OUTPUT_DIR"); env && *env) return fs::path(env) / name;
  return fs::path(name);
}

std::size_t thread_count(const OutputOptions& o, std::size_t from_config) {
  if (o.threads) return std::max<std::size_t>(1, *o.threads);
  if (const char* env = std::getenv("NFID_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw InputError("NFID_THREADS must be a positive integer");
    return static_cast<std::size_t>(v);
  }
  return from_config;
}

PipelineConfig pipeline_or_default(const std::optional<fs::path>& path) {
  return path ? load_pipeline(*path) : default_pipeline();
}

json cplx_json(cplx z) { return {{"re", z.real()}, {"im", z.imag()}}; }

json cplx_list(const std::vector<cplx>& v) {
  json a = json::array();
  for (const auto& z : v) a.push_back(cplx_json(z));
  return a;
}

void write_json(const fs::path& path, const json& j) { io::write_file(path, j.dump(2) + "\n"); }

json read_json_file(const fs::path& path) {
  try {
    return json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": malformed JSON: " + e.what());
  }
}

std::string fmt(double x) { return csv::format_double(x); }

io::Artifact external_artifact(const fs::path& file) {
  return {fs::absolute(file).lexically_normal().generic_string(), sha256_file(file)};
}

// ---------------------------------------------------------------------------
// identify

json ident_report(const sysid::IdentResult& r) {
  json validation = json::array();
  for (const auto& s : r.validation) {
    validation.push_back({{"name", s.name}, {"r2_d", s.r2_d}, {"r2_q", s.r2_q}});
  }
  json stability = {{"eig_A", cplx_list(r.stability.eig_A)},
                    {"eig_closed_loop", cplx_list(r.stability.eig_closed_loop)},
                    {"max_real_A", r.stability.max_real_A},
                    {"init_reflected", r.stability.init_reflected},
                    {"init_bilinear", r.stability.init_bilinear},
                    {"conversion_bilinear", r.stability.conversion_bilinear}};
  return {{"n_ivars", r.model.n_ivars()},
          {"validation_r2", r.validation_r2},
          {"train_loss", r.train_loss},
          {"best_restart", r.best_restart},
          {"best_iteration", r.best_iteration},
          {"stop_reason", r.stop_reason},
          {"validation", validation},
          {"stability", stability}};
}

void write_ident_result(const fs::path& dir, const sysid::IdentResult& r,
                        const io::Provenance& base_provenance) {
  fs::create_directories(dir);
  io::Provenance prov = base_provenance;
  prov["n_ivars"] = std::to_string(r.model.n_ivars());
  prov["validation_r2"] = fmt(r.validation_r2);
  prov["stop_reason"] = r.stop_reason;
  io::save_model(dir / "model.json", r.model, prov);
  io::save_model(dir / "init_model.json", r.init_model, base_provenance);
  std::vector<std::vector<std::string>> rows;
  rows.reserve(r.trace.size());
  for (const auto& t : r.trace) {
    rows.push_back({std::to_string(t.restart), std::to_string(t.iteration), fmt(t.loss),
                    fmt(t.grad_norm), fmt(t.step), fmt(t.validation_r2)});
  }
  csv::write_table(dir / "trace.csv",
                   {"restart", "iteration", "loss", "grad_norm", "step", "validation_r2"}, rows);
  write_json(dir / "report.json", ident_report(r));
}

sysid::IdentConfig ident_config(const IdentifyArgs& args, const PipelineConfig& p,
                                const scenarios::Dataset& ds) {
  sysid::IdentConfig c = p.ident;
  // Without a config file the optimizer streams hang off the dataset's seed.
  if (!args.config) c.seed = derive_seed(ds.seed, "optimizer");
  if (args.n_ivars) c.n_ivars = *args.n_ivars;
  if (args.max_iters) c.max_iters = *args.max_iters;
  if (args.restarts) c.restarts = *args.restarts;
  c.threads = thread_count(args.out, p.threads);
  c.validate();
  return c;
}

io::Provenance ident_provenance(const IdentifyArgs& args, const scenarios::Dataset& ds,
                                const sysid::IdentConfig& c) {
  return {{"tool_version", kVersion},
          {"dataset_manifest_sha256", sha256_file(args.dataset / "manifest.json")},
          {"dataset_seed", std::to_string(ds.seed)},
          {"optimizer_seed", std::to_string(c.seed)},
          {"rule", to_string(c.rule)},
          {"dt", fmt(ds.dt)}};
}

io::RunManifest run_manifest(const std::string& kind, const PipelineConfig& p,
                             const std::optional<fs::path>& config) {
  io::RunManifest m;
  m.kind = kind;
  m.tool_version = kVersion;
  if (config) m.config = p.canonical;
  return m;
}

// ---------------------------------------------------------------------------
// evaluate

void write_overlay(const fs::path& path, const DqSeries& series, const metrics::RecordEval& r) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(r.measured.size());
  for (std::size_t k = 0; k < r.measured.size(); ++k) {
    const cplx m = r.measured[k], p = r.predicted[k];
    rows.push_back({fmt(series[k].t), fmt(m.real()), fmt(p.real()), fmt(m.imag()), fmt(p.imag()),
                    fmt(std::abs(m)), fmt(std::abs(p))});
  }
  csv::write_table(path, {"t", "v_d_measured", "v_d_predicted", "v_q_measured", "v_q_predicted",
                          "abs_v_measured", "abs_v_predicted"},
                   rows);
}

json eval_json(const metrics::EvalReport& rep) {
  json records = json::array();
  for (const auto& r : rep.records) {
    json h = json::array();
    for (const auto& c : r.harmonics) {
      h.push_back({{"frequency_hz", c.frequency_hz},
                   {"measured_db", c.measured_db},
                   {"predicted_db", c.predicted_db},
                   {"floor_db", c.floor_db},
                   {"deficit_db", c.deficit_db},
                   {"flagged", c.flagged}});
    }
    records.push_back({{"name", r.name},
                       {"partition", r.partition},
                       {"r2_d", r.r2_d},
                       {"r2_q", r.r2_q},
                       {"max_err", r.max_err},
                       {"mean_err", r.mean_err},
                       {"harmonics", h}});
  }
  json parts = json::array();
  for (const auto& p : rep.partitions) {
    parts.push_back({{"partition", p.partition},
                     {"records", p.records},
                     {"mean_r2_d", p.mean_r2_d},
                     {"mean_r2_q", p.mean_r2_q},
                     {"max_err", p.max_err}});
  }
  return {{"dt", rep.dt}, {"records", records}, {"partitions", parts},
          {"harmonic_flag", rep.harmonic_flag()}};
}

std::vector<double> times(const DqSeries& s) {
  std::vector<double> t(s.size());
  for (std::size_t k = 0; k < s.size(); ++k) t[k] = s[k].t;
  return t;
}

std::vector<double> magnitudes(const std::vector<cplx>& v) {
  std::vector<double> m(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) m[k] = std::abs(v[k]);
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------

fs::path cmd_simulate(const SimulateArgs& args) {
  PipelineConfig p = load_pipeline(args.config);
  StagedDir dir(output_dir(args.out, "dataset"), args.out.force);
  scenarios::DatasetOptions opts;
  opts.fractions = p.split;
  opts.threads = thread_count(args.out, p.threads);
  const auto scen = build_scenarios(p);
  const auto ood = build_ood_scenarios(p);
  const auto ds = scenarios::build_dataset(scen, ood, p.plant, p.seed, opts);
  io::DatasetMeta meta;
  meta.tool_version = kVersion;
  meta.config = p.canonical;
  meta.plant = describe_plant(p.plant);
  io::write_dataset(dir.path(), ds, meta);
  return dir.commit();
}

fs::path cmd_identify(const IdentifyArgs& args) {
  if (args.sweep && args.n_ivars) throw InputError("--n-ivars and --sweep are mutually exclusive");
  if (args.sweep) return cmd_sweep(args);
  const PipelineConfig p = pipeline_or_default(args.config);
  const auto ds = io::read_dataset(args.dataset);
  const auto cfg = ident_config(args, p, ds);
  StagedDir dir(output_dir(args.out, "identify"), args.out.force);
  const auto result = sysid::identify(ds, cfg);
  write_ident_result(dir.path(), result, ident_provenance(args, ds, cfg));
  if (args.svg) {
    ChartSeries s{"validation R2", {}, {}, false};
    for (std::size_t k = 0; k < result.trace.size(); ++k) {
      s.x.push_back(static_cast<double>(k));
      s.y.push_back(std::max(-1.0, result.trace[k].validation_r2));
    }
    io::write_file(dir.path() / "trace.svg",
                   line_chart({s}, {"Validation R2 per optimizer iteration", "iteration", "R2"}));
  }
  auto m = run_manifest("identify", p, args.config);
  m.seeds["dataset"] = ds.seed;
  m.seeds["optimizer"] = cfg.seed;
  m.parameters["n_ivars"] = std::to_string(cfg.n_ivars);
  m.parameters["max_iters"] = std::to_string(cfg.max_iters);
  m.parameters["restarts"] = std::to_string(cfg.restarts);
  m.inputs.push_back(external_artifact(args.dataset / "manifest.json"));
  io::write_run_manifest(dir.path(), m);
  return dir.commit();
}

fs::path cmd_sweep(IdentifyArgs args) {
  const PipelineConfig p = pipeline_or_default(args.config);
  const auto orders = args.sweep ? parse_orders(*args.sweep) : p.sweep_orders;
  const auto ds = io::read_dataset(args.dataset);
  args.n_ivars.reset();
  const auto cfg = ident_config(args, p, ds);
  StagedDir dir(output_dir(args.out, "sweep"), args.out.force);
  const auto sweep = sysid::order_sweep(ds, orders, cfg, p.sweep);
  const auto prov = ident_provenance(args, ds, cfg);

  json rows = json::array();
  std::vector<std::vector<std::string>> table;
  ChartSeries chart{"validation R2", {}, {}, true};
  for (std::size_t k = 0; k < sweep.results.size(); ++k) {
    const auto& r = sweep.results[k];
    const int n = sweep.orders[k];
    write_ident_result(dir.path() / ("order_" + std::to_string(n)), r, prov);
    rows.push_back({{"n_ivars", n},
                    {"validation_r2", r.validation_r2},
                    {"train_loss", r.train_loss},
                    {"stop_reason", r.stop_reason}});
    table.push_back({std::to_string(n), fmt(r.validation_r2), fmt(r.train_loss), r.stop_reason});
    chart.x.push_back(n);
    chart.y.push_back(std::max(-1.0, r.validation_r2));
  }
  csv::write_table(dir.path() / "sweep.csv", {"n_ivars", "validation_r2", "train_loss", "stop_reason"},
                   table);
  write_json(dir.path() / "selection.json", {{"orders", rows},
                                             {"epsilon_select", p.sweep.epsilon_select},
                                             {"warm_start", p.sweep.warm_start},
                                             {"selected_order", sweep.selected_order}});
  auto sel_prov = prov;
  sel_prov["selected_by"] = "order_sweep";
  sel_prov["n_ivars"] = std::to_string(sweep.selected_order);
  io::save_model(dir.path() / "model.json", sweep.results[sweep.selected_index].model, sel_prov);
  if (args.svg) {
    io::write_file(dir.path() / "sweep.svg",
                   line_chart({chart}, {"Validation R2 by number of internal variables", "n_ivars", "R2"}));
  }
  auto m = run_manifest("sweep", p, args.config);
  m.seeds["dataset"] = ds.seed;
  m.seeds["optimizer"] = cfg.seed;
  std::string list;
  for (int n : orders) list += (list.empty() ? "" : ",") + std::to_string(n);
  m.parameters["orders"] = list;
  m.parameters["selected_order"] = std::to_string(sweep.selected_order);
  m.inputs.push_back(external_artifact(args.dataset / "manifest.json"));
  io::write_run_manifest(dir.path(), m);
  return dir.commit();
}

fs::path cmd_evaluate(const EvaluateArgs& args) {
  const PipelineConfig p = pipeline_or_default(args.config);
  io::Provenance prov;
  const auto model = io::load_model(args.model, &prov);
  const auto ds = io::read_dataset(args.dataset);
  std::vector<const scenarios::Record*> records;
  if (args.partition == "all") {
    for (const auto& r : ds.records) records.push_back(&r);
    for (const auto& r : ds.ood) records.push_back(&r);
  } else {
    records = ds.partition(scenarios::partition_from_string(args.partition));
  }
  if (records.empty()) {
    throw InputError(args.dataset.string() + ": partition '" + args.partition + "' has no records");
  }
  StagedDir dir(output_dir(args.out, "evaluate"), args.out.force);
  auto opts = p.evaluate;
  opts.keep_traces = true;
  opts.keep_spectra = args.spectra || args.svg;
  const auto rep = metrics::evaluate(model, records, ds.dt, opts);

  write_json(dir.path() / "report.json", eval_json(rep));
  std::vector<std::vector<std::string>> table;
  for (const auto& r : rep.records) {
    table.push_back({r.name, r.partition, fmt(r.r2_d), fmt(r.r2_q), fmt(r.max_err), fmt(r.mean_err)});
  }
  csv::write_table(dir.path() / "records.csv",
                   {"name", "partition", "r2_d", "r2_q", "max_err", "mean_err"}, table);
  fs::create_directories(dir.path() / "overlay");
  for (std::size_t k = 0; k < rep.records.size(); ++k) {
    const auto& r = rep.records[k];
    write_overlay(dir.path() / "overlay" / (r.name + ".csv"), records[k]->series, r);
    if (args.spectra && r.measured_spectrum) {
      fs::create_directories(dir.path() / "spectra");
      std::vector<std::vector<std::string>> rows;
      const auto& sm = *r.measured_spectrum;
      const auto& sp = *r.predicted_spectrum;
      for (std::size_t b = 0; b < sm.frequency.size(); ++b) {
        rows.push_back({fmt(sm.frequency[b]), fmt(metrics::to_db(sm.power[b])),
                        fmt(metrics::to_db(sp.power[b]))});
      }
      csv::write_table(dir.path() / "spectra" / (r.name + ".csv"),
                       {"frequency_hz", "measured_db", "predicted_db"}, rows);
    }
    if (args.svg) {
      fs::create_directories(dir.path() / "svg");
      const auto t = times(records[k]->series);
      std::vector<double> md, pd, mq, pq;
      for (std::size_t i = 0; i < r.measured.size(); ++i) {
        md.push_back(r.measured[i].real());
        pd.push_back(r.predicted[i].real());
        mq.push_back(r.measured[i].imag());
        pq.push_back(r.predicted[i].imag());
      }
      io::write_file(dir.path() / "svg" / (r.name + "_vd.svg"),
                     line_chart({{"measured", t, md}, {"predicted", t, pd}},
                                {r.name + ": v_d", "t [s]", "v_d [pu]"}));
      io::write_file(dir.path() / "svg" / (r.name + "_vq.svg"),
                     line_chart({{"measured", t, mq}, {"predicted", t, pq}},
                                {r.name + ": v_q", "t [s]", "v_q [pu]"}));
      if (r.measured_spectrum) {
        std::vector<double> dm, dp;
        for (double x : r.measured_spectrum->power) dm.push_back(metrics::to_db(x));
        for (double x : r.predicted_spectrum->power) dp.push_back(metrics::to_db(x));
        io::write_file(dir.path() / "svg" / (r.name + "_spectrum.svg"),
                       line_chart({{"measured", r.measured_spectrum->frequency, dm},
                                   {"predicted", r.predicted_spectrum->frequency, dp}},
                                  {r.name + ": |v| power spectrum", "f [Hz]", "dB"}));
      }
    }
  }
  auto m = run_manifest("evaluate", p, args.config);
  m.parameters["partition"] = args.partition;
  m.parameters["harmonic_flag"] = rep.harmonic_flag() ? "true" : "false";
  m.seeds["dataset"] = ds.seed;
  m.inputs.push_back(external_artifact(args.model));
  m.inputs.push_back(external_artifact(args.dataset / "manifest.json"));
  io::write_run_manifest(dir.path(), m);
  return dir.commit();
}

// ---------------------------------------------------------------------------
// closed loop

double mean_frequency(const DqSeries& s, double t0, double t1) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k + 1 < s.size(); ++k) {
    if (s[k].t < t0 || s[k + 1].t > t1) continue;
    sum += std::arg(s[k + 1].v / s[k].v);
    ++count;
  }
  if (count == 0) throw InputError("mean_frequency: empty window");
  return sum / (static_cast<double>(count) * s.dt());
}

scenarios::Scenario named_scenario(const std::string& name, const PipelineConfig& p) {
  if (name == "load_step") return ood_scenario(scenarios::ScenarioClass::OodLoadStep, p);
  if (name == "stiff_bus") {
    const double level = 1.0;
    return scenarios::magnitude_step_scenario(std::span(&level, 1), 2.0, p.seed);
  }
  if (name == "magnitude_step") return scenarios::default_magnitude_protocol(p.seed, p.protocol);
  if (name == "frequency_step") return scenarios::default_frequency_protocol(p.seed, p.protocol);
  if (name == "rapid_small_changes") return scenarios::default_rapid_protocol(p.seed, p.protocol);
  if (name == "islanding") {
    throw InputError("closed-loop replay needs a single-bus scenario; 'islanding' is a micro-grid");
  }
  throw InputError("unknown scenario '" + name +
                   "' (load_step | stiff_bus | magnitude_step | frequency_step | rapid_small_changes)");
}

ReplayResult replay(const normalform::HwNormalForm& model, const scenarios::Scenario& scenario,
                    cplx line_admittance, double dt,
                    const std::optional<scenarios::PlantSpec>& plant) {
  if (scenario.topology != plants::Topology::SingleBus) {
    throw InputError("closed-loop replay needs a single-bus scenario");
  }
  plants::NetworkConfig net;
  net.grid_admittance = line_admittance;
  std::string diag;
  const auto eq = normalform::equilibrium(model, net, scenario.initial, &diag);
  cplx theta0;
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(model.n_ivars());
  if (eq) {
    theta0 = eq->theta;
    x0 = eq->xc;
  } else {
    warn("closed loop: " + diag + "; starting from the setpoint voltage");
    theta0 = {std::log(model.sp.v), 0.0};
  }
  normalform::ClosedLoopOptions copts;
  copts.throw_on_nonfinite = false;
  auto cl = normalform::simulate_closed_loop(normalform::discretize(model, dt), net, scenario.initial,
                                             scenario.events, scenario.duration, theta0, x0, copts);
  ReplayResult out;
  out.model = std::move(cl.series);
  out.first_out_of_band = cl.first_out_of_band;
  out.truncated_at = cl.truncated_at;
  if (!plant) return out;

  scenarios::PlantSpec spec = *plant;
  spec.line_admittance = line_admittance;
  spec.target_dt = dt;
  out.plant = scenarios::simulate_scenario(scenario, spec);
  const auto& pm = *out.plant;
  const std::size_t N = std::min(pm.size(), out.model.size());
  for (std::size_t k = 0; k < N; ++k) {
    out.max_abs_dv = std::max(out.max_abs_dv, std::abs(std::abs(pm[k].v) - std::abs(out.model[k].v)));
  }
  if (N < pm.size()) out.max_abs_dv = std::numeric_limits<double>::infinity();

  // Segment boundaries at the events; frequencies over each segment's tail.
  std::vector<double> bounds{0.0};
  for (const auto& ev : scenario.events) {
    if (ev.t > bounds.back()) bounds.push_back(ev.t);
  }
  bounds.push_back(scenario.duration);
  const double t_model_end = out.model.empty() ? 0.0 : out.model[out.model.size() - 1].t;
  for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
    SegmentFrequency seg;
    seg.t_start = bounds[s];
    seg.t_end = bounds[s + 1];
    const double a = seg.t_end - 0.2 * (seg.t_end - seg.t_start);
    const double b = seg.t_end - 0.5 * dt;
    seg.plant = mean_frequency(pm, a, b);
    if (b > t_model_end) {
      seg.model = std::numeric_limits<double>::quiet_NaN();
      seg.relative_error = std::numeric_limits<double>::infinity();
    } else {
      seg.model = mean_frequency(out.model, a, b);
      seg.relative_error = std::abs(seg.model - seg.plant) / std::max(std::abs(seg.plant), 1e-12);
    }
    out.max_relative_frequency_error = std::max(out.max_relative_frequency_error, seg.relative_error);
    out.segments.push_back(seg);
  }
  return out;
}

fs::path cmd_closed_loop(const ClosedLoopArgs& args) {
  const PipelineConfig p = pipeline_or_default(args.config);
  io::Provenance prov;
  const auto model = io::load_model(args.model, &prov);
  const auto scenario = named_scenario(args.scenario, p);
  double dt = p.plant.target_dt;
  if (auto it = prov.find("dt"); it != prov.end()) dt = csv::parse_double(it->second, args.model.string() + ": provenance dt");
  std::optional<scenarios::PlantSpec> plant;
  if (args.config) plant = p.plant;
  StagedDir dir(output_dir(args.out, "closed_loop"), args.out.force);
  const auto res = replay(model, scenario, p.plant.line_admittance, dt, plant);

  csv::write_dq(dir.path() / "model.csv", res.model);
  if (res.plant) csv::write_dq(dir.path() / "plant.csv", *res.plant);
  json segs = json::array();
  for (const auto& s : res.segments) {
    segs.push_back({{"t_start", s.t_start},
                    {"t_end", s.t_end},
                    {"frequency_model", std::isfinite(s.model) ? json(s.model) : json(nullptr)},
                    {"frequency_plant", s.plant},
                    {"relative_error", std::isfinite(s.relative_error) ? json(s.relative_error) : json(nullptr)}});
  }
  json summary = {{"scenario", scenario.name},
                  {"samples", res.model.size()},
                  {"first_out_of_band", res.first_out_of_band ? json(*res.first_out_of_band) : json(nullptr)},
                  {"truncated_at", res.truncated_at ? json(*res.truncated_at) : json(nullptr)}};
  if (res.plant) {
    summary["max_abs_dv"] = std::isfinite(res.max_abs_dv) ? json(res.max_abs_dv) : json(nullptr);
    summary["segments"] = segs;
    summary["max_relative_frequency_error"] = std::isfinite(res.max_relative_frequency_error)
                                                  ? json(res.max_relative_frequency_error)
                                                  : json(nullptr);
  }
  write_json(dir.path() / "summary.json", summary);
  if (res.first_out_of_band) {
    warn("closed loop: |v| left [0.5, 1.5] pu at t = " + fmt(*res.first_out_of_band) + " s");
  }
  if (args.svg) {
    std::vector<ChartSeries> series{{"model", times(res.model), magnitudes(res.model.voltages())}};
    if (res.plant) series.push_back({"plant", times(*res.plant), magnitudes(res.plant->voltages())});
    io::write_file(dir.path() / "voltage.svg",
                   line_chart(series, {scenario.name + ": |v| in closed loop", "t [s]", "|v| [pu]"}));
  }
  auto m = run_manifest("closed-loop", p, args.config);
  m.parameters["scenario"] = scenario.name;
  m.seeds["scenario"] = scenario.seed;
  m.inputs.push_back(external_artifact(args.model));
  io::write_run_manifest(dir.path(), m);
  return dir.commit();
}

// ---------------------------------------------------------------------------
// report

std::string cmd_report(const ReportArgs& args) {
  if (args.runs.empty()) throw InputError("report: no run directories given");
  std::ostringstream os;
  for (const auto& run : args.runs) {
    io::verify_run_manifest(run);
    const auto m = io::read_run_manifest(run);
    os << "## " << run.generic_string() << " (" << m.kind << ", nfid " << m.tool_version << ")\n\n";
    if (m.kind == "dataset") {
      const json j = read_json_file(run / "manifest.json");
      const auto& d = j.at("dataset");
      os << "dt = " << fmt(d.at("dt").get<double>()) << " s\n\n| record | class | partition | samples |\n|---|---|---|---|\n";
      for (const auto& r : d.at("records")) {
        os << "| " << r.at("name").get<std::string>() << " | " << r.at("class").get<std::string>()
           << " | " << r.at("partition").get<std::string>() << " | " << r.at("samples").get<std::size_t>()
           << " |\n";
      }
    } else if (m.kind == "identify") {
      const json r = read_json_file(run / "report.json");
      os << "n_ivars = " << r.at("n_ivars").get<int>() << ", validation R2 = "
         << fmt(r.at("validation_r2").get<double>()) << ", stop: " << r.at("stop_reason").get<std::string>()
         << ", max Re eig(A) = " << fmt(r.at("stability").at("max_real_A").get<double>()) << "\n\n"
         << "| validation record | R2 v_d | R2 v_q |\n|---|---|---|\n";
      for (const auto& v : r.at("validation")) {
        os << "| " << v.at("name").get<std::string>() << " | " << fmt(v.at("r2_d").get<double>()) << " | "
           << fmt(v.at("r2_q").get<double>()) << " |\n";
      }
    } else if (m.kind == "sweep") {
      const json s = read_json_file(run / "selection.json");
      os << "selected n_ivars = " << s.at("selected_order").get<int>() << " (epsilon "
         << fmt(s.at("epsilon_select").get<double>()) << ")\n\n| n_ivars | validation R2 | train loss | stop |\n|---|---|---|---|\n";
      for (const auto& o : s.at("orders")) {
        os << "| " << o.at("n_ivars").get<int>() << " | " << fmt(o.at("validation_r2").get<double>()) << " | "
           << fmt(o.at("train_loss").get<double>()) << " | " << o.at("stop_reason").get<std::string>() << " |\n";
      }
    } else if (m.kind == "evaluate") {
      const json r = read_json_file(run / "report.json");
      os << "| record | partition | R2 v_d | R2 v_q | max err [pu] |\n|---|---|---|---|---|\n";
      for (const auto& v : r.at("records")) {
        os << "| " << v.at("name").get<std::string>() << " | " << v.at("partition").get<std::string>()
           << " | " << fmt(v.at("r2_d").get<double>()) << " | " << fmt(v.at("r2_q").get<double>()) << " | "
           << fmt(v.at("max_err").get<double>()) << " |\n";
      }
      os << "\nharmonic discrepancy flagged: " << (r.at("harmonic_flag").get<bool>() ? "yes" : "no") << "\n";
    } else if (m.kind == "closed-loop") {
      const json s = read_json_file(run / "summary.json");
      os << "scenario " << s.at("scenario").get<std::string>();
      if (s.contains("max_abs_dv")) {
        os << ", max ||v_model| - |v_plant|| = "
           << (s.at("max_abs_dv").is_null() ? std::string("n/a") : fmt(s.at("max_abs_dv").get<double>()))
           << " pu";
      }
      if (!s.at("first_out_of_band").is_null()) {
        os << ", |v| left the band at t = " << fmt(s.at("first_out_of_band").get<double>()) << " s";
      }
      os << "\n";
    } else {
      os << "(no summary for this run kind)\n";
    }
    os << "\n";
  }
  const std::string text = os.str();
  if (args.output) io::write_file(*args.output, text);
  return text;
}

}  // namespace nfid::cli
