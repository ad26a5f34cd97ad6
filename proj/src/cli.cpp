#include "zonedesign/cli.hpp"

#include "zonedesign/analyze.hpp"
#include "zonedesign/approx.hpp"
#include "zonedesign/artifacts.hpp"
#include "zonedesign/config.hpp"
#include "zonedesign/estimate.hpp"
#include "zonedesign/ingest.hpp"
#include "zonedesign/optimize.hpp"
#include "zonedesign/queue.hpp"
#include "zonedesign/service.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

namespace zonedesign::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw artifacts::ArtifactError("cannot write " + p.string());
  return out;
}

/// Options shared by every subcommand plus the per-stage overrides.
struct Options {
  std::string config = "config.json";
  std::string output_dir;
  std::uint64_t seed = 0;
  CLI::Option* output_dir_opt = nullptr;
  CLI::Option* seed_opt = nullptr;

  int horizon = 1;
  std::string design;
  std::string dump_q;
  std::size_t samples = 0, holdout = 0, approx_shifts = 0, max_shifts = 0;
  unsigned threads = 0;
  CLI::Option *samples_opt = nullptr, *holdout_opt = nullptr, *approx_shifts_opt = nullptr,
              *threads_opt = nullptr, *max_shifts_opt = nullptr, *evaluator_opt = nullptr;
  std::string evaluator;
  bool exact = false;
  std::string period[3];
  std::optional<int> norm_first, norm_last;
  bool additive = false;
  std::string host = "0.0.0.0";
  int port = 0;
  CLI::Option* port_opt = nullptr;
  std::string static_dir;
};

class Stage {
 public:
  Stage(config::RunConfig cfg, std::ostream& out) : cfg_(std::move(cfg)), out_(out) {}

  const config::RunConfig& cfg() const { return cfg_; }
  fs::path dir() const { return cfg_.output_path(); }
  artifacts::Stamp stamp() const { return {cfg_.hash(), cfg_.seed}; }
  std::ostream& out() { return out_; }

  const geo::CityGraph& city() {
    if (!city_) {
      std::optional<fs::path> adj;
      if (cfg_.paths.adjacency) adj = cfg_.resolve(*cfg_.paths.adjacency);
      city_ = ingest::load_city(cfg_.resolve(cfg_.paths.city), adj);
    }
    return *city_;
  }

  geo::Design base(const char* stage) {
    if (!cfg_.paths.base_design) {
      throw config::ConfigError(std::string(stage) + " needs paths.base_design in the config");
    }
    return ingest::read_design(cfg_.resolve(*cfg_.paths.base_design), city());
  }

  std::optional<geo::Design> maybe_base() {
    if (!cfg_.paths.base_design) return std::nullopt;
    return ingest::read_design(cfg_.resolve(*cfg_.paths.base_design), city());
  }

  /// --design when given, else the base design.
  geo::Design design_arg(const std::string& path, const char* stage) {
    if (!path.empty()) return ingest::read_design(fs::path(path), city(), base_zone_count());
    return base(stage);
  }

  std::optional<int> base_zone_count() {
    auto b = maybe_base();
    return b ? std::optional<int>(b->zone_count()) : std::nullopt;
  }

  std::vector<estimate::CallRecord> clean_calls() {
    const auto p = artifacts::require(dir(), artifacts::kCallsClean, "ingest");
    return ingest::ingest_calls(p, city(), 0.0).records;
  }

  json stamped(json j) const {
    json s = stamp().to_json();
    s.update(j);
    return s;
  }

 private:
  config::RunConfig cfg_;
  std::ostream& out_;
  std::optional<geo::CityGraph> city_;
};

std::vector<int> call_years(std::span<const estimate::CallRecord> records) {
  std::set<int> ys;
  for (const auto& r : records) ys.insert(utc_date(r.call_time).year);
  return {ys.begin(), ys.end()};
}

// ---------------------------------------------------------------------------

void do_ingest(Stage& s) {
  const auto& cfg = s.cfg();
  if (!cfg.paths.calls) throw config::ConfigError("ingest needs paths.calls in the config");
  fs::create_directories(s.dir());
  json report = {{"calls", nullptr}, {"covariates", nullptr}};
  ingest::CallIngest calls;
  try {
    calls = ingest::ingest_calls(cfg.resolve(*cfg.paths.calls), s.city(), cfg.model.min_acceptance);
  } catch (const ingest::AcceptanceError& e) {
    report["calls"] = e.report().to_json();
    artifacts::write_json(s.dir() / artifacts::kIngestReport, s.stamped(report));
    throw;
  }
  report["calls"] = calls.report.to_json();
  {
    auto out = open_out(s.dir() / artifacts::kCallsClean);
    out << "# " << s.stamp().line() << '\n';
    ingest::write_calls(out, calls.records, s.city());
  }
  std::size_t filled = 0;
  if (cfg.paths.covariates) {
    const auto path = cfg.resolve(*cfg.paths.covariates);
    auto years = ingest::covariate_years(path);
    for (int y : call_years(calls.records)) years.push_back(y);
    std::sort(years.begin(), years.end());
    years.erase(std::unique(years.begin(), years.end()), years.end());
    const auto cov = ingest::ingest_covariates(path, s.city(), years);
    json flags = json::array();
    for (const auto& f : cov.flags) {
      flags.push_back({{"beat", f.beat}, {"year", f.year}, {"source_year", f.source_year}, {"backfilled", f.backfilled}});
    }
    filled = cov.flags.size();
    report["covariates"] = {{"report", cov.report.to_json()}, {"years", years}, {"filled_cells", flags}};
  }
  artifacts::write_json(s.dir() / artifacts::kIngestReport, s.stamped(report));
  const auto& r = calls.report;
  s.out() << "ingest: " << r.rows_accepted << "/" << r.rows_read << " call rows accepted ("
          << fmt("%.2f", 100.0 * r.acceptance_rate()) << "%), " << filled << " covariate cells filled\n";
}

void do_estimate(Stage& s) {
  const auto& cfg = s.cfg();
  const auto records = s.clean_calls();
  if (records.empty()) throw estimate::EstimationError("no accepted call records to estimate from");
  const auto base = s.maybe_base();
  const auto& city = s.city();

  json service;
  double mu = 0.0;
  if (cfg.model.mu_override) {
    mu = *cfg.model.mu_override;
    service = {{"source", "override"}};
  } else {
    const auto fit = estimate::estimate_service_rate(records, cfg.model.include_travel);
    mu = fit.mu_per_hour;
    service = {{"source", cfg.model.include_travel ? "dispatch_to_clear" : "arrive_to_clear"},
               {"mean_minutes", fit.mean_minutes},
               {"std_error_per_hour", fit.std_error_per_hour},
               {"samples", fit.samples},
               {"ks_distance", fit.ks_distance}};
  }

  const auto travel = estimate::estimate_travel_matrix(records, city, base ? &*base : nullptr);
  {
    auto out = open_out(s.dir() / artifacts::kTau);
    artifacts::write_tau(out, travel.tau, city, s.stamp());
  }

  const auto years = call_years(records);
  const auto history = estimate::annual_rates(records, city, years);
  json observed = json::object();
  for (std::size_t l = 0; l < years.size(); ++l) {
    const Eigen::VectorXd col = history.rates.col(static_cast<Eigen::Index>(l));
    observed[std::to_string(years[l])] = artifacts::beat_map(city, std::vector<double>(col.data(), col.data() + col.size()));
  }

  json arrival = nullptr, note = nullptr;
  if (cfg.paths.covariates) {
    try {
      const auto cov = ingest::ingest_covariates(cfg.resolve(*cfg.paths.covariates), city, years);
      estimate::ArrivalFitOptions o;
      o.p = cfg.model.p;
      o.kernel_theta = cfg.model.kernel_theta;
      o.use_kernel = cfg.model.use_kernel;
      o.estimate_spatial_lag = cfg.model.spatial_lag;
      arrival = artifacts::arrival_model_to_json(estimate::fit_arrival_model(history, cov.table, city, o), city);
    } catch (const estimate::EstimationError& e) {
      note = std::string("arrival model not fitted: ") + e.what();
    }
  } else {
    note = "arrival model not fitted: no paths.covariates in the config";
  }
  json travel_j = {{"imputed_cells", travel.imputed}, {"warnings", travel.warnings}};
  const std::string latest = std::to_string(years.back());
  artifacts::write_json(s.dir() / artifacts::kRates,
                        s.stamped({{"mu_per_hour", mu},
                                   {"service", service},
                                   {"years", years},
                                   {"observed", observed},
                                   {"lambda", observed[latest]},
                                   {"lambda_source", "observed " + latest},
                                   {"arrival_model", arrival},
                                   {"arrival_model_note", note},
                                   {"travel", travel_j},
                                   {"prediction", nullptr}}));
  double total = 0.0;
  for (const auto& [_, v] : observed[latest].items()) total += v.get<double>();
  s.out() << "estimate: mu " << fmt("%.4g", mu) << "/h, " << years.size() << " year(s), " << fmt("%.4g", total)
          << " calls/h citywide in " << latest << ", " << travel.imputed << " travel cells imputed, arrival model "
          << (arrival.is_null() ? "skipped" : "fitted") << '\n';
}

void do_predict(Stage& s, int horizon) {
  const auto& cfg = s.cfg();
  if (horizon < 1) throw config::ConfigError("--horizon must be >= 1");
  const auto path = artifacts::require(s.dir(), artifacts::kRates, "estimate");
  json rates = artifacts::read_json(path);
  if (rates["arrival_model"].is_null()) {
    throw estimate::EstimationError(
        "rates.json has no arrival model (" + rates.value("arrival_model_note", std::string("unknown reason")) +
        "); configure paths.covariates and rerun `zoned estimate`");
  }
  const auto& city = s.city();
  const auto model = artifacts::arrival_model_from_json(rates["arrival_model"], city);
  const auto years = rates.at("years").get<std::vector<int>>();
  const int last = years.back();
  std::vector<int> all_years = ingest::covariate_years(cfg.resolve(*cfg.paths.covariates));
  for (int y : years) all_years.push_back(y);
  std::sort(all_years.begin(), all_years.end());
  all_years.erase(std::unique(all_years.begin(), all_years.end()), all_years.end());
  const auto cov = ingest::ingest_covariates(cfg.resolve(*cfg.paths.covariates), city, all_years).table;
  std::vector<Eigen::MatrixXd> hist, future;
  for (std::size_t l = 0; l < cov.years.size(); ++l) {
    if (cov.years[l] <= last) hist.push_back(cov.values[l]);
    else if (cov.years[l] <= last + horizon) future.push_back(cov.values[l]);
  }
  const auto last_rates = artifacts::beat_vector(rates["observed"][std::to_string(last)], city);
  const auto f = estimate::predict_rates(model, Eigen::Map<const Eigen::VectorXd>(last_rates.data(), static_cast<Eigen::Index>(last_rates.size())),
                                         hist, horizon, future);
  std::vector<double> lambda(f.back().data(), f.back().data() + f.back().size());
  json warnings = json::array();
  for (std::size_t i = 0; i < lambda.size(); ++i) {
    if (lambda[i] < 0.0) {
      warnings.push_back("negative forecast for beat " + city.beat_id(i) + " set to 0");
      lambda[i] = 0.0;
    }
  }
  const int year = last + horizon;
  rates.update(s.stamp().to_json());
  rates["prediction"] = {{"year", year},
                         {"horizon", horizon},
                         {"covariate_years_used", future.size()},
                         {"lambda", artifacts::beat_map(city, lambda)},
                         {"warnings", warnings}};
  rates["lambda"] = rates["prediction"]["lambda"];
  rates["lambda_source"] = "predicted " + std::to_string(year);
  artifacts::write_json(path, rates);
  double total = 0.0;
  for (double l : lambda) total += l;
  s.out() << "predict: " << year << " citywide " << fmt("%.4g", total) << " calls/h, " << warnings.size()
          << " warning(s)\n";
}

void do_simulate(Stage& s, const Options& o) {
  const auto& city = s.city();
  const auto in = artifacts::load_queue_inputs(s.dir(), city);
  const auto design = s.design_arg(o.design, "simulate");
  json zones = json::array();
  std::vector<double> hours;
  for (int k = 0; k < design.zone_count(); ++k) {
    const auto members = design.members(k);
    const auto zq = queue::ZoneQueue::for_zone(members, in.lambda, in.mu, in.tau);
    const auto ss = queue::solve_steady_state(zq);
    const auto rep = queue::performance_report(zq, ss);
    json beats = json::array();
    for (auto b : members) beats.push_back(city.beat_id(b));
    zones.push_back({{"zone", k + 1},
                     {"beats", beats},
                     {"zone_workload", rep.zone_workload},
                     {"zone_workload_hours_per_year", rep.zone_workload_hours_per_year},
                     {"unit_workload", rep.unit_workload},
                     {"p_queue", rep.p_queue},
                     {"response_s", rep.response_zone},
                     {"travel_s", rep.travel_zone},
                     {"mean_queue_delay_s", rep.mean_queue_delay},
                     {"iterations", ss.iterations},
                     {"residual", ss.residual}});
    hours.push_back(rep.zone_workload_hours_per_year);
    if (!o.dump_q.empty()) {
      fs::create_directories(o.dump_q);
      std::ostringstream mm;
      queue::build_transition_matrix(zq).write_matrix_market(mm);
      std::string text = mm.str();
      const auto nl = text.find('\n');
      text.insert(nl + 1, "% " + s.stamp().line() + " zone=" + std::to_string(k + 1) + "\n");
      auto out = open_out(fs::path(o.dump_q) / ("zone_" + std::to_string(k + 1) + ".mtx"));
      out << text;
    }
  }
  const double var = analyze::workload_variance(hours);
  fs::create_directories(s.dir());
  artifacts::write_json(s.dir() / artifacts::kSimulate,
                        s.stamped({{"design", o.design.empty() ? *s.cfg().paths.base_design : o.design},
                                   {"zones", zones},
                                   {"variance_hours2", var}}));
  s.out() << "simulate: " << design.zone_count() << " zones, workload variance " << fmt("%.6g", var) << " h^2\n";
}

void do_approx(Stage& s) {
  const auto& cfg = s.cfg();
  const auto& city = s.city();
  const auto base = s.base("approx");
  const approx::ZoneSolver solver(city, artifacts::load_queue_inputs(s.dir(), city));
  const std::uint64_t seed = config::derive_seed(cfg.seed, "approx");
  const std::size_t want = cfg.approx.samples + cfg.approx.holdout;
  const auto designs = approx::sample_perturbed_designs(base, city, cfg.approx.max_shifts, want, seed);
  const auto batch = approx::evaluate_designs(designs, base, solver, cfg.approx.threads);
  const auto& all = batch.samples;
  const std::size_t hold = std::min(cfg.approx.holdout, all.size() / 5);
  const std::span<const approx::DesignSample> train(all.data(), all.size() - hold);
  const std::span<const approx::DesignSample> test(all.data() + train.size(), hold);
  const auto model = approx::fit_linear_model(train, base);

  json holdout = {{"count", hold}, {"pearson", nullptr}, {"rmse_workload_hours", nullptr}};
  if (hold >= 2) {
    std::vector<double> f_approx, f_exact;
    double sq = 0.0;
    std::size_t n = 0;
    for (const auto& smp : test) {
      f_approx.push_back(approx::approx_objective(smp.design, model));
      f_exact.push_back(analyze::workload_variance(smp.workloads));
      const auto w = model.predict(smp.design);
      for (std::size_t k = 0; k < w.size(); ++k, ++n) sq += (w[k] - smp.workloads[k]) * (w[k] - smp.workloads[k]);
    }
    try {
      holdout["pearson"] = analyze::pearson(f_approx, f_exact);
    } catch (const analyze::AnalyzeError&) {
    }
    holdout["rmse_workload_hours"] = std::sqrt(sq / static_cast<double>(n));
  }
  fs::create_directories(s.dir());
  artifacts::write_json(s.dir() / artifacts::kSurrogate,
                        s.stamped({{"sample_seed", seed},
                                   {"max_shifts", cfg.approx.max_shifts},
                                   {"requested", want},
                                   {"sampled", designs.size()},
                                   {"dropped", batch.dropped},
                                   {"training", {{"count", train.size()}, {"r_squared", model.r_squared}}},
                                   {"holdout", holdout},
                                   {"model", model.to_json(city)}}));
  s.out() << "approx: " << train.size() << " training designs, R^2 " << fmt("%.4f", model.r_squared);
  if (!holdout["pearson"].is_null()) s.out() << ", holdout Pearson " << fmt("%.4f", holdout["pearson"].get<double>());
  s.out() << ", " << batch.dropped.size() << " dropped\n";
}

std::shared_ptr<const service::Engine> engine_for(Stage& s, bool need_surrogate) {
  s.base("this stage");
  artifacts::require(s.dir(), artifacts::kRates, "estimate");
  if (need_surrogate) artifacts::require(s.dir(), artifacts::kSurrogate, "approx");
  return service::Engine::from_config(s.cfg());
}

void do_optimize(Stage& s) {
  const auto engine = engine_for(s, s.cfg().anneal.evaluator == "surrogate");
  const auto req = engine->prepare_optimize(json::object());
  const json res = engine->run_optimize(req, {});
  const auto& city = engine->city();
  std::vector<int> z(city.size());
  for (const auto& [id, zone] : res["design"].items()) z[city.require_index(id)] = zone.get<int>() - 1;
  const geo::Design best(std::move(z), engine->zone_count());
  fs::create_directories(s.dir());
  {
    auto out = open_out(s.dir() / artifacts::kDesignOut);
    ingest::write_design(out, city, best,
                         {s.stamp().line(),
                          "evaluator=" + req.evaluator + " objective=" + fmt("%.17g", res["objective"].get<double>()) +
                              " base_objective=" + fmt("%.17g", res["base_objective"].get<double>()) +
                              " shifts=" + std::to_string(res["shifts_from_base"].get<std::size_t>())});
  }
  {
    auto out = open_out(s.dir() / artifacts::kTrace);
    json meta = s.stamped({{"evaluator", req.evaluator},
                           {"schedule", res["schedule"]},
                           {"constraints", res["constraints"]},
                           {"objective", res["objective"]},
                           {"base_objective", res["base_objective"]},
                           {"initial_temp", res["initial_temp"]},
                           {"temperatures", res["temperatures"]},
                           {"moves", res["moves"]}});
    out << json{{"meta", meta}}.dump() << '\n';
    for (const auto& e : res["trace"]) out << e.dump() << '\n';
  }
  s.out() << "optimize: objective " << fmt("%.6g", res["base_objective"].get<double>()) << " -> "
          << fmt("%.6g", res["objective"].get<double>());
  if (!res["objective_change_pct"].is_null()) {
    s.out() << " (" << fmt("%+.2f", res["objective_change_pct"].get<double>()) << "%)";
  }
  s.out() << ", " << res["shifts_from_base"].get<std::size_t>() << " beat(s) moved over "
          << res["temperatures"].get<int>() << " temperature(s)\n";
}

void do_export_milp(Stage& s) {
  const auto& city = s.city();
  const auto base = s.base("export-milp");
  const auto model = artifacts::load_surrogate(s.dir(), city);
  const auto c = s.cfg().constraints.resolve(city, base);
  const auto milp = optimize::build_milp(city, model, base, c);
  {
    auto out = open_out(s.dir() / artifacts::kMilp);
    out << "\\ " << s.stamp().line() << '\n';
    optimize::export_lp(milp, out);
  }
  s.out() << "export-milp: " << milp.var_names.size() << " variables (" << milp.counts.d << " d, " << milp.counts.e
          << " e, " << milp.counts.h << " h, " << milp.counts.flow << " flow), " << milp.rows.size() << " rows\n";
}

void do_evaluate(Stage& s, const Options& o) {
  const auto engine = engine_for(s, !o.exact);
  const auto& city = engine->city();
  std::string design_path = o.design;
  if (design_path.empty() && fs::exists(s.dir() / artifacts::kDesignOut)) {
    design_path = (s.dir() / artifacts::kDesignOut).string();
  }
  const geo::Design design = design_path.empty() ? *engine->base()
                                                 : ingest::read_design(fs::path(design_path), city, engine->zone_count());
  const auto r = engine->evaluate(design, o.exact);

  std::vector<std::string> names;
  for (int k = 0; k < design.zone_count(); ++k) names.push_back("zone " + std::to_string(k + 1));
  analyze::WorkloadTable table(names);
  auto workloads = [&](const service::EvaluationResponse& e) {
    std::vector<double> w;
    for (const auto& z : e.zones) w.push_back(o.exact ? z.exact_workload.value_or(0.0) : z.surrogate_workload.value_or(0.0));
    return w;
  };
  const bool have_numbers = !o.exact || !r.exact_error;
  if (have_numbers) {
    table.add_row("base", workloads(engine->evaluate(*engine->base(), o.exact)));
    table.add_row("design", workloads(r), 0);
  }
  fs::create_directories(s.dir());
  artifacts::write_json(s.dir() / artifacts::kReport,
                        s.stamped({{"design", design_path.empty() ? *s.cfg().paths.base_design : design_path},
                                   {"exact", o.exact},
                                   {"evaluation", r.to_json(city)},
                                   {"table", have_numbers ? table.to_json() : json(nullptr)}}));
  const auto& var = o.exact ? r.exact_variance : r.surrogate_variance;
  const auto& pct = o.exact ? r.exact_variance_change_pct : r.surrogate_variance_change_pct;
  s.out() << "evaluate: " << (o.exact ? "exact" : "surrogate") << " variance "
          << (var ? fmt("%.6g", *var) : std::string("n/a"));
  if (pct) s.out() << " (" << fmt("%+.2f", *pct) << "% vs base)";
  s.out() << ", " << r.badges.size() << " constraint badge(s), " << r.shifts_from_base.value_or(0)
          << " shift(s) from base\n";
}

void do_did(Stage& s, const Options& o) {
  for (const auto& p : o.period) {
    if (p.empty()) throw config::ConfigError("did needs --period1, --period2 and --period3");
  }
  if (o.norm_first.has_value() != o.norm_last.has_value()) {
    throw config::ConfigError("--normalize-first and --normalize-last go together");
  }
  const auto design = s.design_arg(o.design, "did");
  std::vector<analyze::ZoneSeries> series;
  for (const auto& p : o.period) {
    const auto calls = ingest::ingest_calls(fs::path(p), s.city(), s.cfg().model.min_acceptance);
    series.push_back(analyze::daily_zone_workload(calls.records, design));
  }
  if (o.norm_first) {
    const auto mode = o.additive ? analyze::NormalizeMode::additive : analyze::NormalizeMode::multiplicative;
    for (std::size_t t = 1; t < 3; ++t) {
      series[t] = analyze::normalize_workload(series[t], series[0], *o.norm_first, *o.norm_last, mode).series;
    }
  }
  const auto result = analyze::did_analysis(analyze::daily_variance(series[0]), analyze::daily_variance(series[1]),
                                            analyze::daily_variance(series[2]));
  fs::create_directories(s.dir());
  {
    auto out = open_out(s.dir() / artifacts::kDid);
    out << "# " << s.stamp().line() << '\n';
    analyze::write_did_csv(out, result);
  }
  s.out() << "did: " << result.points.size() << " common days, fraction below diagonal "
          << fmt("%.4f", result.fraction_below) << '\n';
}

void do_serve(Stage& s, const Options& o) {
  int port = s.cfg().port;
  if (const char* env = std::getenv("PORT"); env && *env) port = std::atoi(env);
  if (o.port_opt && o.port_opt->count()) port = o.port;
  artifacts::require(s.dir(), artifacts::kRates, "estimate");
  service::ServiceCore core;
  core.initialize(service::Engine::from_config(s.cfg()));
  std::optional<std::string> static_dir;
  if (!o.static_dir.empty()) static_dir = o.static_dir;
  else if (s.cfg().static_dir) static_dir = s.cfg().resolve(*s.cfg().static_dir).string();
  service::HttpServer server(core, static_dir);
  s.out() << "serve: listening on http://" << o.host << ":" << port << std::endl;
  server.run(o.host, port);
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Police zone redesign pipeline", "zoned"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config, "Run configuration (JSON)");
  o.output_dir_opt = app.add_option("--output-dir", o.output_dir, "Artifact directory (overrides the config)");
  o.seed_opt = app.add_option("--seed", o.seed, "Root seed (overrides the config)");

  auto* ingest_cmd = app.add_subcommand("ingest", "Validate call records and covariates");
  auto* estimate_cmd = app.add_subcommand("estimate", "Fit service rate, travel matrix and arrival model");
  auto* predict_cmd = app.add_subcommand("predict", "Forecast beat arrival rates");
  predict_cmd->add_option("--horizon", o.horizon, "Years ahead of the last observed year");
  auto* simulate_cmd = app.add_subcommand("simulate", "Solve the zone queues of one design");
  simulate_cmd->add_option("--design", o.design, "Design CSV (default: base design)");
  simulate_cmd->add_option("--dump-q", o.dump_q, "Write each zone's rate matrix (MatrixMarket) here");
  auto* approx_cmd = app.add_subcommand("approx", "Fit the linear workload surrogate");
  o.samples_opt = approx_cmd->add_option("--samples", o.samples, "Training designs");
  o.holdout_opt = approx_cmd->add_option("--holdout", o.holdout, "Held-out designs");
  o.approx_shifts_opt = approx_cmd->add_option("--max-shifts", o.approx_shifts, "Perturbation radius");
  o.threads_opt = approx_cmd->add_option("--threads", o.threads, "Worker threads (0: all cores)");
  auto* optimize_cmd = app.add_subcommand("optimize", "Anneal a redesign of the base zones");
  o.max_shifts_opt = optimize_cmd->add_option("--max-shifts", o.max_shifts, "Shift budget");
  o.evaluator_opt = optimize_cmd->add_option("--evaluator", o.evaluator, "surrogate or exact")
                        ->check(CLI::IsMember({"surrogate", "exact"}));
  auto* milp_cmd = app.add_subcommand("export-milp", "Write the redesign MILP in LP format");
  milp_cmd->add_option("--max-shifts", o.max_shifts, "Shift budget");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Evaluate a design against the base");
  evaluate_cmd->add_option("--design", o.design, "Design CSV (default: design_out.csv, else base)");
  evaluate_cmd->add_flag("--exact", o.exact, "Also solve the exact queue model");
  auto* did_cmd = app.add_subcommand("did", "Difference in differences of daily workload variance");
  did_cmd->add_option("--period1", o.period[0], "Calls before the change (earlier year)")->required();
  did_cmd->add_option("--period2", o.period[1], "Calls before the change (later year)")->required();
  did_cmd->add_option("--period3", o.period[2], "Calls after the change")->required();
  did_cmd->add_option("--design", o.design, "Design that defines the zones (default: base)");
  did_cmd->add_option("--normalize-first", o.norm_first, "First day of the normalisation window");
  did_cmd->add_option("--normalize-last", o.norm_last, "Last day of the normalisation window");
  did_cmd->add_flag("--additive", o.additive, "Additive instead of multiplicative normalisation");
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  serve_cmd->add_option("--host", o.host, "Bind address");
  o.port_opt = serve_cmd->add_option("--port", o.port, "Port (default: PORT env, then the config)");
  serve_cmd->add_option("--static-dir", o.static_dir, "Directory served under /ui");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  // The milp subcommand shares --max-shifts with optimize.
  CLI::Option* milp_shifts = milp_cmd->get_option("--max-shifts");

  try {
    auto cfg = config::RunConfig::load(o.config);
    if (o.output_dir_opt->count()) cfg.output_dir = fs::absolute(o.output_dir).string();
    if (o.seed_opt->count()) cfg.seed = o.seed;
    if (o.samples_opt->count()) cfg.approx.samples = o.samples;
    if (o.holdout_opt->count()) cfg.approx.holdout = o.holdout;
    if (o.approx_shifts_opt->count()) cfg.approx.max_shifts = o.approx_shifts;
    if (o.threads_opt->count()) cfg.approx.threads = o.threads;
    if (o.max_shifts_opt->count() || milp_shifts->count()) cfg.constraints.max_shifts = o.max_shifts;
    if (o.evaluator_opt->count()) cfg.anneal.evaluator = o.evaluator;
    Stage stage(std::move(cfg), out);

    if (ingest_cmd->parsed()) do_ingest(stage);
    else if (estimate_cmd->parsed()) do_estimate(stage);
    else if (predict_cmd->parsed()) do_predict(stage, o.horizon);
    else if (simulate_cmd->parsed()) do_simulate(stage, o);
    else if (approx_cmd->parsed()) do_approx(stage);
    else if (optimize_cmd->parsed()) do_optimize(stage);
    else if (milp_cmd->parsed()) do_export_milp(stage);
    else if (evaluate_cmd->parsed()) do_evaluate(stage, o);
    else if (did_cmd->parsed()) do_did(stage, o);
    else if (serve_cmd->parsed()) do_serve(stage, o);
    return kExitOk;
  } catch (const config::ConfigError& e) {
    err << "zoned: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "zoned: " << e.what() << '\n';
    return kExitDomain;
  }
}

}  // namespace zonedesign::cli
