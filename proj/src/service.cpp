#include "zonedesign/service.hpp"

#include "zonedesign/analyze.hpp"
#include "zonedesign/artifacts.hpp"
#include "zonedesign/ingest.hpp"

#include <algorithm>
#include <filesystem>

namespace zonedesign::service {

using nlohmann::json;

namespace {

template <class T>
json opt_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

std::optional<double> change_pct(const std::optional<double>& before, const std::optional<double>& after) {
  if (!before || !after || !(*before > 0.0)) return std::nullopt;
  return analyze::variance_change(*before, *after);
}

json badge_json(const optimize::ConstraintViolation& v) {
  return {{"kind", optimize::to_string(v.kind)},
          {"zone", v.zone >= 0 ? json(v.zone + 1) : json(nullptr)},
          {"beat", v.beat.empty() ? json(nullptr) : json(v.beat)},
          {"message", v.message}};
}

json constraints_json(const geo::CityGraph& city, const geo::DesignConstraints& c) {
  json pins = json::array();
  for (const auto& [b, z] : c.pinned) pins.push_back({city.beat_id(b), z + 1});
  json forbid = json::array();
  for (const auto& [a, b] : c.forbidden_transfers) forbid.push_back({a + 1, b + 1});
  return {{"max_shifts", c.max_shifts}, {"n_max", c.n_max}, {"zeta1", c.zeta1},
          {"zeta2", c.zeta2},           {"pins", pins},      {"forbidden_transfers", forbid}};
}

HttpResponse json_response(int status, const json& body) { return {status, body.dump(), "application/json"}; }

HttpResponse error_response(int status, const std::string& message) {
  return json_response(status, {{"error", message}});
}

std::string beat_key(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

}  // namespace

// ---------------------------------------------------------------------------
// EvaluationResponse

json EvaluationResponse::to_json(const geo::CityGraph& city) const {
  json zs = json::array();
  for (std::size_t k = 0; k < zones.size(); ++k) {
    const auto& z = zones[k];
    json beats = json::array();
    for (auto b : z.beats) beats.push_back(city.beat_id(b));
    zs.push_back({{"zone", k + 1},
                  {"beats", beats},
                  {"workload", {{"surrogate", opt_json(z.surrogate_workload)}, {"exact", opt_json(z.exact_workload)}}},
                  {"response_s", opt_json(z.response_s)},
                  {"travel_s", opt_json(z.travel_s)}});
  }
  json badge_list = json::array();
  for (const auto& b : badges) badge_list.push_back(badge_json(b));
  return {{"zones", zs},
          {"variance", {{"surrogate", opt_json(surrogate_variance)}, {"exact", opt_json(exact_variance)}}},
          {"baseline_variance",
           {{"surrogate", opt_json(baseline_surrogate_variance)}, {"exact", opt_json(baseline_exact_variance)}}},
          {"variance_change_pct",
           {{"surrogate", opt_json(surrogate_variance_change_pct)}, {"exact", opt_json(exact_variance_change_pct)}}},
          {"badges", badge_list},
          {"feasible", badges.empty()},
          {"shifts_from_base", opt_json(shifts_from_base)},
          {"exact_error", opt_json(exact_error)}};
}

// ---------------------------------------------------------------------------
// Engine

Engine::Engine(EngineInputs in) : in_(std::move(in)), solver_(in_.city, in_.queue) {
  if (in_.base) {
    if (in_.base->beat_count() != in_.city.size()) throw std::invalid_argument("base design does not match the city");
    constraints_ = in_.constraints.resolve(in_.city, *in_.base);
  }
  if (in_.surrogate) {
    if (in_.surrogate->beat_count() != in_.city.size()) throw std::invalid_argument("surrogate does not match the city");
    if (in_.base && in_.surrogate->zone_count() != in_.base->zone_count()) {
      throw std::invalid_argument("surrogate and base design disagree on the zone count");
    }
    if (in_.base) baseline_surrogate_ = approx::approx_objective(*in_.base, *in_.surrogate);
  }
}

std::shared_ptr<const Engine> Engine::from_config(const config::RunConfig& cfg) {
  std::optional<std::filesystem::path> adjacency;
  if (cfg.paths.adjacency) adjacency = cfg.resolve(*cfg.paths.adjacency);
  EngineInputs in{ingest::load_city(cfg.resolve(cfg.paths.city), adjacency), std::nullopt, {}, std::nullopt,
                  cfg.constraints, cfg.anneal, cfg.hash(), cfg.seed};
  if (cfg.paths.base_design) in.base = ingest::read_design(cfg.resolve(*cfg.paths.base_design), in.city);
  const auto out = cfg.output_path();
  in.queue = artifacts::load_queue_inputs(out, in.city);
  if (std::filesystem::exists(out / artifacts::kSurrogate)) in.surrogate = artifacts::load_surrogate(out, in.city);
  return std::make_shared<const Engine>(std::move(in));
}

int Engine::zone_count() const {
  if (in_.base) return in_.base->zone_count();
  if (in_.surrogate) return in_.surrogate->zone_count();
  throw Unavailable("zone count unknown: no base design and no surrogate loaded");
}

const geo::DesignConstraints& Engine::constraints() const {
  if (!constraints_) throw Unavailable("no base design loaded");
  return *constraints_;
}

EvaluationResponse Engine::evaluate(const geo::Design& design, bool exact) const {
  if (!in_.surrogate && !exact) {
    throw Unavailable("no surrogate loaded (run `zoned approx`), or request an exact evaluation");
  }
  if (design.beat_count() != in_.city.size() || design.zone_count() != zone_count()) {
    throw BadRequest("design does not match the city or the zone count");
  }
  EvaluationResponse r;
  const auto members = design.zones();
  r.zones.resize(members.size());
  for (std::size_t k = 0; k < members.size(); ++k) r.zones[k].beats = members[k];

  if (in_.surrogate) {
    const auto w = in_.surrogate->predict(design);
    for (std::size_t k = 0; k < w.size(); ++k) r.zones[k].surrogate_workload = w[k];
    r.surrogate_variance = approx::approx_objective(design, *in_.surrogate);
    r.baseline_surrogate_variance = baseline_surrogate_;
    r.surrogate_variance_change_pct = change_pct(r.baseline_surrogate_variance, r.surrogate_variance);
  }
  if (exact) {
    try {
      const auto reports = solver_.solve_design(design);
      for (std::size_t k = 0; k < reports.size(); ++k) {
        r.zones[k].exact_workload = reports[k]->zone_workload_hours_per_year;
        r.zones[k].response_s = reports[k]->response_zone;
        r.zones[k].travel_s = reports[k]->travel_zone;
      }
      r.exact_variance = approx::exact_objective(design, solver_);
      if (in_.base) r.baseline_exact_variance = approx::exact_objective(*in_.base, solver_);
      r.exact_variance_change_pct = change_pct(r.baseline_exact_variance, r.exact_variance);
    } catch (const queue::QueueError& e) {
      for (auto& z : r.zones) z.exact_workload = z.response_s = z.travel_s = std::nullopt;
      r.exact_variance = r.baseline_exact_variance = r.exact_variance_change_pct = std::nullopt;
      r.exact_error = e.what();
    }
  }
  if (in_.base) {
    r.badges = optimize::check_constraints(in_.city, design, *in_.base, *constraints_);
    r.shifts_from_base = geo::shift_count(*in_.base, design);
  } else {
    const auto ok = geo::is_contiguous(in_.city, design);
    for (std::size_t k = 0; k < ok.size(); ++k) {
      if (!ok[k]) {
        r.badges.push_back({optimize::ConstraintKind::contiguity, static_cast<int>(k), {},
                            "zone " + std::to_string(k + 1) + " is not contiguous"});
      }
    }
  }
  return r;
}

OptimizeRequest Engine::prepare_optimize(const json& request) const {
  if (!in_.base) throw Unavailable("no base design loaded");
  if (!request.is_object()) throw BadRequest("optimize body must be a JSON object");
  for (const auto& [key, _] : request.items()) {
    if (key != "constraints" && key != "schedule" && key != "evaluator" && key != "idempotency_key") {
      throw BadRequest("unknown field '" + key + "'");
    }
  }
  OptimizeRequest out;
  out.evaluator = request.value("evaluator", in_.anneal.evaluator);
  if (out.evaluator != "surrogate" && out.evaluator != "exact") {
    throw BadRequest("evaluator must be 'surrogate' or 'exact'");
  }
  if (out.evaluator == "surrogate" && !in_.surrogate) throw Unavailable("no surrogate loaded; run `zoned approx`");

  try {
    json c = in_.constraints.to_json();
    if (request.contains("constraints")) {
      if (!request["constraints"].is_object()) throw BadRequest("constraints must be an object");
      for (const auto& [key, value] : request["constraints"].items()) c[key] = value;
    }
    out.constraints = config::ConstraintConfig::from_json(c).resolve(in_.city, *in_.base);
  } catch (const config::ConfigError& e) {
    throw BadRequest(e.what());
  } catch (const json::exception& e) {
    throw BadRequest(std::string("constraints: ") + e.what());
  }

  auto& s = out.schedule;
  s = in_.anneal.schedule;
  s.seed = config::derive_seed(in_.seed, "anneal");
  if (request.contains("schedule")) {
    const json& j = request["schedule"];
    if (!j.is_object()) throw BadRequest("schedule must be an object");
    try {
      for (const auto& [key, value] : j.items()) {
        if (key == "initial_temp") {
          if (value.is_number()) s.initial_temp = value.get<double>();
          else if (value.is_null() || value == "auto") s.initial_temp.reset();
          else throw BadRequest("initial_temp must be a number, null or \"auto\"");
        } else if (key == "cooling_rate") {
          s.cooling_rate = value.get<double>();
        } else if (key == "iters_per_temp") {
          s.iters_per_temp = value.get<int>();
        } else if (key == "max_temps") {
          s.max_temps = value.get<int>();
        } else if (key == "stall_limit") {
          s.stall_limit = value.get<int>();
        } else if (key == "seed") {
          s.seed = value.get<std::uint64_t>();
        } else {
          throw BadRequest("unknown schedule field '" + key + "'");
        }
      }
      s.check();
    } catch (const json::exception& e) {
      throw BadRequest(std::string("schedule: ") + e.what());
    } catch (const optimize::OptimizeError& e) {
      throw BadRequest(std::string("schedule: ") + e.what());
    }
  }
  return out;
}

json Engine::run_optimize(const OptimizeRequest& req, const optimize::ProgressFn& progress) const {
  const optimize::Evaluator eval = req.evaluator == "exact" ? optimize::exact_evaluator(solver_)
                                                            : optimize::surrogate_evaluator(*in_.surrogate);
  const auto res = optimize::anneal(in_.city, *in_.base, eval, req.constraints, req.schedule, progress);
  json moves = json::array();
  for (const auto& m : geo::design_diff(*in_.base, res.best).moves) {
    moves.push_back({{"beat", in_.city.beat_id(m.beat)}, {"from", m.from + 1}, {"to", m.to + 1}});
  }
  json trace = json::array();
  for (const auto& e : res.trace) trace.push_back(e.to_json());
  return {{"design", artifacts::design_to_json(in_.city, res.best)},
          {"objective", res.best_objective},
          {"base_objective", res.base_objective},
          {"objective_change_pct", opt_json(change_pct(res.base_objective, res.best_objective))},
          {"moves", moves},
          {"shifts_from_base", moves.size()},
          {"evaluator", req.evaluator},
          {"schedule", req.schedule.to_json()},
          {"constraints", constraints_json(in_.city, req.constraints)},
          {"initial_temp", res.initial_temp},
          {"temperatures", res.temperatures},
          {"accepted", res.accepted},
          {"rejected_infeasible", res.rejected_infeasible},
          {"trace", trace}};
}

// ---------------------------------------------------------------------------
// Jobs

std::string to_string(JobStatus s) {
  switch (s) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "unknown";
}

json Job::to_json() const {
  return {{"id", id},
          {"status", to_string(status)},
          {"idempotency_key", key.empty() ? json(nullptr) : json(key)},
          {"progress", {{"temp_index", temp_index}, {"max_temps", max_temps}}},
          {"best_objective", opt_json(best_objective)},
          {"result", status == JobStatus::done ? result : json(nullptr)},
          {"error", status == JobStatus::failed ? json(error) : json(nullptr)}};
}

namespace {

struct Cancelled : std::runtime_error {
  Cancelled() : std::runtime_error("cancelled at shutdown") {}
};

bool terminal(JobStatus s) { return s == JobStatus::done || s == JobStatus::failed; }

}  // namespace

JobRegistry::JobRegistry(Runner runner)
    : runner_(std::move(runner)), worker_([this](std::stop_token st) { work(st); }) {}

JobRegistry::~JobRegistry() {
  worker_.request_stop();
  changed_.notify_all();
}

JobRegistry::Submission JobRegistry::submit(json request, const std::string& key) {
  std::lock_guard lk(mutex_);
  if (!key.empty()) {
    for (const auto& [id, job] : jobs_) {
      if (job.key == key) {
        return {id, terminal(job.status) ? Submission::Outcome::replay : Submission::Outcome::conflict};
      }
    }
  }
  Job job;
  job.id = "job-" + std::to_string(next_id_++);
  job.key = key;
  if (request.contains("schedule") && request["schedule"].contains("max_temps") &&
      request["schedule"]["max_temps"].is_number_integer()) {
    job.max_temps = request["schedule"]["max_temps"].get<int>();
  }
  job.request = std::move(request);
  const std::string id = job.id;
  jobs_.emplace(id, std::move(job));
  queue_.push_back(id);
  changed_.notify_all();
  return {id, Submission::Outcome::created};
}

std::optional<Job> JobRegistry::get(const std::string& id) const {
  std::lock_guard lk(mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

Job JobRegistry::wait(const std::string& id) const {
  std::unique_lock lk(mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) throw std::out_of_range("unknown job " + id);
  changed_.wait(lk, [&] { return terminal(it->second.status); });
  return it->second;
}

void JobRegistry::work(std::stop_token stop) {
  while (true) {
    std::string id;
    json request;
    {
      std::unique_lock lk(mutex_);
      if (!changed_.wait(lk, stop, [&] { return !queue_.empty(); })) return;
      id = queue_.front();
      queue_.pop_front();
      auto& job = jobs_.at(id);
      job.status = JobStatus::running;
      request = job.request;
    }
    changed_.notify_all();
    auto progress = [&](int t, int max, double best) {
      if (stop.stop_requested()) throw Cancelled();
      std::lock_guard lk(mutex_);
      auto& job = jobs_.at(id);
      job.temp_index = std::max(job.temp_index, t);
      job.max_temps = max;
      job.best_objective = best;
      changed_.notify_all();
    };
    json result;
    std::string error;
    bool ok = false;
    try {
      result = runner_(request, progress);
      ok = true;
    } catch (const std::exception& e) {
      error = e.what();
    }
    {
      std::lock_guard lk(mutex_);
      auto& job = jobs_.at(id);
      if (ok) {
        job.result = std::move(result);
        job.status = JobStatus::done;
        if (job.result.contains("objective")) job.best_objective = job.result["objective"].get<double>();
      } else {
        job.error = std::move(error);
        job.status = JobStatus::failed;
      }
    }
    changed_.notify_all();
  }
}

// ---------------------------------------------------------------------------
// Assignment parsing

ParsedAssignment parse_assignment(const json& assignment, const geo::CityGraph& city, int zone_count) {
  ParsedAssignment out;
  std::vector<geo::BeatZone> list;
  auto add = [&](const std::string& beat, const json& zone) {
    if (!city.index_of(beat)) {
      out.violations.push_back(
          {{"kind", "unknown_beat"}, {"beat", beat}, {"zone", nullptr}, {"message", "unknown beat " + beat}});
      return;
    }
    if (!zone.is_number_integer()) {
      out.violations.push_back({{"kind", "zone_out_of_range"},
                                {"beat", beat},
                                {"zone", nullptr},
                                {"message", "zone for beat " + beat + " must be an integer"}});
      return;
    }
    list.push_back({beat, zone.get<int>() - 1});
  };
  if (assignment.is_object()) {
    for (const auto& [beat, zone] : assignment.items()) add(beat, zone);
  } else if (assignment.is_array()) {
    for (const auto& e : assignment) {
      if (!e.is_object() || !e.contains("beat_id") || !e.contains("zone")) {
        out.violations.push_back({{"kind", "malformed_entry"},
                                  {"beat", nullptr},
                                  {"zone", nullptr},
                                  {"message", "assignment entries are {\"beat_id\": .., \"zone\": ..}"}});
        continue;
      }
      add(beat_key(e["beat_id"]), e["zone"]);
    }
  } else {
    out.violations.push_back({{"kind", "malformed_assignment"},
                              {"beat", nullptr},
                              {"zone", nullptr},
                              {"message", "assignment must be an object or an array"}});
    return out;
  }
  const auto v = geo::validate_design(city, list, zone_count);
  for (const auto& x : v.violations) {
    auto kind = geo::to_string(x.kind);
    std::replace(kind.begin(), kind.end(), ' ', '_');
    out.violations.push_back({{"kind", kind},
                              {"beat", x.beat.empty() ? json(nullptr) : json(x.beat)},
                              {"zone", x.zone >= 0 ? json(x.zone + 1) : json(nullptr)},
                              {"message", x.message()}});
  }
  if (out.violations.empty()) out.design = geo::make_design(city, list, zone_count);
  return out;
}

// ---------------------------------------------------------------------------
// ServiceCore

ServiceCore::ServiceCore()
    : jobs_(std::make_unique<JobRegistry>([this](const json& request, const optimize::ProgressFn& progress) {
        const auto e = engine();
        if (!e) throw Unavailable("service is not initialized");
        return e->run_optimize(e->prepare_optimize(request), progress);
      })) {}

void ServiceCore::initialize(std::shared_ptr<const Engine> engine) {
  std::string body = ingest::city_to_geojson(engine->city()).dump();
  std::lock_guard lk(engine_mutex_);
  engine_ = std::move(engine);
  city_body_ = std::move(body);
}

bool ServiceCore::initialized() const { return engine() != nullptr; }

std::shared_ptr<const Engine> ServiceCore::engine() const {
  std::lock_guard lk(engine_mutex_);
  return engine_;
}

HttpResponse ServiceCore::handle(std::string_view method, std::string_view path, std::string_view body,
                                 std::string_view idempotency_key) {
  if (auto q = path.find('?'); q != std::string_view::npos) path = path.substr(0, q);
  if (method == "OPTIONS") return {204, "", "text/plain"};
  try {
    if (path == "/health") {
      if (method != "GET") return error_response(405, "method not allowed");
      return json_response(200, {{"status", "ok"}, {"initialized", initialized()}});
    }
    const bool known = path == "/city" || path == "/design/base" || path == "/evaluate" || path == "/optimize" ||
                       path.starts_with("/jobs/");
    if (!known) return error_response(404, "no such endpoint: " + std::string(path));
    const bool want_post = path == "/evaluate" || path == "/optimize";
    if (method != (want_post ? "POST" : "GET")) return error_response(405, "method not allowed");
    if (!initialized()) return error_response(503, "service is not initialized");
    if (path == "/city") return get_city();
    if (path == "/design/base") return get_base();
    if (path == "/evaluate") return post_evaluate(body);
    if (path == "/optimize") return post_optimize(body, idempotency_key);
    return get_job(path.substr(6));
  } catch (const Unavailable& e) {
    return error_response(503, e.what());
  } catch (const BadRequest& e) {
    return error_response(400, e.what());
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

HttpResponse ServiceCore::get_city() const {
  std::lock_guard lk(engine_mutex_);
  return {200, city_body_, "application/geo+json"};
}

HttpResponse ServiceCore::get_base() const {
  const auto e = engine();
  if (!e->base()) return error_response(404, "no base design loaded; set paths.base_design in the config");
  return json_response(200, {{"zone_count", e->base()->zone_count()},
                             {"assignment", artifacts::design_to_json(e->city(), *e->base())},
                             {"constraints", constraints_json(e->city(), e->constraints())},
                             {"surrogate_loaded", e->surrogate().has_value()}});
}

HttpResponse ServiceCore::post_evaluate(std::string_view body) const {
  const auto e = engine();
  json req;
  try {
    req = json::parse(body);
  } catch (const json::exception& ex) {
    return error_response(400, std::string("body is not valid JSON: ") + ex.what());
  }
  if (!req.is_object() || !req.contains("assignment")) return error_response(400, "body needs an 'assignment'");
  bool exact = false;
  if (req.contains("exact")) {
    if (!req["exact"].is_boolean()) return error_response(400, "'exact' must be a boolean");
    exact = req["exact"].get<bool>();
  }
  const auto parsed = parse_assignment(req["assignment"], e->city(), e->zone_count());
  if (!parsed.design) return json_response(422, {{"error", "invalid assignment"}, {"violations", parsed.violations}});
  return json_response(200, e->evaluate(*parsed.design, exact).to_json(e->city()));
}

HttpResponse ServiceCore::post_optimize(std::string_view body, std::string_view key_header) {
  const auto e = engine();
  json req = json::object();
  if (!body.empty()) {
    try {
      req = json::parse(body);
    } catch (const json::exception& ex) {
      return error_response(400, std::string("body is not valid JSON: ") + ex.what());
    }
  }
  if (!e->base()) return error_response(404, "no base design loaded; set paths.base_design in the config");
  std::string key(key_header);
  if (key.empty() && req.is_object() && req.contains("idempotency_key")) {
    if (!req["idempotency_key"].is_string()) return error_response(400, "idempotency_key must be a string");
    key = req["idempotency_key"].get<std::string>();
  }
  e->prepare_optimize(req);  // reject bad requests before queueing
  const auto sub = jobs_->submit(req, key);
  switch (sub.outcome) {
    case JobRegistry::Submission::Outcome::conflict:
      return json_response(409, {{"error", "a job with this idempotency key is still running"}, {"id", sub.id}});
    case JobRegistry::Submission::Outcome::replay:
      return json_response(200, jobs_->get(sub.id)->to_json());
    case JobRegistry::Submission::Outcome::created:
      break;
  }
  return json_response(202, {{"id", sub.id}, {"status", "queued"}});
}

HttpResponse ServiceCore::get_job(std::string_view id) const {
  const auto job = jobs_->get(std::string(id));
  if (!job) return error_response(404, "no such job: " + std::string(id));
  return json_response(200, job->to_json());
}

}  // namespace zonedesign::service
