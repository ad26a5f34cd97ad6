#pragma once

#include "zonedesign/approx.hpp"
#include "zonedesign/config.hpp"
#include "zonedesign/geo.hpp"
#include "zonedesign/optimize.hpp"

#include <json.hpp>

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <stop_token>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace zonedesign::service {

/// The engine cannot answer: no surrogate fitted, no base design, and so on.
class Unavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A request body that is well-formed JSON but asks for something invalid.
class BadRequest : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ZoneMetrics {
  std::vector<std::size_t> beats;
  std::optional<double> surrogate_workload;  // hours per year
  std::optional<double> exact_workload;
  std::optional<double> response_s;  // exact model, mean over the zone's calls
  std::optional<double> travel_s;
};

struct EvaluationResponse {
  std::vector<ZoneMetrics> zones;
  std::optional<double> surrogate_variance;
  std::optional<double> exact_variance;
  std::optional<double> baseline_surrogate_variance;
  std::optional<double> baseline_exact_variance;
  std::optional<double> surrogate_variance_change_pct;
  std::optional<double> exact_variance_change_pct;
  std::vector<optimize::ConstraintViolation> badges;
  std::optional<std::size_t> shifts_from_base;
  std::optional<std::string> exact_error;  // an unstable zone, for instance

  nlohmann::json to_json(const geo::CityGraph& city) const;
};

struct EngineInputs {
  geo::CityGraph city;
  std::optional<geo::Design> base;
  approx::QueueInputs queue;
  std::optional<approx::LinearWorkloadModel> surrogate;
  config::ConstraintConfig constraints;
  config::AnnealConfig anneal;
  std::string config_hash;
  std::uint64_t seed = 1;
};

/// A POST /optimize body resolved against the engine's configured run.
struct OptimizeRequest {
  geo::DesignConstraints constraints;
  optimize::AnnealingConfig schedule;
  std::string evaluator;
};

/// Immutable after construction; every method is safe to call concurrently.
class Engine {
 public:
  explicit Engine(EngineInputs in);
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  /// City, base design and queue inputs from the config, and the surrogate
  /// from the output directory when the approx stage has run.
  static std::shared_ptr<const Engine> from_config(const config::RunConfig& cfg);

  const geo::CityGraph& city() const { return in_.city; }
  const std::optional<geo::Design>& base() const { return in_.base; }
  const std::optional<approx::LinearWorkloadModel>& surrogate() const { return in_.surrogate; }
  const approx::ZoneSolver& solver() const { return solver_; }
  const EngineInputs& inputs() const { return in_; }
  int zone_count() const;
  /// Resolved constraints of the configured run; requires a base design.
  const geo::DesignConstraints& constraints() const;

  /// Surrogate metrics when a surrogate is loaded, exact ones on request.
  EvaluationResponse evaluate(const geo::Design& design, bool exact) const;

  /// Request fields override the configured constraints and schedule; the
  /// default seed is the one the CLI optimize stage uses. Throws BadRequest
  /// or Unavailable.
  OptimizeRequest prepare_optimize(const nlohmann::json& request) const;
  nlohmann::json run_optimize(const OptimizeRequest& request, const optimize::ProgressFn& progress) const;

 private:
  EngineInputs in_;
  approx::ZoneSolver solver_;
  std::optional<geo::DesignConstraints> constraints_;
  std::optional<double> baseline_surrogate_;
};

// ---------------------------------------------------------------------------
// Jobs

enum class JobStatus { queued, running, done, failed };
std::string to_string(JobStatus s);

struct Job {
  std::string id;
  std::string key;  // idempotency key, may be empty
  JobStatus status = JobStatus::queued;
  int temp_index = 0;
  int max_temps = 0;
  std::optional<double> best_objective;
  nlohmann::json request;
  nlohmann::json result;  // set once on completion
  std::string error;

  nlohmann::json to_json() const;
};

/// FIFO of optimisation jobs served by one worker thread.
class JobRegistry {
 public:
  using Runner = std::function<nlohmann::json(const nlohmann::json& request, const optimize::ProgressFn& progress)>;

  explicit JobRegistry(Runner runner);
  ~JobRegistry();
  JobRegistry(const JobRegistry&) = delete;
  JobRegistry& operator=(const JobRegistry&) = delete;

  struct Submission {
    std::string id;
    enum class Outcome { created, conflict, replay } outcome = Outcome::created;
  };
  /// A non-empty key that matches a queued or running job is a conflict; one
  /// that matches a finished job replays it.
  Submission submit(nlohmann::json request, const std::string& key);
  std::optional<Job> get(const std::string& id) const;
  /// Blocks until the job reaches a terminal state (tests and the CLI).
  Job wait(const std::string& id) const;

 private:
  void work(std::stop_token stop);

  Runner runner_;
  mutable std::mutex mutex_;
  mutable std::condition_variable_any changed_;
  std::map<std::string, Job> jobs_;
  std::deque<std::string> queue_;
  std::uint64_t next_id_ = 1;
  std::jthread worker_;
};

// ---------------------------------------------------------------------------
// HTTP

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// Routing and status codes without any transport, so tests can drive it directly.
class ServiceCore {
 public:
  ServiceCore();
  void initialize(std::shared_ptr<const Engine> engine);
  bool initialized() const;

  HttpResponse handle(std::string_view method, std::string_view path, std::string_view body,
                      std::string_view idempotency_key = {});

  const JobRegistry& jobs() const { return *jobs_; }

 private:
  std::shared_ptr<const Engine> engine() const;
  HttpResponse get_city() const;
  HttpResponse get_base() const;
  HttpResponse post_evaluate(std::string_view body) const;
  HttpResponse post_optimize(std::string_view body, std::string_view key);
  HttpResponse get_job(std::string_view id) const;

  mutable std::mutex engine_mutex_;
  std::shared_ptr<const Engine> engine_;
  std::string city_body_;
  std::unique_ptr<JobRegistry> jobs_;
};

/// Parses an assignment body (`{"101": 1, ...}` or `[{"beat_id": .., "zone": ..}]`,
/// 1-based zones). Returns the design or the violation list.
struct ParsedAssignment {
  std::optional<geo::Design> design;
  nlohmann::json violations = nlohmann::json::array();
};
ParsedAssignment parse_assignment(const nlohmann::json& assignment, const geo::CityGraph& city, int zone_count);

/// cpp-httplib transport with permissive CORS. `port` 0 picks a free port.
class HttpServer {
 public:
  explicit HttpServer(ServiceCore& core, std::optional<std::string> static_dir = std::nullopt);
  ~HttpServer();
  /// Binds and starts serving on a background thread; returns the bound port.
  int start(const std::string& host, int port);
  /// Serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace zonedesign::service
