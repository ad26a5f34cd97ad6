#pragma once

#include "zonedesign/geo.hpp"
#include "zonedesign/queue.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace zonedesign::approx {

class ApproxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// City-wide queueing inputs: calls per hour per beat, service rate per hour,
/// travel seconds between beats.
struct QueueInputs {
  std::vector<double> lambda;
  double mu = 0.0;
  Eigen::MatrixXd tau;
};

/// Solves zone queues on demand and caches them by member set. Safe for
/// concurrent use.
class ZoneSolver {
 public:
  ZoneSolver(const geo::CityGraph& city, QueueInputs inputs, queue::SolveOptions opts = {});

  const geo::CityGraph& city() const { return *city_; }
  const QueueInputs& inputs() const { return inputs_; }

  /// `members` must be sorted ascending. Throws queue::UnstableZone.
  std::shared_ptr<const queue::PerformanceReport> solve(const std::vector<std::size_t>& members) const;
  std::vector<std::shared_ptr<const queue::PerformanceReport>> solve_design(const geo::Design& design) const;

  /// Zone workloads in busy hours per year.
  std::vector<double> zone_workloads(const geo::Design& design) const;

  std::size_t cache_size() const;
  std::size_t hits() const { return hits_.load(); }
  std::size_t misses() const { return misses_.load(); }

 private:
  const geo::CityGraph* city_;
  QueueInputs inputs_;
  queue::SolveOptions opts_;
  mutable std::shared_mutex mutex_;
  mutable std::map<std::vector<std::size_t>, std::shared_ptr<const queue::PerformanceReport>> cache_;
  mutable std::atomic<std::size_t> hits_{0};
  mutable std::atomic<std::size_t> misses_{0};
};

struct DesignSample {
  geo::Design design;
  std::vector<double> workloads;  // hours per year, per zone
  std::size_t shifts_from_base = 0;
};

/// Random boundary perturbations of `base`. The first element is always the
/// base itself; the rest are distinct designs 1..max_shifts beats away. May
/// return fewer than `count` designs when the neighbourhood is small.
std::vector<geo::Design> sample_perturbed_designs(const geo::Design& base, const geo::CityGraph& city,
                                                  std::size_t max_shifts, std::size_t count, std::uint64_t seed);

struct EvaluationBatch {
  std::vector<DesignSample> samples;
  std::vector<std::string> dropped;  // reasons for samples with an unstable zone
};

/// `threads` = 0 uses the hardware concurrency.
EvaluationBatch evaluate_designs(std::span<const geo::Design> designs, const geo::Design& base,
                                 const ZoneSolver& solver, unsigned threads = 0);

/// w_k = theta0_k + sum_i theta(i, k) d_ik.
struct LinearWorkloadModel {
  Eigen::VectorXd theta0;        // K
  Eigen::MatrixXd theta;         // I x K
  Eigen::MatrixXd theta_se;      // I x K; 0 where unidentified
  Eigen::VectorXd theta0_se;     // K
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> identified;  // I x K
  double r_squared = 0.0;
  std::vector<double> zone_r_squared;
  geo::Design base_design;
  std::size_t validity_radius = 0;
  std::size_t sample_count = 0;
  std::vector<std::string> warnings;

  int zone_count() const { return static_cast<int>(theta0.size()); }
  std::size_t beat_count() const { return static_cast<std::size_t>(theta.rows()); }

  std::vector<double> predict(const geo::Design& design) const;

  nlohmann::json to_json(const geo::CityGraph& city) const;
  static LinearWorkloadModel from_json(const nlohmann::json& j, const geo::CityGraph& city);
};

/// Per-zone least squares of w^(k) on (1, d_1k, ..., d_Ik). Columns that never
/// vary across the samples are unidentified and get a zero coefficient.
LinearWorkloadModel fit_linear_model(std::span<const DesignSample> samples, const geo::Design& base);

/// Workload variance (population form) of the model-predicted zone workloads.
double approx_objective(const geo::Design& design, const LinearWorkloadModel& model);

/// Same statistic from the exact queue solution.
double exact_objective(const geo::Design& design, const ZoneSolver& solver);

}  // namespace zonedesign::approx
