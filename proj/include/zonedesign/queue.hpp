#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

namespace zonedesign::queue {

inline constexpr int kMaxUnits = 24;
inline constexpr double kHoursPerYear = 8760.0;
inline constexpr double kSecondsPerHour = 3600.0;

class QueueError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnstableZone : public QueueError {
 public:
  using QueueError::QueueError;
};

class NoIdleUnit : public QueueError {
 public:
  using QueueError::QueueError;
};

class InstanceTooLarge : public QueueError {
 public:
  using QueueError::QueueError;
};

class NotConverged : public QueueError {
 public:
  NotConverged(long iterations, double residual);
  long iterations() const { return iterations_; }
  double residual() const { return residual_; }

 private:
  long iterations_;
  double residual_;
};

/// One zone's hypercube queue. Unit j is stationed in the zone's j-th beat.
/// Rates are per hour, travel times in seconds.
class ZoneQueue {
 public:
  ZoneQueue(std::vector<double> lambda, double mu, Eigen::MatrixXd tau);

  /// Restricts city-wide rates and travel times to the given beats (in order).
  static ZoneQueue for_zone(std::span<const std::size_t> beats, std::span<const double> lambda,
                            double mu, const Eigen::MatrixXd& tau);

  int units() const { return static_cast<int>(lambda_.size()); }
  std::uint32_t state_count() const { return std::uint32_t{1} << units(); }
  std::uint32_t all_busy() const { return state_count() - 1; }
  double lambda(int beat) const { return lambda_[static_cast<std::size_t>(beat)]; }
  const std::vector<double>& lambdas() const { return lambda_; }
  double total_lambda() const { return total_lambda_; }
  double mu() const { return mu_; }
  double tau(int unit, int beat) const { return tau_(unit, beat); }
  const Eigen::MatrixXd& tau() const { return tau_; }
  /// r = lambda / (N mu)
  double load_factor() const { return total_lambda_ / (units() * mu_); }

  /// Idle units ordered by travel time to `beat`, ties by lower index.
  const std::vector<int>& preference(int beat) const {
    return preference_[static_cast<std::size_t>(beat)];
  }

 private:
  std::vector<double> lambda_;
  double mu_;
  Eigen::MatrixXd tau_;
  double total_lambda_ = 0.0;
  std::vector<std::vector<int>> preference_;
};

/// Bit j of `index` is the busy flag of unit j.
struct HypercubeState {
  std::uint32_t index = 0;
  bool busy(int unit) const { return (index >> unit) & 1u; }
  int busy_count() const;
};

/// Nearest idle unit to a call in `call_beat`; throws NoIdleUnit when all are busy.
int optimal_dispatch(const ZoneQueue& zq, HypercubeState state, int call_beat);

/// Compressed-row rate matrix over the unsaturated hypercube states.
struct RateMatrix {
  std::size_t n = 0;
  std::vector<std::size_t> row_ptr;
  std::vector<std::uint32_t> col;
  std::vector<double> val;

  double at(std::size_t r, std::size_t c) const;
  std::size_t nonzeros() const { return val.size(); }
  void write_matrix_market(std::ostream& os) const;
};

RateMatrix build_transition_matrix(const ZoneQueue& zq);

/// Closed-form M/M/c quantities for the aggregated chain.
struct ErlangC {
  double offered = 0.0;  // a = lambda / mu
  double r = 0.0;        // lambda / (N mu)
  double p0 = 0.0;
  std::vector<double> busy;  // P(s busy, empty queue), s = 0..N
  double p_s1 = 0.0;         // P(exactly one call waiting)
  double tail_mass = 0.0;    // sum over n >= 1 of P(S_n)
};

ErlangC erlang_c(double lambda, double mu, int servers);

struct SteadyState {
  std::vector<double> pi;  // unsaturated states, indexed by hypercube state
  double tail_mass = 0.0;
  double queue_factor = 0.0;  // r; P(S_n) = P(S_1) r^(n-1)
  double erlang_p0 = 0.0;
  double p_s1 = 0.0;
  long iterations = 0;
  double residual = 0.0;

  double p_all_busy() const { return pi.back(); }
};

struct SolveOptions {
  double tol = 1e-9;
  long max_iter = 1'000'000;
};

/// Power iteration on the uniformized chain, with the saturated states lumped
/// into one boundary state and the tail rescaled to the M/M/c closed form.
SteadyState solve_steady_state(const ZoneQueue& zq, const SolveOptions& opts = {});

/// Direct dense solve of the chain with the queue truncated at `queue_cap`.
/// Intended for small instances (N <= 12); bias is bounded by r^queue_cap.
SteadyState oracle_steady_state(const ZoneQueue& zq, int queue_cap);
double truncation_bias_bound(const ZoneQueue& zq, int queue_cap);

struct PerformanceReport {
  Eigen::MatrixXd rho;         // rho(i, j): unit i sent to beat j
  Eigen::MatrixXd rho_direct;  // calls dispatched without queueing
  Eigen::MatrixXd rho_queued;
  double p_queue = 0.0;  // P'_Q
  std::vector<double> xi;  // per-unit mean travel per dispatch (s)
  std::vector<double> travel_by_beat;  // s
  double travel_zone = 0.0;            // s
  double tq_bar = 0.0;                 // s
  double mean_queue_delay = 0.0;       // s
  std::vector<double> response_by_beat;  // s
  double response_zone = 0.0;            // s
  std::vector<double> unit_workload;
  double zone_workload = 0.0;
  double zone_workload_hours_per_year = 0.0;
};

PerformanceReport performance_report(const ZoneQueue& zq, const SteadyState& ss);

}  // namespace zonedesign::queue
