#pragma once

#include "zonedesign/geo.hpp"
#include "zonedesign/timeutil.hpp"

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace zonedesign::estimate {

class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One dispatch. Timeline: call <= dispatch <= arrive <= clear.
struct CallRecord {
  Timestamp call_time;
  Timestamp dispatch_time;
  Timestamp arrive_time;
  Timestamp clear_time;
  std::size_t origin_beat = 0;    // responding unit's departure beat
  std::size_t incident_beat = 0;
  int priority = 0;  // 1 is the most urgent class

  bool timeline_ok() const {
    return call_time <= dispatch_time && dispatch_time <= arrive_time && arrive_time <= clear_time;
  }
  double waiting_s() const { return seconds_between(call_time, dispatch_time); }
  double travel_s() const { return seconds_between(dispatch_time, arrive_time); }
  double on_scene_s() const { return seconds_between(arrive_time, clear_time); }
  double service_s() const { return travel_s() + on_scene_s(); }
  double response_s() const { return seconds_between(call_time, arrive_time); }
};

// ---------------------------------------------------------------------------
// Travel matrix

enum class CellSource { observed, reverse, row_col_mean, zone_mean, global_mean };
std::string to_string(CellSource s);

struct TravelEstimate {
  Eigen::MatrixXd tau;        // seconds; tau(i, j) from beat i to beat j
  Eigen::MatrixXi counts;
  Eigen::MatrixXd std_error;  // NaN where fewer than two observations
  std::vector<CellSource> source;  // row-major, I x I
  std::size_t imputed = 0;
  std::vector<std::string> warnings;

  CellSource cell_source(std::size_t i, std::size_t j) const {
    return source[i * static_cast<std::size_t>(tau.cols()) + j];
  }
};

/// Mean dispatch travel time per (origin, incident) beat pair. Missing cells
/// fall back to the reverse direction, then row/column means, then the mean
/// over observed cells of the same zone (when `zones` is given), then the
/// global mean.
TravelEstimate estimate_travel_matrix(std::span<const CallRecord> records, const geo::CityGraph& city,
                                      const geo::Design* zones = nullptr);

// ---------------------------------------------------------------------------
// Service rate

struct ServiceRateFit {
  double mu_per_hour = 0.0;
  double mean_minutes = 0.0;
  double std_error_per_hour = 0.0;
  std::size_t samples = 0;
  double ks_distance = 0.0;  // against the fitted exponential; diagnostic only
};

inline constexpr std::size_t kMinServiceSamples = 30;

ServiceRateFit estimate_service_rate(std::span<const CallRecord> records, bool include_travel = false);
ServiceRateFit fit_exponential(std::span<const double> durations_s);

// ---------------------------------------------------------------------------
// Arrival rates

/// Per-beat hourly arrival rates by year: rates(i, l) for years[l].
struct RateHistory {
  std::vector<int> years;
  Eigen::MatrixXd rates;
};

/// Calls per incident beat per calendar year (UTC), divided by 8760.
RateHistory annual_rates(std::span<const CallRecord> records, const geo::CityGraph& city,
                         std::span<const int> years);

/// Demographic factors per beat-year: values[l](i, m) for years[l], factor m.
struct CovariateTable {
  std::vector<std::string> factors;
  std::vector<int> years;
  std::vector<Eigen::MatrixXd> values;

  std::size_t factor_count() const { return factors.size(); }
  const Eigen::MatrixXd& year(int y) const;
};

struct ArrivalFitOptions {
  int p = 1;
  std::optional<double> kernel_theta;  // default 1 / median centroid distance
  bool use_kernel = true;              // false: identity noise covariance
  bool estimate_spatial_lag = true;    // false: A fixed to 0
  int max_iter = 200;
  double grad_tol = 1e-8;
};

struct ArrivalModel {
  Eigen::MatrixXd alpha;  // I x I, non-zero only on adjacency pairs
  double beta0 = 0.0;
  std::vector<Eigen::VectorXd> beta;  // beta[t] for t = 0..p, each of length M
  int p = 1;
  double kernel_theta = 0.0;
  double kernel_theta1 = 0.0;  // noise variance scale
  double sigma = 0.0;
  bool use_kernel = true;

  std::vector<std::string> parameter_names;
  Eigen::VectorXd parameters;
  Eigen::VectorXd std_errors;
  double log_likelihood = 0.0;
  double start_log_likelihood = 0.0;  // at the OLS starting point
  int iterations = 0;
  std::size_t observations = 0;
};

/// Maximum-likelihood fit of the spatially lagged regression
///   lambda_l = A lambda_l + beta0 lambda_{l-1} + sum_t c_{l-t} beta_t + eps_l,
/// eps_l ~ N(0, theta1 exp(-theta s)), independent across years. theta1 is
/// profiled out; the Jacobian log|det(I - A)| enters the likelihood.
ArrivalModel fit_arrival_model(const RateHistory& history, const CovariateTable& covariates,
                               const geo::CityGraph& city, const ArrivalFitOptions& opts = {});

/// Recursive forecasts for `horizon` years after the last observed year.
/// `covariate_history` holds at least p years (chronological, last = last
/// observed year). Missing future covariates are carried forward.
std::vector<Eigen::VectorXd> predict_rates(const ArrivalModel& model, const Eigen::VectorXd& last_rates,
                                           const std::vector<Eigen::MatrixXd>& covariate_history,
                                           int horizon,
                                           const std::vector<Eigen::MatrixXd>& future_covariates = {});

/// Exponential spatial kernel exp(-theta s_ij) over centroid distances.
Eigen::MatrixXd kernel_correlation(const geo::CityGraph& city, double theta);
double default_kernel_theta(const geo::CityGraph& city);

}  // namespace zonedesign::estimate
