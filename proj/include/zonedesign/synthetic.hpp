#pragma once

#include "zonedesign/estimate.hpp"
#include "zonedesign/geo.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace zonedesign::synthetic {

/// rows x cols grid of square beats with side `cell_km`. Beat (r, c) has id
/// "<r+1><c+1 as two digits>", e.g. "101" for the top-left cell.
/// Supports up to 9 rows so that id order equals row-major order.
geo::CityGraph grid_city(int rows, int cols, double cell_km = 1.0);

/// Row-major beat index of cell (r, c) in a grid_city.
inline std::size_t grid_index(int r, int c, int cols) { return static_cast<std::size_t>(r * cols + c); }

/// Zones as vertical bands: column c goes to zone floor(c * K / cols).
geo::Design column_bands(int rows, int cols, int zones);

/// Travel seconds: fixed overhead plus centroid distance at constant speed.
Eigen::MatrixXd distance_travel(const geo::CityGraph& city, double overhead_s = 120.0,
                                double speed_kmh = 30.0);

/// Everything the queueing pipeline needs for one synthetic city.
struct Instance {
  geo::CityGraph city;
  geo::Design base;
  std::vector<double> lambda;  // calls per hour, per beat
  double mu = 2.0;             // per hour
  Eigen::MatrixXd tau;         // seconds
};

/// 5x5 grid, 3 column-band zones, heterogeneous rates drawn from `seed`.
Instance grid_fixture(std::uint64_t seed = 7);

/// 5x5 grid with 3 column-band zones (widths 2, 2, 1) and one heavy beat on
/// the border between the first two zones. Well balanced designs exist within
/// six shifts.
Instance planted_imbalance();

/// Arrival histories from the spatial-lag model with Gaussian noise whose
/// covariance is theta1 * exp(-theta * s_ij).
struct ArrivalTruth {
  Eigen::MatrixXd alpha;  // nonzero only on adjacency pairs
  double beta0 = 0.0;
  std::vector<Eigen::VectorXd> beta;  // t = 0..p
  double kernel_theta = 1.0;
  double kernel_theta1 = 1.0;
};

/// Random covariate table with `factors` standard-normal factors per beat-year.
estimate::CovariateTable random_covariates(const geo::CityGraph& city, std::span<const int> years,
                                           int factors, std::uint64_t seed);

estimate::RateHistory simulate_arrivals(const geo::CityGraph& city, const ArrivalTruth& truth,
                                        const estimate::CovariateTable& covariates,
                                        const Eigen::VectorXd& initial_rates, std::uint64_t seed);

struct CallLogOptions {
  int first_year = 2015;
  int years = 1;
  double travel_cv = 0.25;     // coefficient of variation of travel around tau
  std::uint64_t seed = 1;
  int priority_classes = 3;
  /// Optional per-year beat rates; empty means inst.lambda every year.
  std::vector<std::vector<double>> yearly_lambda;
};

/// Call log from an event-driven simulation of zone dispatch: nearest idle
/// unit, otherwise FCFS queue. Units travel from their home beat, or from the
/// last incident when taking a queued call. On-scene time is Exp(mu); a unit
/// is busy for travel plus on-scene time.
std::vector<estimate::CallRecord> simulate_call_log(const Instance& inst, const CallLogOptions& opts);

}  // namespace zonedesign::synthetic
