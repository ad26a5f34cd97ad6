#include "zonedesign/synthetic.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <queue>
#include <random>
#include <stdexcept>

namespace zonedesign::synthetic {

geo::CityGraph grid_city(int rows, int cols, double cell_km) {
  if (rows < 1 || cols < 1 || rows > 9 || cols > 99) throw std::invalid_argument("grid size out of range");
  std::vector<geo::BeatSpec> beats;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      char id[8];
      std::snprintf(id, sizeof id, "%d%02d", r + 1, c + 1);
      geo::BeatSpec b;
      b.id = id;
      const double x0 = c * cell_km;
      const double y0 = -(r + 1) * cell_km;  // row 0 on top
      b.geometry.parts.push_back({{x0, y0}, {x0 + cell_km, y0}, {x0 + cell_km, y0 + cell_km}, {x0, y0 + cell_km}});
      b.area_km2 = cell_km * cell_km;
      b.centroid = {x0 + 0.5 * cell_km, y0 + 0.5 * cell_km};
      beats.push_back(std::move(b));
    }
  }
  std::vector<std::pair<std::string, std::string>> adjacency;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const auto& id = beats[grid_index(r, c, cols)].id;
      if (c + 1 < cols) adjacency.emplace_back(id, beats[grid_index(r, c + 1, cols)].id);
      if (r + 1 < rows) adjacency.emplace_back(id, beats[grid_index(r + 1, c, cols)].id);
    }
  }
  return geo::CityGraph(std::move(beats), adjacency);
}

geo::Design column_bands(int rows, int cols, int zones) {
  std::vector<int> z(static_cast<std::size_t>(rows * cols));
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) z[grid_index(r, c, cols)] = c * zones / cols;
  }
  return geo::Design(std::move(z), zones);
}

Eigen::MatrixXd distance_travel(const geo::CityGraph& city, double overhead_s, double speed_kmh) {
  const auto n = static_cast<Eigen::Index>(city.size());
  Eigen::MatrixXd t(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      t(i, j) = overhead_s + 3600.0 * city.dist(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) / speed_kmh;
    }
  }
  return t;
}

namespace {
constexpr double kMeanOnSceneMinutes = 31.2;
}

Instance grid_fixture(std::uint64_t seed) {
  Instance inst{grid_city(5, 5), column_bands(5, 5, 3), {}, 60.0 / kMeanOnSceneMinutes, {}};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> rate(0.15, 0.6);
  inst.lambda.resize(inst.city.size());
  for (auto& l : inst.lambda) l = rate(rng);
  inst.tau = distance_travel(inst.city);
  return inst;
}

Instance planted_imbalance() {
  Instance inst{grid_city(5, 5), geo::Design(std::vector<int>(25, 0), 1), {}, 60.0 / kMeanOnSceneMinutes, {}};
  std::vector<int> z(25);
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 5; ++c) z[grid_index(r, c, 5)] = c < 2 ? 0 : c < 4 ? 1 : 2;
  }
  inst.base = geo::Design(std::move(z), 3);
  inst.lambda.assign(25, 0.3);
  inst.lambda[grid_index(2, 1, 5)] = 1.2;
  inst.tau = distance_travel(inst.city);
  return inst;
}

estimate::CovariateTable random_covariates(const geo::CityGraph& city, std::span<const int> years,
                                           int factors, std::uint64_t seed) {
  estimate::CovariateTable t;
  for (int m = 0; m < factors; ++m) t.factors.push_back("x" + std::to_string(m + 1));
  t.years.assign(years.begin(), years.end());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  for (std::size_t l = 0; l < years.size(); ++l) {
    Eigen::MatrixXd v(static_cast<Eigen::Index>(city.size()), factors);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = z(rng);
    t.values.push_back(std::move(v));
  }
  return t;
}

estimate::RateHistory simulate_arrivals(const geo::CityGraph& city, const ArrivalTruth& truth,
                                        const estimate::CovariateTable& covariates,
                                        const Eigen::VectorXd& initial_rates, std::uint64_t seed) {
  const auto n = static_cast<Eigen::Index>(city.size());
  const auto years = covariates.years.size();
  estimate::RateHistory h;
  h.years = covariates.years;
  h.rates = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(years));
  h.rates.col(0) = initial_rates;
  const Eigen::MatrixXd l = estimate::kernel_correlation(city, truth.kernel_theta).llt().matrixL();
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(Eigen::MatrixXd::Identity(n, n) - truth.alpha);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  for (std::size_t y = 1; y < years; ++y) {
    Eigen::VectorXd rhs = truth.beta0 * h.rates.col(static_cast<Eigen::Index>(y - 1));
    for (std::size_t t = 0; t < truth.beta.size(); ++t) {
      const std::size_t src = y >= t ? y - t : 0;
      rhs += covariates.values[src] * truth.beta[t];
    }
    Eigen::VectorXd e(n);
    for (Eigen::Index i = 0; i < n; ++i) e(i) = z(rng);
    rhs += std::sqrt(truth.kernel_theta1) * (l * e);
    h.rates.col(static_cast<Eigen::Index>(y)) = lu.solve(rhs);
  }
  return h;
}

// ---------------------------------------------------------------------------

namespace {

struct PendingCall {
  double t;  // hours since simulation start
  std::size_t beat;
  int priority;
};

struct Completion {
  double t;
  int unit;
  bool operator>(const Completion& o) const { return t > o.t || (t == o.t && unit > o.unit); }
};

Timestamp at_hours(Timestamp origin, double hours) {
  return origin + std::chrono::milliseconds(static_cast<long long>(std::llround(hours * 3'600'000.0)));
}

}  // namespace

std::vector<estimate::CallRecord> simulate_call_log(const Instance& inst, const CallLogOptions& opts) {
  if (opts.years < 1) throw std::invalid_argument("call log needs at least one year");
  std::mt19937_64 rng(opts.seed);
  std::vector<estimate::CallRecord> out;
  const Timestamp origin = utc_time(opts.first_year, 1, 1);
  std::vector<double> year_start;
  for (int y = 0; y <= opts.years; ++y) {
    year_start.push_back(seconds_between(origin, utc_time(opts.first_year + y, 1, 1)) / 3600.0);
  }
  std::exponential_distribution<double> on_scene(inst.mu);
  std::uniform_int_distribution<int> prio(1, std::max(1, opts.priority_classes));
  const double shape = opts.travel_cv > 0 ? 1.0 / (opts.travel_cv * opts.travel_cv) : 0.0;
  auto travel = [&](double mean_s) {
    if (shape == 0.0 || mean_s <= 0.0) return mean_s;
    std::gamma_distribution<double> g(shape, mean_s / shape);
    return g(rng);
  };

  for (const auto& beats : inst.base.zones()) {
    const int n = static_cast<int>(beats.size());
    std::vector<char> busy(static_cast<std::size_t>(n), 0);
    std::vector<std::size_t> last_beat(beats.begin(), beats.end());
    std::priority_queue<Completion, std::vector<Completion>, std::greater<>> done;
    std::deque<PendingCall> waiting;

    auto dispatch = [&](int unit, const PendingCall& call, double now, std::size_t from) {
      const double tr_s = travel(inst.tau(static_cast<Eigen::Index>(from), static_cast<Eigen::Index>(call.beat)));
      const double scene_h = on_scene(rng);
      estimate::CallRecord rec;
      rec.call_time = at_hours(origin, call.t);
      rec.dispatch_time = at_hours(origin, now);
      rec.arrive_time = at_hours(origin, now + tr_s / 3600.0);
      rec.clear_time = at_hours(origin, now + tr_s / 3600.0 + scene_h);
      rec.origin_beat = from;
      rec.incident_beat = call.beat;
      rec.priority = call.priority;
      out.push_back(rec);
      busy[static_cast<std::size_t>(unit)] = 1;
      last_beat[static_cast<std::size_t>(unit)] = call.beat;
      done.push({now + tr_s / 3600.0 + scene_h, unit});
    };
    auto drain_until = [&](double t) {
      while (!done.empty() && done.top().t <= t) {
        const Completion c = done.top();
        done.pop();
        busy[static_cast<std::size_t>(c.unit)] = 0;
        if (!waiting.empty()) {
          const PendingCall call = waiting.front();
          waiting.pop_front();
          dispatch(c.unit, call, c.t, last_beat[static_cast<std::size_t>(c.unit)]);
        }
      }
    };

    for (int y = 0; y < opts.years; ++y) {
      const auto& rates = opts.yearly_lambda.empty() ? inst.lambda : opts.yearly_lambda.at(static_cast<std::size_t>(y));
      std::vector<double> w;
      double total = 0.0;
      for (auto b : beats) {
        w.push_back(rates.at(b));
        total += rates.at(b);
      }
      if (total <= 0.0) continue;
      std::discrete_distribution<int> pick(w.begin(), w.end());
      std::exponential_distribution<double> gap(total);
      double t = year_start[static_cast<std::size_t>(y)];
      const double end = year_start[static_cast<std::size_t>(y) + 1];
      while ((t += gap(rng)) < end) {
        drain_until(t);
        const int local = pick(rng);
        const PendingCall call{t, beats[static_cast<std::size_t>(local)], prio(rng)};
        int best = -1;
        for (int u = 0; u < n; ++u) {
          if (busy[static_cast<std::size_t>(u)]) continue;
          if (best < 0 || inst.tau(static_cast<Eigen::Index>(beats[static_cast<std::size_t>(u)]), static_cast<Eigen::Index>(call.beat)) <
                              inst.tau(static_cast<Eigen::Index>(beats[static_cast<std::size_t>(best)]), static_cast<Eigen::Index>(call.beat))) {
            best = u;
          }
        }
        if (best < 0) {
          waiting.push_back(call);
        } else {
          dispatch(best, call, t, beats[static_cast<std::size_t>(best)]);
        }
      }
    }
    drain_until(std::numeric_limits<double>::infinity());
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const estimate::CallRecord& a, const estimate::CallRecord& b) { return a.call_time < b.call_time; });
  return out;
}

}  // namespace zonedesign::synthetic
