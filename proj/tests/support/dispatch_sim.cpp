#include "dispatch_sim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <random>

namespace simtest {

namespace {

struct Batch {
  std::vector<double> busy;
  Eigen::MatrixXd count;
  std::vector<double> travel;
  std::vector<double> dispatches;
  double calls = 0.0;
  double queued = 0.0;
};

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double se_of_mean(const std::vector<double>& v) {
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  const double n = static_cast<double>(v.size());
  return std::sqrt(ss / (n - 1.0) / n);
}

}  // namespace

SimResult simulate_zone(const zonedesign::queue::ZoneQueue& zq, const SimOptions& opts) {
  const int n = zq.units();
  const auto un = static_cast<std::size_t>(n);
  const double lambda = zq.total_lambda();
  const double mu = zq.mu();

  std::mt19937_64 rng(opts.seed);
  std::exponential_distribution<double> next_arrival(lambda);
  std::exponential_distribution<double> service(mu);
  std::discrete_distribution<int> beat_of(zq.lambdas().begin(), zq.lambdas().end());

  // Batches are equal windows of simulated time after the warm-up.
  const double horizon = static_cast<double>(opts.calls) / lambda;
  const int nb = opts.batches;
  const double width = horizon / nb;
  std::vector<Batch> batches(static_cast<std::size_t>(nb));
  for (auto& b : batches) {
    b.busy.assign(un, 0.0);
    b.count = Eigen::MatrixXd::Zero(n, n);
    b.travel.assign(un, 0.0);
    b.dispatches.assign(un, 0.0);
  }

  constexpr double kNever = std::numeric_limits<double>::infinity();
  std::vector<double> frees(un, kNever);
  std::vector<double> busy_since(un, 0.0);
  std::vector<int> location(un);
  for (int u = 0; u < n; ++u) location[static_cast<std::size_t>(u)] = u;
  std::deque<int> waiting;

  double t0 = -1.0;  // start of the measured window
  long arrivals = 0;
  double t = 0.0;
  double t_arrival = next_arrival(rng);

  auto batch_at = [&](double s) -> Batch* {
    if (t0 < 0.0 || s < t0) return nullptr;
    const auto k = static_cast<long>((s - t0) / width);
    return k < nb ? &batches[static_cast<std::size_t>(k)] : nullptr;
  };
  // Spreads the busy interval [a, b) over the batch windows it overlaps.
  auto add_busy = [&](int u, double a, double b) {
    if (t0 < 0.0) return;
    a = std::max(a, t0);
    b = std::min(b, t0 + horizon);
    if (!(a < b)) return;
    const long first = std::min(static_cast<long>((a - t0) / width), static_cast<long>(nb - 1));
    const long last = std::min(static_cast<long>((b - t0) / width), static_cast<long>(nb - 1));
    for (long k = first; k <= last; ++k) {
      const double lo = std::max(a, t0 + static_cast<double>(k) * width);
      const double hi = k == nb - 1 ? b : std::min(b, t0 + static_cast<double>(k + 1) * width);
      if (hi > lo) batches[static_cast<std::size_t>(k)].busy[static_cast<std::size_t>(u)] += hi - lo;
    }
  };
  auto dispatch = [&](int u, int beat, int from, double when) {
    const auto su = static_cast<std::size_t>(u);
    busy_since[su] = when;
    frees[su] = when + service(rng);
    location[su] = beat;
    if (Batch* b = batch_at(when)) {
      b->count(u, beat) += 1.0;
      b->travel[su] += zq.tau(from, beat);
      b->dispatches[su] += 1.0;
    }
  };

  for (;;) {
    const auto it = std::min_element(frees.begin(), frees.end());
    const int u = static_cast<int>(it - frees.begin());
    if (*it < t_arrival) {
      t = *it;
      const auto su = static_cast<std::size_t>(u);
      add_busy(u, busy_since[su], t);
      if (!waiting.empty()) {
        const int beat = waiting.front();
        waiting.pop_front();
        const int from = opts.origin == QueuedOrigin::random_beat ? beat_of(rng) : location[su];
        dispatch(u, beat, from, t);
      } else {
        frees[su] = kNever;
        location[su] = u;
      }
      continue;
    }
    t = t_arrival;
    if (t0 >= 0.0 && t >= t0 + horizon) break;
    ++arrivals;
    if (arrivals == opts.warmup_calls + 1) t0 = t;
    const int beat = beat_of(rng);
    Batch* b = batch_at(t);
    if (b) b->calls += 1.0;
    int chosen = -1;
    for (int v : zq.preference(beat)) {
      if (frees[static_cast<std::size_t>(v)] == kNever) {
        chosen = v;
        break;
      }
    }
    if (chosen >= 0) {
      dispatch(chosen, beat, chosen, t);
    } else {
      waiting.push_back(beat);
      if (b) b->queued += 1.0;
    }
    t_arrival = t + next_arrival(rng);
  }
  const double t_end = t0 + horizon;
  for (int v = 0; v < n; ++v) {
    const auto sv = static_cast<std::size_t>(v);
    if (frees[sv] != kNever) add_busy(v, busy_since[sv], t_end);
  }

  SimResult r;
  r.w.assign(un, 0.0);
  r.w_se.assign(un, 0.0);
  r.xi.assign(un, 0.0);
  r.xi_se.assign(un, 0.0);
  r.rho = Eigen::MatrixXd::Zero(n, n);
  r.rho_se = Eigen::MatrixXd::Zero(n, n);

  double total_calls = 0.0, total_queued = 0.0;
  Eigen::MatrixXd total_count = Eigen::MatrixXd::Zero(n, n);
  std::vector<double> total_busy(un, 0.0), total_travel(un, 0.0), total_disp(un, 0.0);
  for (const auto& b : batches) {
    total_calls += b.calls;
    total_queued += b.queued;
    total_count += b.count;
    for (std::size_t v = 0; v < un; ++v) {
      total_busy[v] += b.busy[v];
      total_travel[v] += b.travel[v];
      total_disp[v] += b.dispatches[v];
    }
  }
  r.calls = static_cast<long>(total_calls);
  r.p_queue = total_queued / total_calls;

  std::vector<double> col(static_cast<std::size_t>(nb));
  for (std::size_t v = 0; v < un; ++v) {
    r.w[v] = total_busy[v] / horizon;
    for (int k = 0; k < nb; ++k) col[static_cast<std::size_t>(k)] = batches[static_cast<std::size_t>(k)].busy[v] / width;
    r.w_se[v] = se_of_mean(col);

    r.xi[v] = total_travel[v] / total_disp[v];
    // Ratio estimator: linearize around the pooled value.
    for (int k = 0; k < nb; ++k) {
      const auto& b = batches[static_cast<std::size_t>(k)];
      col[static_cast<std::size_t>(k)] = (b.travel[v] - r.xi[v] * b.dispatches[v]) / (total_disp[v] / nb);
    }
    r.xi_se[v] = se_of_mean(col);
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      r.rho(i, j) = total_count(i, j) / total_calls;
      for (int k = 0; k < nb; ++k) {
        const auto& b = batches[static_cast<std::size_t>(k)];
        col[static_cast<std::size_t>(k)] = (b.count(i, j) - r.rho(i, j) * b.calls) / (total_calls / nb);
      }
      r.rho_se(i, j) = se_of_mean(col);
    }
  }
  return r;
}

}  // namespace simtest
