#include "zonedesign/queue.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <bit>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace zonedesign::queue {

NotConverged::NotConverged(long iterations, double residual)
    : QueueError("power iteration did not converge after " + std::to_string(iterations) +
                 " iterations (last sup-norm change " + std::to_string(residual) + ")"),
      iterations_(iterations),
      residual_(residual) {}

ZoneQueue::ZoneQueue(std::vector<double> lambda, double mu, Eigen::MatrixXd tau)
    : lambda_(std::move(lambda)), mu_(mu), tau_(std::move(tau)) {
  const auto n = lambda_.size();
  if (n == 0) throw QueueError("zone has no units");
  if (n > static_cast<std::size_t>(kMaxUnits)) {
    throw InstanceTooLarge("zone has " + std::to_string(n) + " units; the hypercube solver supports at most " +
                           std::to_string(kMaxUnits));
  }
  if (!(mu_ > 0.0) || !std::isfinite(mu_)) throw QueueError("service rate must be positive");
  if (static_cast<std::size_t>(tau_.rows()) != n || static_cast<std::size_t>(tau_.cols()) != n) {
    throw QueueError("travel matrix does not match the zone size");
  }
  for (double l : lambda_) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw QueueError("arrival rates must be finite and >= 0");
    total_lambda_ += l;
  }
  for (Eigen::Index i = 0; i < tau_.size(); ++i) {
    const double t = tau_.data()[i];
    if (!(t >= 0.0) || !std::isfinite(t)) throw QueueError("travel times must be finite and >= 0");
  }
  if (!(total_lambda_ < static_cast<double>(n) * mu_)) {
    std::ostringstream os;
    os << "unstable zone: lambda = " << total_lambda_ << " >= N mu = " << static_cast<double>(n) * mu_;
    throw UnstableZone(os.str());
  }
  preference_.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    auto& p = preference_[j];
    p.resize(n);
    std::iota(p.begin(), p.end(), 0);
    std::stable_sort(p.begin(), p.end(), [&](int a, int b) { return tau_(a, j) < tau_(b, j); });
  }
}

ZoneQueue ZoneQueue::for_zone(std::span<const std::size_t> beats, std::span<const double> lambda,
                              double mu, const Eigen::MatrixXd& tau) {
  const auto n = beats.size();
  std::vector<double> l(n);
  Eigen::MatrixXd t(n, n);
  for (std::size_t a = 0; a < n; ++a) {
    l[a] = lambda[beats[a]];
    for (std::size_t b = 0; b < n; ++b) {
      t(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
          tau(static_cast<Eigen::Index>(beats[a]), static_cast<Eigen::Index>(beats[b]));
    }
  }
  return ZoneQueue(std::move(l), mu, std::move(t));
}

int HypercubeState::busy_count() const { return std::popcount(index); }

namespace {

inline int first_idle(const ZoneQueue& zq, std::uint32_t state, int beat) {
  for (int u : zq.preference(beat)) {
    if (!((state >> u) & 1u)) return u;
  }
  return -1;
}

}  // namespace

int optimal_dispatch(const ZoneQueue& zq, HypercubeState state, int call_beat) {
  if (call_beat < 0 || call_beat >= zq.units()) throw QueueError("call beat outside the zone");
  if (state.index >= zq.state_count()) throw QueueError("state index out of range");
  const int u = first_idle(zq, state.index, call_beat);
  if (u < 0) throw NoIdleUnit("all units busy; the call joins the FCFS queue");
  return u;
}

// ---------------------------------------------------------------------------

double RateMatrix::at(std::size_t r, std::size_t c) const {
  for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
    if (col[k] == c) return val[k];
  }
  return 0.0;
}

void RateMatrix::write_matrix_market(std::ostream& os) const {
  os << "%%MatrixMarket matrix coordinate real general\n";
  os << n << ' ' << n << ' ' << nonzeros() << '\n';
  os << std::setprecision(17);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
      os << r + 1 << ' ' << col[k] + 1 << ' ' << val[k] << '\n';
    }
  }
}

RateMatrix build_transition_matrix(const ZoneQueue& zq) {
  const int n_units = zq.units();
  const std::uint32_t states = zq.state_count();
  RateMatrix q;
  q.n = states;
  q.row_ptr.reserve(states + 1);
  q.row_ptr.push_back(0);
  q.col.reserve(static_cast<std::size_t>(states) * (n_units + 1));
  q.val.reserve(static_cast<std::size_t>(states) * (n_units + 1));

  std::vector<double> up(static_cast<std::size_t>(n_units));
  std::vector<std::pair<std::uint32_t, double>> row;
  for (std::uint32_t s = 0; s < states; ++s) {
    std::fill(up.begin(), up.end(), 0.0);
    if (s != zq.all_busy()) {
      for (int j = 0; j < n_units; ++j) {
        if (zq.lambda(j) > 0.0) up[static_cast<std::size_t>(first_idle(zq, s, j))] += zq.lambda(j);
      }
    }
    row.clear();
    double out = 0.0;
    for (int u = 0; u < n_units; ++u) {
      const std::uint32_t bit = std::uint32_t{1} << u;
      if (s & bit) {
        row.emplace_back(s - bit, zq.mu());
        out += zq.mu();
      } else if (up[static_cast<std::size_t>(u)] > 0.0) {
        row.emplace_back(s + bit, up[static_cast<std::size_t>(u)]);
        out += up[static_cast<std::size_t>(u)];
      }
    }
    row.emplace_back(s, -out);
    std::sort(row.begin(), row.end());
    for (const auto& [c, v] : row) {
      q.col.push_back(c);
      q.val.push_back(v);
    }
    q.row_ptr.push_back(q.col.size());
  }
  return q;
}

// ---------------------------------------------------------------------------

ErlangC erlang_c(double lambda, double mu, int servers) {
  if (!(lambda < servers * mu)) throw UnstableZone("unstable M/M/c system");
  ErlangC e;
  e.offered = lambda / mu;
  e.r = lambda / (servers * mu);
  // term_s = a^s / s!
  std::vector<double> term(static_cast<std::size_t>(servers) + 1);
  term[0] = 1.0;
  for (int s = 1; s <= servers; ++s) term[static_cast<std::size_t>(s)] = term[static_cast<std::size_t>(s - 1)] * e.offered / s;
  double norm = 0.0;
  for (int s = 0; s < servers; ++s) norm += term[static_cast<std::size_t>(s)];
  norm += term[static_cast<std::size_t>(servers)] / (1.0 - e.r);
  e.p0 = 1.0 / norm;
  e.busy.resize(static_cast<std::size_t>(servers) + 1);
  for (int s = 0; s <= servers; ++s) e.busy[static_cast<std::size_t>(s)] = e.p0 * term[static_cast<std::size_t>(s)];
  const double full = e.busy.back();
  e.p_s1 = full * e.r;
  e.tail_mass = full * e.r / (1.0 - e.r);
  return e;
}

SteadyState solve_steady_state(const ZoneQueue& zq, const SolveOptions& opts) {
  if (!(opts.tol > 0.0)) throw QueueError("tolerance must be positive");
  const RateMatrix q = build_transition_matrix(zq);
  const std::size_t states = q.n;
  const std::size_t full = states - 1;
  const std::size_t tail = states;  // lumped saturated states
  const double n_mu = zq.units() * zq.mu();
  const double lambda = zq.total_lambda();
  const double r = zq.load_factor();
  const double tail_exit = n_mu * (1.0 - r);

  double gamma = std::max(tail_exit, n_mu + lambda);
  for (std::size_t s = 0; s < states; ++s) gamma = std::max(gamma, -q.at(s, s));

  std::vector<double> scaled(q.val.size());
  for (std::size_t k = 0; k < q.val.size(); ++k) scaled[k] = q.val[k] / gamma;
  const double up_boundary = lambda / gamma;
  const double down_boundary = tail_exit / gamma;

  std::vector<double> pi(states + 1, 1.0 / static_cast<double>(states + 1));
  std::vector<double> next(states + 1);
  long it = 0;
  double change = std::numeric_limits<double>::infinity();
  while (it < opts.max_iter) {
    ++it;
    std::copy(pi.begin(), pi.end(), next.begin());
    for (std::size_t s = 0; s < states; ++s) {
      const double p = pi[s];
      if (p == 0.0) continue;
      for (std::size_t k = q.row_ptr[s]; k < q.row_ptr[s + 1]; ++k) next[q.col[k]] += p * scaled[k];
    }
    const double f = pi[full] * up_boundary;
    const double b = pi[tail] * down_boundary;
    next[full] += b - f;
    next[tail] += f - b;

    change = 0.0;
    for (std::size_t s = 0; s <= states; ++s) change = std::max(change, std::abs(next[s] - pi[s]));
    pi.swap(next);
    if (change < opts.tol) break;
  }
  if (!(change < opts.tol)) throw NotConverged(it, change);

  const ErlangC e = erlang_c(lambda, zq.mu(), zq.units());
  double unsat = 0.0;
  for (std::size_t s = 0; s < states; ++s) unsat += pi[s];

  SteadyState ss;
  ss.pi.assign(pi.begin(), pi.begin() + static_cast<std::ptrdiff_t>(states));
  const double scale = (1.0 - e.tail_mass) / unsat;
  for (double& p : ss.pi) p *= scale;
  ss.tail_mass = e.tail_mass;
  ss.queue_factor = r;
  ss.erlang_p0 = e.p0;
  ss.p_s1 = e.p_s1;
  ss.iterations = it;
  ss.residual = change;
  return ss;
}

double truncation_bias_bound(const ZoneQueue& zq, int queue_cap) {
  return std::pow(zq.load_factor(), queue_cap);
}

SteadyState oracle_steady_state(const ZoneQueue& zq, int queue_cap) {
  if (zq.units() > 12) throw InstanceTooLarge("oracle solve limited to N <= 12");
  if (queue_cap < 1) throw QueueError("queue cap must be >= 1");
  const RateMatrix q = build_transition_matrix(zq);
  const Eigen::Index states = static_cast<Eigen::Index>(q.n);
  const Eigen::Index size = states + queue_cap;
  const Eigen::Index full = states - 1;
  const double lambda = zq.total_lambda();
  const double n_mu = zq.units() * zq.mu();

  Eigen::MatrixXd gen = Eigen::MatrixXd::Zero(size, size);
  for (Eigen::Index s = 0; s < states; ++s) {
    for (std::size_t k = q.row_ptr[static_cast<std::size_t>(s)]; k < q.row_ptr[static_cast<std::size_t>(s) + 1]; ++k) {
      gen(s, static_cast<Eigen::Index>(q.col[k])) = q.val[k];
    }
  }
  // Saturated chain S_1..S_cap at indices states..size-1.
  gen(full, states) += lambda;
  gen(full, full) -= lambda;
  for (Eigen::Index m = 0; m < queue_cap; ++m) {
    const Eigen::Index idx = states + m;
    const Eigen::Index below = m == 0 ? full : idx - 1;
    gen(idx, below) += n_mu;
    gen(idx, idx) -= n_mu;
    if (m + 1 < queue_cap) {
      gen(idx, idx + 1) += lambda;
      gen(idx, idx) -= lambda;
    }
  }

  Eigen::MatrixXd a = gen.transpose();
  a.row(size - 1).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(size);
  rhs(size - 1) = 1.0;
  const Eigen::VectorXd x = a.fullPivLu().solve(rhs);

  SteadyState ss;
  ss.pi.resize(static_cast<std::size_t>(states));
  for (Eigen::Index s = 0; s < states; ++s) ss.pi[static_cast<std::size_t>(s)] = x(s);
  ss.tail_mass = x.tail(queue_cap).sum();
  ss.p_s1 = x(states);
  ss.queue_factor = zq.load_factor();
  ss.erlang_p0 = x(0);
  ss.residual = (x.transpose() * gen).cwiseAbs().maxCoeff();
  return ss;
}

// ---------------------------------------------------------------------------

PerformanceReport performance_report(const ZoneQueue& zq, const SteadyState& ss) {
  const int n = zq.units();
  const std::uint32_t states = zq.state_count();
  if (ss.pi.size() != states) throw QueueError("steady state does not match the zone");
  const double lambda = zq.total_lambda();
  const double r = zq.load_factor();
  const double p_full = ss.pi.back();

  PerformanceReport rep;
  rep.p_queue = ss.tail_mass + p_full;

  // occupancy(i, j): probability mass of non-saturated states in which unit i
  // is the nearest idle unit for beat j.
  Eigen::MatrixXd occupancy = Eigen::MatrixXd::Zero(n, n);
  rep.unit_workload.assign(static_cast<std::size_t>(n), ss.tail_mass);
  for (std::uint32_t s = 0; s < states; ++s) {
    const double p = ss.pi[s];
    for (int u = 0; u < n; ++u) {
      if ((s >> u) & 1u) rep.unit_workload[static_cast<std::size_t>(u)] += p;
    }
    if (s == zq.all_busy()) continue;
    for (int j = 0; j < n; ++j) occupancy(first_idle(zq, s, j), j) += p;
  }

  rep.rho_direct = Eigen::MatrixXd::Zero(n, n);
  rep.rho_queued = Eigen::MatrixXd::Zero(n, n);
  if (lambda > 0.0) {
    for (int j = 0; j < n; ++j) {
      const double share = zq.lambda(j) / lambda;
      rep.rho_direct.col(j) = share * occupancy.col(j);
      rep.rho_queued.col(j).setConstant(share * rep.p_queue / n);
    }
  }
  rep.rho = rep.rho_direct + rep.rho_queued;

  const Eigen::MatrixXd& tau = zq.tau();
  rep.tq_bar = 0.0;
  if (lambda > 0.0) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) rep.tq_bar += zq.lambda(i) * zq.lambda(j) * tau(i, j);
    }
    rep.tq_bar /= lambda * lambda;
  }

  rep.xi.resize(static_cast<std::size_t>(n));
  const double queued_share = rep.p_queue / n;
  for (int i = 0; i < n; ++i) {
    double num = queued_share * rep.tq_bar;
    double den = queued_share;
    for (int j = 0; j < n; ++j) {
      num += rep.rho_direct(i, j) * tau(i, j);
      den += rep.rho_direct(i, j);
    }
    rep.xi[static_cast<std::size_t>(i)] = den > 0.0 ? num / den : 0.0;
  }

  rep.travel_by_beat.resize(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    double num = 0.0;
    double den = 0.0;
    double queued = 0.0;
    for (int i = 0; i < n; ++i) {
      num += occupancy(i, j) * tau(i, j);
      den += occupancy(i, j);
      if (lambda > 0.0) queued += zq.lambda(i) * tau(i, j) / lambda;
    }
    const double direct = den > 0.0 ? num / den : 0.0;
    rep.travel_by_beat[static_cast<std::size_t>(j)] = direct * (1.0 - rep.p_queue) + queued * rep.p_queue;
  }
  rep.travel_zone = (rep.rho_direct.array() * tau.array()).sum() + rep.p_queue * rep.tq_bar;

  // sum_{m>=1} (m+1) r^(m-1) = 1/(1-r)^2 + 1/(1-r)
  const double geometric = 1.0 / ((1.0 - r) * (1.0 - r)) + 1.0 / (1.0 - r);
  const double delay_hours = (ss.p_s1 * geometric + p_full) / (zq.mu() * n);
  rep.mean_queue_delay = delay_hours * kSecondsPerHour;
  rep.response_by_beat.resize(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    rep.response_by_beat[static_cast<std::size_t>(j)] = rep.travel_by_beat[static_cast<std::size_t>(j)] + rep.mean_queue_delay;
  }
  rep.response_zone = rep.travel_zone + rep.mean_queue_delay;

  rep.zone_workload = std::accumulate(rep.unit_workload.begin(), rep.unit_workload.end(), 0.0);
  rep.zone_workload_hours_per_year = rep.zone_workload * kHoursPerYear;
  return rep;
}

}  // namespace zonedesign::queue
