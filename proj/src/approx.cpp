#include "zonedesign/approx.hpp"

#include "zonedesign/analyze.hpp"

#include <algorithm>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace zonedesign::approx {

using nlohmann::json;

ZoneSolver::ZoneSolver(const geo::CityGraph& city, QueueInputs inputs, queue::SolveOptions opts)
    : city_(&city), inputs_(std::move(inputs)), opts_(opts) {
  const auto n = static_cast<Eigen::Index>(city.size());
  if (inputs_.lambda.size() != city.size()) throw ApproxError("arrival rates do not cover every beat");
  if (inputs_.tau.rows() != n || inputs_.tau.cols() != n) throw ApproxError("travel matrix does not match the city");
}

std::shared_ptr<const queue::PerformanceReport> ZoneSolver::solve(const std::vector<std::size_t>& members) const {
  {
    std::shared_lock lock(mutex_);
    auto it = cache_.find(members);
    if (it != cache_.end()) {
      ++hits_;
      return it->second;
    }
  }
  ++misses_;
  auto zq = queue::ZoneQueue::for_zone(members, inputs_.lambda, inputs_.mu, inputs_.tau);
  auto ss = queue::solve_steady_state(zq, opts_);
  auto report = std::make_shared<const queue::PerformanceReport>(queue::performance_report(zq, ss));
  std::unique_lock lock(mutex_);
  return cache_.emplace(members, std::move(report)).first->second;
}

std::vector<std::shared_ptr<const queue::PerformanceReport>> ZoneSolver::solve_design(const geo::Design& design) const {
  if (design.beat_count() != city_->size()) throw ApproxError("design does not match the city");
  std::vector<std::shared_ptr<const queue::PerformanceReport>> out;
  for (const auto& members : design.zones()) out.push_back(solve(members));
  return out;
}

std::vector<double> ZoneSolver::zone_workloads(const geo::Design& design) const {
  std::vector<double> w;
  for (const auto& r : solve_design(design)) w.push_back(r->zone_workload_hours_per_year);
  return w;
}

std::size_t ZoneSolver::cache_size() const {
  std::shared_lock lock(mutex_);
  return cache_.size();
}

// ---------------------------------------------------------------------------

namespace {

struct Move {
  std::size_t beat;
  int to;
};

std::vector<Move> boundary_moves(const geo::Design& d, const geo::CityGraph& city) {
  std::vector<Move> out;
  for (std::size_t i = 0; i < city.size(); ++i) {
    const int from = d.zone_of(i);
    std::set<int> targets;
    for (auto j : city.neighbors(i)) {
      if (d.zone_of(j) != from) targets.insert(d.zone_of(j));
    }
    if (targets.empty() || d.zone_size(from) < 2) continue;
    if (!geo::contiguous_without(city, d, from, i)) continue;
    for (int t : targets) out.push_back({i, t});
  }
  return out;
}

}  // namespace

std::vector<geo::Design> sample_perturbed_designs(const geo::Design& base, const geo::CityGraph& city,
                                                  std::size_t max_shifts, std::size_t count, std::uint64_t seed) {
  if (count < 1) throw ApproxError("sample count must be at least 1");
  if (base.beat_count() != city.size()) throw ApproxError("base design does not match the city");
  const auto contiguous = geo::is_contiguous(city, base);
  for (std::size_t k = 0; k < contiguous.size(); ++k) {
    if (!contiguous[k]) throw ApproxError("base zone " + std::to_string(k + 1) + " is not contiguous");
  }
  std::vector<geo::Design> out{base};
  if (max_shifts == 0 || count == 1) return out;
  if (boundary_moves(base, city).empty()) throw ApproxError("base design admits no boundary moves");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> shifts(1, max_shifts);
  std::set<std::vector<int>> seen{base.assignment()};
  const std::size_t max_attempts = 100 * count;
  for (std::size_t attempt = 0; attempt < max_attempts && out.size() < count; ++attempt) {
    geo::Design d = base;
    const std::size_t s = shifts(rng);
    for (std::size_t m = 0; m < s; ++m) {
      auto moves = boundary_moves(d, city);
      if (moves.empty()) break;
      std::uniform_int_distribution<std::size_t> pick(0, moves.size() - 1);
      const auto mv = moves[pick(rng)];
      d = d.with_move(mv.beat, mv.to);
    }
    const auto diff = geo::shift_count(base, d);
    if (diff == 0 || diff > max_shifts) continue;
    if (!seen.insert(d.assignment()).second) continue;
    out.push_back(std::move(d));
  }
  return out;
}

EvaluationBatch evaluate_designs(std::span<const geo::Design> designs, const geo::Design& base,
                                 const ZoneSolver& solver, unsigned threads) {
  std::vector<std::optional<DesignSample>> slots(designs.size());
  std::vector<std::string> reasons(designs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t s = next++; s < designs.size(); s = next++) {
      try {
        DesignSample smp{designs[s], solver.zone_workloads(designs[s]), geo::shift_count(base, designs[s])};
        slots[s] = std::move(smp);
      } catch (const queue::QueueError& e) {
        reasons[s] = "sample " + std::to_string(s) + " dropped: " + e.what();
      }
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(1, designs.size())));
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 1; t < threads; ++t) pool.emplace_back(work);
    work();
  }
  EvaluationBatch out;
  for (std::size_t s = 0; s < designs.size(); ++s) {
    if (slots[s]) {
      out.samples.push_back(std::move(*slots[s]));
    } else {
      out.dropped.push_back(reasons[s]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> LinearWorkloadModel::predict(const geo::Design& design) const {
  if (design.beat_count() != beat_count() || design.zone_count() != zone_count()) {
    throw ApproxError("design does not match the surrogate dimensions");
  }
  std::vector<double> w(static_cast<std::size_t>(zone_count()));
  for (int k = 0; k < zone_count(); ++k) w[static_cast<std::size_t>(k)] = theta0(k);
  for (std::size_t i = 0; i < beat_count(); ++i) {
    const int k = design.zone_of(i);
    w[static_cast<std::size_t>(k)] += theta(static_cast<Eigen::Index>(i), k);
  }
  return w;
}

LinearWorkloadModel fit_linear_model(std::span<const DesignSample> samples, const geo::Design& base) {
  const std::size_t n_beats = base.beat_count();
  const int zones = base.zone_count();
  if (samples.size() < n_beats + 1) {
    throw ApproxError("need at least " + std::to_string(n_beats + 1) + " samples, got " + std::to_string(samples.size()));
  }
  for (const auto& s : samples) {
    if (s.design.beat_count() != n_beats || s.design.zone_count() != zones ||
        s.workloads.size() != static_cast<std::size_t>(zones)) {
      throw ApproxError("sample dimensions do not match the base design");
    }
  }
  const bool all_same = std::all_of(samples.begin(), samples.end(),
                                    [&](const DesignSample& s) { return s.design == samples.front().design; });
  if (all_same) throw ApproxError("degenerate sample set: every sample has the same design");

  const auto n = static_cast<Eigen::Index>(samples.size());
  const auto ib = static_cast<Eigen::Index>(n_beats);
  LinearWorkloadModel m;
  m.theta0 = Eigen::VectorXd::Zero(zones);
  m.theta0_se = Eigen::VectorXd::Zero(zones);
  m.theta = Eigen::MatrixXd::Zero(ib, zones);
  m.theta_se = Eigen::MatrixXd::Zero(ib, zones);
  m.identified.setConstant(ib, zones, false);
  m.base_design = base;
  m.sample_count = samples.size();
  for (const auto& s : samples) m.validity_radius = std::max(m.validity_radius, s.shifts_from_base);

  double ssr_total = 0.0, sst_total = 0.0;
  for (int k = 0; k < zones; ++k) {
    Eigen::VectorXd y(n);
    Eigen::MatrixXd d(n, ib);
    for (Eigen::Index s = 0; s < n; ++s) {
      const auto& smp = samples[static_cast<std::size_t>(s)];
      y(s) = smp.workloads[static_cast<std::size_t>(k)];
      for (Eigen::Index i = 0; i < ib; ++i) d(s, i) = smp.design.zone_of(static_cast<std::size_t>(i)) == k ? 1.0 : 0.0;
    }
    std::vector<Eigen::Index> varying;
    for (Eigen::Index i = 0; i < ib; ++i) {
      if ((d.col(i).array() != d(0, i)).any()) varying.push_back(i);
    }
    // Rank detection on centred columns keeps the intercept out of the pivoting.
    std::vector<Eigen::Index> cols;
    if (!varying.empty()) {
      Eigen::MatrixXd xc(n, static_cast<Eigen::Index>(varying.size()));
      for (std::size_t c = 0; c < varying.size(); ++c) {
        xc.col(static_cast<Eigen::Index>(c)) = d.col(varying[c]).array() - d.col(varying[c]).mean();
      }
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xc);
      for (Eigen::Index r = 0; r < qr.rank(); ++r) cols.push_back(varying[static_cast<std::size_t>(qr.colsPermutation().indices()(r))]);
      std::sort(cols.begin(), cols.end());
    }
    const std::size_t fixed = n_beats - cols.size();
    if (fixed > 0) {
      std::ostringstream os;
      os << "zone " << k + 1 << ": " << fixed << " beat coefficient(s) unidentified by the samples and set to 0";
      m.warnings.push_back(os.str());
    }

    const auto p = static_cast<Eigen::Index>(cols.size()) + 1;
    Eigen::MatrixXd x(n, p);
    x.col(0).setOnes();
    for (std::size_t c = 0; c < cols.size(); ++c) x.col(static_cast<Eigen::Index>(c) + 1) = d.col(cols[c]);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(x);
    const Eigen::VectorXd coef = qr.solve(y);
    const Eigen::VectorXd resid = y - x * coef;
    const double ssr = resid.squaredNorm();
    const double sst = (y.array() - y.mean()).square().sum();
    ssr_total += ssr;
    sst_total += sst;
    m.zone_r_squared.push_back(sst > 0.0 ? std::clamp(1.0 - ssr / sst, 0.0, 1.0) : 1.0);

    const double sigma2 = n > p ? ssr / static_cast<double>(n - p) : 0.0;
    const Eigen::MatrixXd r = qr.matrixQR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
    const Eigen::MatrixXd rinv = r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
    const Eigen::VectorXd var = sigma2 * rinv.rowwise().squaredNorm();

    m.theta0(k) = coef(0);
    m.theta0_se(k) = std::sqrt(var(0));
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const auto e = static_cast<Eigen::Index>(c) + 1;
      m.theta(cols[c], k) = coef(e);
      m.theta_se(cols[c], k) = std::sqrt(var(e));
      m.identified(cols[c], k) = true;
    }
  }
  m.r_squared = sst_total > 0.0 ? std::clamp(1.0 - ssr_total / sst_total, 0.0, 1.0) : 1.0;
  return m;
}

double approx_objective(const geo::Design& design, const LinearWorkloadModel& model) {
  return analyze::workload_variance(model.predict(design));
}

double exact_objective(const geo::Design& design, const ZoneSolver& solver) {
  return analyze::workload_variance(solver.zone_workloads(design));
}

// ---------------------------------------------------------------------------

json LinearWorkloadModel::to_json(const geo::CityGraph& city) const {
  if (city.size() != beat_count()) throw ApproxError("surrogate does not match the city");
  json beats = json::object();
  json design = json::object();
  for (std::size_t i = 0; i < beat_count(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    json th = json::array(), se = json::array(), id = json::array();
    for (int k = 0; k < zone_count(); ++k) {
      th.push_back(theta(r, k));
      se.push_back(theta_se(r, k));
      id.push_back(static_cast<bool>(identified(r, k)));
    }
    beats[city.beat_id(i)] = {{"theta", th}, {"se", se}, {"identified", id}};
    design[city.beat_id(i)] = base_design.zone_of(i) + 1;
  }
  return {{"zones", zone_count()},
          {"r_squared", r_squared},
          {"zone_r_squared", zone_r_squared},
          {"validity_radius", validity_radius},
          {"sample_count", sample_count},
          {"theta0", std::vector<double>(theta0.data(), theta0.data() + theta0.size())},
          {"theta0_se", std::vector<double>(theta0_se.data(), theta0_se.data() + theta0_se.size())},
          {"beats", beats},
          {"base_design", design},
          {"warnings", warnings}};
}

LinearWorkloadModel LinearWorkloadModel::from_json(const json& j, const geo::CityGraph& city) {
  try {
    LinearWorkloadModel m;
    const int zones = j.at("zones").get<int>();
    const auto t0 = j.at("theta0").get<std::vector<double>>();
    const auto t0se = j.at("theta0_se").get<std::vector<double>>();
    if (zones < 1 || t0.size() != static_cast<std::size_t>(zones) || t0se.size() != t0.size()) {
      throw ApproxError("surrogate zone count is inconsistent");
    }
    const auto& beats = j.at("beats");
    if (beats.size() != city.size()) throw ApproxError("surrogate beats do not match the city");
    const auto ib = static_cast<Eigen::Index>(city.size());
    m.theta0 = Eigen::Map<const Eigen::VectorXd>(t0.data(), zones);
    m.theta0_se = Eigen::Map<const Eigen::VectorXd>(t0se.data(), zones);
    m.theta.resize(ib, zones);
    m.theta_se.resize(ib, zones);
    m.identified.resize(ib, zones);
    std::vector<int> zone_of(city.size());
    const auto& design = j.at("base_design");
    for (std::size_t i = 0; i < city.size(); ++i) {
      const auto& id = city.beat_id(i);
      if (!beats.contains(id) || !design.contains(id)) throw ApproxError("surrogate is missing beat " + id);
      const auto& b = beats.at(id);
      const auto r = static_cast<Eigen::Index>(i);
      for (int k = 0; k < zones; ++k) {
        m.theta(r, k) = b.at("theta").at(static_cast<std::size_t>(k)).get<double>();
        m.theta_se(r, k) = b.at("se").at(static_cast<std::size_t>(k)).get<double>();
        m.identified(r, k) = b.at("identified").at(static_cast<std::size_t>(k)).get<bool>();
      }
      zone_of[i] = design.at(id).get<int>() - 1;
    }
    m.base_design = geo::Design(std::move(zone_of), zones);
    m.r_squared = j.at("r_squared").get<double>();
    m.zone_r_squared = j.at("zone_r_squared").get<std::vector<double>>();
    m.validity_radius = j.at("validity_radius").get<std::size_t>();
    m.sample_count = j.at("sample_count").get<std::size_t>();
    m.warnings = j.value("warnings", std::vector<std::string>{});
    return m;
  } catch (const json::exception& e) {
    throw ApproxError(std::string("malformed surrogate JSON: ") + e.what());
  } catch (const geo::InvalidDesign& e) {
    throw ApproxError(std::string("surrogate base design is invalid: ") + e.what());
  }
}

}  // namespace zonedesign::approx
