#include "zonedesign/optimize.hpp"

#include "zonedesign/analyze.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <queue>
#include <random>
#include <set>
#include <sstream>

namespace zonedesign::optimize {

using nlohmann::json;

namespace {

std::string zone_label(int k) { return "zone " + std::to_string(k + 1); }

}  // namespace

geo::DesignConstraints default_constraints(const geo::CityGraph& city, const geo::Design& base,
                                           std::size_t max_shifts) {
  if (base.beat_count() != city.size()) throw OptimizeError("base design does not match the city");
  const auto n = city.size();
  const auto k = static_cast<std::size_t>(base.zone_count());
  geo::DesignConstraints c;
  c.max_shifts = max_shifts;
  c.n_max = (3 * n + 2 * k - 1) / (2 * k);  // ceil(1.5 n / k)
  double z1 = 0.0, z2 = 0.0;
  for (const auto& m : base.zones()) {
    c.n_max = std::max(c.n_max, m.size());
    const auto s = geo::zone_shape(city, m);
    z1 = std::max(z1, s.max_dist_sq);
    z2 = std::max(z2, s.max_dist_sq / s.area);
  }
  if (z1 == 0.0) {
    // Every base zone is a single beat; fall back to the largest adjacent-pair distance.
    for (const auto& [i, j] : city.edges()) z1 = std::max(z1, city.dist_sq(i, j));
    double min_area = city.area(0);
    for (std::size_t i = 0; i < n; ++i) min_area = std::min(min_area, city.area(i));
    z2 = z1 / (2.0 * min_area);
  }
  c.zeta1 = 1.2 * z1;
  c.zeta2 = 1.2 * z2;
  return c;
}

std::string to_string(ConstraintKind kind) {
  switch (kind) {
    case ConstraintKind::contiguity: return "contiguity";
    case ConstraintKind::compactness: return "compactness";
    case ConstraintKind::zone_size: return "zone_size";
    case ConstraintKind::shift_budget: return "shift_budget";
    case ConstraintKind::pin: return "pin";
    case ConstraintKind::forbidden_transfer: return "forbidden_transfer";
  }
  return "unknown";
}

std::vector<ConstraintViolation> check_constraints(const geo::CityGraph& city, const geo::Design& design,
                                                   const geo::Design& base, const geo::DesignConstraints& c) {
  if (design.beat_count() != city.size() || base.beat_count() != city.size() ||
      design.zone_count() != base.zone_count()) {
    throw OptimizeError("design, base and city dimensions differ");
  }
  std::vector<ConstraintViolation> out;
  const auto zones = design.zones();
  for (int k = 0; k < design.zone_count(); ++k) {
    const auto& m = zones[static_cast<std::size_t>(k)];
    if (!geo::zone_contiguous(city, m)) {
      out.push_back({ConstraintKind::contiguity, k, {}, zone_label(k) + " is not contiguous"});
    }
    if (!geo::shape_ok(geo::zone_shape(city, m), c.zeta1, c.zeta2)) {
      out.push_back({ConstraintKind::compactness, k, {}, zone_label(k) + " exceeds the compactness bounds"});
    }
    if (c.n_max > 0 && m.size() > c.n_max) {
      out.push_back({ConstraintKind::zone_size, k, {},
                     zone_label(k) + " has " + std::to_string(m.size()) + " beats (n_max " + std::to_string(c.n_max) + ")"});
    }
  }
  const auto shifts = geo::shift_count(base, design);
  if (shifts > c.max_shifts) {
    out.push_back({ConstraintKind::shift_budget, -1, {},
                   std::to_string(shifts) + " beats moved, budget " + std::to_string(c.max_shifts)});
  }
  for (const auto& [beat, zone] : c.pinned) {
    if (design.zone_of(beat) != zone) {
      out.push_back({ConstraintKind::pin, zone, city.beat_id(beat),
                     "beat " + city.beat_id(beat) + " is pinned to " + zone_label(zone)});
    }
  }
  for (std::size_t i = 0; i < city.size(); ++i) {
    const int a = base.zone_of(i), b = design.zone_of(i);
    if (a != b && c.forbidden_transfers.count({a, b})) {
      out.push_back({ConstraintKind::forbidden_transfer, b, city.beat_id(i),
                     "beat " + city.beat_id(i) + " moved from " + zone_label(a) + " to " + zone_label(b) +
                         ", a forbidden transfer"});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

FlowCertificate verify_flow_contiguity(const geo::CityGraph& city, const geo::Design& design, std::size_t n_max) {
  FlowCertificate cert;
  cert.feasible = true;
  for (const auto& members : design.zones()) {
    std::map<std::pair<std::size_t, std::size_t>, double> flows;
    const std::size_t sink = members.front();
    cert.sinks.push_back(sink);
    if (members.size() > n_max) cert.feasible = false;
    // BFS tree rooted at the sink; each beat sends its subtree size to its parent.
    std::vector<char> in(city.size(), 0);
    for (auto i : members) in[i] = 1;
    std::vector<std::size_t> parent(city.size(), city.size()), order;
    std::queue<std::size_t> q;
    q.push(sink);
    parent[sink] = sink;
    while (!q.empty()) {
      const auto u = q.front();
      q.pop();
      order.push_back(u);
      for (auto v : city.neighbors(u)) {
        if (in[v] && parent[v] == city.size()) {
          parent[v] = u;
          q.push(v);
        }
      }
    }
    if (order.size() != members.size()) cert.feasible = false;
    std::vector<double> load(city.size(), 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const auto u = *it;
      if (u == sink) continue;
      flows[{u, parent[u]}] = load[u];
      load[parent[u]] += load[u];
    }
    cert.flows.push_back(std::move(flows));
  }
  return cert;
}

// ---------------------------------------------------------------------------

json MilpCounts::to_json() const {
  return {{"d", d}, {"e", e}, {"h", h}, {"flow", flow}, {"rows", rows}};
}

std::size_t MilpModel::add_var(std::string name, VarType type) {
  var_names.push_back(std::move(name));
  var_types.push_back(type);
  return var_names.size() - 1;
}

std::optional<std::size_t> MilpModel::e(std::size_t i, std::size_t j, int k, int l) const {
  auto it = e_index_.find({i, j, k, l});
  if (it == e_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> MilpModel::flow(std::size_t from, std::size_t to, int k) const {
  auto it = flow_index_.find({from, to, k});
  if (it == flow_index_.end()) return std::nullopt;
  return it->second;
}

std::vector<double> MilpModel::point_for(const geo::Design& design, const geo::CityGraph& city,
                                         std::size_t n_max) const {
  if (design.beat_count() != beats || design.zone_count() != zones) throw OptimizeError("design does not match the MILP");
  std::vector<double> x(var_names.size(), 0.0);
  for (std::size_t i = 0; i < beats; ++i) x[d(i, design.zone_of(i))] = 1.0;
  for (const auto& [key, idx] : e_index_) {
    const auto& [i, j, k, l] = key;
    x[idx] = x[d(i, k)] * x[d(j, l)];
  }
  const auto cert = verify_flow_contiguity(city, design, n_max);
  for (int k = 0; k < zones; ++k) {
    x[h(cert.sinks[static_cast<std::size_t>(k)], k)] = 1.0;
    for (const auto& [arc, f] : cert.flows[static_cast<std::size_t>(k)]) {
      if (auto v = flow(arc.first, arc.second, k)) x[*v] = f;
    }
  }
  return x;
}

double MilpModel::objective_value(const std::vector<double>& x) const {
  double v = 0.0;
  for (const auto& t : objective) v += t.coef * x.at(t.var);
  return v;
}

std::vector<std::string> MilpModel::violated_rows(const std::vector<double>& x, double tol) const {
  std::vector<std::string> out;
  for (const auto& r : rows) {
    double lhs = 0.0;
    for (const auto& t : r.terms) lhs += t.coef * x.at(t.var);
    const bool ok = r.sense == Sense::le ? lhs <= r.rhs + tol
                    : r.sense == Sense::ge ? lhs >= r.rhs - tol
                                           : std::abs(lhs - r.rhs) <= tol;
    if (!ok) out.push_back(r.name);
  }
  return out;
}

namespace {

/// LP-safe token for a beat id; falls back to the index when ids clash.
std::vector<std::string> lp_beat_names(const geo::CityGraph& city) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  bool clash = false;
  for (const auto& id : city.beat_ids()) {
    std::string s;
    for (char c : id) s += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
    if (s.empty() || !seen.insert(s).second) clash = true;
    out.push_back(s);
  }
  if (clash) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = "b" + std::to_string(i);
  }
  return out;
}

}  // namespace

MilpModel build_milp(const geo::CityGraph& city, const approx::LinearWorkloadModel& model, const geo::Design& base,
                     const geo::DesignConstraints& constraints) {
  const std::size_t n = city.size();
  const int kz = base.zone_count();
  if (model.beat_count() != n || model.zone_count() != kz || base.beat_count() != n) {
    throw OptimizeError("surrogate, base design and city dimensions differ");
  }
  try {
    constraints.check(n, kz);
  } catch (const std::invalid_argument& e) {
    throw OptimizeError(e.what());
  }
  std::map<std::size_t, int> pins;
  for (const auto& [beat, zone] : constraints.pinned) {
    auto [it, fresh] = pins.emplace(beat, zone);
    if (!fresh && it->second != zone) {
      throw OptimizeError("beat " + city.beat_id(beat) + " is pinned to two zones");
    }
  }

  MilpModel m;
  m.beats = n;
  m.zones = kz;
  m.beat_ids = city.beat_ids();
  const auto names = lp_beat_names(city);
  const auto zs = [](int k) { return std::to_string(k + 1); };
  const double kd = static_cast<double>(kz);
  const auto& th = model.theta;
  const auto& t0 = model.theta0;
  const auto ix = [](std::size_t i) { return static_cast<Eigen::Index>(i); };

  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < kz; ++k) m.d_index_.push_back(m.add_var("d_" + names[i] + "_" + zs(k), VarType::binary));
  }
  m.counts.d = n * static_cast<std::size_t>(kz);
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < kz; ++k) m.h_index_.push_back(m.add_var("h_" + names[i] + "_" + zs(k), VarType::binary));
  }
  m.counts.h = m.counts.d;

  // Objective: sum_k w_k^2 / K - (sum_k w_k)^2 / K^2 with w_k linear in d.
  const double c_sum = t0.sum();
  m.objective_constant = (t0.squaredNorm() - c_sum * c_sum / kd) / kd;
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < kz; ++k) {
      const double a = th(ix(i), k);
      const double coef = (2.0 * t0(k) * a + a * a - (2.0 * c_sum * a + a * a) / kd) / kd;
      if (coef != 0.0) m.objective.push_back({m.d(i, k), coef});
    }
  }

  // Product variables needed by compactness rows.
  std::set<std::tuple<std::size_t, std::size_t>> cmp1, cmp2;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double l = city.dist_sq(i, j);
      if (l > constraints.zeta1) cmp1.insert({i, j});
      if (l > constraints.zeta2 * (city.area(i) + city.area(j))) cmp2.insert({i, j});
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool compact_pair = cmp1.count({i, j}) || cmp2.count({i, j});
      for (int k = 0; k < kz; ++k) {
        for (int l = 0; l < kz; ++l) {
          const double p = th(ix(i), k) * th(ix(j), l);
          const double coef = ((k == l ? 2.0 * p : 0.0) - 2.0 * p / kd) / kd;
          if (coef == 0.0 && !(compact_pair && k == l)) continue;
          const auto v = m.add_var("e_" + names[i] + "_" + names[j] + "_" + zs(k) + "_" + zs(l), VarType::binary);
          m.e_index_[{i, j, k, l}] = v;
          if (coef != 0.0) m.objective.push_back({v, coef});
        }
      }
    }
  }
  m.counts.e = m.e_index_.size();

  std::vector<std::pair<std::size_t, std::size_t>> arcs;
  for (const auto& [i, j] : city.edges()) {
    arcs.emplace_back(i, j);
    arcs.emplace_back(j, i);
  }
  std::sort(arcs.begin(), arcs.end());
  for (int k = 0; k < kz; ++k) {
    for (const auto& [i, j] : arcs) {
      m.flow_index_[{i, j, k}] = m.add_var("f_" + names[i] + "_" + names[j] + "_" + zs(k), VarType::continuous);
    }
  }
  m.counts.flow = m.flow_index_.size();

  auto add_row = [&](const std::string& family, std::string name, std::vector<Term> terms, Sense s, double rhs) {
    m.rows.push_back({std::move(name), std::move(terms), s, rhs});
    ++m.counts.rows[family];
  };

  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Term> t;
    for (int k = 0; k < kz; ++k) t.push_back({m.d(i, k), 1.0});
    add_row("partition", "part_" + names[i], t, Sense::eq, 1.0);
  }
  for (int k = 0; k < kz; ++k) {
    std::vector<Term> t;
    for (std::size_t i = 0; i < n; ++i) t.push_back({m.d(i, k), 1.0});
    add_row("zone_size", "size_" + zs(k), t, Sense::le, static_cast<double>(constraints.n_max));
    add_row("zone_size", "nonempty_" + zs(k), t, Sense::ge, 1.0);
  }
  for (const auto& [key, v] : m.e_index_) {
    const auto& [i, j, k, l] = key;
    const std::string tag = names[i] + "_" + names[j] + "_" + zs(k) + "_" + zs(l);
    add_row("mccormick", "mc1_" + tag, {{v, 1.0}, {m.d(i, k), -1.0}}, Sense::le, 0.0);
    add_row("mccormick", "mc2_" + tag, {{v, 1.0}, {m.d(j, l), -1.0}}, Sense::le, 0.0);
    add_row("mccormick", "mc3_" + tag, {{v, 1.0}, {m.d(i, k), -1.0}, {m.d(j, l), -1.0}}, Sense::ge, -1.0);
    add_row("mccormick", "mc4_" + tag, {{v, 1.0}}, Sense::ge, 0.0);
  }

  // Flow contiguity: one sink per zone, sinks inside their zone, every member
  // ships one unit toward the sink, flow only enters zone members.
  const double nmax = static_cast<double>(constraints.n_max);
  for (int k = 0; k < kz; ++k) {
    std::vector<Term> t;
    for (std::size_t i = 0; i < n; ++i) t.push_back({m.h(i, k), 1.0});
    add_row("flow", "sink_" + zs(k), t, Sense::eq, 1.0);
  }
  for (int k = 0; k < kz; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::string tag = names[i] + "_" + zs(k);
      add_row("flow", "sinkin_" + tag, {{m.h(i, k), 1.0}, {m.d(i, k), -1.0}}, Sense::le, 0.0);
      std::vector<Term> bal, cap;
      for (auto j : city.neighbors(i)) bal.push_back({*m.flow(i, j, k), 1.0});
      for (auto j : city.neighbors(i)) {
        bal.push_back({*m.flow(j, i, k), -1.0});
        cap.push_back({*m.flow(j, i, k), 1.0});
      }
      bal.push_back({m.d(i, k), -1.0});
      bal.push_back({m.h(i, k), nmax});
      add_row("flow", "bal_" + tag, bal, Sense::ge, 0.0);
      cap.push_back({m.d(i, k), -(nmax - 1.0)});
      add_row("flow", "cap_" + tag, cap, Sense::le, 0.0);
    }
  }

  for (const auto& [i, j] : cmp1) {
    const double l = city.dist_sq(i, j);
    for (int k = 0; k < kz; ++k) {
      add_row("compactness", "cmpd_" + names[i] + "_" + names[j] + "_" + zs(k), {{*m.e(i, j, k, k), l}}, Sense::le,
              constraints.zeta1);
    }
  }
  for (const auto& [i, j] : cmp2) {
    const double l = city.dist_sq(i, j);
    for (int k = 0; k < kz; ++k) {
      std::vector<Term> t{{*m.e(i, j, k, k), l}};
      for (std::size_t q = 0; q < n; ++q) t.push_back({m.d(q, k), -constraints.zeta2 * city.area(q)});
      add_row("compactness", "cmpa_" + names[i] + "_" + names[j] + "_" + zs(k), t, Sense::le, 0.0);
    }
  }

  {
    std::vector<Term> t;
    for (std::size_t i = 0; i < n; ++i) t.push_back({m.d(i, base.zone_of(i)), 1.0});
    const double keep = static_cast<double>(n) - static_cast<double>(std::min(constraints.max_shifts, n));
    add_row("shift_budget", "shift_budget", t, Sense::ge, keep);
  }
  for (const auto& [beat, zone] : pins) {
    add_row("pin", "pin_" + names[beat], {{m.d(beat, zone), 1.0}}, Sense::eq, 1.0);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (int b = 0; b < kz; ++b) {
      if (b != base.zone_of(i) && constraints.forbidden_transfers.count({base.zone_of(i), b})) {
        add_row("forbidden_transfer", "forbid_" + names[i] + "_" + zs(b), {{m.d(i, b), 1.0}}, Sense::eq, 0.0);
      }
    }
  }
  return m;
}

// ---------------------------------------------------------------------------

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_expr(std::ostream& out, const MilpModel& m, const std::vector<Term>& terms) {
  if (terms.empty()) {
    out << " 0 " << m.var_names.front();
    return;
  }
  for (std::size_t t = 0; t < terms.size(); ++t) {
    if (t > 0 && t % 6 == 0) out << "\n  ";
    const double c = terms[t].coef;
    if (t == 0) {
      out << ' ' << num(c);
    } else {
      out << (c < 0 ? " - " : " + ") << num(std::abs(c));
    }
    out << ' ' << m.var_names[terms[t].var];
  }
}

}  // namespace

void export_lp(const MilpModel& milp, std::ostream& out) {
  out << "\\ Zone design MILP: " << milp.beats << " beats, " << milp.zones << " zones\n";
  out << "\\ objective constant: " << num(milp.objective_constant) << '\n';
  out << "\\ variables: d " << milp.counts.d << ", e " << milp.counts.e << ", h " << milp.counts.h << ", flow "
      << milp.counts.flow << '\n';
  for (std::size_t i = 0; i < milp.beat_ids.size(); ++i) out << "\\ beat " << i << " = " << milp.beat_ids[i] << '\n';
  out << "Minimize\n obj:";
  write_expr(out, milp, milp.objective);
  out << "\nSubject To\n";
  for (const auto& r : milp.rows) {
    out << ' ' << r.name << ':';
    write_expr(out, milp, r.terms);
    out << (r.sense == Sense::le ? " <= " : r.sense == Sense::ge ? " >= " : " = ") << num(r.rhs) << '\n';
  }
  out << "Bounds\n";
  for (std::size_t v = 0; v < milp.var_names.size(); ++v) {
    if (milp.var_types[v] == VarType::continuous) out << ' ' << milp.var_names[v] << " >= 0\n";
  }
  out << "Binaries\n";
  for (std::size_t v = 0; v < milp.var_names.size(); ++v) {
    if (milp.var_types[v] == VarType::binary) out << ' ' << milp.var_names[v] << '\n';
  }
  out << "End\n";
}

void export_lp(const MilpModel& milp, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw OptimizeError("cannot write " + path.string());
  export_lp(milp, out);
  if (!out) throw OptimizeError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------

void AnnealingConfig::check() const {
  if (!(cooling_rate > 0.0 && cooling_rate < 1.0)) throw OptimizeError("cooling_rate must lie in (0, 1)");
  if (iters_per_temp < 1 || max_temps < 1 || stall_limit < 1) throw OptimizeError("annealing counts must be >= 1");
  if (initial_temp && !(*initial_temp > 0.0)) throw OptimizeError("initial temperature must be positive");
}

json AnnealingConfig::to_json() const {
  return {{"initial_temp", initial_temp ? json(*initial_temp) : json("auto")},
          {"cooling_rate", cooling_rate},
          {"iters_per_temp", iters_per_temp},
          {"max_temps", max_temps},
          {"stall_limit", stall_limit},
          {"seed", seed}};
}

Evaluator surrogate_evaluator(const approx::LinearWorkloadModel& model) {
  auto shared = std::make_shared<const approx::LinearWorkloadModel>(model);
  return [shared](const geo::Design& d) { return approx::approx_objective(d, *shared); };
}

Evaluator exact_evaluator(const approx::ZoneSolver& solver) {
  return [&solver](const geo::Design& d) { return approx::exact_objective(d, solver); };
}

namespace {

struct MoveChecker {
  const geo::CityGraph& city;
  const geo::Design& base;
  const geo::DesignConstraints& c;
  std::vector<int> pinned;  // -1 when free

  MoveChecker(const geo::CityGraph& cg, const geo::Design& b, const geo::DesignConstraints& cons)
      : city(cg), base(b), c(cons), pinned(cg.size(), -1) {
    for (const auto& [beat, zone] : c.pinned) pinned[beat] = zone;
  }

  bool ok(const geo::Design& d, std::size_t shifts, std::size_t beat, int to) const {
    const int from = d.zone_of(beat);
    if (pinned[beat] >= 0) return false;
    if (c.forbidden_transfers.count({base.zone_of(beat), to}) && base.zone_of(beat) != to) return false;
    std::size_t s = shifts;
    if (base.zone_of(beat) == from) ++s;
    if (base.zone_of(beat) == to) --s;
    if (s > c.max_shifts) return false;
    if (d.zone_size(from) < 2) return false;
    if (c.n_max > 0 && d.zone_size(to) + 1 > c.n_max) return false;
    if (!geo::contiguous_without(city, d, from, beat)) return false;
    std::vector<std::size_t> a, b;
    for (std::size_t i = 0; i < city.size(); ++i) {
      if (i == beat) continue;
      if (d.zone_of(i) == from) a.push_back(i);
      if (d.zone_of(i) == to) b.push_back(i);
    }
    b.push_back(beat);
    return geo::shape_ok(geo::zone_shape(city, a), c.zeta1, c.zeta2) &&
           geo::shape_ok(geo::zone_shape(city, b), c.zeta1, c.zeta2);
  }
};

std::vector<std::pair<std::size_t, int>> candidate_moves(const geo::CityGraph& city, const geo::Design& d) {
  std::vector<std::pair<std::size_t, int>> out;
  for (std::size_t i = 0; i < city.size(); ++i) {
    std::set<int> t;
    for (auto j : city.neighbors(i)) {
      if (d.zone_of(j) != d.zone_of(i)) t.insert(d.zone_of(j));
    }
    for (int z : t) out.emplace_back(i, z);
  }
  return out;
}

}  // namespace

AnnealResult anneal(const geo::CityGraph& city, const geo::Design& base, const Evaluator& evaluator,
                    const geo::DesignConstraints& constraints, const AnnealingConfig& cfg, const ProgressFn& progress) {
  cfg.check();
  try {
    constraints.check(city.size(), base.zone_count());
  } catch (const std::invalid_argument& e) {
    throw OptimizeError(e.what());
  }
  const auto violations = check_constraints(city, base, base, constraints);
  if (!violations.empty()) {
    std::string msg = "base design is infeasible:";
    for (const auto& v : violations) msg += " [" + to_string(v.kind) + "] " + v.message + ";";
    throw OptimizeError(msg);
  }

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const MoveChecker checker(city, base, constraints);

  AnnealResult res;
  res.base_objective = evaluator(base);
  res.best = base;
  res.best_objective = res.base_objective;

  double temp = 1.0;
  if (cfg.initial_temp) {
    temp = *cfg.initial_temp;
  } else {
    // Mean uphill step over random feasible moves from the base.
    const auto moves = candidate_moves(city, base);
    double up = 0.0;
    int n_up = 0;
    if (!moves.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, moves.size() - 1);
      for (int s = 0; s < 200; ++s) {
        const auto [beat, to] = moves[pick(rng)];
        if (!checker.ok(base, 0, beat, to)) continue;
        const double delta = evaluator(base.with_move(beat, to)) - res.base_objective;
        if (delta > 0.0) {
          up += delta;
          ++n_up;
        }
      }
    }
    if (n_up > 0) temp = -(up / n_up) / std::log(0.8);
  }
  res.initial_temp = temp;

  geo::Design current = base;
  double f_cur = res.base_objective;
  std::size_t shifts = 0;
  long iteration = 0;
  int stall = 0;
  for (int t = 0; t < cfg.max_temps; ++t) {
    bool improved = false;
    for (int it = 0; it < cfg.iters_per_temp; ++it) {
      ++iteration;
      TraceEntry e{iteration, t, temp, f_cur, res.best_objective, false, shifts};
      const auto moves = candidate_moves(city, current);
      if (moves.empty()) {
        res.trace.push_back(e);
        continue;
      }
      std::uniform_int_distribution<std::size_t> pick(0, moves.size() - 1);
      const auto [beat, to] = moves[pick(rng)];
      const double u = unif(rng);
      if (!checker.ok(current, shifts, beat, to)) {
        ++res.rejected_infeasible;
        res.trace.push_back(e);
        continue;
      }
      geo::Design cand = current.with_move(beat, to);
      const double f_cand = evaluator(cand);
      const double delta = f_cand - f_cur;
      if (delta <= 0.0 || u < std::exp(-delta / temp)) {
        if (base.zone_of(beat) == current.zone_of(beat)) ++shifts;
        if (base.zone_of(beat) == to) --shifts;
        current = std::move(cand);
        f_cur = f_cand;
        ++res.accepted;
        e.accepted = true;
        if (f_cur < res.best_objective) {
          res.best_objective = f_cur;
          res.best = current;
          improved = true;
        }
      }
      e.objective = f_cur;
      e.best = res.best_objective;
      e.shifts_from_base = shifts;
      res.trace.push_back(e);
    }
    res.temperatures = t + 1;
    if (progress) progress(t + 1, cfg.max_temps, res.best_objective);
    stall = improved ? 0 : stall + 1;
    if (stall >= cfg.stall_limit) break;
    temp *= cfg.cooling_rate;
  }
  return res;
}

json TraceEntry::to_json() const {
  return {{"iteration", iteration}, {"temp_index", temp_index}, {"temperature", temperature},
          {"objective", objective}, {"best", best},             {"accepted", accepted},
          {"shifts_from_base", shifts_from_base}};
}

void write_trace_jsonl(std::ostream& out, const std::vector<TraceEntry>& trace) {
  for (const auto& e : trace) out << e.to_json().dump() << '\n';
}

}  // namespace zonedesign::optimize
