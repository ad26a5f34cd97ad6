#pragma once

#include "zonedesign/approx.hpp"
#include "zonedesign/geo.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace zonedesign::optimize {

class OptimizeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// n_max = ceil(1.5 I / K) (at least the largest base zone), zeta1 = 1.2 x the
/// largest in-zone squared distance of the base, zeta2 = 1.2 x the largest
/// per-zone ratio of that distance to zone area.
geo::DesignConstraints default_constraints(const geo::CityGraph& city, const geo::Design& base,
                                           std::size_t max_shifts);

enum class ConstraintKind { contiguity, compactness, zone_size, shift_budget, pin, forbidden_transfer };
std::string to_string(ConstraintKind kind);

struct ConstraintViolation {
  ConstraintKind kind;
  int zone = -1;   // 0-based, when the violation belongs to a zone
  std::string beat;  // when it belongs to a beat
  std::string message;
};

/// Every constraint `design` violates, judged against `base` for shifts and transfers.
std::vector<ConstraintViolation> check_constraints(const geo::CityGraph& city, const geo::Design& design,
                                                   const geo::Design& base, const geo::DesignConstraints& c);

// ---------------------------------------------------------------------------
// Flow contiguity

struct FlowCertificate {
  bool feasible = false;
  std::vector<std::size_t> sinks;  // per zone
  /// Unit flow on directed arcs (from, to) inside each zone.
  std::vector<std::map<std::pair<std::size_t, std::size_t>, double>> flows;
};

/// Every zone routes one unit per member to an in-zone sink along a spanning
/// tree. Infeasible iff some zone is disconnected or larger than n_max.
FlowCertificate verify_flow_contiguity(const geo::CityGraph& city, const geo::Design& design, std::size_t n_max);

// ---------------------------------------------------------------------------
// MILP

enum class VarType { binary, continuous };
enum class Sense { le, ge, eq };

struct Term {
  std::size_t var;
  double coef;
};

struct Row {
  std::string name;
  std::vector<Term> terms;
  Sense sense = Sense::le;
  double rhs = 0.0;
};

struct MilpCounts {
  std::size_t d = 0, e = 0, h = 0, flow = 0;
  std::map<std::string, std::size_t> rows;  // by family
  nlohmann::json to_json() const;
};

/// Variables d (assignment), e (products d_ik d_jk'), h (sinks) and flows on
/// directed arcs. The objective plus `objective_constant` equals the
/// surrogate objective at every integer-feasible point.
struct MilpModel {
  std::size_t beats = 0;
  int zones = 0;
  std::vector<std::string> var_names;
  std::vector<VarType> var_types;
  std::vector<Term> objective;
  double objective_constant = 0.0;
  std::vector<Row> rows;
  MilpCounts counts;
  std::vector<std::string> beat_ids;

  std::size_t d(std::size_t i, int k) const { return d_index_[i * static_cast<std::size_t>(zones) + static_cast<std::size_t>(k)]; }
  std::size_t h(std::size_t i, int k) const { return h_index_[i * static_cast<std::size_t>(zones) + static_cast<std::size_t>(k)]; }
  /// Product variable for d_ik d_jk' with i < j, if emitted.
  std::optional<std::size_t> e(std::size_t i, std::size_t j, int k, int l) const;
  std::optional<std::size_t> flow(std::size_t from, std::size_t to, int k) const;

  /// Variable values for a design: d from the assignment, e as products, h and
  /// flows from the spanning-tree certificate.
  std::vector<double> point_for(const geo::Design& design, const geo::CityGraph& city, std::size_t n_max) const;
  double objective_value(const std::vector<double>& x) const;
  /// Names of rows violated by more than `tol`.
  std::vector<std::string> violated_rows(const std::vector<double>& x, double tol = 1e-9) const;

  std::size_t add_var(std::string name, VarType type);

  std::vector<std::size_t> d_index_, h_index_;
  std::map<std::tuple<std::size_t, std::size_t, int, int>, std::size_t> e_index_;
  std::map<std::tuple<std::size_t, std::size_t, int>, std::size_t> flow_index_;
};

MilpModel build_milp(const geo::CityGraph& city, const approx::LinearWorkloadModel& model, const geo::Design& base,
                     const geo::DesignConstraints& constraints);

/// CPLEX LP text with deterministic ordering and round-trip number formatting.
void export_lp(const MilpModel& milp, std::ostream& out);
void export_lp(const MilpModel& milp, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Simulated annealing

struct AnnealingConfig {
  std::optional<double> initial_temp;  // auto: ~80% of sampled uphill moves accepted
  double cooling_rate = 0.95;
  int iters_per_temp = 200;
  int max_temps = 50;
  int stall_limit = 10;  // temperatures without a new best before stopping
  std::uint64_t seed = 1;

  void check() const;
  nlohmann::json to_json() const;
};

using Evaluator = std::function<double(const geo::Design&)>;

Evaluator surrogate_evaluator(const approx::LinearWorkloadModel& model);
Evaluator exact_evaluator(const approx::ZoneSolver& solver);

struct TraceEntry {
  long iteration = 0;
  int temp_index = 0;
  double temperature = 0.0;
  double objective = 0.0;  // current design after the step
  double best = 0.0;
  bool accepted = false;
  std::size_t shifts_from_base = 0;

  nlohmann::json to_json() const;
};

struct AnnealResult {
  geo::Design best;
  double best_objective = 0.0;
  double base_objective = 0.0;
  double initial_temp = 0.0;
  int temperatures = 0;
  long accepted = 0;
  long rejected_infeasible = 0;
  std::vector<TraceEntry> trace;
};

/// Called after each temperature with (temperature index, max_temps, best objective).
using ProgressFn = std::function<void(int, int, double)>;

/// Single-beat moves to an adjacent zone with Metropolis acceptance. Throws
/// OptimizeError listing the violations when `base` is infeasible.
AnnealResult anneal(const geo::CityGraph& city, const geo::Design& base, const Evaluator& evaluator,
                    const geo::DesignConstraints& constraints, const AnnealingConfig& cfg,
                    const ProgressFn& progress = {});

void write_trace_jsonl(std::ostream& out, const std::vector<TraceEntry>& trace);

}  // namespace zonedesign::optimize
