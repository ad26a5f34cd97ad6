#pragma once

#include "zonedesign/estimate.hpp"
#include "zonedesign/geo.hpp"

#include <json.hpp>

#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace zonedesign::analyze {

class AnalyzeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Population variance sum_k (w_k - mean)^2 / K in squared input units.
double workload_variance(std::span<const double> workloads);

/// 100 * (after - before) / before.
double percent_change(double before, double after);
inline double variance_change(double before, double after) { return percent_change(before, after); }

/// Sample correlation coefficient; throws when either input is constant.
double pearson(std::span<const double> a, std::span<const double> b);

struct WorkloadRow {
  std::string label;
  std::vector<double> zones;  // hours per year
  double total = 0.0;
  double variance = 0.0;
  std::optional<double> variance_change_pct;
};

/// Rows of per-zone workloads in the layout of a before/after comparison table.
class WorkloadTable {
 public:
  explicit WorkloadTable(std::vector<std::string> zone_names);

  /// Appends a row; `reference` is the index of an earlier row to compare against.
  const WorkloadRow& add_row(std::string label, std::vector<double> zones,
                             std::optional<std::size_t> reference = std::nullopt);

  const std::vector<WorkloadRow>& rows() const { return rows_; }
  const std::vector<std::string>& zone_names() const { return zone_names_; }

  /// Workloads are also given in units of 1e4 hours and variances in 1e7.
  nlohmann::json to_json() const;
  void write_csv(std::ostream& out) const;

 private:
  std::vector<std::string> zone_names_;
  std::vector<WorkloadRow> rows_;
};

struct TimeFilter {
  std::set<int> priorities;  // empty: all
  std::optional<int> zone;   // 0-based
  std::optional<Timestamp> from;  // inclusive, on call_time
  std::optional<Timestamp> to;    // exclusive
};

struct TimeSummary {
  std::size_t calls = 0;
  double response_min = 0.0;
  double waiting_min = 0.0;
  double travel_min = 0.0;
};

struct TimeMetrics {
  std::vector<TimeSummary> zones;  // by incident-beat zone
  TimeSummary citywide;            // call-weighted over all included calls
  std::size_t excluded_invalid = 0;

  nlohmann::json to_json() const;
};

/// Response is waiting plus travel, per record. Means are in minutes.
TimeMetrics time_metrics(std::span<const estimate::CallRecord> records, const geo::Design& design,
                         const TimeFilter& filter = {});

struct DidPoint {
  int day = 0;
  double delta_before = 0.0;  // period2 - period1
  double delta_after = 0.0;   // period3 - period2
};

struct DidResult {
  std::vector<DidPoint> points;
  double fraction_below = 0.0;  // share with delta_after < delta_before
};

/// Daily series keyed by day of year. Only days present in all three periods are used.
DidResult did_analysis(const std::map<int, double>& period1, const std::map<int, double>& period2,
                       const std::map<int, double>& period3);

void write_did_csv(std::ostream& out, const DidResult& result);

/// Per-zone daily busy hours (dispatch to clear) keyed by UTC day of year.
using ZoneSeries = std::map<int, std::vector<double>>;
ZoneSeries daily_zone_workload(std::span<const estimate::CallRecord> records, const geo::Design& design);

/// Cross-zone variance for each day of a zone series.
std::map<int, double> daily_variance(const ZoneSeries& series);

enum class NormalizeMode { multiplicative, additive };

struct Normalization {
  ZoneSeries series;
  std::vector<double> factors;  // scale factors, or offsets in additive mode
  NormalizeMode mode = NormalizeMode::multiplicative;
};

/// Brings each zone of `series` to the level of `reference` over the days in
/// [first_day, last_day], then applies the per-zone factor to the whole series.
Normalization normalize_workload(const ZoneSeries& series, const ZoneSeries& reference, int first_day,
                                 int last_day, NormalizeMode mode = NormalizeMode::multiplicative);

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> counts;
  nlohmann::json to_json() const;
};

/// Equal-width bins over [lo, hi]; values outside are clamped into the end bins.
Histogram histogram(std::span<const double> values, std::size_t bins, double lo, double hi);

}  // namespace zonedesign::analyze
