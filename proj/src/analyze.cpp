#include "zonedesign/analyze.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

namespace zonedesign::analyze {

using nlohmann::json;

double workload_variance(std::span<const double> workloads) {
  if (workloads.size() < 2) throw AnalyzeError("workload variance needs at least two zones");
  double mean = 0.0;
  for (double w : workloads) mean += w;
  mean /= static_cast<double>(workloads.size());
  double ss = 0.0;
  for (double w : workloads) ss += (w - mean) * (w - mean);
  return ss / static_cast<double>(workloads.size());
}

double percent_change(double before, double after) {
  if (!(before > 0.0)) throw AnalyzeError("reference value must be positive");
  return 100.0 * (after - before) / before;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw AnalyzeError("pearson needs two equal-length series of size >= 2");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw AnalyzeError("pearson is undefined for a constant series");
  return sab / std::sqrt(saa * sbb);
}

// ---------------------------------------------------------------------------

WorkloadTable::WorkloadTable(std::vector<std::string> zone_names) : zone_names_(std::move(zone_names)) {}

const WorkloadRow& WorkloadTable::add_row(std::string label, std::vector<double> zones,
                                          std::optional<std::size_t> reference) {
  if (zones.size() != zone_names_.size()) throw AnalyzeError("row width does not match the zone count");
  WorkloadRow row;
  row.label = std::move(label);
  for (double z : zones) row.total += z;
  row.variance = workload_variance(zones);
  row.zones = std::move(zones);
  if (reference) {
    if (*reference >= rows_.size()) throw AnalyzeError("reference row does not exist");
    row.variance_change_pct = percent_change(rows_[*reference].variance, row.variance);
  }
  rows_.push_back(std::move(row));
  return rows_.back();
}

json WorkloadTable::to_json() const {
  json rows = json::array();
  for (const auto& r : rows_) {
    json zones_1e4 = json::array();
    for (double z : r.zones) zones_1e4.push_back(z / 1e4);
    json j = {{"label", r.label},       {"zones_hours", r.zones},          {"zones_1e4_hours", zones_1e4},
              {"total_hours", r.total}, {"total_1e4_hours", r.total / 1e4}, {"variance", r.variance},
              {"variance_1e7", r.variance / 1e7}};
    j["variance_change_pct"] = r.variance_change_pct ? json(*r.variance_change_pct) : json(nullptr);
    rows.push_back(j);
  }
  return {{"zones", zone_names_}, {"rows", rows}};
}

void WorkloadTable::write_csv(std::ostream& out) const {
  out << "label";
  for (const auto& z : zone_names_) out << ",zone_" << z << "_1e4h";
  out << ",total_1e4h,variance_1e7,variance_change_pct\n";
  const auto flags = out.flags();
  const auto prec = out.precision();
  out << std::setprecision(10);
  for (const auto& r : rows_) {
    out << r.label;
    for (double z : r.zones) out << ',' << z / 1e4;
    out << ',' << r.total / 1e4 << ',' << r.variance / 1e7 << ',';
    if (r.variance_change_pct) out << *r.variance_change_pct;
    out << '\n';
  }
  out.flags(flags);
  out.precision(prec);
}

// ---------------------------------------------------------------------------

namespace {

struct TimeAccumulator {
  std::size_t n = 0;
  double wait = 0.0;
  double travel = 0.0;
  double response = 0.0;

  void add(const estimate::CallRecord& r) {
    ++n;
    const double w = r.waiting_s() / 60.0;
    const double t = r.travel_s() / 60.0;
    wait += w;
    travel += t;
    response += w + t;
  }
  TimeSummary summary() const {
    if (n == 0) return {};
    const double d = static_cast<double>(n);
    return {n, response / d, wait / d, travel / d};
  }
};

json summary_json(const TimeSummary& s) {
  return {{"calls", s.calls}, {"response_min", s.response_min}, {"waiting_min", s.waiting_min},
          {"travel_min", s.travel_min}};
}

}  // namespace

json TimeMetrics::to_json() const {
  json z = json::array();
  for (std::size_t k = 0; k < zones.size(); ++k) {
    auto j = summary_json(zones[k]);
    j["zone"] = k + 1;
    z.push_back(j);
  }
  return {{"zones", z}, {"citywide", summary_json(citywide)}, {"excluded_invalid", excluded_invalid}};
}

TimeMetrics time_metrics(std::span<const estimate::CallRecord> records, const geo::Design& design,
                         const TimeFilter& filter) {
  const auto k = static_cast<std::size_t>(design.zone_count());
  std::vector<TimeAccumulator> acc(k);
  TimeAccumulator city;
  TimeMetrics out;
  for (const auto& r : records) {
    if (!filter.priorities.empty() && !filter.priorities.count(r.priority)) continue;
    if (filter.from && r.call_time < *filter.from) continue;
    if (filter.to && !(r.call_time < *filter.to)) continue;
    if (r.incident_beat >= design.beat_count()) throw AnalyzeError("record beat outside the design");
    const int zone = design.zone_of(r.incident_beat);
    if (filter.zone && zone != *filter.zone) continue;
    if (!r.timeline_ok()) {
      ++out.excluded_invalid;
      continue;
    }
    acc[static_cast<std::size_t>(zone)].add(r);
    city.add(r);
  }
  for (const auto& a : acc) out.zones.push_back(a.summary());
  out.citywide = city.summary();
  return out;
}

// ---------------------------------------------------------------------------

DidResult did_analysis(const std::map<int, double>& period1, const std::map<int, double>& period2,
                       const std::map<int, double>& period3) {
  DidResult out;
  std::size_t below = 0;
  for (const auto& [day, v1] : period1) {
    auto i2 = period2.find(day);
    auto i3 = period3.find(day);
    if (i2 == period2.end() || i3 == period3.end()) continue;
    DidPoint p{day, i2->second - v1, i3->second - i2->second};
    if (!std::isfinite(p.delta_before) || !std::isfinite(p.delta_after)) {
      throw AnalyzeError("non-finite variance on day " + std::to_string(day));
    }
    if (p.delta_after < p.delta_before) ++below;
    out.points.push_back(p);
  }
  if (out.points.empty()) throw AnalyzeError("the three periods share no days");
  out.fraction_below = static_cast<double>(below) / static_cast<double>(out.points.size());
  return out;
}

void write_did_csv(std::ostream& out, const DidResult& result) {
  const auto prec = out.precision();
  out << "day,delta_before,delta_after\n" << std::setprecision(17);
  for (const auto& p : result.points) out << p.day << ',' << p.delta_before << ',' << p.delta_after << '\n';
  out.precision(prec);
}

ZoneSeries daily_zone_workload(std::span<const estimate::CallRecord> records, const geo::Design& design) {
  ZoneSeries out;
  const auto k = static_cast<std::size_t>(design.zone_count());
  for (const auto& r : records) {
    if (!r.timeline_ok()) continue;
    auto& day = out[utc_day_of_year(r.call_time)];
    if (day.empty()) day.assign(k, 0.0);
    day[static_cast<std::size_t>(design.zone_of(r.incident_beat))] += seconds_between(r.dispatch_time, r.clear_time) / 3600.0;
  }
  return out;
}

std::map<int, double> daily_variance(const ZoneSeries& series) {
  std::map<int, double> out;
  for (const auto& [day, zones] : series) out[day] = workload_variance(zones);
  return out;
}

Normalization normalize_workload(const ZoneSeries& series, const ZoneSeries& reference, int first_day,
                                 int last_day, NormalizeMode mode) {
  if (series.empty() || reference.empty()) throw AnalyzeError("empty workload series");
  const std::size_t k = series.begin()->second.size();
  auto overlap_mean = [&](const ZoneSeries& s, const char* name) {
    std::vector<double> sum(k, 0.0);
    std::size_t n = 0;
    for (auto it = s.lower_bound(first_day); it != s.end() && it->first <= last_day; ++it) {
      if (it->second.size() != k) throw AnalyzeError("zone count differs between series");
      for (std::size_t z = 0; z < k; ++z) sum[z] += it->second[z];
      ++n;
    }
    if (n == 0) throw AnalyzeError(std::string(name) + " series does not cover the overlap period");
    for (auto& v : sum) v /= static_cast<double>(n);
    return sum;
  };
  const auto new_mean = overlap_mean(series, "new");
  const auto ref_mean = overlap_mean(reference, "reference");

  Normalization out;
  out.mode = mode;
  out.factors.resize(k);
  for (std::size_t z = 0; z < k; ++z) {
    if (mode == NormalizeMode::multiplicative) {
      if (new_mean[z] == 0.0) throw AnalyzeError("zone " + std::to_string(z + 1) + " has zero overlap mean");
      out.factors[z] = ref_mean[z] / new_mean[z];
    } else {
      out.factors[z] = ref_mean[z] - new_mean[z];
    }
  }
  for (const auto& [day, zones] : series) {
    if (zones.size() != k) throw AnalyzeError("zone count differs between days");
    auto& dst = out.series[day];
    dst.resize(k);
    for (std::size_t z = 0; z < k; ++z) {
      dst[z] = mode == NormalizeMode::multiplicative ? zones[z] * out.factors[z] : zones[z] + out.factors[z];
    }
  }
  return out;
}

json Histogram::to_json() const { return {{"edges", edges}, {"counts", counts}}; }

Histogram histogram(std::span<const double> values, std::size_t bins, double lo, double hi) {
  if (bins == 0 || !(hi > lo)) throw AnalyzeError("histogram needs bins >= 1 and hi > lo");
  Histogram h;
  h.counts.assign(bins, 0);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(lo + width * static_cast<double>(b));
  for (double v : values) {
    if (!std::isfinite(v)) continue;
    auto b = static_cast<long long>(std::floor((v - lo) / width));
    b = std::clamp<long long>(b, 0, static_cast<long long>(bins) - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

}  // namespace zonedesign::analyze
