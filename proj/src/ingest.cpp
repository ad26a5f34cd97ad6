#include "zonedesign/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <set>
#include <sstream>

namespace zonedesign::ingest {

using nlohmann::json;

namespace {

constexpr std::size_t kMaxListedErrors = 1000;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::optional<double> parse_double(std::string_view s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = t.data();
  if (*first == '+') ++first;
  auto [p, ec] = std::from_chars(first, t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<long long> parse_int(std::string_view s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  long long v = 0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size()) return std::nullopt;
  return v;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open " + path.string());
  return in;
}

/// Maps required column names to positions; throws on a malformed header.
std::vector<std::size_t> header_positions(const std::vector<std::string>& header,
                                          const std::vector<std::string>& required, const std::string& what) {
  std::vector<std::size_t> pos;
  for (const auto& name : required) {
    auto it = std::find_if(header.begin(), header.end(), [&](const std::string& h) { return trim(h) == name; });
    if (it == header.end()) {
      std::string msg = "malformed " + what + " header: missing column '" + name + "' (expected";
      for (const auto& r : required) msg += " " + r;
      throw IngestError(msg + ")");
    }
    pos.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  return pos;
}

std::string strip_bom(std::string s) {
  if (s.size() >= 3 && static_cast<unsigned char>(s[0]) == 0xEF && static_cast<unsigned char>(s[1]) == 0xBB &&
      static_cast<unsigned char>(s[2]) == 0xBF) {
    s.erase(0, 3);
  }
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------

void IngestReport::reject(std::size_t line, const std::string& reason, std::string detail) {
  ++rows_rejected;
  ++reasons[reason];
  if (errors.size() < kMaxListedErrors) errors.push_back({line, reason, std::move(detail)});
}

json IngestReport::to_json() const {
  json j;
  j["rows_read"] = rows_read;
  j["rows_accepted"] = rows_accepted;
  j["rows_rejected"] = rows_rejected;
  j["reasons"] = reasons;
  j["unknown_beats"] = unknown_beats;
  json errs = json::array();
  for (const auto& e : errors) errs.push_back({{"line", e.line}, {"reason", e.reason}, {"detail", e.detail}});
  j["errors"] = errs;
  return j;
}

AcceptanceError::AcceptanceError(IngestReport report, double threshold)
    : IngestError([&] {
        std::ostringstream os;
        os << "only " << report.rows_accepted << " of " << report.rows_read << " rows accepted (" << std::fixed
           << std::setprecision(2) << 100.0 * report.acceptance_rate() << "%), below the " << 100.0 * threshold
           << "% threshold";
        return os.str();
      }()),
      report_(std::move(report)) {}

// ---------------------------------------------------------------------------

CsvReader::CsvReader(std::istream& in, bool skip_comments) : in_(in), skip_comments_(skip_comments) {}

bool CsvReader::next(std::vector<std::string>& fields) {
  std::string line;
  while (true) {
    if (!std::getline(in_, line)) return false;
    ++line_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_ == 1) line = strip_bom(line);
    if (trim(line).empty()) continue;
    if (skip_comments_ && trim(line).front() == '#') continue;
    break;
  }
  record_line_ = line_;
  fields.clear();
  std::string cur;
  bool quoted = false;
  std::size_t i = 0;
  while (true) {
    if (i == line.size()) {
      if (!quoted) break;
      // Embedded newline inside a quoted field.
      std::string more;
      if (!std::getline(in_, more)) break;
      ++line_;
      if (!more.empty() && more.back() == '\r') more.pop_back();
      cur += '\n';
      line = std::move(more);
      i = 0;
      continue;
    }
    const char c = line[i++];
    if (quoted) {
      if (c == '"') {
        if (i < line.size() && line[i] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return true;
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// ---------------------------------------------------------------------------
// Calls

CallIngest ingest_calls(std::istream& in, const geo::CityGraph& city, double min_acceptance) {
  static const std::vector<std::string> cols{"call_time",   "dispatch_time", "arrive_time", "clear_time",
                                             "origin_beat", "incident_beat", "priority"};
  CsvReader reader(in, true);  // `#` lines carry provenance in cleaned files
  std::vector<std::string> row;
  if (!reader.next(row)) throw IngestError("call file is empty (missing header)");
  const auto pos = header_positions(row, cols, "call-record");

  CallIngest out;
  auto& rep = out.report;
  std::set<std::string> unknown_seen;
  while (reader.next(row)) {
    ++rep.rows_read;
    const std::size_t line = reader.line();
    bool missing = false;
    for (auto p : pos) {
      if (p >= row.size() || trim(row[p]).empty()) missing = true;
    }
    if (missing) {
      rep.reject(line, kMissingField, "row has empty or missing fields");
      continue;
    }
    std::optional<Timestamp> ts[4];
    bool bad_ts = false;
    for (int k = 0; k < 4; ++k) {
      ts[k] = parse_rfc3339(trim(row[pos[static_cast<std::size_t>(k)]]));
      if (!ts[k]) {
        rep.reject(line, kBadTimestamp, cols[static_cast<std::size_t>(k)] + "='" + row[pos[static_cast<std::size_t>(k)]] + "'");
        bad_ts = true;
        break;
      }
    }
    if (bad_ts) continue;
    const std::string origin = trim(row[pos[4]]);
    const std::string incident = trim(row[pos[5]]);
    auto oi = city.index_of(origin);
    auto ii = city.index_of(incident);
    if (!oi || !ii) {
      const std::string& bad = !oi ? origin : incident;
      rep.reject(line, kUnknownBeat, bad);
      if (unknown_seen.insert(bad).second) rep.unknown_beats.push_back(bad);
      continue;
    }
    auto prio = parse_int(row[pos[6]]);
    if (!prio) {
      rep.reject(line, kNonNumeric, "priority='" + row[pos[6]] + "'");
      continue;
    }
    estimate::CallRecord r{*ts[0], *ts[1], *ts[2], *ts[3], *oi, *ii, static_cast<int>(*prio)};
    if (!r.timeline_ok()) {
      rep.reject(line, kTimelineViolation, "timestamps out of order");
      continue;
    }
    out.records.push_back(r);
    ++rep.rows_accepted;
  }
  if (rep.acceptance_rate() < min_acceptance) throw AcceptanceError(rep, min_acceptance);
  return out;
}

CallIngest ingest_calls(const std::filesystem::path& path, const geo::CityGraph& city, double min_acceptance) {
  auto in = open_in(path);
  return ingest_calls(in, city, min_acceptance);
}

void write_calls(std::ostream& out, std::span<const estimate::CallRecord> records, const geo::CityGraph& city) {
  out << "call_time,dispatch_time,arrive_time,clear_time,origin_beat,incident_beat,priority\n";
  for (const auto& r : records) {
    out << format_rfc3339(r.call_time) << ',' << format_rfc3339(r.dispatch_time) << ','
        << format_rfc3339(r.arrive_time) << ',' << format_rfc3339(r.clear_time) << ','
        << csv_escape(city.beat_id(r.origin_beat)) << ',' << csv_escape(city.beat_id(r.incident_beat)) << ','
        << r.priority << '\n';
  }
}

// ---------------------------------------------------------------------------
// Covariates

CovariateIngest ingest_covariates(std::istream& in, const geo::CityGraph& city, std::span<const int> years) {
  CsvReader reader(in);
  std::vector<std::string> header;
  if (!reader.next(header)) throw IngestError("covariate file is empty (missing header)");
  const auto pos = header_positions(header, {"beat_id", "year"}, "covariate");
  std::vector<std::size_t> factor_pos;
  CovariateIngest out;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == pos[0] || c == pos[1]) continue;
    factor_pos.push_back(c);
    out.table.factors.push_back(trim(header[c]));
  }
  if (factor_pos.empty()) throw IngestError("malformed covariate header: no factor columns");
  const auto m = static_cast<Eigen::Index>(factor_pos.size());

  // observed[beat][year] = values
  std::vector<std::map<int, Eigen::VectorXd>> observed(city.size());
  auto& rep = out.report;
  std::set<std::string> unknown_seen;
  std::vector<std::string> row;
  while (reader.next(row)) {
    ++rep.rows_read;
    const std::size_t line = reader.line();
    if (row.size() < header.size()) {
      rep.reject(line, kMissingField, "expected " + std::to_string(header.size()) + " fields");
      continue;
    }
    const std::string beat = trim(row[pos[0]]);
    if (beat.empty() || trim(row[pos[1]]).empty()) {
      rep.reject(line, kMissingField, "empty beat_id or year");
      continue;
    }
    auto bi = city.index_of(beat);
    if (!bi) {
      rep.reject(line, kUnknownBeat, beat);
      if (unknown_seen.insert(beat).second) rep.unknown_beats.push_back(beat);
      continue;
    }
    auto year = parse_int(row[pos[1]]);
    if (!year) {
      rep.reject(line, kNonNumeric, "year='" + row[pos[1]] + "'");
      continue;
    }
    Eigen::VectorXd v(m);
    bool ok = true;
    for (Eigen::Index f = 0; f < m; ++f) {
      const auto& cell = row[factor_pos[static_cast<std::size_t>(f)]];
      if (trim(cell).empty()) {
        rep.reject(line, kMissingField, out.table.factors[static_cast<std::size_t>(f)] + " is empty");
        ok = false;
        break;
      }
      auto d = parse_double(cell);
      if (!d) {
        rep.reject(line, kNonNumeric, out.table.factors[static_cast<std::size_t>(f)] + "='" + cell + "'");
        ok = false;
        break;
      }
      v(f) = *d;
    }
    if (!ok) continue;
    auto& slot = observed[*bi];
    if (slot.count(static_cast<int>(*year))) {
      rep.reject(line, kDuplicateRow, beat + " " + std::to_string(*year));
      continue;
    }
    slot.emplace(static_cast<int>(*year), std::move(v));
    ++rep.rows_accepted;
  }

  out.table.years.assign(years.begin(), years.end());
  for (std::size_t l = 0; l < years.size(); ++l) {
    out.table.values.emplace_back(static_cast<Eigen::Index>(city.size()), m);
  }
  for (std::size_t i = 0; i < city.size(); ++i) {
    const auto& obs = observed[i];
    if (obs.empty()) throw IngestError("beat " + city.beat_id(i) + " has no covariate rows");
    for (std::size_t l = 0; l < years.size(); ++l) {
      const int y = years[l];
      auto it = obs.upper_bound(y);  // first year > y
      int src;
      bool back = false;
      if (it == obs.begin()) {
        src = it->first;
        back = true;
      } else {
        src = std::prev(it)->first;
      }
      out.table.values[l].row(static_cast<Eigen::Index>(i)) = obs.at(src).transpose();
      if (src != y) out.flags.push_back({city.beat_id(i), y, src, back});
    }
  }
  return out;
}

CovariateIngest ingest_covariates(const std::filesystem::path& path, const geo::CityGraph& city,
                                  std::span<const int> years) {
  auto in = open_in(path);
  return ingest_covariates(in, city, years);
}

std::vector<int> covariate_years(const std::filesystem::path& path) {
  auto in = open_in(path);
  CsvReader reader(in);
  std::vector<std::string> row;
  if (!reader.next(row)) throw IngestError("covariate file is empty (missing header)");
  const auto pos = header_positions(row, {"beat_id", "year"}, "covariate");
  std::set<int> years;
  while (reader.next(row)) {
    if (pos[1] < row.size()) {
      if (auto y = parse_int(row[pos[1]])) years.insert(static_cast<int>(*y));
    }
  }
  return {years.begin(), years.end()};
}

void write_covariates(std::ostream& out, const estimate::CovariateTable& table, const geo::CityGraph& city) {
  out << "beat_id,year";
  for (const auto& f : table.factors) out << ',' << csv_escape(f);
  out << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < city.size(); ++i) {
    for (std::size_t l = 0; l < table.years.size(); ++l) {
      out << csv_escape(city.beat_id(i)) << ',' << table.years[l];
      for (Eigen::Index f = 0; f < table.values[l].cols(); ++f) out << ',' << table.values[l](static_cast<Eigen::Index>(i), f);
      out << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// City geometry

namespace {

geo::Ring parse_ring(const json& coords) {
  geo::Ring ring;
  for (const auto& p : coords) {
    if (!p.is_array() || p.size() < 2) throw IngestError("GeoJSON position must have two coordinates");
    ring.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  if (ring.size() > 1 && ring.front().x == ring.back().x && ring.front().y == ring.back().y) ring.pop_back();
  if (ring.size() < 3) throw IngestError("GeoJSON ring has fewer than three distinct vertices");
  return ring;
}

geo::BeatGeometry parse_geometry(const json& g) {
  geo::BeatGeometry out;
  const std::string type = g.at("type").get<std::string>();
  const auto& coords = g.at("coordinates");
  if (type == "Polygon") {
    if (coords.empty()) throw IngestError("empty Polygon");
    out.parts.push_back(parse_ring(coords.at(0)));
  } else if (type == "MultiPolygon") {
    for (const auto& poly : coords) {
      if (poly.empty()) throw IngestError("empty MultiPolygon part");
      out.parts.push_back(parse_ring(poly.at(0)));
    }
  } else {
    throw IngestError("unsupported geometry type " + type + " (expected Polygon or MultiPolygon)");
  }
  return out;
}

std::string id_string(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw IngestError("beat_id must be a string or integer");
}

}  // namespace

geo::CityGraph parse_city(const json& geojson,
                          const std::optional<std::vector<std::pair<std::string, std::string>>>& adjacency) {
  try {
    if (geojson.value("type", "") != "FeatureCollection") throw IngestError("city file must be a GeoJSON FeatureCollection");
    std::vector<geo::BeatSpec> beats;
    for (const auto& f : geojson.at("features")) {
      const auto& props = f.at("properties");
      if (!props.contains("beat_id")) throw IngestError("feature without beat_id property");
      geo::BeatSpec b;
      b.id = id_string(props.at("beat_id"));
      b.geometry = parse_geometry(f.at("geometry"));
      b.area_km2 = props.contains("area_km2") && !props.at("area_km2").is_null() ? props.at("area_km2").get<double>()
                                                                               : geo::geometry_area(b.geometry);
      b.centroid = geo::geometry_centroid(b.geometry);
      beats.push_back(std::move(b));
    }
    if (adjacency) return geo::CityGraph(std::move(beats), *adjacency);
    return geo::CityGraph::from_geometry(std::move(beats));
  } catch (const json::exception& e) {
    throw IngestError(std::string("malformed GeoJSON: ") + e.what());
  }
}

std::vector<std::pair<std::string, std::string>> read_adjacency(std::istream& in) {
  CsvReader reader(in, true);
  std::vector<std::string> row;
  if (!reader.next(row)) throw IngestError("adjacency file is empty (missing header)");
  const auto pos = header_positions(row, {"beat_a", "beat_b"}, "adjacency");
  std::vector<std::pair<std::string, std::string>> out;
  while (reader.next(row)) {
    if (std::max(pos[0], pos[1]) >= row.size()) {
      throw IngestError("adjacency line " + std::to_string(reader.line()) + " has missing fields");
    }
    out.emplace_back(trim(row[pos[0]]), trim(row[pos[1]]));
  }
  return out;
}

geo::CityGraph load_city(const std::filesystem::path& geojson, const std::optional<std::filesystem::path>& adjacency_csv) {
  json doc;
  try {
    doc = json::parse(read_file(geojson));
  } catch (const json::parse_error& e) {
    throw IngestError("cannot parse " + geojson.string() + ": " + e.what());
  }
  std::optional<std::vector<std::pair<std::string, std::string>>> adj;
  if (adjacency_csv) {
    auto in = open_in(*adjacency_csv);
    adj = read_adjacency(in);
  }
  return parse_city(doc, adj);
}

json city_to_geojson(const geo::CityGraph& city) {
  json features = json::array();
  for (std::size_t i = 0; i < city.size(); ++i) {
    json geom;
    const auto& g = city.geometry(i);
    auto ring_json = [](const geo::Ring& r) {
      json ring = json::array();
      for (const auto& p : r) ring.push_back({p.x, p.y});
      if (!r.empty()) ring.push_back({r.front().x, r.front().y});
      return json::array({ring});
    };
    if (g.empty()) {
      geom = {{"type", "Point"}, {"coordinates", {city.centroid(i).x, city.centroid(i).y}}};
    } else if (g.parts.size() == 1) {
      geom = {{"type", "Polygon"}, {"coordinates", ring_json(g.parts[0])}};
    } else {
      json polys = json::array();
      for (const auto& r : g.parts) polys.push_back(ring_json(r));
      geom = {{"type", "MultiPolygon"}, {"coordinates", polys}};
    }
    features.push_back({{"type", "Feature"},
                        {"properties", {{"beat_id", city.beat_id(i)}, {"area_km2", city.area(i)}}},
                        {"geometry", geom}});
  }
  return {{"type", "FeatureCollection"}, {"features", features}};
}

void write_adjacency(std::ostream& out, const geo::CityGraph& city) {
  out << "beat_a,beat_b\n";
  for (const auto& [i, j] : city.edges()) out << csv_escape(city.beat_id(i)) << ',' << csv_escape(city.beat_id(j)) << '\n';
}

// ---------------------------------------------------------------------------
// Designs

geo::Design read_design(std::istream& in, const geo::CityGraph& city, std::optional<int> zone_count) {
  CsvReader reader(in, true);
  std::vector<std::string> row;
  if (!reader.next(row)) throw IngestError("design file is empty (missing header)");
  const auto pos = header_positions(row, {"beat_id", "zone_id"}, "design");
  std::vector<geo::BeatZone> raw;
  int k = 0;
  while (reader.next(row)) {
    if (std::max(pos[0], pos[1]) >= row.size()) {
      throw IngestError("design line " + std::to_string(reader.line()) + " has missing fields");
    }
    auto z = parse_int(row[pos[1]]);
    if (!z || *z < 1) {
      throw IngestError("design line " + std::to_string(reader.line()) + ": zone_id must be a positive integer");
    }
    raw.push_back({trim(row[pos[0]]), static_cast<int>(*z) - 1});
    k = std::max(k, static_cast<int>(*z));
  }
  return geo::make_design(city, raw, zone_count.value_or(k));
}

geo::Design read_design(const std::filesystem::path& path, const geo::CityGraph& city, std::optional<int> zone_count) {
  auto in = open_in(path);
  return read_design(in, city, zone_count);
}

void write_design(std::ostream& out, const geo::CityGraph& city, const geo::Design& design,
                  const std::vector<std::string>& comments) {
  for (const auto& c : comments) out << "# " << c << '\n';
  out << "beat_id,zone_id\n";
  for (std::size_t i = 0; i < city.size(); ++i) out << csv_escape(city.beat_id(i)) << ',' << design.zone_of(i) + 1 << '\n';
}

std::string read_file(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace zonedesign::ingest
