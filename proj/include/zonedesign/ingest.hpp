#pragma once

#include "zonedesign/estimate.hpp"
#include "zonedesign/geo.hpp"

#include <json.hpp>

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace zonedesign::ingest {

/// Hard input error: unreadable file, malformed header, broken GeoJSON.
class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kBadTimestamp = "bad_timestamp";
inline constexpr const char* kTimelineViolation = "timeline_violation";
inline constexpr const char* kUnknownBeat = "unknown_beat";
inline constexpr const char* kMissingField = "missing_field";
inline constexpr const char* kNonNumeric = "non_numeric";
inline constexpr const char* kDuplicateRow = "duplicate_row";

struct RowError {
  std::size_t line = 0;  // 1-based physical line of the record start
  std::string reason;
  std::string detail;
};

struct IngestReport {
  std::size_t rows_read = 0;
  std::size_t rows_accepted = 0;
  std::size_t rows_rejected = 0;
  std::map<std::string, std::size_t> reasons;
  std::vector<RowError> errors;
  std::vector<std::string> unknown_beats;  // distinct ids, first-seen order

  double acceptance_rate() const {
    return rows_read == 0 ? 1.0 : static_cast<double>(rows_accepted) / static_cast<double>(rows_read);
  }
  void reject(std::size_t line, const std::string& reason, std::string detail);
  nlohmann::json to_json() const;
};

/// Thrown when fewer rows than the threshold were accepted.
class AcceptanceError : public IngestError {
 public:
  AcceptanceError(IngestReport report, double threshold);
  const IngestReport& report() const { return report_; }

 private:
  IngestReport report_;
};

/// RFC 4180 record reader: quoted fields, doubled quotes, embedded newlines.
class CsvReader {
 public:
  explicit CsvReader(std::istream& in, bool skip_comments = false);
  /// Reads the next record; false at end of input. Blank lines are skipped.
  bool next(std::vector<std::string>& fields);
  std::size_t line() const { return record_line_; }

 private:
  std::istream& in_;
  bool skip_comments_;
  std::size_t line_ = 0;
  std::size_t record_line_ = 0;
};

std::string csv_escape(const std::string& field);

struct CallIngest {
  std::vector<estimate::CallRecord> records;
  IngestReport report;
};

/// Columns: call_time,dispatch_time,arrive_time,clear_time,origin_beat,
/// incident_beat,priority. Extra columns are ignored.
CallIngest ingest_calls(std::istream& in, const geo::CityGraph& city, double min_acceptance = 0.99);
CallIngest ingest_calls(const std::filesystem::path& path, const geo::CityGraph& city,
                        double min_acceptance = 0.99);

void write_calls(std::ostream& out, std::span<const estimate::CallRecord> records, const geo::CityGraph& city);

/// A covariate cell that was filled rather than observed.
struct CovariateFlag {
  std::string beat;
  int year = 0;
  int source_year = 0;
  bool backfilled = false;  // filled from a later year (no earlier observation)
};

struct CovariateIngest {
  estimate::CovariateTable table;
  std::vector<CovariateFlag> flags;
  IngestReport report;
};

/// Columns: beat_id,year,<factor...>. Output covers every city beat for each
/// requested year; gaps use the beat's last earlier observation.
CovariateIngest ingest_covariates(std::istream& in, const geo::CityGraph& city, std::span<const int> years);
CovariateIngest ingest_covariates(const std::filesystem::path& path, const geo::CityGraph& city,
                                  std::span<const int> years);

void write_covariates(std::ostream& out, const estimate::CovariateTable& table, const geo::CityGraph& city);

/// Every year present in a covariate file, ascending.
std::vector<int> covariate_years(const std::filesystem::path& path);

/// GeoJSON FeatureCollection with `beat_id` and optional `area_km2`
/// properties. Coordinates are planar kilometres. Adjacency comes from the
/// CSV when given, otherwise from shared polygon edges.
geo::CityGraph load_city(const std::filesystem::path& geojson,
                         const std::optional<std::filesystem::path>& adjacency_csv = std::nullopt);
geo::CityGraph parse_city(const nlohmann::json& geojson,
                          const std::optional<std::vector<std::pair<std::string, std::string>>>& adjacency);
std::vector<std::pair<std::string, std::string>> read_adjacency(std::istream& in);

nlohmann::json city_to_geojson(const geo::CityGraph& city);
void write_adjacency(std::ostream& out, const geo::CityGraph& city);

/// Design CSV `beat_id,zone_id` with 1-based zone ids; `#` lines are comments.
/// K is the largest zone id unless `zone_count` is given.
geo::Design read_design(std::istream& in, const geo::CityGraph& city, std::optional<int> zone_count = std::nullopt);
geo::Design read_design(const std::filesystem::path& path, const geo::CityGraph& city,
                        std::optional<int> zone_count = std::nullopt);
void write_design(std::ostream& out, const geo::CityGraph& city, const geo::Design& design,
                  const std::vector<std::string>& comments = {});

std::string read_file(const std::filesystem::path& path);

}  // namespace zonedesign::ingest
