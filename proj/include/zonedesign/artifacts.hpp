#pragma once

// Pipeline artifacts in the output directory: fixed file names, the stage
// that produces each one, and readers/writers shared by the CLI and service.

#include "zonedesign/approx.hpp"
#include "zonedesign/estimate.hpp"
#include "zonedesign/geo.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace zonedesign::artifacts {

inline constexpr const char* kIngestReport = "ingest_report.json";
inline constexpr const char* kCallsClean = "calls_clean.csv";
inline constexpr const char* kRates = "rates.json";
inline constexpr const char* kTau = "tau.csv";
inline constexpr const char* kSimulate = "simulate.json";
inline constexpr const char* kSurrogate = "surrogate.json";
inline constexpr const char* kDesignOut = "design_out.csv";
inline constexpr const char* kTrace = "trace.jsonl";
inline constexpr const char* kMilp = "milp.lp";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kDid = "did_points.csv";

/// A prior stage's output is absent. The message names the subcommand to run.
class MissingArtifact : public std::runtime_error {
 public:
  MissingArtifact(const std::filesystem::path& path, const std::string& producer);
  const std::string& producer() const { return producer_; }

 private:
  std::string producer_;
};

class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// dir / name, or MissingArtifact naming `producer`.
std::filesystem::path require(const std::filesystem::path& dir, const char* name, const char* producer);

/// Provenance written into every artifact.
struct Stamp {
  std::string config_hash;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  /// "config_hash=<h> seed=<s>"
  std::string line() const;
};

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

/// Square travel matrix with a header row of beat ids, seconds.
void write_tau(std::ostream& out, const Eigen::MatrixXd& tau, const geo::CityGraph& city, const Stamp& stamp);
Eigen::MatrixXd read_tau(const std::filesystem::path& path, const geo::CityGraph& city);

nlohmann::json arrival_model_to_json(const estimate::ArrivalModel& m, const geo::CityGraph& city);
estimate::ArrivalModel arrival_model_from_json(const nlohmann::json& j, const geo::CityGraph& city);

/// Per-beat values keyed by beat id.
nlohmann::json beat_map(const geo::CityGraph& city, const std::vector<double>& values);
std::vector<double> beat_vector(const nlohmann::json& j, const geo::CityGraph& city);

/// Rates the queue model uses: `lambda` in rates.json (predicted when the
/// predict stage has run) with mu, plus tau.csv.
approx::QueueInputs load_queue_inputs(const std::filesystem::path& dir, const geo::CityGraph& city);

approx::LinearWorkloadModel load_surrogate(const std::filesystem::path& dir, const geo::CityGraph& city);

/// `beat_id -> 1-based zone` object.
nlohmann::json design_to_json(const geo::CityGraph& city, const geo::Design& design);

}  // namespace zonedesign::artifacts
