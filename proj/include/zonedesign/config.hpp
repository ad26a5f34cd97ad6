#pragma once

#include "zonedesign/geo.hpp"
#include "zonedesign/optimize.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace zonedesign::config {

/// Unreadable or inconsistent configuration (a usage error at the CLI).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Paths {
  std::string city;
  std::optional<std::string> adjacency;
  std::optional<std::string> calls;
  std::optional<std::string> covariates;
  std::optional<std::string> base_design;
};

struct ModelConfig {
  int p = 1;
  std::optional<double> kernel_theta;
  bool use_kernel = true;
  bool spatial_lag = true;
  std::optional<double> mu_override;  // per hour
  bool include_travel = false;        // service time from dispatch instead of arrival
  double min_acceptance = 0.99;
};

struct ApproxConfig {
  std::size_t samples = 500;
  std::size_t max_shifts = 3;
  std::size_t holdout = 50;
  unsigned threads = 0;
};

/// Beat ids and 1-based zone numbers as written in the file.
struct ConstraintConfig {
  std::size_t max_shifts = 6;
  std::vector<std::pair<std::string, int>> pins;
  std::vector<std::pair<int, int>> forbidden_transfers;
  std::optional<std::size_t> n_max;
  std::optional<double> zeta1;
  std::optional<double> zeta2;

  /// Defaults from the base design, overridden by whatever is set here.
  geo::DesignConstraints resolve(const geo::CityGraph& city, const geo::Design& base) const;
  nlohmann::json to_json() const;
  static ConstraintConfig from_json(const nlohmann::json& j);
};

struct AnnealConfig {
  optimize::AnnealingConfig schedule;  // seed is derived from the root seed
  std::string evaluator = "surrogate";  // or "exact"
};

struct RunConfig {
  Paths paths;
  std::string output_dir = "out";
  std::uint64_t seed = 1;
  ModelConfig model;
  ApproxConfig approx;
  ConstraintConfig constraints;
  AnnealConfig anneal;
  int port = 8080;
  std::optional<std::string> static_dir;

  /// Directory relative paths are resolved against (the config file's).
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& p) const;
  std::filesystem::path output_path() const { return resolve(output_dir); }

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j, std::filesystem::path base_dir);
  static RunConfig load(const std::filesystem::path& path);

  /// 16 hex digits of FNV-1a over the canonical JSON, leaving out the output
  /// directory, service settings and thread count.
  std::string hash() const;
};

std::uint64_t fnv1a64(std::string_view bytes);

/// Independent stream seed for a named stage, derived from the root seed.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stage);

}  // namespace zonedesign::config
