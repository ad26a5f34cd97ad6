#include "zonedesign/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace zonedesign::config {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  const std::set<std::string> k(known.begin(), known.end());
  for (const auto& [key, _] : j.items()) {
    if (!k.contains(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <class T>
std::optional<T> opt(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<T>();
}

template <class T>
json opt_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view stage) {
  // splitmix64 finaliser over the root xor the stage name hash
  std::uint64_t z = root ^ fnv1a64(stage);
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

geo::DesignConstraints ConstraintConfig::resolve(const geo::CityGraph& city, const geo::Design& base) const {
  geo::DesignConstraints c = optimize::default_constraints(city, base, max_shifts);
  if (n_max) c.n_max = *n_max;
  if (zeta1) c.zeta1 = *zeta1;
  if (zeta2) c.zeta2 = *zeta2;
  for (const auto& [beat, zone] : pins) {
    if (zone < 1 || zone > base.zone_count()) {
      throw ConfigError("pin for beat " + beat + " names zone " + std::to_string(zone) + " outside 1.." +
                        std::to_string(base.zone_count()));
    }
    const auto idx = city.index_of(beat);
    if (!idx) throw ConfigError("pin names unknown beat " + beat);
    c.pinned.emplace_back(*idx, zone - 1);
  }
  for (const auto& [from, to] : forbidden_transfers) {
    if (from < 1 || to < 1 || from > base.zone_count() || to > base.zone_count() || from == to) {
      throw ConfigError("forbidden transfer " + std::to_string(from) + "->" + std::to_string(to) +
                        " is not a pair of distinct zones");
    }
    c.forbidden_transfers.emplace(from - 1, to - 1);
  }
  try {
    c.check(city.size(), base.zone_count());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("constraints: ") + e.what());
  }
  return c;
}

json ConstraintConfig::to_json() const {
  json pj = json::array();
  for (const auto& [b, z] : pins) pj.push_back({b, z});
  json fj = json::array();
  for (const auto& [a, b] : forbidden_transfers) fj.push_back({a, b});
  return {{"max_shifts", max_shifts}, {"pins", pj},         {"forbidden_transfers", fj},
          {"n_max", opt_json(n_max)}, {"zeta1", opt_json(zeta1)}, {"zeta2", opt_json(zeta2)}};
}

ConstraintConfig ConstraintConfig::from_json(const json& j) {
  reject_unknown(j, "constraints", {"max_shifts", "pins", "forbidden_transfers", "n_max", "zeta1", "zeta2"});
  ConstraintConfig c;
  c.max_shifts = j.value("max_shifts", c.max_shifts);
  for (const auto& p : j.value("pins", json::array())) {
    if (!p.is_array() || p.size() != 2) throw ConfigError("pins entries are [beat_id, zone]");
    const std::string beat = p[0].is_string() ? p[0].get<std::string>() : p[0].dump();
    c.pins.emplace_back(beat, p[1].get<int>());
  }
  for (const auto& p : j.value("forbidden_transfers", json::array())) {
    if (!p.is_array() || p.size() != 2) throw ConfigError("forbidden_transfers entries are [from_zone, to_zone]");
    c.forbidden_transfers.emplace_back(p[0].get<int>(), p[1].get<int>());
  }
  c.n_max = opt<std::size_t>(j, "n_max");
  c.zeta1 = opt<double>(j, "zeta1");
  c.zeta2 = opt<double>(j, "zeta2");
  return c;
}

std::filesystem::path RunConfig::resolve(const std::string& p) const {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

json RunConfig::to_json() const {
  const auto& s = anneal.schedule;
  return {
      {"paths",
       {{"city", paths.city},
        {"adjacency", opt_json(paths.adjacency)},
        {"calls", opt_json(paths.calls)},
        {"covariates", opt_json(paths.covariates)},
        {"base_design", opt_json(paths.base_design)}}},
      {"output_dir", output_dir},
      {"seed", seed},
      {"model",
       {{"p", model.p},
        {"kernel_theta", opt_json(model.kernel_theta)},
        {"use_kernel", model.use_kernel},
        {"spatial_lag", model.spatial_lag},
        {"mu_override", opt_json(model.mu_override)},
        {"include_travel", model.include_travel},
        {"min_acceptance", model.min_acceptance}}},
      {"approx",
       {{"samples", approx.samples},
        {"max_shifts", approx.max_shifts},
        {"holdout", approx.holdout},
        {"threads", approx.threads}}},
      {"constraints", constraints.to_json()},
      {"anneal",
       {{"initial_temp", opt_json(s.initial_temp)},
        {"cooling_rate", s.cooling_rate},
        {"iters_per_temp", s.iters_per_temp},
        {"max_temps", s.max_temps},
        {"stall_limit", s.stall_limit},
        {"evaluator", anneal.evaluator}}},
      {"service", {{"port", port}, {"static_dir", opt_json(static_dir)}}},
  };
}

RunConfig RunConfig::from_json(const json& j, std::filesystem::path base_dir) {
  RunConfig c;
  c.base_dir = std::move(base_dir);
  try {
    reject_unknown(j, "config", {"paths", "output_dir", "seed", "model", "approx", "constraints", "anneal", "service"});
    if (!j.contains("paths")) throw ConfigError("config needs a 'paths' section with at least 'city'");
    const json& p = j["paths"];
    reject_unknown(p, "paths", {"city", "adjacency", "calls", "covariates", "base_design"});
    if (!p.contains("city")) throw ConfigError("paths.city is required");
    c.paths.city = p["city"].get<std::string>();
    c.paths.adjacency = opt<std::string>(p, "adjacency");
    c.paths.calls = opt<std::string>(p, "calls");
    c.paths.covariates = opt<std::string>(p, "covariates");
    c.paths.base_design = opt<std::string>(p, "base_design");
    c.output_dir = j.value("output_dir", c.output_dir);
    c.seed = j.value("seed", c.seed);

    if (j.contains("model")) {
      const json& m = j["model"];
      reject_unknown(m, "model",
                     {"p", "kernel_theta", "use_kernel", "spatial_lag", "mu_override", "include_travel",
                      "min_acceptance"});
      c.model.p = m.value("p", c.model.p);
      c.model.kernel_theta = opt<double>(m, "kernel_theta");
      c.model.use_kernel = m.value("use_kernel", c.model.use_kernel);
      c.model.spatial_lag = m.value("spatial_lag", c.model.spatial_lag);
      c.model.mu_override = opt<double>(m, "mu_override");
      c.model.include_travel = m.value("include_travel", c.model.include_travel);
      c.model.min_acceptance = m.value("min_acceptance", c.model.min_acceptance);
      if (c.model.p < 0) throw ConfigError("model.p must be >= 0");
      if (c.model.mu_override && !(*c.model.mu_override > 0.0)) throw ConfigError("model.mu_override must be > 0");
    }
    if (j.contains("approx")) {
      const json& a = j["approx"];
      reject_unknown(a, "approx", {"samples", "max_shifts", "holdout", "threads"});
      c.approx.samples = a.value("samples", c.approx.samples);
      c.approx.max_shifts = a.value("max_shifts", c.approx.max_shifts);
      c.approx.holdout = a.value("holdout", c.approx.holdout);
      c.approx.threads = a.value("threads", c.approx.threads);
    }
    if (j.contains("constraints")) c.constraints = ConstraintConfig::from_json(j["constraints"]);
    if (j.contains("anneal")) {
      const json& a = j["anneal"];
      reject_unknown(a, "anneal",
                     {"initial_temp", "cooling_rate", "iters_per_temp", "max_temps", "stall_limit", "evaluator"});
      auto& s = c.anneal.schedule;
      if (a.contains("initial_temp") && a["initial_temp"].is_number()) s.initial_temp = a["initial_temp"].get<double>();
      s.cooling_rate = a.value("cooling_rate", s.cooling_rate);
      s.iters_per_temp = a.value("iters_per_temp", s.iters_per_temp);
      s.max_temps = a.value("max_temps", s.max_temps);
      s.stall_limit = a.value("stall_limit", s.stall_limit);
      c.anneal.evaluator = a.value("evaluator", c.anneal.evaluator);
      if (c.anneal.evaluator != "surrogate" && c.anneal.evaluator != "exact") {
        throw ConfigError("anneal.evaluator must be 'surrogate' or 'exact'");
      }
      try {
        s.check();
      } catch (const optimize::OptimizeError& e) {
        throw ConfigError(std::string("anneal: ") + e.what());
      }
    }
    if (j.contains("service")) {
      const json& s = j["service"];
      reject_unknown(s, "service", {"port", "static_dir"});
      c.port = s.value("port", c.port);
      c.static_dir = opt<std::string>(s, "static_dir");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, std::filesystem::absolute(path).parent_path());
}

std::string RunConfig::hash() const {
  char buf[17];
  // Only settings that can change an artifact's content take part.
  json j = to_json();
  j.erase("output_dir");
  j.erase("service");
  j["approx"].erase("threads");
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

}  // namespace zonedesign::config
