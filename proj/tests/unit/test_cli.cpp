#include <doctest.h>

#include "zonedesign/artifacts.hpp"
#include "zonedesign/cli.hpp"
#include "zonedesign/config.hpp"
#include "zonedesign/ingest.hpp"
#include "zonedesign/service.hpp"
#include "zonedesign/synthetic.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <unistd.h>

namespace fs = std::filesystem;
using namespace zonedesign;
using nlohmann::json;

namespace {

fs::path fixture_dir() {
  const char* d = std::getenv("ZD_FIXTURE_DIR");
  REQUIRE_MESSAGE(d != nullptr, "ZD_FIXTURE_DIR is not set; run through ctest");
  return d;
}

fs::path config_path() { return fixture_dir() / "config.json"; }

struct Run {
  int code = 0;
  std::string out, err;
};

Run zoned(std::vector<std::string> args) {
  std::vector<const char*> argv{"zoned"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

Run stage(const fs::path& dir, std::vector<std::string> args) {
  std::vector<std::string> all{"--config", config_path().string(), "--output-dir", dir.string()};
  all.insert(all.end(), args.begin(), args.end());
  return zoned(all);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("zoned_cli_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  return p;
}

const std::vector<std::vector<std::string>>& pipeline() {
  static const std::vector<std::vector<std::string>> steps = {
      {"ingest"},   {"estimate"}, {"predict"},     {"simulate"}, {"approx"},
      {"optimize"}, {"export-milp"}, {"evaluate"},
  };
  return steps;
}

/// Runs the whole pipeline once per directory name and remembers the result.
fs::path full_run(const std::string& name) {
  static struct Runs {
    std::map<std::string, fs::path> dirs;
    ~Runs() {
      std::error_code ec;
      for (const auto& [_, d] : dirs) fs::remove_all(d, ec);
    }
  } runs;
  auto& done = runs.dirs;
  if (auto it = done.find(name); it != done.end()) return it->second;
  const auto dir = scratch(name);
  for (const auto& step : pipeline()) {
    const auto r = stage(dir, step);
    INFO(step[0] << ": " << r.err);
    REQUIRE(r.code == cli::kExitOk);
  }
  done[name] = dir;
  return dir;
}

}  // namespace

TEST_CASE("pipeline runs end to end and reduces the variance") {
  const auto dir = full_run("a");
  for (const char* f : {artifacts::kIngestReport, artifacts::kCallsClean, artifacts::kRates, artifacts::kTau,
                        artifacts::kSimulate, artifacts::kSurrogate, artifacts::kDesignOut, artifacts::kTrace,
                        artifacts::kMilp, artifacts::kReport}) {
    CHECK_MESSAGE(fs::exists(dir / f), f);
  }
  const auto report = artifacts::read_json(dir / artifacts::kReport);
  const auto& ev = report["evaluation"];
  CHECK(ev["variance"]["surrogate"].get<double>() < ev["baseline_variance"]["surrogate"].get<double>());
  CHECK(ev["feasible"] == true);
  CHECK(report["table"]["rows"].size() == 2);

  const auto surrogate = artifacts::read_json(dir / artifacts::kSurrogate);
  CHECK(surrogate["training"]["r_squared"].get<double>() >= 0.95);
  CHECK(surrogate["holdout"]["count"] == 50);

  const auto rates = artifacts::read_json(dir / artifacts::kRates);
  CHECK(rates["lambda_source"].get<std::string>().rfind("predicted", 0) == 0);
  CHECK(rates["prediction"].is_object());

  // The exact model agrees that the redesign is better balanced.
  const auto exact = stage(dir, {"evaluate", "--exact"});
  REQUIRE(exact.code == 0);
  const auto er = artifacts::read_json(dir / artifacts::kReport)["evaluation"];
  CHECK(er["variance"]["exact"].get<double>() < er["baseline_variance"]["exact"].get<double>());
  CHECK(exact.out.find("evaluate: exact variance") == 0);
}

TEST_CASE("artifacts are reproducible and carry the config hash") {
  const auto a = full_run("a");
  const auto b = full_run("b");
  const auto hash = config::RunConfig::load(config_path()).hash();
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    const auto name = e.path().filename();
    if (name == artifacts::kReport) continue;  // rewritten by other cases
    ++files;
    const auto left = slurp(e.path());
    CHECK_MESSAGE(left == slurp(b / name), name.string());
    CHECK_MESSAGE(left.find(hash) != std::string::npos, name.string());
  }
  CHECK(files >= 9);
  // A different root seed changes the hash.
  auto cfg = config::RunConfig::load(config_path());
  cfg.seed += 1;
  CHECK(cfg.hash() != hash);
  cfg.seed -= 1;
  cfg.output_dir = "elsewhere";
  CHECK(cfg.hash() == hash);

  // Command-line overrides are part of the effective configuration.
  const auto c = scratch("override");
  fs::copy(a, c);
  REQUIRE(stage(c, {"approx", "--samples", "100", "--holdout", "10"}).code == 0);
  const auto s = artifacts::read_json(c / artifacts::kSurrogate);
  CHECK(s["config_hash"] != hash);
  CHECK(s["holdout"]["count"] == 10);
  fs::remove_all(c);
}

TEST_CASE("simulate agrees with the queue library") {
  const auto dir = full_run("a");
  const auto cfg = config::RunConfig::load(config_path());
  const auto city = ingest::load_city(cfg.resolve(cfg.paths.city));
  const auto base = ingest::read_design(cfg.resolve(*cfg.paths.base_design), city);
  const auto in = artifacts::load_queue_inputs(dir, city);
  const approx::ZoneSolver solver(city, in);
  const auto sim = artifacts::read_json(dir / artifacts::kSimulate);
  CHECK(sim["variance_hours2"].get<double>() == approx::exact_objective(base, solver));
  const auto w = solver.zone_workloads(base);
  for (std::size_t k = 0; k < w.size(); ++k) {
    CHECK(sim["zones"][k]["zone_workload_hours_per_year"].get<double>() == w[k]);
  }

  const auto q = scratch("q");
  REQUIRE(stage(dir, {"simulate", "--dump-q", q.string()}).code == 0);
  const auto mtx = slurp(q / "zone_1.mtx");
  CHECK(mtx.rfind("%%MatrixMarket", 0) == 0);
  CHECK(mtx.find("config_hash=" + cfg.hash()) != std::string::npos);
  fs::remove_all(q);
}

TEST_CASE("service evaluation matches the CLI report") {
  const auto dir = full_run("a");
  REQUIRE(stage(dir, {"evaluate"}).code == 0);
  const auto report = artifacts::read_json(dir / artifacts::kReport);
  auto cfg = config::RunConfig::load(config_path());
  cfg.output_dir = dir.string();
  service::ServiceCore core;
  core.initialize(service::Engine::from_config(cfg));
  const auto city = ingest::load_city(cfg.resolve(cfg.paths.city));
  const auto design = ingest::read_design(dir / artifacts::kDesignOut, city);
  const auto body = json{{"assignment", artifacts::design_to_json(city, design)}}.dump();
  const auto r = core.handle("POST", "/evaluate", body);
  REQUIRE(r.status == 200);
  const auto j = json::parse(r.body);
  CHECK(j["variance"]["surrogate"].get<double>() == report["evaluation"]["variance"]["surrogate"].get<double>());
  CHECK(j == report["evaluation"]);
}

TEST_CASE("zero shift budget keeps the base design") {
  const auto src = full_run("a");
  const auto dir = scratch("zero");
  fs::copy(src, dir);
  const auto r = stage(dir, {"optimize", "--max-shifts", "0"});
  REQUIRE(r.code == 0);
  const auto cfg = config::RunConfig::load(config_path());
  const auto city = ingest::load_city(cfg.resolve(cfg.paths.city));
  CHECK(ingest::read_design(dir / artifacts::kDesignOut, city) ==
        ingest::read_design(cfg.resolve(*cfg.paths.base_design), city));
  CHECK(r.out.find("0 beat(s) moved") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("missing artifacts and usage errors") {
  const auto dir = scratch("empty");
  const auto sim = stage(dir, {"simulate"});
  CHECK(sim.code == cli::kExitDomain);
  CHECK(sim.err.find("run `zoned estimate` first") != std::string::npos);
  const auto opt = stage(dir, {"optimize"});
  CHECK(opt.code == cli::kExitDomain);
  CHECK(opt.err.find("run `zoned") != std::string::npos);

  CHECK(zoned({"--config", config_path().string()}).code == cli::kExitUsage);
  CHECK(zoned({"--config", config_path().string(), "frobnicate"}).code == cli::kExitUsage);
  CHECK(zoned({"--config", (dir / "nope.json").string(), "ingest"}).code == cli::kExitUsage);
  CHECK(stage(dir, {"approx", "--samples", "many"}).code == cli::kExitUsage);
  CHECK(stage(dir, {"optimize", "--evaluator", "oracle"}).code == cli::kExitUsage);
  CHECK(stage(dir, {"did", "--period1", "x"}).code == cli::kExitUsage);
  CHECK(zoned({"--help"}).code == cli::kExitOk);
  fs::remove_all(dir);
}

TEST_CASE("did over three one-year call logs") {
  const auto dir = full_run("a");
  const auto logs = scratch("did");
  fs::create_directories(logs);
  const auto inst = synthetic::grid_fixture(7);
  std::vector<std::string> paths;
  for (int y = 0; y < 3; ++y) {
    synthetic::CallLogOptions o;
    o.first_year = 2016 + y;
    o.seed = 40 + static_cast<std::uint64_t>(y);
    std::vector<double> l = inst.lambda;
    if (y == 2) l[0] *= 0.5;  // the last period loses load in one beat
    o.yearly_lambda = {l};
    const auto calls = synthetic::simulate_call_log(inst, o);
    const auto p = logs / ("calls_" + std::to_string(y) + ".csv");
    std::ofstream out(p);
    ingest::write_calls(out, calls, inst.city);
    paths.push_back(p.string());
  }
  const auto r = stage(dir, {"did", "--period1", paths[0], "--period2", paths[1], "--period3", paths[2],
                             "--normalize-first", "1", "--normalize-last", "60"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto csv = slurp(dir / artifacts::kDid);
  CHECK(csv.rfind("# config_hash=", 0) == 0);
  CHECK(csv.find("day,delta_before,delta_after\n") != std::string::npos);
  CHECK(r.out.find("fraction below diagonal") != std::string::npos);
  fs::remove_all(logs);
}
