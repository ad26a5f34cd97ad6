// Writes the bundled 5x5 synthetic city: geometry, base design, covariates,
// a run config and (unless --no-calls) a multi-year call log.

#include "zonedesign/ingest.hpp"
#include "zonedesign/synthetic.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace zonedesign;

int main(int argc, char** argv) {
  CLI::App app{"Generate the 5x5 grid fixture", "zoned-fixture"};
  std::string out_dir = "data/grid5x5";
  std::uint64_t seed = 7;
  int first_year = 2015, years = 3;
  double growth = 0.04;
  bool no_calls = false;
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--seed", seed, "Seed for rates, covariates and calls");
  app.add_option("--first-year", first_year, "First year of the call log");
  app.add_option("--years", years, "Years of calls")->check(CLI::Range(1, 20));
  app.add_option("--growth", growth, "Yearly growth of every beat's call rate");
  app.add_flag("--no-calls", no_calls, "Skip the call log");
  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path dir(out_dir);
    fs::create_directories(dir);
    const auto inst = synthetic::grid_fixture(seed);

    std::ofstream(dir / "city.geojson") << ingest::city_to_geojson(inst.city).dump(1) << '\n';
    {
      std::ofstream out(dir / "design.csv");
      ingest::write_design(out, inst.city, inst.base, {"5x5 grid, three column-band zones"});
    }
    // Covariates run one year past the calls so that predict has a future year.
    std::vector<int> cov_years;
    for (int y = 0; y <= years; ++y) cov_years.push_back(first_year + y);
    {
      std::ofstream out(dir / "covariates.csv");
      ingest::write_covariates(out, synthetic::random_covariates(inst.city, cov_years, 2, seed + 1), inst.city);
    }
    const nlohmann::json cfg = {
        {"paths",
         {{"city", "city.geojson"}, {"calls", "calls.csv"}, {"covariates", "covariates.csv"}, {"base_design", "design.csv"}}},
        {"output_dir", "out"},
        {"seed", 1},
        {"model", {{"p", 1}, {"spatial_lag", false}}},
        {"approx", {{"samples", 500}, {"max_shifts", 3}, {"holdout", 50}}},
        {"constraints", {{"max_shifts", 6}}},
        {"anneal", {{"evaluator", "surrogate"}}}};
    std::ofstream(dir / "config.json") << cfg.dump(2) << '\n';

    if (!no_calls) {
      synthetic::CallLogOptions o;
      o.first_year = first_year;
      o.years = years;
      o.seed = seed + 2;
      for (int y = 0; y < years; ++y) {
        std::vector<double> l = inst.lambda;
        for (auto& v : l) v *= std::pow(1.0 + growth, y);
        o.yearly_lambda.push_back(std::move(l));
      }
      const auto calls = synthetic::simulate_call_log(inst, o);
      std::ofstream out(dir / "calls.csv");
      ingest::write_calls(out, calls, inst.city);
      std::cout << "zoned-fixture: " << calls.size() << " calls over " << years << " year(s) in " << dir.string() << '\n';
    } else {
      std::cout << "zoned-fixture: wrote " << dir.string() << " without calls\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "zoned-fixture: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
