#include <doctest.h>

#include "zonedesign/estimate.hpp"
#include "zonedesign/synthetic.hpp"

#include <random>

using namespace zonedesign;
using estimate::CallRecord;

namespace {

CallRecord record(std::size_t from, std::size_t to, double travel_s, double scene_s = 600.0) {
  CallRecord r;
  r.call_time = utc_time(2016, 3, 1, 10, 0, 0.0);
  r.dispatch_time = r.call_time + std::chrono::seconds(60);
  r.arrive_time = r.dispatch_time + std::chrono::milliseconds(static_cast<long long>(travel_s * 1000));
  r.clear_time = r.arrive_time + std::chrono::milliseconds(static_cast<long long>(scene_s * 1000));
  r.origin_beat = from;
  r.incident_beat = to;
  r.priority = 1;
  return r;
}

geo::CityGraph single_beat() {
  return geo::CityGraph({{"only", 1.0, {0, 0}, {}}}, {});
}

}  // namespace

TEST_CASE("timeline decomposition") {
  auto r = record(0, 1, 300.0);
  CHECK(r.timeline_ok());
  CHECK(r.waiting_s() == 60.0);
  CHECK(r.travel_s() == 300.0);
  CHECK(r.response_s() == r.waiting_s() + r.travel_s());
  CHECK(r.service_s() == 900.0);
  std::swap(r.arrive_time, r.dispatch_time);
  CHECK_FALSE(r.timeline_ok());
}

TEST_CASE("travel matrix means and imputation chain") {
  auto city = synthetic::grid_city(1, 3);
  std::vector<CallRecord> recs{record(0, 1, 100), record(0, 1, 200), record(2, 1, 300)};
  auto est = estimate::estimate_travel_matrix(recs, city);
  CHECK(est.tau(0, 1) == doctest::Approx(150.0));
  CHECK(est.counts(0, 1) == 2);
  CHECK(est.std_error(0, 1) == doctest::Approx(50.0));
  CHECK(std::isnan(est.std_error(2, 1)));
  CHECK(est.cell_source(0, 1) == estimate::CellSource::observed);
  // Reverse direction.
  CHECK(est.tau(1, 0) == doctest::Approx(150.0));
  CHECK(est.cell_source(1, 0) == estimate::CellSource::reverse);
  CHECK(est.tau(1, 2) == doctest::Approx(300.0));
  // (0, 2): row 0 mean 150, column 2 has nothing -> 150.
  CHECK(est.cell_source(0, 2) == estimate::CellSource::row_col_mean);
  CHECK(est.tau(0, 2) == doctest::Approx(150.0));
  // (1, 1): row 1 has no observations, column 1 mean (150 + 300) / 2.
  CHECK(est.tau(1, 1) == doctest::Approx(225.0));
  CHECK(est.imputed == 7);
  CHECK_FALSE(est.warnings.empty());
  CHECK_THROWS_AS(estimate::estimate_travel_matrix(std::vector<CallRecord>{}, city), estimate::EstimationError);
}

TEST_CASE("zone and global fallbacks") {
  auto city = synthetic::grid_city(1, 4);
  std::vector<CallRecord> recs{record(0, 0, 100), record(2, 2, 500)};
  geo::Design zones({0, 0, 1, 1}, 2);
  auto est = estimate::estimate_travel_matrix(recs, city, &zones);
  // (1, 3): row 1 empty, column 3 empty; zone pair (0, 1) has no observation -> global.
  CHECK(est.cell_source(1, 3) == estimate::CellSource::global_mean);
  CHECK(est.tau(1, 3) == doctest::Approx(300.0));
  // (3, 3): zone pair (1, 1) observed via (2, 2).
  CHECK(est.cell_source(3, 3) == estimate::CellSource::zone_mean);
  CHECK(est.tau(3, 3) == doctest::Approx(500.0));
}

TEST_CASE("service rate fit") {
  std::vector<double> flat(40, 600.0);
  auto fit = estimate::fit_exponential(flat);
  CHECK(fit.mu_per_hour == doctest::Approx(6.0));
  CHECK(fit.mean_minutes == doctest::Approx(10.0));
  CHECK(fit.ks_distance == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-12));
  CHECK_THROWS_AS(estimate::fit_exponential(std::vector<double>(29, 1.0)), estimate::EstimationError);

  std::mt19937_64 rng(9);
  const double mu_star = 60.0 / 31.2;
  std::exponential_distribution<double> e(mu_star);
  std::vector<CallRecord> recs;
  for (int i = 0; i < 5000; ++i) recs.push_back(record(0, 0, 120.0, e(rng) * 3600.0));
  auto est = estimate::estimate_service_rate(recs);
  CHECK(std::abs(est.mu_per_hour - mu_star) < 3.0 * est.std_error_per_hour);
  CHECK(est.ks_distance < 0.05);
  auto with_travel = estimate::estimate_service_rate(recs, true);
  CHECK(with_travel.mu_per_hour < est.mu_per_hour);
}

TEST_CASE("annual rates count incident beats per UTC year") {
  auto city = synthetic::grid_city(1, 2);
  std::vector<CallRecord> recs{record(0, 1, 10), record(0, 1, 10), record(1, 0, 10)};
  recs[2].call_time = utc_time(2017, 1, 1, 0, 0, 1.0);
  std::vector<int> years{2016, 2017};
  auto h = estimate::annual_rates(recs, city, years);
  CHECK(h.rates(1, 0) == doctest::Approx(2.0 / 8760.0));
  CHECK(h.rates(0, 1) == doctest::Approx(1.0 / 8760.0));
  CHECK(h.rates(0, 0) == 0.0);
}

TEST_CASE("no spatial lag and identity covariance reduces to OLS") {
  auto city = synthetic::grid_city(2, 2);
  std::vector<int> years{2010, 2011, 2012, 2013};
  auto cov = synthetic::random_covariates(city, years, 1, 4);
  estimate::RateHistory h;
  h.years = years;
  h.rates.resize(4, 4);
  h.rates.col(0) << 1.0, 2.0, 3.0, 4.0;
  const double b0 = 0.8, b1 = 0.5, b2 = -0.25;
  for (int l = 1; l < 4; ++l) {
    h.rates.col(l) = b0 * h.rates.col(l - 1) + b1 * cov.values[static_cast<std::size_t>(l)].col(0) +
                     b2 * cov.values[static_cast<std::size_t>(l - 1)].col(0);
  }
  estimate::ArrivalFitOptions o;
  o.use_kernel = false;
  o.estimate_spatial_lag = false;
  auto m = estimate::fit_arrival_model(h, cov, city, o);
  CHECK(m.beta0 == doctest::Approx(b0).epsilon(1e-10));
  CHECK(m.beta[0](0) == doctest::Approx(b1).epsilon(1e-10));
  CHECK(m.beta[1](0) == doctest::Approx(b2).epsilon(1e-10));
  CHECK(m.alpha.isZero());

  // Noisy data: closed-form OLS on the stacked design.
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z(0.0, 0.1);
  for (int l = 1; l < 4; ++l) {
    for (int i = 0; i < 4; ++i) h.rates(i, l) += z(rng);
  }
  Eigen::MatrixXd x(12, 3);
  Eigen::VectorXd y(12);
  for (int l = 1; l < 4; ++l) {
    for (int i = 0; i < 4; ++i) {
      const int row = (l - 1) * 4 + i;
      x(row, 0) = h.rates(i, l - 1);
      x(row, 1) = cov.values[static_cast<std::size_t>(l)](i, 0);
      x(row, 2) = cov.values[static_cast<std::size_t>(l - 1)](i, 0);
      y(row) = h.rates(i, l);
    }
  }
  const Eigen::VectorXd ols = x.colPivHouseholderQr().solve(y);
  m = estimate::fit_arrival_model(h, cov, city, o);
  CHECK(m.beta0 == doctest::Approx(ols(0)).epsilon(1e-9));
  CHECK(m.beta[0](0) == doctest::Approx(ols(1)).epsilon(1e-9));
  CHECK(m.beta[1](0) == doctest::Approx(ols(2)).epsilon(1e-9));
  const double resid = (y - x * ols).squaredNorm();
  CHECK(m.kernel_theta1 == doctest::Approx(resid / 12.0));
}

TEST_CASE("single beat geometric series") {
  auto city = single_beat();
  std::vector<int> years{1, 2, 3, 4, 5};
  estimate::CovariateTable cov;
  cov.years = years;
  for (std::size_t l = 0; l < years.size(); ++l) cov.values.emplace_back(1, 0);
  estimate::RateHistory h{years, Eigen::MatrixXd(1, 5)};
  h.rates << 2.0, 1.5, 1.125, 0.84375, 0.6328125;
  auto m = estimate::fit_arrival_model(h, cov, city);
  CHECK(m.beta0 == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("rank deficiency lists collinear columns") {
  auto city = synthetic::grid_city(2, 2);
  std::vector<int> years{2010, 2011, 2012, 2013};
  auto cov = synthetic::random_covariates(city, years, 1, 4);
  cov.factors.push_back("copy");
  for (auto& v : cov.values) {
    Eigen::MatrixXd w(v.rows(), 2);
    w << v, 2.0 * v;
    v = w;
  }
  estimate::RateHistory h{years, Eigen::MatrixXd::Random(4, 4).cwiseAbs()};
  estimate::ArrivalFitOptions o;
  o.p = 0;
  try {
    estimate::fit_arrival_model(h, cov, city, o);
    FAIL("expected rank error");
  } catch (const estimate::EstimationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("collinear") != std::string::npos);
    CHECK((msg.find("[x1]") != std::string::npos || msg.find("[copy]") != std::string::npos));
  }
}

TEST_CASE("non-positive-definite kernel is rejected") {
  // Two beats with identical centroids make the kernel singular.
  geo::CityGraph city({{"a", 1.0, {0, 0}, {}}, {"b", 1.0, {0, 0}, {}}}, {{"a", "b"}});
  std::vector<int> years{1, 2, 3};
  auto cov = synthetic::random_covariates(city, years, 1, 1);
  estimate::RateHistory h{years, Eigen::MatrixXd::Random(2, 3)};
  estimate::ArrivalFitOptions o;
  o.kernel_theta = 1.0;
  CHECK_THROWS_AS(estimate::fit_arrival_model(h, cov, city, o), estimate::EstimationError);
}

TEST_CASE("maximum likelihood improves on the OLS start and recovers the truth") {
  auto city = synthetic::grid_city(3, 3);
  std::vector<int> years;
  for (int y = 0; y < 40; ++y) years.push_back(2000 + y);
  auto cov = synthetic::random_covariates(city, years, 2, 21);
  synthetic::ArrivalTruth truth;
  truth.alpha = Eigen::MatrixXd::Zero(9, 9);
  for (const auto& [i, j] : city.edges()) {
    truth.alpha(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 0.08;
    truth.alpha(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = 0.05;
  }
  truth.beta0 = 0.6;
  truth.beta = {Eigen::Vector2d(0.3, -0.2), Eigen::Vector2d(0.1, 0.05)};
  truth.kernel_theta = 1.0;
  truth.kernel_theta1 = 0.04;
  auto h = synthetic::simulate_arrivals(city, truth, cov, Eigen::VectorXd::Constant(9, 1.0), 5);
  estimate::ArrivalFitOptions o;
  o.kernel_theta = 1.0;
  auto m = estimate::fit_arrival_model(h, cov, city, o);
  CHECK(m.log_likelihood >= m.start_log_likelihood);
  CHECK(std::abs(m.beta0 - truth.beta0) < 4.0 * m.std_errors(static_cast<Eigen::Index>(city.edges().size() * 2)));
  CHECK(m.kernel_theta1 == doctest::Approx(0.04).epsilon(0.2));
  for (Eigen::Index i = 0; i < 9; ++i) {
    for (Eigen::Index j = 0; j < 9; ++j) {
      if (!city.adjacent(static_cast<std::size_t>(i), static_cast<std::size_t>(j))) CHECK(m.alpha(i, j) == 0.0);
    }
  }
  CHECK(m.parameter_names.size() == static_cast<std::size_t>(m.parameters.size()));
}

TEST_CASE("forecast recursion") {
  estimate::ArrivalModel m;
  m.alpha = Eigen::MatrixXd::Zero(2, 2);
  m.beta0 = 1.0;
  m.p = 1;
  m.beta = {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)};
  std::vector<Eigen::MatrixXd> cov{Eigen::MatrixXd::Ones(2, 1)};
  Eigen::Vector2d last(0.3, 0.7);
  auto f = estimate::predict_rates(m, last, cov, 3);
  REQUIRE(f.size() == 3);
  CHECK(f[2].isApprox(last));
  CHECK(estimate::predict_rates(m, Eigen::Vector2d::Zero(), cov, 1)[0].isZero());

  // Two steps by hand, with spatial lag and carried-forward covariates.
  m.alpha << 0.0, 0.2, 0.1, 0.0;
  m.beta0 = 0.5;
  m.beta = {Eigen::VectorXd::Constant(1, 0.3), Eigen::VectorXd::Constant(1, -0.1)};
  std::vector<Eigen::MatrixXd> hist{Eigen::MatrixXd::Constant(2, 1, 1.0), Eigen::MatrixXd::Constant(2, 1, 2.0)};
  auto g = estimate::predict_rates(m, last, hist, 2);
  Eigen::Matrix2d b = Eigen::Matrix2d::Identity() - m.alpha;
  Eigen::Vector2d y1 = b.inverse() * (0.5 * last + Eigen::Vector2d::Constant(0.3 * 2.0 - 0.1 * 2.0));
  Eigen::Vector2d y2 = b.inverse() * (0.5 * y1 + Eigen::Vector2d::Constant(0.3 * 2.0 - 0.1 * 2.0));
  CHECK(g[0].isApprox(y1, 1e-12));
  CHECK(g[1].isApprox(y2, 1e-12));

  // Linearity in history when covariates vanish.
  std::vector<Eigen::MatrixXd> zero{Eigen::MatrixXd::Zero(2, 1)};
  auto a1 = estimate::predict_rates(m, last, zero, 2);
  auto a2 = estimate::predict_rates(m, 2.0 * last, zero, 2);
  CHECK(a2[1].isApprox(2.0 * a1[1], 1e-12));

  m.alpha << 0.0, 1.0, 1.0, 0.0;
  CHECK_THROWS_AS(estimate::predict_rates(m, last, hist, 1), estimate::EstimationError);
  CHECK_THROWS_AS(estimate::predict_rates(m, last, hist, 0), estimate::EstimationError);
}
