#include "zonedesign/estimate.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace zonedesign::estimate {

std::string to_string(CellSource s) {
  switch (s) {
    case CellSource::observed: return "observed";
    case CellSource::reverse: return "reverse";
    case CellSource::row_col_mean: return "row_col_mean";
    case CellSource::zone_mean: return "zone_mean";
    case CellSource::global_mean: return "global_mean";
  }
  return "unknown";
}

TravelEstimate estimate_travel_matrix(std::span<const CallRecord> records, const geo::CityGraph& city,
                                      const geo::Design* zones) {
  if (records.empty()) throw EstimationError("no call records for travel estimation");
  const auto n = static_cast<Eigen::Index>(city.size());
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd sum_sq = Eigen::MatrixXd::Zero(n, n);
  TravelEstimate est;
  est.counts = Eigen::MatrixXi::Zero(n, n);
  for (const auto& r : records) {
    const auto i = static_cast<Eigen::Index>(r.origin_beat);
    const auto j = static_cast<Eigen::Index>(r.incident_beat);
    if (i >= n || j >= n) throw EstimationError("call record references a beat outside the city");
    const double t = r.travel_s();
    sum(i, j) += t;
    sum_sq(i, j) += t * t;
    est.counts(i, j) += 1;
  }

  est.tau = Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
  est.std_error = est.tau;
  est.source.assign(static_cast<std::size_t>(n * n), CellSource::observed);
  double global = 0.0;
  std::size_t observed = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const int c = est.counts(i, j);
      if (c == 0) continue;
      const double mean = sum(i, j) / c;
      est.tau(i, j) = mean;
      if (c > 1) {
        const double var = std::max(0.0, (sum_sq(i, j) - c * mean * mean) / (c - 1));
        est.std_error(i, j) = std::sqrt(var / c);
      }
      global += mean;
      ++observed;
    }
  }
  global /= static_cast<double>(observed);

  const Eigen::MatrixXd obs = est.tau;
  auto has = [&](Eigen::Index i, Eigen::Index j) { return est.counts(i, j) > 0; };
  std::vector<double> row_mean(static_cast<std::size_t>(n), std::numeric_limits<double>::quiet_NaN());
  std::vector<double> col_mean = row_mean;
  for (Eigen::Index i = 0; i < n; ++i) {
    double rs = 0.0, cs = 0.0;
    int rc = 0, cc = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (has(i, j)) rs += obs(i, j), ++rc;
      if (has(j, i)) cs += obs(j, i), ++cc;
    }
    if (rc) row_mean[static_cast<std::size_t>(i)] = rs / rc;
    if (cc) col_mean[static_cast<std::size_t>(i)] = cs / cc;
    if (!rc) est.warnings.push_back("beat " + city.beat_id(static_cast<std::size_t>(i)) + " has no outgoing dispatches; row imputed");
    if (!cc) est.warnings.push_back("beat " + city.beat_id(static_cast<std::size_t>(i)) + " has no incoming dispatches; column imputed");
  }

  auto zone_mean = [&](Eigen::Index i, Eigen::Index j) {
    double s = 0.0;
    int c = 0;
    const int zi = zones->zone_of(static_cast<std::size_t>(i));
    const int zj = zones->zone_of(static_cast<std::size_t>(j));
    for (Eigen::Index a = 0; a < n; ++a) {
      if (zones->zone_of(static_cast<std::size_t>(a)) != zi) continue;
      for (Eigen::Index b = 0; b < n; ++b) {
        if (zones->zone_of(static_cast<std::size_t>(b)) == zj && has(a, b)) s += obs(a, b), ++c;
      }
    }
    return c ? s / c : std::numeric_limits<double>::quiet_NaN();
  };

  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (has(i, j)) continue;
      auto& src = est.source[static_cast<std::size_t>(i * n + j)];
      ++est.imputed;
      if (has(j, i)) {
        est.tau(i, j) = obs(j, i);
        src = CellSource::reverse;
        continue;
      }
      const double rm = row_mean[static_cast<std::size_t>(i)];
      const double cm = col_mean[static_cast<std::size_t>(j)];
      if (!std::isnan(rm) || !std::isnan(cm)) {
        est.tau(i, j) = std::isnan(rm) ? cm : std::isnan(cm) ? rm : 0.5 * (rm + cm);
        src = CellSource::row_col_mean;
        continue;
      }
      if (zones) {
        const double zm = zone_mean(i, j);
        if (!std::isnan(zm)) {
          est.tau(i, j) = zm;
          src = CellSource::zone_mean;
          continue;
        }
      }
      est.tau(i, j) = global;
      src = CellSource::global_mean;
    }
  }
  return est;
}

// ---------------------------------------------------------------------------

ServiceRateFit fit_exponential(std::span<const double> durations_s) {
  if (durations_s.size() < kMinServiceSamples) {
    throw EstimationError("service-rate fit needs at least " + std::to_string(kMinServiceSamples) +
                          " observations, got " + std::to_string(durations_s.size()));
  }
  std::vector<double> x(durations_s.begin(), durations_s.end());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  if (!(mean > 0.0)) throw EstimationError("mean service duration must be positive");
  ServiceRateFit fit;
  fit.samples = x.size();
  fit.mean_minutes = mean / 60.0;
  fit.mu_per_hour = 3600.0 / mean;
  fit.std_error_per_hour = fit.mu_per_hour / std::sqrt(static_cast<double>(x.size()));

  std::sort(x.begin(), x.end());
  const double rate = 1.0 / mean;
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = 1.0 - std::exp(-rate * x[i]);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  fit.ks_distance = d;
  return fit;
}

ServiceRateFit estimate_service_rate(std::span<const CallRecord> records, bool include_travel) {
  std::vector<double> durations;
  durations.reserve(records.size());
  for (const auto& r : records) {
    if (!r.timeline_ok()) continue;
    durations.push_back(include_travel ? r.service_s() : r.on_scene_s());
  }
  return fit_exponential(durations);
}

// ---------------------------------------------------------------------------

RateHistory annual_rates(std::span<const CallRecord> records, const geo::CityGraph& city,
                         std::span<const int> years) {
  RateHistory h;
  h.years.assign(years.begin(), years.end());
  h.rates = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(city.size()), static_cast<Eigen::Index>(years.size()));
  for (const auto& r : records) {
    const int y = utc_date(r.call_time).year;
    auto it = std::find(h.years.begin(), h.years.end(), y);
    if (it == h.years.end()) continue;
    h.rates(static_cast<Eigen::Index>(r.incident_beat), it - h.years.begin()) += 1.0;
  }
  h.rates /= 8760.0;
  return h;
}

const Eigen::MatrixXd& CovariateTable::year(int y) const {
  auto it = std::find(years.begin(), years.end(), y);
  if (it == years.end()) throw EstimationError("no covariates for year " + std::to_string(y));
  return values[static_cast<std::size_t>(it - years.begin())];
}

double default_kernel_theta(const geo::CityGraph& city) {
  std::vector<double> d;
  for (std::size_t i = 0; i < city.size(); ++i) {
    for (std::size_t j = i + 1; j < city.size(); ++j) d.push_back(city.dist(i, j));
  }
  if (d.empty()) return 1.0;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
  const double med = d[d.size() / 2];
  return med > 0.0 ? 1.0 / med : 1.0;
}

Eigen::MatrixXd kernel_correlation(const geo::CityGraph& city, double theta) {
  const auto n = static_cast<Eigen::Index>(city.size());
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      k(i, j) = std::exp(-theta * city.dist(static_cast<std::size_t>(i), static_cast<std::size_t>(j)));
    }
  }
  return k;
}

namespace {

/// Profile likelihood of the spatial-lag regression after whitening by the
/// kernel Cholesky factor. Parameters: [alpha arcs..., beta0, beta_t...].
class LagLikelihood {
 public:
  std::size_t n = 0;       // beats
  std::size_t years = 0;   // observation years
  std::vector<std::pair<std::size_t, std::size_t>> arcs;
  Eigen::MatrixXd gram;    // sum Zw' Zw
  Eigen::VectorXd cross;   // sum Zw' yw
  double yy = 0.0;         // sum yw' yw
  double logdet_r = 0.0;

  std::size_t n_alpha() const { return arcs.size(); }

  Eigen::MatrixXd alpha_matrix(const Eigen::VectorXd& g) const {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k < arcs.size(); ++k) {
      a(static_cast<Eigen::Index>(arcs[k].first), static_cast<Eigen::Index>(arcs[k].second)) = g(static_cast<Eigen::Index>(k));
    }
    return a;
  }

  double ssr(const Eigen::VectorXd& g) const { return yy - 2.0 * g.dot(cross) + g.dot(gram * g); }

  double nobs() const { return static_cast<double>(n * years); }

  /// Negative log-likelihood with the noise scale profiled out; +inf when
  /// det(I - A) <= 0.
  double nll(const Eigen::VectorXd& g) const {
    double logdet = 0.0;
    if (n_alpha() > 0) {
      const Eigen::MatrixXd b = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)) - alpha_matrix(g);
      const double det = b.partialPivLu().determinant();
      if (!(det > 0.0)) return std::numeric_limits<double>::infinity();
      logdet = std::log(det);
    }
    const double s = ssr(g);
    if (!(s > 0.0)) return -std::numeric_limits<double>::infinity();
    const double m = nobs();
    return -static_cast<double>(years) * logdet + 0.5 * m * std::log(s / m) + 0.5 * static_cast<double>(years) * logdet_r +
           0.5 * m * (1.0 + std::log(2.0 * std::numbers::pi));
  }

  void derivatives(const Eigen::VectorXd& g, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) const {
    const double m = nobs();
    const double s = ssr(g);
    const Eigen::VectorXd ds = 2.0 * (gram * g - cross);
    grad = 0.5 * m * ds / s;
    hess = 0.5 * m * (2.0 * gram / s - ds * ds.transpose() / (s * s));
    if (n_alpha() == 0) return;
    const auto ni = static_cast<Eigen::Index>(n);
    const Eigen::MatrixXd binv = (Eigen::MatrixXd::Identity(ni, ni) - alpha_matrix(g)).inverse();
    const double t = static_cast<double>(years);
    for (std::size_t a = 0; a < arcs.size(); ++a) {
      const auto i = static_cast<Eigen::Index>(arcs[a].first);
      const auto j = static_cast<Eigen::Index>(arcs[a].second);
      grad(static_cast<Eigen::Index>(a)) += t * binv(j, i);
      for (std::size_t b = 0; b < arcs.size(); ++b) {
        const auto k = static_cast<Eigen::Index>(arcs[b].first);
        const auto l = static_cast<Eigen::Index>(arcs[b].second);
        hess(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += t * binv(j, k) * binv(l, i);
      }
    }
  }
};

}  // namespace

ArrivalModel fit_arrival_model(const RateHistory& history, const CovariateTable& covariates,
                               const geo::CityGraph& city, const ArrivalFitOptions& opts) {
  const std::size_t n = city.size();
  const std::size_t total_years = history.years.size();
  if (opts.p < 0) throw EstimationError("lag depth p must be >= 0");
  const std::size_t p = static_cast<std::size_t>(opts.p);
  if (total_years < p + 2) {
    throw EstimationError("arrival model needs at least p + 2 = " + std::to_string(p + 2) + " years of history");
  }
  if (static_cast<std::size_t>(history.rates.rows()) != n ||
      static_cast<std::size_t>(history.rates.cols()) != total_years) {
    throw EstimationError("rate history does not match the city");
  }
  const std::size_t m = covariates.factor_count();
  std::vector<const Eigen::MatrixXd*> cov_by_year;
  for (int y : history.years) {
    const auto& c = covariates.year(y);
    if (static_cast<std::size_t>(c.rows()) != n || static_cast<std::size_t>(c.cols()) != m) {
      throw EstimationError("covariates for year " + std::to_string(y) + " have the wrong shape");
    }
    cov_by_year.push_back(&c);
  }

  LagLikelihood lik;
  lik.n = n;
  std::vector<std::string> names;
  if (opts.estimate_spatial_lag) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j : city.neighbors(i)) {
        lik.arcs.emplace_back(i, j);
        names.push_back("alpha[" + city.beat_id(i) + "," + city.beat_id(j) + "]");
      }
    }
  }
  names.emplace_back("beta0");
  for (std::size_t t = 0; t <= p; ++t) {
    for (const auto& f : covariates.factors) names.push_back("beta" + std::to_string(t + 1) + "[" + f + "]");
  }
  const auto n_par = static_cast<Eigen::Index>(names.size());
  const auto na = static_cast<Eigen::Index>(lik.arcs.size());
  const auto ni = static_cast<Eigen::Index>(n);

  ArrivalModel model;
  model.p = opts.p;
  model.use_kernel = opts.use_kernel;
  model.kernel_theta = opts.kernel_theta.value_or(default_kernel_theta(city));
  if (!(model.kernel_theta > 0.0)) throw EstimationError("kernel theta must be positive");

  Eigen::MatrixXd chol_l = Eigen::MatrixXd::Identity(ni, ni);
  if (opts.use_kernel) {
    const Eigen::LLT<Eigen::MatrixXd> llt(kernel_correlation(city, model.kernel_theta));
    if (llt.info() != Eigen::Success) throw EstimationError("kernel covariance matrix is not positive definite");
    chol_l = llt.matrixL();
    lik.logdet_r = 2.0 * chol_l.diagonal().array().log().sum();
  }

  const std::size_t first = std::max<std::size_t>(p, 1);
  lik.years = total_years - first;
  lik.gram = Eigen::MatrixXd::Zero(n_par, n_par);
  lik.cross = Eigen::VectorXd::Zero(n_par);
  Eigen::MatrixXd raw_gram = lik.gram;
  Eigen::VectorXd raw_cross = lik.cross;
  Eigen::MatrixXd stacked(static_cast<Eigen::Index>(n * lik.years), n_par);
  for (std::size_t l = first; l < total_years; ++l) {
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(ni, n_par);
    const auto lc = static_cast<Eigen::Index>(l);
    for (Eigen::Index a = 0; a < na; ++a) {
      z(static_cast<Eigen::Index>(lik.arcs[static_cast<std::size_t>(a)].first), a) =
          history.rates(static_cast<Eigen::Index>(lik.arcs[static_cast<std::size_t>(a)].second), lc);
    }
    z.col(na) = history.rates.col(lc - 1);
    for (std::size_t t = 0; t <= p; ++t) {
      z.block(0, na + 1 + static_cast<Eigen::Index>(t * m), ni, static_cast<Eigen::Index>(m)) = *cov_by_year[l - t];
    }
    const Eigen::VectorXd y = history.rates.col(lc);
    raw_gram += z.transpose() * z;
    raw_cross += z.transpose() * y;
    const Eigen::MatrixXd zw = chol_l.triangularView<Eigen::Lower>().solve(z);
    const Eigen::VectorXd yw = chol_l.triangularView<Eigen::Lower>().solve(y);
    stacked.block(static_cast<Eigen::Index>((l - first) * n), 0, ni, n_par) = zw;
    lik.gram += zw.transpose() * zw;
    lik.cross += zw.transpose() * yw;
    lik.yy += yw.squaredNorm();
  }

  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(stacked);
  if (qr.rank() < n_par) {
    std::string msg = "rank-deficient arrival design matrix; collinear columns:";
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index k = qr.rank(); k < n_par; ++k) msg += " " + names[static_cast<std::size_t>(perm(k))];
    throw EstimationError(msg);
  }

  // OLS start (spatial lag treated as exogenous).
  Eigen::VectorXd g = raw_gram.ldlt().solve(raw_cross);
  if (!std::isfinite(lik.nll(g))) {
    g.setZero();
    if (n_par > na) {
      const Eigen::MatrixXd gb = lik.gram.bottomRightCorner(n_par - na, n_par - na);
      g.tail(n_par - na) = gb.ldlt().solve(lik.cross.tail(n_par - na));
    }
  }
  double f = lik.nll(g);
  model.start_log_likelihood = -f;

  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
  int it = 0;
  // Without spatial lag the profile likelihood is maximized by GLS in closed form.
  if (na == 0) {
    g = lik.gram.ldlt().solve(lik.cross);
    f = lik.nll(g);
    it = opts.max_iter;
  }
  const bool exact_fit = lik.ssr(g) <= 1e-26 * std::max(lik.yy, std::numeric_limits<double>::min());
  if (exact_fit) it = opts.max_iter;
  const int newton_iters = it;
  for (; it < opts.max_iter; ++it) {
    lik.derivatives(g, grad, hess);
    Eigen::VectorXd step;
    double shift = 0.0;
    for (int attempt = 0; attempt < 60; ++attempt) {
      Eigen::MatrixXd h = hess;
      h.diagonal().array() += shift;
      const Eigen::LLT<Eigen::MatrixXd> llt(h);
      if (llt.info() == Eigen::Success) {
        step = -llt.solve(grad);
        break;
      }
      shift = shift == 0.0 ? 1e-8 * std::max(1.0, hess.diagonal().cwiseAbs().maxCoeff()) : shift * 10.0;
    }
    if (step.size() == 0) break;
    const double decrement = -grad.dot(step);
    if (decrement < 2.0 * opts.grad_tol) break;
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Eigen::VectorXd cand = g + t * step;
      const double fc = lik.nll(cand);
      if (std::isfinite(fc) && fc <= f - 1e-4 * t * decrement) {
        g = cand;
        f = fc;
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved) break;
  }
  model.iterations = na == 0 || exact_fit ? 0 : it - newton_iters;
  model.parameters = g;
  model.parameter_names = names;
  model.observations = n * lik.years;
  model.kernel_theta1 = std::max(lik.ssr(g), 0.0) / lik.nobs();
  model.sigma = std::sqrt(model.kernel_theta1);
  model.std_errors = Eigen::VectorXd::Constant(n_par, std::numeric_limits<double>::quiet_NaN());
  if (exact_fit) {
    model.std_errors.setZero();
    model.log_likelihood = std::numeric_limits<double>::infinity();
  } else {
    model.log_likelihood = -f;
    lik.derivatives(g, grad, hess);
    const Eigen::LLT<Eigen::MatrixXd> hinv(hess);
    if (hinv.info() == Eigen::Success) {
      const Eigen::MatrixXd cov = hinv.solve(Eigen::MatrixXd::Identity(n_par, n_par));
      model.std_errors = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    }
  }
  model.alpha = lik.alpha_matrix(g);
  model.beta0 = g(na);
  model.beta.resize(p + 1);
  for (std::size_t t = 0; t <= p; ++t) {
    model.beta[t] = g.segment(na + 1 + static_cast<Eigen::Index>(t * m), static_cast<Eigen::Index>(m));
  }
  return model;
}

std::vector<Eigen::VectorXd> predict_rates(const ArrivalModel& model, const Eigen::VectorXd& last_rates,
                                           const std::vector<Eigen::MatrixXd>& covariate_history,
                                           int horizon, const std::vector<Eigen::MatrixXd>& future_covariates) {
  if (horizon < 1) throw EstimationError("forecast horizon must be >= 1");
  const std::size_t p = static_cast<std::size_t>(model.p);
  if (covariate_history.size() < std::max<std::size_t>(p, 1)) {
    throw EstimationError("forecast needs at least p years of covariate history");
  }
  const auto n = last_rates.size();
  const Eigen::MatrixXd b = Eigen::MatrixXd::Identity(n, n) - model.alpha;
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(b);
  if (!lu.isInvertible()) throw EstimationError("(I - A) is singular; spatial feedback too strong");

  std::vector<Eigen::MatrixXd> cov = covariate_history;
  for (int h = 0; h < horizon; ++h) {
    cov.push_back(static_cast<std::size_t>(h) < future_covariates.size() ? future_covariates[static_cast<std::size_t>(h)]
                                                                          : cov.back());
  }
  const std::size_t last = covariate_history.size() - 1;
  std::vector<Eigen::VectorXd> out;
  Eigen::VectorXd prev = last_rates;
  for (int h = 1; h <= horizon; ++h) {
    Eigen::VectorXd rhs = model.beta0 * prev;
    for (std::size_t t = 0; t <= p; ++t) {
      const auto& c = cov[last + static_cast<std::size_t>(h) - t];
      if (model.beta[t].size() > 0) rhs += c * model.beta[t];
    }
    prev = lu.solve(rhs);
    out.push_back(prev);
  }
  return out;
}

}  // namespace zonedesign::estimate
