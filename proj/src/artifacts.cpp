#include "zonedesign/artifacts.hpp"

#include "zonedesign/ingest.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace zonedesign::artifacts {

using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ArtifactError(what + ": not a number: '" + s + "'");
  }
}

}  // namespace

MissingArtifact::MissingArtifact(const std::filesystem::path& path, const std::string& producer)
    : std::runtime_error("missing " + path.string() + ": run `zoned " + producer + "` first"), producer_(producer) {}

std::filesystem::path require(const std::filesystem::path& dir, const char* name, const char* producer) {
  auto p = dir / name;
  if (!std::filesystem::exists(p)) throw MissingArtifact(p, producer);
  return p;
}

json Stamp::to_json() const { return {{"config_hash", config_hash}, {"seed", seed}}; }

std::string Stamp::line() const { return "config_hash=" + config_hash + " seed=" + std::to_string(seed); }

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ArtifactError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ArtifactError(path.string() + " is not valid JSON: " + e.what());
  }
}

void write_tau(std::ostream& out, const Eigen::MatrixXd& tau, const geo::CityGraph& city, const Stamp& stamp) {
  out << "# " << stamp.line() << "\n# travel seconds, row = responding beat, column = incident beat\n";
  out << "origin";
  for (const auto& id : city.beat_ids()) out << ',' << ingest::csv_escape(id);
  out << '\n';
  for (std::size_t i = 0; i < city.size(); ++i) {
    out << ingest::csv_escape(city.beat_id(i));
    for (std::size_t j = 0; j < city.size(); ++j) {
      out << ',' << num(tau(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    }
    out << '\n';
  }
}

Eigen::MatrixXd read_tau(const std::filesystem::path& path, const geo::CityGraph& city) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("cannot read " + path.string());
  ingest::CsvReader reader(in, true);
  std::vector<std::string> row;
  if (!reader.next(row) || row.empty()) throw ArtifactError(path.string() + ": empty travel matrix");
  const auto n = city.size();
  if (row.size() != n + 1) throw ArtifactError(path.string() + ": header does not list every beat");
  std::vector<std::size_t> col(n);
  for (std::size_t c = 0; c < n; ++c) col[c] = city.require_index(row[c + 1]);
  Eigen::MatrixXd tau = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n),
                                                  std::numeric_limits<double>::quiet_NaN());
  std::vector<bool> seen(n, false);
  while (reader.next(row)) {
    if (row.size() != n + 1) throw ArtifactError(path.string() + ": ragged row at line " + std::to_string(reader.line()));
    const std::size_t i = city.require_index(row[0]);
    seen[i] = true;
    for (std::size_t c = 0; c < n; ++c) {
      tau(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(col[c])) = parse_double(row[c + 1], path.string());
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!seen[i]) throw ArtifactError(path.string() + ": no row for beat " + city.beat_id(i));
  }
  return tau;
}

json arrival_model_to_json(const estimate::ArrivalModel& m, const geo::CityGraph& city) {
  json alpha = json::array();
  for (Eigen::Index i = 0; i < m.alpha.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.alpha.cols(); ++j) {
      if (m.alpha(i, j) != 0.0) {
        alpha.push_back({city.beat_id(static_cast<std::size_t>(i)), city.beat_id(static_cast<std::size_t>(j)),
                         m.alpha(i, j)});
      }
    }
  }
  json beta = json::array();
  for (const auto& b : m.beta) beta.push_back(std::vector<double>(b.data(), b.data() + b.size()));
  json params = json::array();
  for (std::size_t k = 0; k < m.parameter_names.size(); ++k) {
    const auto ik = static_cast<Eigen::Index>(k);
    params.push_back({{"name", m.parameter_names[k]},
                      {"value", m.parameters(ik)},
                      {"std_error", ik < m.std_errors.size() ? json(m.std_errors(ik)) : json(nullptr)}});
  }
  return {{"p", m.p},
          {"beta0", m.beta0},
          {"beta", beta},
          {"alpha", alpha},
          {"kernel_theta", m.kernel_theta},
          {"kernel_theta1", m.kernel_theta1},
          {"sigma", m.sigma},
          {"use_kernel", m.use_kernel},
          {"log_likelihood", m.log_likelihood},
          {"start_log_likelihood", m.start_log_likelihood},
          {"iterations", m.iterations},
          {"observations", m.observations},
          {"parameters", params}};
}

estimate::ArrivalModel arrival_model_from_json(const json& j, const geo::CityGraph& city) {
  try {
    estimate::ArrivalModel m;
    m.p = j.at("p").get<int>();
    m.beta0 = j.at("beta0").get<double>();
    for (const auto& b : j.at("beta")) {
      const auto v = b.get<std::vector<double>>();
      m.beta.emplace_back(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
    const auto n = static_cast<Eigen::Index>(city.size());
    m.alpha = Eigen::MatrixXd::Zero(n, n);
    for (const auto& a : j.at("alpha")) {
      const auto i = static_cast<Eigen::Index>(city.require_index(a.at(0).get<std::string>()));
      const auto k = static_cast<Eigen::Index>(city.require_index(a.at(1).get<std::string>()));
      m.alpha(i, k) = a.at(2).get<double>();
    }
    m.kernel_theta = j.at("kernel_theta").get<double>();
    m.kernel_theta1 = j.at("kernel_theta1").get<double>();
    m.sigma = j.value("sigma", 0.0);
    m.use_kernel = j.value("use_kernel", true);
    m.log_likelihood = j.value("log_likelihood", 0.0);
    return m;
  } catch (const json::exception& e) {
    throw ArtifactError(std::string("arrival model: ") + e.what());
  }
}

json beat_map(const geo::CityGraph& city, const std::vector<double>& values) {
  json j = json::object();
  for (std::size_t i = 0; i < city.size(); ++i) j[city.beat_id(i)] = values.at(i);
  return j;
}

std::vector<double> beat_vector(const json& j, const geo::CityGraph& city) {
  if (!j.is_object() || j.size() != city.size()) throw ArtifactError("per-beat table does not cover the city");
  std::vector<double> v(city.size());
  for (const auto& [id, value] : j.items()) v[city.require_index(id)] = value.get<double>();
  return v;
}

approx::QueueInputs load_queue_inputs(const std::filesystem::path& dir, const geo::CityGraph& city) {
  const json rates = read_json(require(dir, kRates, "estimate"));
  approx::QueueInputs in;
  try {
    in.lambda = beat_vector(rates.at("lambda"), city);
    in.mu = rates.at("mu_per_hour").get<double>();
  } catch (const json::exception& e) {
    throw ArtifactError(std::string(kRates) + ": " + e.what());
  }
  in.tau = read_tau(require(dir, kTau, "estimate"), city);
  return in;
}

approx::LinearWorkloadModel load_surrogate(const std::filesystem::path& dir, const geo::CityGraph& city) {
  const json j = read_json(require(dir, kSurrogate, "approx"));
  if (!j.contains("model")) throw ArtifactError(std::string(kSurrogate) + " has no model section");
  return approx::LinearWorkloadModel::from_json(j["model"], city);
}

json design_to_json(const geo::CityGraph& city, const geo::Design& design) {
  json j = json::object();
  for (std::size_t i = 0; i < city.size(); ++i) j[city.beat_id(i)] = design.zone_of(i) + 1;
  return j;
}

}  // namespace zonedesign::artifacts
