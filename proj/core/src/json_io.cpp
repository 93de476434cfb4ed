#include "rfusion/json_io.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <set>

namespace rfusion {

namespace {

double number_at(const Json& j, const std::string& field) {
  if (!j.is_number()) throw ConfigError(field, "expected a number, got " + std::string(j.type_name()));
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(field, "value is not finite");
  return v;
}

int int_at(const Json& j, const std::string& field) {
  if (!j.is_number_integer()) throw ConfigError(field, "expected an integer, got " + std::string(j.type_name()));
  return j.get<int>();
}

bool bool_at(const Json& j, const std::string& field) {
  if (!j.is_boolean()) throw ConfigError(field, "expected true or false, got " + std::string(j.type_name()));
  return j.get<bool>();
}

void require_object(const Json& j, const std::string& field) {
  if (!j.is_object()) throw ConfigError(field, "expected an object, got " + std::string(j.type_name()));
}

void reject_unknown_keys(const Json& j, const std::set<std::string>& known, const std::string& field) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw ConfigError(field + "." + it.key(), "unknown key");
  }
}

const Json& member(const Json& j, const char* key, const std::string& field) {
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(field + "." + key, "missing required key");
  return *it;
}

// Wraps library exceptions raised while building a value so they carry the field.
template <typename F>
auto with_field(const std::string& field, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(field, e.what());
  }
}

}  // namespace

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const Json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) throw ConfigError(field, "expected a non-empty array of rows");
  const std::size_t rows = j.size();
  if (!j[0].is_array() || j[0].empty()) throw ConfigError(field + "[0]", "expected a non-empty array");
  const std::size_t cols = j[0].size();
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    const std::string row_field = field + "[" + std::to_string(i) + "]";
    if (!j[i].is_array()) throw ConfigError(row_field, "expected an array");
    if (j[i].size() != cols) {
      throw ConfigError(row_field, "row has " + std::to_string(j[i].size()) + " entries, expected " +
                                       std::to_string(cols));
    }
    for (std::size_t k = 0; k < cols; ++k) {
      m(static_cast<Index>(i), static_cast<Index>(k)) =
          number_at(j[i][k], row_field + "[" + std::to_string(k) + "]");
    }
  }
  return m;
}

Json vector_to_json(const Vector& v) {
  Json a = Json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Vector vector_from_json(const Json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) throw ConfigError(field, "expected a non-empty array of numbers");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v(static_cast<Index>(i)) = number_at(j[i], field + "[" + std::to_string(i) + "]");
  }
  return v;
}

Json covariance_to_json(const CovarianceMatrix& c) {
  return Json{{"dim", c.dim()}, {"data", matrix_to_json(c.data())}};
}

CovarianceMatrix covariance_from_json(const Json& j, const std::string& field) {
  Matrix m;
  if (j.is_array()) {
    m = matrix_from_json(j, field);
  } else {
    require_object(j, field);
    reject_unknown_keys(j, {"dim", "data"}, field);
    m = matrix_from_json(member(j, "data", field), field + ".data");
    if (j.contains("dim")) {
      const int dim = int_at(j["dim"], field + ".dim");
      if (dim != m.rows()) {
        throw ConfigError(field + ".dim", "dim is " + std::to_string(dim) + " but data has " +
                                              std::to_string(m.rows()) + " rows");
      }
    }
  }
  if (m.rows() != m.cols()) {
    throw ConfigError(field, "covariance must be square, got " + std::to_string(m.rows()) + "x" +
                                 std::to_string(m.cols()));
  }
  return with_field(field, [&] { return CovarianceMatrix(m); });
}

Json estimate_to_json(const Estimate& e) {
  return Json{{"mean", vector_to_json(e.mean())}, {"cov", covariance_to_json(e.cov())}};
}

Estimate estimate_from_json(const Json& j, const std::string& field) {
  require_object(j, field);
  reject_unknown_keys(j, {"mean", "cov"}, field);
  Vector mean = vector_from_json(member(j, "mean", field), field + ".mean");
  CovarianceMatrix cov = covariance_from_json(member(j, "cov", field), field + ".cov");
  return with_field(field, [&] { return Estimate(std::move(mean), std::move(cov)); });
}

Json model_to_json(const LinearMeasurementModel& m) {
  return Json{{"C", matrix_to_json(m.C)},
              {"D", matrix_to_json(m.D)},
              {"noise_cov", covariance_to_json(m.noise_cov)}};
}

LinearMeasurementModel model_from_json(const Json& j, const std::string& field) {
  require_object(j, field);
  reject_unknown_keys(j, {"C", "D", "noise_cov"}, field);
  Matrix c = matrix_from_json(member(j, "C", field), field + ".C");
  Matrix d = matrix_from_json(member(j, "D", field), field + ".D");
  CovarianceMatrix noise = j.contains("noise_cov")
                               ? covariance_from_json(j["noise_cov"], field + ".noise_cov")
                               : CovarianceMatrix::zero(c.rows());
  return with_field(field, [&] { return LinearMeasurementModel(std::move(c), std::move(d), std::move(noise)); });
}

Json fusion_result_to_json(const FusionResult& r, FusionMethod method) {
  Json out{{"method", to_string(method)},
           {"estimate", estimate_to_json(r.estimate)},
           {"trace", r.estimate.cov().trace()},
           {"gain", matrix_to_json(r.gain)}};
  if (r.worst_case_cross) out["worst_case_cross"] = matrix_to_json(*r.worst_case_cross);
  if (r.ci_omega) out["ci_omega"] = *r.ci_omega;
  if (r.game) {
    out["solver"] = Json{{"payoff", r.game->payoff},
                         {"residual_norm", r.game->residual_norm},
                         {"iterations", r.game->iterations},
                         {"final_t", r.game->final_t}};
  }
  return out;
}

Json solver_config_to_json(const SolverConfig& cfg) {
  return Json{{"t_init", cfg.t_init},
              {"mu", cfg.mu},
              {"gap_tol", cfg.gap_tol},
              {"residual_tol", cfg.residual_tol},
              {"stall_tol", cfg.stall_tol},
              {"alpha", cfg.alpha},
              {"beta", cfg.beta},
              {"max_inner_iters", cfg.max_inner_iters},
              {"max_outer_iters", cfg.max_outer_iters}};
}

namespace {

using SolverSetter = std::function<void(SolverConfig&, const Json&, const std::string&)>;

const std::map<std::string, SolverSetter>& solver_setters() {
  static const std::map<std::string, SolverSetter> setters = {
      {"t_init", [](SolverConfig& c, const Json& j, const std::string& f) { c.t_init = number_at(j, f); }},
      {"mu", [](SolverConfig& c, const Json& j, const std::string& f) { c.mu = number_at(j, f); }},
      {"gap_tol", [](SolverConfig& c, const Json& j, const std::string& f) { c.gap_tol = number_at(j, f); }},
      {"residual_tol",
       [](SolverConfig& c, const Json& j, const std::string& f) { c.residual_tol = number_at(j, f); }},
      {"stall_tol", [](SolverConfig& c, const Json& j, const std::string& f) { c.stall_tol = number_at(j, f); }},
      {"alpha", [](SolverConfig& c, const Json& j, const std::string& f) { c.alpha = number_at(j, f); }},
      {"beta", [](SolverConfig& c, const Json& j, const std::string& f) { c.beta = number_at(j, f); }},
      {"max_inner_iters",
       [](SolverConfig& c, const Json& j, const std::string& f) { c.max_inner_iters = int_at(j, f); }},
      {"max_outer_iters",
       [](SolverConfig& c, const Json& j, const std::string& f) { c.max_outer_iters = int_at(j, f); }},
  };
  return setters;
}

using SimSetter = std::function<void(dse::SimConfig&, const Json&, const std::string&)>;

// Scalar fields of SimConfig reachable by a flat dotted key.
const std::map<std::string, SimSetter>& sim_scalar_setters() {
  static const std::map<std::string, SimSetter> setters = {
      {"steps", [](dse::SimConfig& c, const Json& j, const std::string& f) { c.steps = int_at(j, f); }},
      {"init_pos_box",
       [](dse::SimConfig& c, const Json& j, const std::string& f) { c.init_pos_box = number_at(j, f); }},
      {"steady_state_window",
       [](dse::SimConfig& c, const Json& j, const std::string& f) { c.steady_state_window = int_at(j, f); }},
      {"inject_noise",
       [](dse::SimConfig& c, const Json& j, const std::string& f) { c.inject_noise = bool_at(j, f); }},
      {"divergence_threshold",
       [](dse::SimConfig& c, const Json& j, const std::string& f) { c.divergence_threshold = number_at(j, f); }},
      {"threads", [](dse::SimConfig& c, const Json& j, const std::string& f) { c.threads = int_at(j, f); }},
      {"topology.n_agents",
       [](dse::SimConfig& c, const Json& j, const std::string& f) { c.topology.n_agents = int_at(j, f); }},
  };
  return setters;
}

const std::set<std::string>& sim_matrix_keys() {
  static const std::set<std::string> keys = {"noise.process_cov", "noise.gps_cov", "noise.relative_cov",
                                             "init_est_cov", "init_error_cov"};
  return keys;
}

std::pair<std::string, Json> split_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(assignment, "override must have the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) throw ConfigError(key, "value '" + text + "' is not a JSON scalar");
  if (value.is_array() || value.is_object()) {
    throw ConfigError(key, "override values must be scalars; set lists and matrices in a config file");
  }
  return {key, value};
}

}  // namespace

SolverConfig solver_config_from_json(const Json& j, SolverConfig base, const std::string& field) {
  require_object(j, field);
  const auto& setters = solver_setters();
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key_field = field + "." + it.key();
    auto s = setters.find(it.key());
    if (s == setters.end()) throw ConfigError(key_field, "unknown key");
    s->second(base, it.value(), key_field);
  }
  with_field(field, [&] { base.validate(); });
  return base;
}

namespace {

std::vector<dse::Edge> edges_from_json(const Json& j, const std::string& field) {
  if (!j.is_array()) throw ConfigError(field, "expected an array of [from, to] pairs");
  std::vector<dse::Edge> edges;
  for (std::size_t e = 0; e < j.size(); ++e) {
    const std::string ef = field + "[" + std::to_string(e) + "]";
    const Json& item = j[e];
    if (item.is_array()) {
      if (item.size() != 2) throw ConfigError(ef, "expected [from, to]");
      edges.push_back({int_at(item[0], ef + "[0]"), int_at(item[1], ef + "[1]")});
    } else {
      require_object(item, ef);
      reject_unknown_keys(item, {"from", "to"}, ef);
      edges.push_back({int_at(member(item, "from", ef), ef + ".from"), int_at(member(item, "to", ef), ef + ".to")});
    }
  }
  return edges;
}

Matrix sim_cov(const Json& j, const std::string& field) { return covariance_from_json(j, field).data(); }

}  // namespace

Json sim_config_to_json(const dse::SimConfig& cfg) {
  Json edges = Json::array();
  for (const auto& e : cfg.topology.edges) edges.push_back(Json::array({e.from, e.to}));
  Json estimators = Json::array();
  for (auto k : cfg.estimators) estimators.push_back(dse::to_string(k));
  Json out{{"topology", {{"n_agents", cfg.topology.n_agents}, {"edges", edges}}},
           {"noise",
            {{"process_cov", covariance_to_json(CovarianceMatrix(cfg.noise.process_cov))},
             {"gps_cov", covariance_to_json(CovarianceMatrix(cfg.noise.gps_cov))},
             {"relative_cov", covariance_to_json(CovarianceMatrix(cfg.noise.relative_cov))}}},
           {"steps", cfg.steps},
           {"seeds", cfg.seeds},
           {"estimators", estimators},
           {"init_pos_box", cfg.init_pos_box},
           {"init_est_cov", covariance_to_json(CovarianceMatrix(cfg.init_est_cov))},
           {"steady_state_window", cfg.steady_state_window},
           {"inject_noise", cfg.inject_noise},
           {"divergence_threshold", cfg.divergence_threshold},
           {"threads", cfg.threads},
           {"solver", solver_config_to_json(cfg.solver)}};
  if (cfg.init_error_cov) out["init_error_cov"] = covariance_to_json(CovarianceMatrix(*cfg.init_error_cov));
  return out;
}

dse::SimConfig sim_config_from_json(const Json& j, const std::string& field) {
  require_object(j, field);
  dse::SimConfig cfg;
  const auto& scalars = sim_scalar_setters();
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    const Json& v = it.value();
    const std::string kf = field + "." + key;
    if (key == "topology") {
      require_object(v, kf);
      reject_unknown_keys(v, {"n_agents", "edges"}, kf);
      if (v.contains("n_agents")) cfg.topology.n_agents = int_at(v["n_agents"], kf + ".n_agents");
      if (v.contains("edges")) cfg.topology.edges = edges_from_json(v["edges"], kf + ".edges");
    } else if (key == "noise") {
      require_object(v, kf);
      reject_unknown_keys(v, {"process_cov", "gps_cov", "relative_cov"}, kf);
      if (v.contains("process_cov")) cfg.noise.process_cov = sim_cov(v["process_cov"], kf + ".process_cov");
      if (v.contains("gps_cov")) cfg.noise.gps_cov = sim_cov(v["gps_cov"], kf + ".gps_cov");
      if (v.contains("relative_cov")) cfg.noise.relative_cov = sim_cov(v["relative_cov"], kf + ".relative_cov");
    } else if (key == "seeds") {
      if (!v.is_array()) throw ConfigError(kf, "expected an array of non-negative integers");
      cfg.seeds.clear();
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number_unsigned()) {
          throw ConfigError(kf + "[" + std::to_string(i) + "]", "expected a non-negative integer");
        }
        cfg.seeds.push_back(v[i].get<std::uint64_t>());
      }
    } else if (key == "estimators") {
      if (!v.is_array()) throw ConfigError(kf, "expected an array of estimator names");
      cfg.estimators.clear();
      for (std::size_t i = 0; i < v.size(); ++i) {
        const std::string ef = kf + "[" + std::to_string(i) + "]";
        if (!v[i].is_string()) throw ConfigError(ef, "expected a string");
        cfg.estimators.push_back(with_field(ef, [&] { return dse::parse_estimator(v[i].get<std::string>()); }));
      }
    } else if (key == "init_est_cov") {
      cfg.init_est_cov = sim_cov(v, kf);
    } else if (key == "init_error_cov") {
      if (v.is_null()) {
        cfg.init_error_cov.reset();
      } else {
        cfg.init_error_cov = sim_cov(v, kf);
      }
    } else if (key == "solver") {
      cfg.solver = solver_config_from_json(v, cfg.solver, kf);
    } else if (auto s = scalars.find(key); s != scalars.end()) {
      s->second(cfg, v, kf);
    } else {
      throw ConfigError(kf, "unknown key");
    }
  }
  with_field(field, [&] { cfg.validate(); });
  return cfg;
}

void apply_override(dse::SimConfig& cfg, const std::string& assignment) {
  auto [key, value] = split_assignment(assignment);
  if (key.rfind("solver.", 0) == 0) {
    const std::string sub = key.substr(7);
    auto s = solver_setters().find(sub);
    if (s == solver_setters().end()) throw ConfigError(key, "unknown key");
    s->second(cfg.solver, value, key);
    return;
  }
  if (sim_matrix_keys().count(key)) {
    throw ConfigError(key, "matrix fields cannot be overridden on the command line; use a config file");
  }
  if (key == "seeds" || key == "estimators" || key == "topology.edges") {
    throw ConfigError(key, "list fields cannot be overridden with --set; use the dedicated flag or a config file");
  }
  auto s = sim_scalar_setters().find(key);
  if (s == sim_scalar_setters().end()) throw ConfigError(key, "unknown key");
  s->second(cfg, value, key);
}

void apply_override(SolverConfig& cfg, const std::string& assignment) {
  auto [key, value] = split_assignment(assignment);
  std::string sub = key.rfind("solver.", 0) == 0 ? key.substr(7) : key;
  auto s = solver_setters().find(sub);
  if (s == solver_setters().end()) throw ConfigError(key, "unknown key");
  s->second(cfg, value, key);
}

}  // namespace rfusion
