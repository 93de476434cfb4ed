#include "rfusion/dse_simulator.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <ostream>
#include <thread>

namespace rfusion::dse {

const char* to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::NF: return "NF";
    case EstimatorKind::RF: return "RF";
    case EstimatorKind::CI: return "CI";
    case EstimatorKind::CKF: return "CKF";
  }
  return "?";
}

EstimatorKind parse_estimator(const std::string& name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (upper == "NF") return EstimatorKind::NF;
  if (upper == "RF") return EstimatorKind::RF;
  if (upper == "CI") return EstimatorKind::CI;
  if (upper == "CKF") return EstimatorKind::CKF;
  throw std::invalid_argument("unknown estimator '" + name + "' (expected NF, RF, CI or CKF)");
}

Vector AgentState::stacked() const {
  Vector s(4);
  s << position, velocity;
  return s;
}

Topology Topology::four_agent_default() {
  Topology topo;
  topo.n_agents = 4;
  topo.edges = {{1, 2}, {2, 3}, {2, 4}, {3, 4}, {4, 1}, {3, 1}, {2, 1}, {1, 4}};
  return topo;
}

void Topology::validate() const {
  if (n_agents < 1) throw std::invalid_argument("topology.n_agents must be >= 1");
  for (const Edge& e : edges) {
    if (e.from < 1 || e.from > n_agents || e.to < 1 || e.to > n_agents) {
      throw std::invalid_argument("topology.edges: edge " + std::to_string(e.from) + "->" +
                                  std::to_string(e.to) + " references an unknown agent");
    }
    if (e.from == e.to) {
      throw std::invalid_argument("topology.edges: self-loop on agent " + std::to_string(e.from));
    }
  }
}

namespace {

void require_psd2(const Matrix& m, const char* field) {
  if (m.rows() != 2 || m.cols() != 2) {
    throw std::invalid_argument(std::string(field) + " must be 2x2");
  }
  try {
    if (!is_psd(m)) throw std::invalid_argument(std::string(field) + " is not positive semidefinite");
  } catch (const DimensionError&) {
    throw std::invalid_argument(std::string(field) + " is not symmetric");
  }
}

}  // namespace

void NoiseParams::validate() const {
  require_psd2(process_cov, "noise.process_cov");
  require_psd2(gps_cov, "noise.gps_cov");
  require_psd2(relative_cov, "noise.relative_cov");
}

void SimConfig::validate() const {
  topology.validate();
  noise.validate();
  if (steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (seeds.empty()) throw std::invalid_argument("seeds must contain at least one seed");
  if (estimators.empty()) throw std::invalid_argument("estimators must not be empty");
  if (!(init_pos_box >= 0.0)) throw std::invalid_argument("init_pos_box must be >= 0");
  auto check_cov4 = [](const Matrix& m, const char* field) {
    if (m.rows() != 4 || m.cols() != 4) throw std::invalid_argument(std::string(field) + " must be 4x4");
    bool ok = false;
    try {
      ok = is_psd(m);
    } catch (const DimensionError&) {
      throw std::invalid_argument(std::string(field) + " is not symmetric");
    }
    if (!ok) throw std::invalid_argument(std::string(field) + " is not positive semidefinite");
  };
  check_cov4(init_est_cov, "init_est_cov");
  if (init_error_cov) check_cov4(*init_error_cov, "init_error_cov");
  if (steady_state_window < 1) throw std::invalid_argument("steady_state_window must be >= 1");
  if (!(divergence_threshold > 0.0)) throw std::invalid_argument("divergence_threshold must be > 0");
  if (threads < 0) throw std::invalid_argument("threads must be >= 0");
  solver.validate();
}

const SummaryRow* SimResult::find_summary(EstimatorKind kind, int agent) const {
  for (const SummaryRow& row : summary) {
    if (row.estimator == kind && row.agent == agent) return &row;
  }
  return nullptr;
}

std::mt19937_64& RngStreams::get(Stream stream, int index) {
  const auto key = std::make_pair(static_cast<std::uint64_t>(stream), index);
  auto it = streams_.find(key);
  if (it == streams_.end()) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed_ & 0xffffffffu),
                      static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(key.first), static_cast<std::uint32_t>(index)};
    it = streams_.emplace(key, std::mt19937_64(seq)).first;
  }
  return it->second;
}

Matrix dynamics_matrix() {
  Matrix a = Matrix::Identity(4, 4);
  a.topRightCorner(2, 2) = Matrix::Identity(2, 2);
  return a;
}

Matrix noise_input_matrix() {
  Matrix b = Matrix::Zero(4, 2);
  b.bottomRows(2) = Matrix::Identity(2, 2);
  return b;
}

Matrix position_selector() {
  Matrix h = Matrix::Zero(2, 4);
  h.leftCols(2) = Matrix::Identity(2, 2);
  return h;
}

namespace {

// Draws from N(0, cov); always consumes cov.rows() normals from the stream.
Vector sample_gaussian(const Matrix& cov, std::mt19937_64& gen) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(cov.rows());
  for (Index i = 0; i < z.size(); ++i) z(i) = normal(gen);
  return sqrtm(CovarianceMatrix(cov)) * z;
}

Estimate kalman_update(const Estimate& est, const Matrix& h, const Vector& y, const Matrix& r) {
  const Matrix& p = est.cov().data();
  const Matrix s = symmetrize(h * p * h.transpose() + r);
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().minCoeff() > 0.0)) {
    throw SingularityError("Kalman update: innovation covariance is singular");
  }
  const Matrix gain = llt.solve(h * p).transpose();  // P H^T S^{-1}
  Vector mean = est.mean() + gain * (y - h * est.mean());
  const Matrix ikh = Matrix::Identity(p.rows(), p.cols()) - gain * h;
  Matrix cov = ikh * p * ikh.transpose() + gain * r * gain.transpose();
  return Estimate(std::move(mean), CovarianceMatrix(symmetrize(cov)));
}

}  // namespace

std::vector<AgentState> step_world(std::span<const AgentState> states, const NoiseParams& noise,
                                   RngStreams& rng, bool inject_noise) {
  std::vector<AgentState> next;
  next.reserve(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    Vector w = sample_gaussian(noise.process_cov, rng.get(Stream::Process, static_cast<int>(i)));
    if (!inject_noise) w.setZero();
    AgentState s;
    s.position = states[i].position + states[i].velocity;
    s.velocity = states[i].velocity + w;
    next.push_back(s);
  }
  return next;
}

Estimate predict(const Estimate& est, const NoiseParams& noise) {
  if (est.dim() != 4) throw DimensionError("predict: expected a 4-dimensional agent estimate");
  static const Matrix a = dynamics_matrix();
  static const Matrix b = noise_input_matrix();
  Vector mean = a * est.mean();
  Matrix cov = a * est.cov().data() * a.transpose() + b * noise.process_cov * b.transpose();
  return Estimate(std::move(mean), CovarianceMatrix(symmetrize(cov)));
}

Estimate gps_update(const Estimate& est, const Vector& y, const Matrix& r1) {
  if (est.dim() != 4) throw DimensionError("gps_update: expected a 4-dimensional agent estimate");
  if (y.size() != 2) throw DimensionError("gps_update: expected a 2-dimensional position fix");
  return kalman_update(est, position_selector(), y, r1);
}

Estimate relative_update(const Estimate& est_j, const Estimate& est_i, const Vector& y_ij,
                         const Matrix& r_ij, FusionMethod method, const SolverConfig& cfg,
                         const IterationObserver& observer) {
  if (est_j.dim() != 4 || est_i.dim() != 4) {
    throw DimensionError("relative_update: expected 4-dimensional agent estimates");
  }
  const Matrix h = position_selector();
  const LinearMeasurementModel model(h, -h, CovarianceMatrix(r_ij));
  switch (method) {
    case FusionMethod::Robust: return robust_linear_update(est_j, est_i, y_ij, model, cfg, observer).estimate;
    case FusionMethod::CovarianceIntersection: return ci_linear_update(est_j, est_i, y_ij, model).estimate;
    case FusionMethod::Naive: return naive_linear_update(est_j, est_i, y_ij, model).estimate;
  }
  throw std::invalid_argument("relative_update: unknown fusion method");
}

namespace {

// Truth trajectory and every measurement for one seed; shared by all
// estimators so that they see identical data.
struct Scenario {
  std::uint64_t seed = 0;
  std::vector<std::vector<AgentState>> truth;       // [t][agent], t = 0..steps
  std::vector<Vector> init_means;                   // [agent]
  std::vector<Vector> gps;                          // [t], t = 1..steps (index 0 unused)
  std::vector<std::vector<Vector>> relative;        // [t][edge]
};

Scenario make_scenario(const SimConfig& cfg, std::uint64_t seed) {
  const int n = cfg.topology.n_agents;
  RngStreams rng(seed);
  Scenario sc;
  sc.seed = seed;

  std::vector<AgentState> states(n);
  for (int i = 0; i < n; ++i) {
    std::uniform_real_distribution<double> uniform(0.0, cfg.init_pos_box);
    auto& gen = rng.get(Stream::TruthInit, i);
    states[i].position = Eigen::Vector2d(uniform(gen), uniform(gen));
    states[i].velocity.setZero();
  }
  const Matrix& err_cov = cfg.init_error_cov ? *cfg.init_error_cov : cfg.init_est_cov;
  for (int i = 0; i < n; ++i) {
    Vector err = sample_gaussian(err_cov, rng.get(Stream::EstimateInit, i));
    if (!cfg.inject_noise && !cfg.init_error_cov) err.setZero();
    sc.init_means.push_back(states[i].stacked() + err);
  }

  sc.truth.push_back(states);
  sc.gps.resize(cfg.steps + 1);
  sc.relative.resize(cfg.steps + 1);
  const auto& edges = cfg.topology.edges;
  for (int t = 1; t <= cfg.steps; ++t) {
    states = step_world(states, cfg.noise, rng, cfg.inject_noise);
    sc.truth.push_back(states);

    Vector eta = sample_gaussian(cfg.noise.gps_cov, rng.get(Stream::Gps, 0));
    if (!cfg.inject_noise) eta.setZero();
    sc.gps[t] = states[0].position + eta;

    sc.relative[t].reserve(edges.size());
    for (std::size_t e = 0; e < edges.size(); ++e) {
      Vector eta_ij = sample_gaussian(cfg.noise.relative_cov,
                                      rng.get(Stream::Relative, static_cast<int>(e)));
      if (!cfg.inject_noise) eta_ij.setZero();
      const Vector diff = states[edges[e].to - 1].position - states[edges[e].from - 1].position;
      sc.relative[t].push_back(diff + eta_ij);
    }
  }
  return sc;
}

struct RunOutput {
  std::vector<ErrorRecord> records;
  RunInfo info;
};

// Appends errors for step t; returns false once any error exceeds the
// divergence threshold or is not finite.
bool record_errors(const SimConfig& cfg, const Scenario& sc, EstimatorKind kind, int t,
                   const std::vector<Vector>& means, RunOutput& out) {
  std::vector<ErrorRecord> rows;
  for (int i = 0; i < cfg.topology.n_agents; ++i) {
    const AgentState& truth = sc.truth[t][i];
    ErrorRecord rec;
    rec.t = t;
    rec.seed = sc.seed;
    rec.estimator = kind;
    rec.agent = i + 1;
    rec.pos_error = (means[i].head<2>() - truth.position).norm();
    rec.vel_error = (means[i].tail<2>() - truth.velocity).norm();
    if (!std::isfinite(rec.pos_error) || !std::isfinite(rec.vel_error) ||
        rec.pos_error > cfg.divergence_threshold || rec.vel_error > cfg.divergence_threshold) {
      out.info.diverged = true;
      out.info.diverged_at = t;
      return false;
    }
    rows.push_back(rec);
  }
  out.records.insert(out.records.end(), rows.begin(), rows.end());
  return true;
}

RunOutput run_decentralized(const SimConfig& cfg, const Scenario& sc, EstimatorKind kind,
                            const IterationObserver& observer) {
  const int n = cfg.topology.n_agents;
  const FusionMethod method = kind == EstimatorKind::NF   ? FusionMethod::Naive
                              : kind == EstimatorKind::RF ? FusionMethod::Robust
                                                          : FusionMethod::CovarianceIntersection;
  RunOutput out;
  out.info.seed = sc.seed;
  out.info.estimator = kind;
  out.info.min_cov_eigenvalue = std::numeric_limits<double>::infinity();
  out.records.reserve(static_cast<std::size_t>(cfg.steps) * n);

  std::vector<Estimate> est;
  for (int i = 0; i < n; ++i) est.emplace_back(sc.init_means[i], CovarianceMatrix(cfg.init_est_cov));

  std::vector<Vector> means(n);
  for (int t = 1; t <= cfg.steps; ++t) {
    for (int i = 0; i < n; ++i) est[i] = predict(est[i], cfg.noise);
    est[0] = gps_update(est[0], sc.gps[t], cfg.noise.gps_cov);
    const auto& edges = cfg.topology.edges;
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const int from = edges[e].from - 1;
      const int to = edges[e].to - 1;
      est[to] = relative_update(est[to], est[from], sc.relative[t][e], cfg.noise.relative_cov,
                                method, cfg.solver, observer);
    }
    for (int i = 0; i < n; ++i) {
      means[i] = est[i].mean();
      out.info.min_cov_eigenvalue = std::min(out.info.min_cov_eigenvalue, min_eigenvalue(est[i].cov().data()));
    }
    if (!record_errors(cfg, sc, kind, t, means, out)) break;
  }
  return out;
}

RunOutput run_centralized(const SimConfig& cfg, const Scenario& sc) {
  const int n = cfg.topology.n_agents;
  const Index dim = 4 * n;
  RunOutput out;
  out.info.seed = sc.seed;
  out.info.estimator = EstimatorKind::CKF;
  out.info.min_cov_eigenvalue = std::numeric_limits<double>::infinity();

  Matrix a = Matrix::Zero(dim, dim);
  Matrix bqb = Matrix::Zero(dim, dim);
  Matrix p0 = Matrix::Zero(dim, dim);
  Vector x0(dim);
  const Matrix b = noise_input_matrix();
  for (int i = 0; i < n; ++i) {
    a.block(4 * i, 4 * i, 4, 4) = dynamics_matrix();
    bqb.block(4 * i, 4 * i, 4, 4) = b * cfg.noise.process_cov * b.transpose();
    p0.block(4 * i, 4 * i, 4, 4) = cfg.init_est_cov;
    x0.segment(4 * i, 4) = sc.init_means[i];
  }
  Estimate est(x0, CovarianceMatrix(p0));

  Matrix h_gps = Matrix::Zero(2, dim);
  h_gps.leftCols(2) = Matrix::Identity(2, 2);
  std::vector<Matrix> h_rel;
  for (const Edge& e : cfg.topology.edges) {
    Matrix h = Matrix::Zero(2, dim);
    h.block(0, 4 * (e.to - 1), 2, 2) += Matrix::Identity(2, 2);
    h.block(0, 4 * (e.from - 1), 2, 2) -= Matrix::Identity(2, 2);
    h_rel.push_back(std::move(h));
  }

  std::vector<Vector> means(n);
  for (int t = 1; t <= cfg.steps; ++t) {
    est = Estimate(a * est.mean(), CovarianceMatrix(symmetrize(a * est.cov().data() * a.transpose() + bqb)));
    est = kalman_update(est, h_gps, sc.gps[t], cfg.noise.gps_cov);
    for (std::size_t e = 0; e < h_rel.size(); ++e) {
      est = kalman_update(est, h_rel[e], sc.relative[t][e], cfg.noise.relative_cov);
    }
    for (int i = 0; i < n; ++i) means[i] = est.mean().segment(4 * i, 4);
    out.info.min_cov_eigenvalue = std::min(out.info.min_cov_eigenvalue, min_eigenvalue(est.cov().data()));
    if (!record_errors(cfg, sc, EstimatorKind::CKF, t, means, out)) break;
  }
  return out;
}

std::vector<SummaryRow> summarize(const SimConfig& cfg, const std::vector<ErrorRecord>& records) {
  const int first_t = std::max(1, cfg.steps - cfg.steady_state_window + 1);
  std::vector<SummaryRow> rows;
  for (EstimatorKind kind : cfg.estimators) {
    for (int agent = 1; agent <= cfg.topology.n_agents; ++agent) {
      double sum = 0.0, sum_sq = 0.0;
      std::size_t count = 0;
      for (const ErrorRecord& r : records) {
        if (r.estimator != kind || r.agent != agent || r.t < first_t) continue;
        sum += r.pos_error;
        sum_sq += r.pos_error * r.pos_error;
        ++count;
      }
      SummaryRow row;
      row.estimator = kind;
      row.agent = agent;
      row.samples = count;
      if (count > 0) {
        row.mean_pos_error = sum / static_cast<double>(count);
        const double var = count > 1 ? (sum_sq - sum * row.mean_pos_error) / static_cast<double>(count - 1) : 0.0;
        row.std_pos_error = std::sqrt(std::max(0.0, var));
      } else {
        row.mean_pos_error = std::numeric_limits<double>::quiet_NaN();
        row.std_pos_error = std::numeric_limits<double>::quiet_NaN();
      }
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace

SimResult run_simulation(const SimConfig& cfg, const IterationObserver& observer) {
  cfg.validate();
  std::vector<Scenario> scenarios;
  scenarios.reserve(cfg.seeds.size());
  for (std::uint64_t seed : cfg.seeds) scenarios.push_back(make_scenario(cfg, seed));

  const std::size_t n_est = cfg.estimators.size();
  const std::size_t n_jobs = scenarios.size() * n_est;
  std::vector<RunOutput> outputs(n_jobs);
  std::vector<std::exception_ptr> errors(n_jobs);

  auto run_job = [&](std::size_t job) {
    const Scenario& sc = scenarios[job / n_est];
    const EstimatorKind kind = cfg.estimators[job % n_est];
    try {
      outputs[job] = kind == EstimatorKind::CKF ? run_centralized(cfg, sc) : run_decentralized(cfg, sc, kind, observer);
    } catch (...) {
      errors[job] = std::current_exception();
    }
  };

  unsigned threads = cfg.threads == 0 ? std::max(1u, std::thread::hardware_concurrency())
                                      : static_cast<unsigned>(cfg.threads);
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n_jobs));
  if (threads <= 1) {
    for (std::size_t job = 0; job < n_jobs; ++job) run_job(job);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        for (std::size_t job = next++; job < n_jobs; job = next++) run_job(job);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }

  SimResult result;
  for (auto& out : outputs) {
    result.records.insert(result.records.end(), out.records.begin(), out.records.end());
    result.runs.push_back(out.info);
  }
  result.summary = summarize(cfg, result.records);
  return result;
}

void write_records_csv(std::ostream& os, const SimResult& result) {
  os << "t,seed,estimator,agent,pos_error,vel_error\n";
  char buf[160];
  for (const ErrorRecord& r : result.records) {
    std::snprintf(buf, sizeof(buf), "%d,%llu,%s,%d,%.10g,%.10g\n", r.t,
                  static_cast<unsigned long long>(r.seed), to_string(r.estimator), r.agent,
                  r.pos_error, r.vel_error);
    os << buf;
  }
}

void write_summary_csv(std::ostream& os, const SimResult& result) {
  os << "estimator,agent,mean_pos_error,std_pos_error\n";
  char buf[128];
  for (const SummaryRow& r : result.summary) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%.10g,%.10g\n", to_string(r.estimator), r.agent,
                  r.mean_pos_error, r.std_pos_error);
    os << buf;
  }
}

}  // namespace rfusion::dse
