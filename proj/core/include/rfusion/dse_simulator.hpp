#pragma once

// Decentralized state estimation for planar double-integrator agents that
// exchange estimates over a directed graph and measure relative positions.
// Each agent i keeps only its own state [x_i; v_i] (4-vector). Agent 1 also
// receives GPS fixes. A centralized Kalman filter (CKF) over the stacked
// state serves as the reference.

#include "rfusion/estimate_core.hpp"
#include "rfusion/fusion.hpp"
#include "rfusion/minimax_solver.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace rfusion::dse {

enum class EstimatorKind { NF, RF, CI, CKF };

const char* to_string(EstimatorKind kind);
/// "NF", "RF", "CI", "CKF" (case-insensitive).
EstimatorKind parse_estimator(const std::string& name);

struct AgentState {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();  // m
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();  // m / step

  Vector stacked() const;
};

/// Directed edge: `from` sends its estimate, `to` measures x_to - x_from and
/// updates. Agent indices are 1-based.
struct Edge {
  int from = 0;
  int to = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

struct Topology {
  int n_agents = 4;
  std::vector<Edge> edges;

  /// Four agents, edges 1->2, 2->3, 2->4, 3->4, 4->1, 3->1, 2->1, 1->4.
  static Topology four_agent_default();
  void validate() const;
};

struct NoiseParams {
  Matrix process_cov = 1e-6 * Matrix::Identity(2, 2);   // Q_i
  Matrix gps_cov = Matrix::Identity(2, 2);              // R_1
  Matrix relative_cov = 1e-2 * Matrix::Identity(2, 2);  // R_ij

  void validate() const;
};

struct SimConfig {
  Topology topology = Topology::four_agent_default();
  NoiseParams noise;
  int steps = 300;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<EstimatorKind> estimators = {EstimatorKind::NF, EstimatorKind::RF, EstimatorKind::CI,
                                           EstimatorKind::CKF};
  double init_pos_box = 10.0;  // true initial positions ~ U[0, box]^2, velocities 0
  Matrix init_est_cov = Matrix::Identity(4, 4);  // claimed initial covariance
  /// Covariance of the sampled initial estimation error; defaults to init_est_cov.
  std::optional<Matrix> init_error_cov;
  int steady_state_window = 150;
  /// When false, truth and measurements are generated without noise while the
  /// filters keep using the configured covariances.
  bool inject_noise = true;
  double divergence_threshold = 1e6;
  int threads = 1;  // 0 = hardware concurrency
  SolverConfig solver;

  void validate() const;
};

struct ErrorRecord {
  int t = 0;
  std::uint64_t seed = 0;
  EstimatorKind estimator = EstimatorKind::RF;
  int agent = 0;  // 1-based
  double pos_error = 0.0;
  double vel_error = 0.0;
};

struct RunInfo {
  std::uint64_t seed = 0;
  EstimatorKind estimator = EstimatorKind::RF;
  bool diverged = false;
  int diverged_at = 0;  // first step whose error exceeded the threshold
  double min_cov_eigenvalue = 0.0;  // over all agents and steps
};

struct SummaryRow {
  EstimatorKind estimator = EstimatorKind::RF;
  int agent = 0;
  double mean_pos_error = 0.0;
  double std_pos_error = 0.0;
  std::size_t samples = 0;
};

struct SimResult {
  std::vector<ErrorRecord> records;  // ordered by seed, estimator, t, agent
  std::vector<SummaryRow> summary;   // ordered by estimator, agent
  std::vector<RunInfo> runs;         // ordered by seed, estimator

  const SummaryRow* find_summary(EstimatorKind kind, int agent) const;
};

enum class Stream : std::uint64_t { TruthInit = 1, EstimateInit = 2, Process = 3, Gps = 4, Relative = 5 };

/// Independent generators keyed by (seed, purpose, index); the draw sequence
/// of one stream never depends on how others are used.
class RngStreams {
 public:
  explicit RngStreams(std::uint64_t seed) : seed_(seed) {}
  std::mt19937_64& get(Stream stream, int index);

 private:
  std::uint64_t seed_;
  std::map<std::pair<std::uint64_t, int>, std::mt19937_64> streams_;
};

/// A = [[I, I], [0, I]].
Matrix dynamics_matrix();
/// B = [0; I].
Matrix noise_input_matrix();
/// H = [I 0], the position selector.
Matrix position_selector();

/// Advances every agent by one step, drawing w_i ~ N(0, Q_i) from the process
/// stream of agent i.
std::vector<AgentState> step_world(std::span<const AgentState> states, const NoiseParams& noise,
                                   RngStreams& rng, bool inject_noise = true);

/// Kalman prediction for one agent's 4-dim estimate.
Estimate predict(const Estimate& est, const NoiseParams& noise);

/// Kalman update with a position fix y = x + eta, eta ~ N(0, R1).
Estimate gps_update(const Estimate& est, const Vector& y, const Matrix& r1);

/// Agent j's update from agent i's estimate and y_ij = x_j - x_i + eta.
Estimate relative_update(const Estimate& est_j, const Estimate& est_i, const Vector& y_ij,
                         const Matrix& r_ij, FusionMethod method, const SolverConfig& cfg = {},
                         const IterationObserver& observer = {});

/// Runs every (seed, estimator) pair. Deterministic for a given config.
/// `observer` sees RF solver iterations; with threads != 1 it is called
/// concurrently and must be thread-safe.
SimResult run_simulation(const SimConfig& cfg, const IterationObserver& observer = {});

/// Header: t,seed,estimator,agent,pos_error,vel_error
void write_records_csv(std::ostream& os, const SimResult& result);
/// Header: estimator,agent,mean_pos_error,std_pos_error
void write_summary_csv(std::ostream& os, const SimResult& result);

}  // namespace rfusion::dse
