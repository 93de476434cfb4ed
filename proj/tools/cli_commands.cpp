#include "cli_commands.hpp"

#include "rfusion/fusion.hpp"
#include "rfusion/json_io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <string_view>

namespace rfusion::cli {

namespace {

std::mutex& log_mutex() {
  static std::mutex m;
  return m;
}

void log_json(std::ostream& err, const Json& record) {
  std::lock_guard<std::mutex> lock(log_mutex());
  err << record.dump() << '\n';
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> parts;
  std::string item;
  std::istringstream is(text);
  while (std::getline(is, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw std::invalid_argument("empty entry in list '" + text + "'");
    parts.push_back(item.substr(b, e - b + 1));
  }
  if (parts.empty()) throw std::invalid_argument("empty list");
  return parts;
}

std::uint64_t parse_u64(const std::string& s) {
  std::size_t pos = 0;
  if (s.empty() || s[0] == '-') throw std::invalid_argument("invalid seed '" + s + "'");
  const unsigned long long v = std::stoull(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("invalid seed '" + s + "'");
  return v;
}

Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open file");
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path, "not valid JSON");
  return j;
}

bool write_text_file(const std::filesystem::path& path, const std::string& text, std::ostream& err) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    err << "error: cannot open " << path.string() << " for writing\n";
    return false;
  }
  out << text;
  out.close();
  if (!out) {
    err << "error: failed writing " << path.string() << '\n';
    return false;
  }
  return true;
}

void log_solve(std::ostream& err, LogLevel level, const std::string& context, const FusionResult& r) {
  if (level < LogLevel::Info || !r.game) return;
  log_json(err, Json{{"event", "solve"},
                     {"context", context},
                     {"iterations", r.game->iterations},
                     {"payoff", r.game->payoff},
                     {"residual_norm", r.game->residual_norm},
                     {"final_t", r.game->final_t}});
}

IterationObserver maybe_trace(std::ostream& err, LogLevel level, const std::string& context) {
  if (level < LogLevel::Trace) return {};
  return trace_observer(err, context);
}

// Runs `body`, mapping library exceptions to exit codes with a diagnostic.
template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const DimensionError& e) {
    err << "error: dimension mismatch: " << e.what() << '\n';
    return kUsageError;
  } catch (const ConvergenceError& e) {
    err << "error: solver did not converge: " << e.what() << '\n';
    return kComputeError;
  } catch (const SingularityError& e) {
    err << "error: singular input: " << e.what() << '\n';
    return kComputeError;
  } catch (const InfeasibleError& e) {
    err << "error: infeasible input: " << e.what() << '\n';
    return kComputeError;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kComputeError;
  }
}

Matrix diag2(double a, double b) {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 0) = a;
  m(1, 1) = b;
  return m;
}

struct ExampleCheck {
  std::string example;
  std::string method;
  Matrix expected;
  FusionResult result;
};

}  // namespace

LogLevel resolve_log_level(int verbosity, const char* rf_log) {
  LogLevel level = verbosity >= 2 ? LogLevel::Trace : verbosity == 1 ? LogLevel::Info : LogLevel::Off;
  if (rf_log) {
    const std::string_view v(rf_log);
    if (v == "trace") level = LogLevel::Trace;
    if (v == "info" && level < LogLevel::Info) level = LogLevel::Info;
  }
  return level;
}

std::vector<dse::EstimatorKind> parse_estimator_list(const std::string& text) {
  std::vector<dse::EstimatorKind> kinds;
  for (const auto& name : split_commas(text)) {
    const auto kind = dse::parse_estimator(name);
    if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) kinds.push_back(kind);
  }
  return kinds;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  for (const auto& item : split_commas(text)) {
    const auto dash = item.find('-');
    if (dash == std::string::npos) {
      seeds.push_back(parse_u64(item));
      continue;
    }
    const std::uint64_t lo = parse_u64(item.substr(0, dash));
    const std::uint64_t hi = parse_u64(item.substr(dash + 1));
    if (hi < lo) throw std::invalid_argument("invalid seed range '" + item + "'");
    if (hi - lo > 1000000) throw std::invalid_argument("seed range '" + item + "' is too large");
    for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
  }
  return seeds;
}

std::vector<double> parse_number_list(const std::string& text) {
  std::vector<double> values;
  for (const auto& item : split_commas(text)) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || !std::isfinite(v)) throw std::invalid_argument("invalid number '" + item + "'");
    values.push_back(v);
  }
  return values;
}

IterationObserver trace_observer(std::ostream& err, const std::string& context) {
  return [&err, context](const IterationRecord& rec) {
    log_json(err, Json{{"context", context},
                       {"outer_t", rec.outer_t},
                       {"iter", rec.iter},
                       {"residual_norm", rec.residual_norm},
                       {"payoff", rec.payoff}});
  };
}

int cmd_examples(const ExamplesOptions& opts, std::ostream& out, std::ostream& err) {
  if (!(opts.tol > 0.0)) {
    err << "error: --tol must be positive\n";
    return kUsageError;
  }
  std::vector<ExampleCheck> checks;
  Json inputs = Json::object();
  const int rc = guarded(err, [&] {
    // Two estimates of the same 2-vector.
    const Estimate x1(Vector::Zero(2), CovarianceMatrix(diag2(5, 5)));
    const Estimate y1(Vector::Zero(2), CovarianceMatrix(diag2(3, 7)));
    inputs["example1"] = Json{{"x", estimate_to_json(x1)}, {"y", estimate_to_json(y1)}};
    FusionResult rf1 = robust_fuse(x1, y1, {}, maybe_trace(err, opts.log, "example1/RF"));
    log_solve(err, opts.log, "example1/RF", rf1);
    checks.push_back({"example1", "RF", diag2(3, 5), std::move(rf1)});
    checks.push_back({"example1", "CI", diag2(3.79, 5.79), covariance_intersection(x1, y1)});

    // Partial measurement of the first coordinate.
    const Estimate x2(Vector::Zero(2), CovarianceMatrix(diag2(5, 5)));
    const Estimate y2(Vector::Zero(1), CovarianceMatrix(Matrix::Identity(1, 1)));
    Matrix c(1, 2);
    c << 1, 0;
    const LinearMeasurementModel model(c, Matrix::Identity(1, 1), CovarianceMatrix::zero(1));
    const Vector z = Vector::Zero(1);
    inputs["example2"] = Json{{"x", estimate_to_json(x2)},
                              {"y", estimate_to_json(y2)},
                              {"model", model_to_json(model)},
                              {"z", vector_to_json(z)}};
    FusionResult rf2 = robust_linear_update(x2, y2, z, model, {}, maybe_trace(err, opts.log, "example2/RF"));
    log_solve(err, opts.log, "example2/RF", rf2);
    checks.push_back({"example2", "RF", diag2(1, 5), std::move(rf2)});
    checks.push_back({"example2", "CI", diag2(3, 6), ci_linear_update(x2, y2, z, model)});
    return int(kOk);
  });
  if (rc != kOk) return rc;

  Json report{{"tolerance", opts.tol}, {"inputs", inputs}, {"results", Json::array()}};
  bool all_pass = true;
  for (const auto& chk : checks) {
    const Matrix& cov = chk.result.estimate.cov().data();
    const double max_diff = (cov - chk.expected).cwiseAbs().maxCoeff();
    const bool pass = max_diff <= opts.tol;
    all_pass = all_pass && pass;
    char line[256];
    std::snprintf(line, sizeof(line), "%s %s: %s  cov=[[%.6f, %.6f], [%.6f, %.6f]] trace=%.6f max|diff|=%.3g\n",
                  chk.example.c_str(), chk.method.c_str(), pass ? "PASS" : "FAIL", cov(0, 0), cov(0, 1),
                  cov(1, 0), cov(1, 1), cov.trace(), max_diff);
    out << line;
    Json entry{{"example", chk.example},
               {"method", chk.method},
               {"cov", covariance_to_json(chk.result.estimate.cov())},
               {"mean", vector_to_json(chk.result.estimate.mean())},
               {"trace", cov.trace()},
               {"expected", matrix_to_json(chk.expected)},
               {"max_abs_diff", max_diff},
               {"pass", pass}};
    if (chk.result.ci_omega) entry["ci_omega"] = *chk.result.ci_omega;
    if (chk.result.game) {
      entry["iterations"] = chk.result.game->iterations;
      entry["residual_norm"] = chk.result.game->residual_norm;
    }
    report["results"].push_back(std::move(entry));
  }
  report["all_pass"] = all_pass;
  if (!write_text_file(opts.out_path, report.dump(2) + "\n", err)) return kIoError;
  out << "report written to " << opts.out_path << '\n';
  return kOk;
}

int cmd_simulate(const SimulateOptions& opts, std::ostream& out, std::ostream& err) {
  dse::SimConfig cfg;
  int rc = guarded(err, [&] {
    if (opts.config_path) cfg = sim_config_from_json(load_json_file(*opts.config_path));
    for (const auto& ov : opts.overrides) apply_override(cfg, ov);
    if (opts.estimators) cfg.estimators = parse_estimator_list(*opts.estimators);
    if (opts.seeds) cfg.seeds = parse_seed_list(*opts.seeds);
    cfg.validate();
    return int(kOk);
  });
  if (rc != kOk) return rc;

  if (opts.log >= LogLevel::Info) log_json(err, Json{{"event", "config"}, {"config", sim_config_to_json(cfg)}});
  dse::SimResult result;
  const auto start = std::chrono::steady_clock::now();
  rc = guarded(err, [&] {
    result = dse::run_simulation(cfg, maybe_trace(err, opts.log, "simulate/RF"));
    return int(kOk);
  });
  if (rc != kOk) return rc;
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  for (const auto& run : result.runs) {
    if (run.diverged) {
      err << "warning: " << dse::to_string(run.estimator) << " diverged on seed " << run.seed << " at t="
          << run.diverged_at << "; rows from that step on are omitted\n";
    }
  }

  std::error_code ec;
  std::filesystem::create_directories(opts.out_dir, ec);
  if (ec) {
    err << "error: cannot create output directory " << opts.out_dir << ": " << ec.message() << '\n';
    return kIoError;
  }
  std::ostringstream records, summary;
  dse::write_records_csv(records, result);
  dse::write_summary_csv(summary, result);
  const std::filesystem::path dir(opts.out_dir);
  if (!write_text_file(dir / "records.csv", records.str(), err)) return kIoError;
  if (!write_text_file(dir / "summary.csv", summary.str(), err)) return kIoError;

  char line[160];
  std::snprintf(line, sizeof(line), "%-9s %5s %14s %14s\n", "estimator", "agent", "mean_pos_err", "std_pos_err");
  out << line;
  for (const auto& row : result.summary) {
    std::snprintf(line, sizeof(line), "%-9s %5d %14.6f %14.6f\n", dse::to_string(row.estimator), row.agent,
                  row.mean_pos_error, row.std_pos_error);
    out << line;
  }
  out << "wrote " << result.records.size() << " rows to " << (dir / "records.csv").string() << " and "
      << (dir / "summary.csv").string() << '\n';
  if (opts.log >= LogLevel::Info) {
    log_json(err, Json{{"event", "done"}, {"seconds", seconds}, {"rows", result.records.size()}});
  }
  return kOk;
}

int cmd_fuse(const FuseOptions& opts, std::ostream& out, std::ostream& err) {
  Json doc;
  const int rc = guarded(err, [&] {
    const FusionMethod method = parse_fusion_method(opts.method);
    SolverConfig solver;
    for (const auto& ov : opts.overrides) apply_override(solver, ov);
    solver.validate();
    const Estimate ex = estimate_from_json(load_json_file(opts.x_path), "x");
    const Estimate ey = estimate_from_json(load_json_file(opts.y_path), "y");
    const IterationObserver observer = maybe_trace(err, opts.log, "fuse/RF");

    if (opts.z && !opts.model_path) throw ConfigError("--z", "requires --model");
    FusionResult result = [&] {
      if (!opts.model_path) {
        switch (method) {
          case FusionMethod::Robust: return robust_fuse(ex, ey, solver, observer);
          case FusionMethod::CovarianceIntersection: return covariance_intersection(ex, ey);
          case FusionMethod::Naive:
            if (ex.dim() != ey.dim()) throw DimensionError("x and y must have the same dimension");
            return naive_linear_update(ex, ey, Vector::Zero(ex.dim()),
                                       LinearMeasurementModel::simple_fusion(ex.dim()));
        }
      }
      const LinearMeasurementModel model = model_from_json(load_json_file(*opts.model_path), "model");
      if (!opts.z) throw ConfigError("--z", "required together with --model");
      const std::vector<double> zv = parse_number_list(*opts.z);
      const Vector z = Eigen::Map<const Vector>(zv.data(), static_cast<Index>(zv.size()));
      switch (method) {
        case FusionMethod::Robust: return robust_linear_update(ex, ey, z, model, solver, observer);
        case FusionMethod::CovarianceIntersection: return ci_linear_update(ex, ey, z, model);
        case FusionMethod::Naive: return naive_linear_update(ex, ey, z, model);
      }
      throw std::invalid_argument("unknown fusion method");
    }();
    log_solve(err, opts.log, "fuse/RF", result);
    doc = fusion_result_to_json(result, method);
    return int(kOk);
  });
  if (rc != kOk) return rc;

  const std::string text = doc.dump(2) + "\n";
  if (opts.out_path) {
    if (!write_text_file(*opts.out_path, text, err)) return kIoError;
  } else {
    out << text;
  }
  return kOk;
}

namespace {

constexpr const char* kSimulateFooter = R"(Outputs (in --out DIR):
  records.csv  t,seed,estimator,agent,pos_error,vel_error
               one row per (seed, estimator, t, agent), t = 1..steps, agents 1-based;
               pos_error in m, vel_error in m/step (Euclidean norms of the estimate error).
               Rows of a run that diverged are omitted from the divergence step on.
  summary.csv  estimator,agent,mean_pos_error,std_pos_error
               pos_error statistics over the last steady_state_window steps, pooled over seeds
               (sample standard deviation).

Config file keys (all optional): topology{n_agents,edges}, noise{process_cov,gps_cov,relative_cov},
steps, seeds, estimators, init_pos_box, init_est_cov, init_error_cov, steady_state_window,
inject_noise, divergence_threshold, threads, solver{...}. Covariances are {"dim": n, "data": [[...]]}.
--set accepts scalar keys such as steps=100, threads=0, solver.mu=20.)";

constexpr const char* kFuseFooter = R"(Estimate files: {"mean": [...], "cov": {"dim": n, "data": [[...]]}}
Model file:     {"C": [[...]], "D": [[...]], "noise_cov": {"dim": m, "data": [[...]]}}
Without --model the two estimates are fused directly (z = (I - K) x + K y).)";

constexpr const char* kAppFooter = R"(Environment:
  RF_LOG=info|trace  solver log lines (JSON) on stderr; same as -v / -vv.
Exit codes: 0 success, 1 computation failed, 2 invalid input, 3 output not written.
CSV schemas: see `rfusion simulate --help`.)";

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Robust fusion of estimates with unknown cross-correlation", "rfusion"};
  app.footer(kAppFooter);
  app.require_subcommand(1);
  app.fallthrough();
  int verbosity = 0;
  app.add_flag("-v,--verbose", verbosity, "Increase log output (-v info, -vv per-iteration trace)");

  ExamplesOptions ex_opts;
  auto* ex_cmd = app.add_subcommand("examples", "Run the two reference fusion examples with RF and CI");
  ex_cmd->add_option("--tol", ex_opts.tol, "Entrywise tolerance against the reference matrices")
      ->capture_default_str();
  ex_cmd->add_option("--out", ex_opts.out_path, "JSON report path")->capture_default_str();

  SimulateOptions sim_opts;
  auto* sim_cmd = app.add_subcommand("simulate", "Run the decentralized estimation simulation");
  sim_cmd->footer(kSimulateFooter);
  sim_cmd->add_option("--config", sim_opts.config_path, "SimConfig JSON file (defaults when omitted)")
      ->check(CLI::ExistingFile);
  sim_cmd->add_option("--out", sim_opts.out_dir, "Output directory")->capture_default_str();
  sim_cmd->add_option("--estimators", sim_opts.estimators, "Comma list of NF,RF,CI,CKF");
  sim_cmd->add_option("--seeds", sim_opts.seeds, "Comma list of seeds; a-b for ranges");
  sim_cmd->add_option("--set", sim_opts.overrides, "Override a scalar config key (key=value)")
      ->allow_extra_args(false);

  FuseOptions fuse_opts;
  auto* fuse_cmd = app.add_subcommand("fuse", "Fuse two estimates read from JSON files");
  fuse_cmd->footer(kFuseFooter);
  fuse_cmd->add_option("--x", fuse_opts.x_path, "Estimate JSON for x")->required()->check(CLI::ExistingFile);
  fuse_cmd->add_option("--y", fuse_opts.y_path, "Estimate JSON for y")->required()->check(CLI::ExistingFile);
  fuse_cmd->add_option("--model", fuse_opts.model_path, "Measurement model JSON")->check(CLI::ExistingFile);
  fuse_cmd->add_option("--z", fuse_opts.z, "Measurement value, comma separated");
  fuse_cmd->add_option("--method", fuse_opts.method, "rf, ci or nf")
      ->required()
      ->check(CLI::IsMember({"rf", "ci", "nf", "RF", "CI", "NF"}));
  fuse_cmd->add_option("--out", fuse_opts.out_path, "Output JSON path (stdout when omitted)");
  fuse_cmd->add_option("--set", fuse_opts.overrides, "Override a solver key (solver.key=value)")
      ->allow_extra_args(false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  const LogLevel log = resolve_log_level(verbosity, std::getenv("RF_LOG"));
  if (*ex_cmd) {
    ex_opts.log = log;
    return cmd_examples(ex_opts, out, err);
  }
  if (*sim_cmd) {
    sim_opts.log = log;
    return cmd_simulate(sim_opts, out, err);
  }
  fuse_opts.log = log;
  return cmd_fuse(fuse_opts, out, err);
}

}  // namespace rfusion::cli
