#pragma once

// Episodic optimistic model-based RL loop, regret/uncertainty metrics,
// zero-shot downstream evaluation and multi-seed persistence.

#include "combrl/agents.hpp"
#include "combrl/config.hpp"
#include "combrl/env.hpp"
#include "combrl/gp.hpp"
#include "combrl/icem.hpp"
#include "combrl/objective.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace combrl {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr const char* kCsvHeader =
    "seed,episode,return,gap,cum_regret,sigma_integral,model_complexity,lambda,plan_seconds,fit_seconds";

// ---------------------------------------------------------------------------
// Tasks: a reward and initial state on top of an environment's dynamics.

struct DownstreamTask {
  std::string name;
  std::string env;
  BatchReward reward;
  Vector initial_state;
  std::string formula;
};

inline std::vector<std::string> task_names(const std::string& env) {
  if (env == "pendulum-gp") return {"swing-up", "balance-upright", "swing-down", "keep-down"};
  if (env == "mountaincar-gp") return {"go-up-right", "go-up-left"};
  return {};
}

inline std::string env_of_task(const std::string& task) {
  for (const char* env : {"pendulum-gp", "mountaincar-gp"})
    for (const auto& t : task_names(env))
      if (t == task) return env;
  throw ConfigError("unknown task '" + task + "'");
}

inline DownstreamTask make_task(const std::string& name) {
  const std::string env = env_of_task(name);
  const ControlledOde ode = make_env(env);
  DownstreamTask t{name, env, ode.reward_batch, ode.initial_state, ""};
  constexpr double pi = std::numbers::pi;
  if (env == "pendulum-gp") {
    const bool upright_start = name == "balance-upright" || name == "swing-down";
    t.initial_state = pendulum_state(upright_start ? 0.0 : pi, 0.0);
    if (name == "swing-down" || name == "keep-down") {
      t.reward = [](const Matrix& X, const Matrix& U, Vector& r) {
        r.resize(X.cols());
        for (Eigen::Index c = 0; c < X.cols(); ++c) {
          const double d = wrap_angle(pendulum_angle(X(0, c), X(1, c)) - std::numbers::pi);
          r(c) = -d * d - 0.1 * X(2, c) * X(2, c) - 0.02 * U(0, c) * U(0, c);
        }
      };
      t.formula = "r = -wrap(theta - pi)^2 - 0.1 theta_dot^2 - 0.02 u^2";
    } else {
      t.formula = "r = -theta^2 - 0.1 theta_dot^2 - 0.02 u^2";
    }
    t.formula += upright_start ? "; start theta = 0" : "; start theta = pi";
  } else {
    if (name == "go-up-left") {
      t.reward = [](const Matrix& X, const Matrix& U, Vector& r) {
        r.resize(X.cols());
        for (Eigen::Index c = 0; c < X.cols(); ++c) {
          const bool goal = X(0, c) <= -1.15 && X(1, c) <= 0.0;
          r(c) = -0.1 * U(0, c) * U(0, c) + (goal ? kMountainCarBonus : 0.0);
        }
      };
      t.formula = "r = -0.1 u^2 + 100 * 1{x1 <= -1.15 and x2 <= 0}; start (-0.5, 0)";
    } else {
      t.formula = "r = -0.1 u^2 + 100 * 1{x1 >= 0.45 and x2 >= 0}; start (-0.5, 0)";
    }
  }
  return t;
}

inline ControlledOde task_env(const DownstreamTask& task) {
  ControlledOde ode = make_env(task.env);
  ode.reward_batch = task.reward;
  ode.initial_state = task.initial_state;
  return ode;
}

// ---------------------------------------------------------------------------
// Metrics

struct UncertaintyIntegral {
  double sigma = 0.0;    // integral of ||sigma||
  double squared = 0.0;  // integral of ||sigma||^2
};

// Left-endpoint quadrature along the executed control steps.
inline UncertaintyIntegral uncertainty_integral(const StatisticalModel& model, const Trajectory& traj) {
  UncertaintyIntegral out;
  if (traj.size() == 0) return out;
  const Eigen::Index d = traj.states.front().size() + traj.actions.front().size();
  if (d != model.input_dim()) throw ShapeError("trajectory and model dimensions disagree");
  Matrix Z(d, static_cast<Eigen::Index>(traj.size()));
  for (std::size_t k = 0; k < traj.size(); ++k)
    Z.col(static_cast<Eigen::Index>(k)) << traj.states[k], traj.actions[k];
  const Vector s = model.stddev_norm(Z);
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    out.sigma += s(k) * traj.dt;
    out.squared += s(k) * s(k) * traj.dt;
  }
  return out;
}

struct EpisodeRow {
  std::uint64_t seed = 0;
  int episode = 0;
  double ret = 0.0;
  double gap = 0.0;
  double cum_regret = 0.0;
  double sigma_integral = 0.0;
  double sigma_sq_integral = 0.0;
  double model_complexity = 0.0;
  double lambda = 0.0;
  double plan_seconds = 0.0;
  double fit_seconds = 0.0;
  std::size_t dataset_size = 0;
};

// Fills gap and cum_regret against an oracle return; gaps stay signed.
inline void regret_metrics(std::vector<EpisodeRow>& rows, double oracle) {
  double cum = 0.0;
  for (auto& r : rows) {
    r.gap = oracle - r.ret;
    cum += r.gap;
    r.cum_regret = cum;
  }
}

// ---------------------------------------------------------------------------
// Greedy execution of a frozen model (also used for the oracle and for
// downstream evaluation).

inline Trajectory execute_greedy(const ControlledOde& ode, const MeanDrift& drift,
                                 const StatisticalModel* uncertainty, const RunConfig& cfg,
                                 const IcemConfig& icem, double* plan_seconds = nullptr) {
  ModelRollout m{&ode, ode.reward_batch, drift, uncertainty, cfg.control_freq, cfg.model_substeps};
  MpcPlanner planner(icem, ode.action_bounds);
  AgentParams agent{AgentKind::mean, ObjectiveSpec::greedy(), cfg.particles, 0.0};
  double spent = 0.0;
  Policy policy = [&](double, const Vector& x) {
    const auto t0 = std::chrono::steady_clock::now();
    Vector u = planner.step(make_evaluator(agent, m, x, icem.seed));
    spent += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return u;
  };
  Trajectory traj = rollout(ode, policy, {cfg.control_freq, cfg.env_substeps});
  if (plan_seconds) *plan_seconds = spent;
  return traj;
}

namespace detail {

inline std::string oracle_key(const RunConfig& cfg, const std::string& task) {
  std::ostringstream os;
  os.precision(17);
  const auto& p = cfg.planner;
  os << cfg.env << '|' << task << '|' << cfg.control_freq << '|' << cfg.env_substeps << '|'
     << cfg.model_substeps << '|' << p.horizon << '|' << p.samples << '|' << p.elites << '|'
     << p.iterations << '|' << p.momentum << '|' << p.noise_exponent << '|' << p.keep_fraction << '|'
     << p.init_std_fraction;
  return os.str();
}

struct OracleCache {
  std::mutex mu;
  std::map<std::string, double> values;
  int computations = 0;
};

inline OracleCache& oracle_cache() {
  static OracleCache cache;
  return cache;
}

}  // namespace detail

inline constexpr int kOracleIterationFactor = 4;
inline constexpr int kOracleRestarts = 3;

// Planning-based estimate of the optimal return: MPC with the true drift,
// a 4x iteration budget and 3 restarts, best executed return kept.
inline double oracle_return(const RunConfig& cfg, const std::string& task_name = "") {
  const std::string task = task_name.empty() ? cfg.task : task_name;
  const std::string key = detail::oracle_key(cfg, task);
  auto& cache = detail::oracle_cache();
  {
    std::lock_guard lock(cache.mu);
    if (auto it = cache.values.find(key); it != cache.values.end()) return it->second;
  }
  const ControlledOde ode = task_env(make_task(task));
  const MeanDrift drift = true_drift(ode);
  double best = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < kOracleRestarts; ++r) {
    IcemConfig icem = cfg.planner;
    icem.iterations *= kOracleIterationFactor;
    icem.seed = detail::mix_seed(0x6f7261636c65ull, static_cast<std::uint64_t>(r));
    best = std::max(best, execute_greedy(ode, drift, nullptr, cfg, icem).cumulative_return);
  }
  std::lock_guard lock(cache.mu);
  ++cache.computations;
  cache.values.emplace(key, best);
  return best;
}

inline int oracle_computations() {
  std::lock_guard lock(detail::oracle_cache().mu);
  return detail::oracle_cache().computations;
}

// Zero-shot return of a frozen model on a task: greedy planning with the
// task reward, executed on the true dynamics.
inline double downstream_eval(const StatisticalModel& model, const std::string& task_name, const RunConfig& cfg,
                              std::uint64_t seed = 0, Trajectory* out = nullptr) {
  const DownstreamTask task = make_task(task_name);
  if (task.env != cfg.env) throw ConfigError("task '" + task_name + "' belongs to " + task.env);
  const ControlledOde ode = task_env(task);
  if (model.input_dim() != ode.input_dim() || model.output_dim() != ode.state_dim)
    throw ShapeError("snapshot does not match the task's environment");
  IcemConfig icem = cfg.planner;
  icem.seed = detail::mix_seed(seed, 0x646f776eull);
  Trajectory traj = execute_greedy(ode, mean_drift(model), &model, cfg, icem);
  if (out) *out = traj;
  return traj.cumulative_return;
}

// ---------------------------------------------------------------------------
// Episodic loop for one seed

class SeedRunner {
 public:
  SeedRunner(RunConfig cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)),
        seed_(seed),
        task_(make_task(cfg_.task)),
        ode_(task_env(task_)),
        objective_(cfg_.objective) {
    cfg_.validate();
    if (task_.env != cfg_.env) throw ConfigError("task '" + cfg_.task + "' does not belong to " + cfg_.env);
    for (int j = 0; j < ode_.state_dim; ++j)
      kernels_.push_back(RbfKernel::make(cfg_.signal_variance[j],
                                         Eigen::Map<const Vector>(cfg_.lengthscales.data(), ode_.input_dim())));
    model_ = StatisticalModel(kernels_, cfg_.noise_variance);
    model_.beta = initial_beta();
    model_.rkhs_bound = cfg_.beta_rule.rkhs_bound;
    data_.noise_std = cfg_.obs_noise;
    objective_.episodes = cfg_.episodes;
  }

  const StatisticalModel& model() const { return model_; }
  const DerivativeDataset& dataset() const { return data_; }
  const std::vector<EpisodeRow>& rows() const { return rows_; }
  const std::vector<Trajectory>& trajectories() const { return trajectories_; }
  const ControlledOde& env() const { return ode_; }
  const ObjectiveSpec& objective() const { return objective_; }
  int episode() const { return episode_; }

  // Plans with M_{n-1}, executes on the true ODE, measures via the MSS and
  // refits M_n.
  const EpisodeRow& run_episode() {
    const int n = ++episode_;
    EpisodeRow row;
    row.seed = seed_;
    row.episode = n;
    if (cfg_.agent == AgentKind::combrl) schedule_step(objective_, n, cfg_.episodes);
    row.lambda = cfg_.agent == AgentKind::combrl ? objective_.effective_lambda() : 0.0;

    std::optional<ProjectedModel> projected;
    if (cfg_.project && model_.data_size() > 0) projected = project_to_rkhs_ball(model_, model_.rkhs_bound);
    const MeanDrift drift = projected ? mean_drift(*projected) : mean_drift(model_);

    AgentParams agent{cfg_.agent, objective_, cfg_.particles, model_.beta};
    ModelRollout m{&ode_, ode_.reward_batch, drift, &model_, cfg_.control_freq, cfg_.model_substeps};
    IcemConfig icem = cfg_.planner;
    icem.seed = detail::mix_seed(seed_, static_cast<std::uint64_t>(n));
    MpcPlanner planner(icem, planner_bounds(cfg_.agent, ode_));

    double plan_seconds = 0.0;
    Policy policy = [&](double, const Vector& x) {
      const auto t0 = std::chrono::steady_clock::now();
      const Vector a = planner.step(make_evaluator(agent, m, x, detail::mix_seed(icem.seed, planner.calls())));
      plan_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      return Vector(a.head(ode_.action_dim));
    };
    Trajectory traj = rollout(ode_, policy, {cfg_.control_freq, cfg_.env_substeps});
    row.ret = traj.cumulative_return;

    const UncertaintyIntegral ui = uncertainty_integral(model_, traj);
    row.sigma_integral = ui.sigma;
    row.sigma_sq_integral = ui.squared;
    complexity_ += ui.squared;
    row.model_complexity = complexity_;

    const EquidistantMss mss{measurement_count(cfg_, ode_.horizon, n), ode_.horizon};
    data_.append(observe(traj, mss, ode_, cfg_.obs_noise,
                         detail::mix_seed(seed_ ^ 0x6f6273ull, static_cast<std::uint64_t>(n)), n));
    row.dataset_size = data_.size();

    const auto t0 = std::chrono::steady_clock::now();
    ModelFitOptions fit;
    fit.noise_variance = cfg_.noise_variance;
    fit.hyper = {cfg_.hyper_steps, cfg_.hyper_lr};
    fit.optimize = cfg_.hyper_steps > 0;
    StatisticalModel next = fit_model(data_, kernels_, fit);
    kernels_ = next.kernels();
    next.episode = n;
    next.rkhs_bound = model_.rkhs_bound;
    next.beta = std::max(model_.beta, next_beta(next));
    model_ = std::move(next);
    row.fit_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (objective_.regime == Regime::auto_tuned) tune_lambda(traj);

    if (!cfg_.record_timing) row.plan_seconds = row.fit_seconds = 0.0;
    else row.plan_seconds = plan_seconds;
    rows_.push_back(row);
    trajectories_.push_back(std::move(traj));
    if (cfg_.verbosity > 0)
      std::cerr << "seed " << seed_ << " episode " << n << " return " << row.ret << " sigma "
                << row.sigma_integral << " data " << row.dataset_size << '\n';
    return rows_.back();
  }

  void run(int episodes) {
    for (int i = 0; i < episodes; ++i) run_episode();
  }

 private:
  double initial_beta() const {
    return beta(cfg_.beta_rule, cfg_.delta, 0.0, std::sqrt(cfg_.noise_variance));
  }

  double next_beta(const StatisticalModel& m) const {
    if (cfg_.beta_rule.kind == BetaRule::Kind::fixed) return cfg_.beta_rule.value;
    return beta(cfg_.beta_rule, cfg_.delta, information_gain(m), std::sqrt(m.noise_variance()));
  }

  // Adapts lambda by comparing the uncertainty of the episode's executed
  // actions against a Polyak-averaged target plan at replayed states.
  void tune_lambda(const Trajectory& traj) {
    Matrix current(ode_.action_dim, static_cast<Eigen::Index>(traj.size()));
    for (std::size_t k = 0; k < traj.size(); ++k) current.col(static_cast<Eigen::Index>(k)) = traj.actions[k];
    polyak_update(target_plan_, current, objective_.polyak_tau);
    constexpr std::size_t kReplay = 64;
    const std::size_t n = std::min(kReplay, data_.size());
    if (n == 0) return;
    std::mt19937_64 rng(detail::mix_seed(seed_ ^ 0x61757475ull, static_cast<std::uint64_t>(episode_)));
    std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
    Matrix states(ode_.state_dim, static_cast<Eigen::Index>(n));
    Matrix cur(ode_.action_dim, static_cast<Eigen::Index>(n)), tgt(ode_.action_dim, static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const auto& rec = data_.records[pick(rng)];
      const auto k = std::min<Eigen::Index>(std::llround(rec.t * cfg_.control_freq), current.cols() - 1);
      states.col(static_cast<Eigen::Index>(i)) = rec.z.head(ode_.state_dim);
      cur.col(static_cast<Eigen::Index>(i)) = current.col(k);
      tgt.col(static_cast<Eigen::Index>(i)) = target_plan_.col(k);
    }
    auto sn = [this](const Matrix& Z) { return model_.stddev_norm(Z); };
    auto_tune_step(objective_, states, cur, tgt, sn, objective_.lambda_lr);
  }

  RunConfig cfg_;
  std::uint64_t seed_;
  DownstreamTask task_;
  ControlledOde ode_;
  ObjectiveSpec objective_;
  std::vector<RbfKernel> kernels_;
  StatisticalModel model_;
  DerivativeDataset data_;
  std::vector<EpisodeRow> rows_;
  std::vector<Trajectory> trajectories_;
  Matrix target_plan_;
  double complexity_ = 0.0;
  int episode_ = 0;
};

// ---------------------------------------------------------------------------
// Persistence

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace detail

inline void write_csv(std::ostream& os, const std::vector<EpisodeRow>& rows) {
  os << kCsvHeader << '\n';
  using detail::fmt_double;
  for (const auto& r : rows)
    os << r.seed << ',' << r.episode << ',' << fmt_double(r.ret) << ',' << fmt_double(r.gap) << ','
       << fmt_double(r.cum_regret) << ',' << fmt_double(r.sigma_integral) << ','
       << fmt_double(r.model_complexity) << ',' << fmt_double(r.lambda) << ',' << fmt_double(r.plan_seconds)
       << ',' << fmt_double(r.fit_seconds) << '\n';
}

inline const std::vector<std::string>& metric_columns() {
  static const std::vector<std::string> cols = {"return",           "gap",    "cum_regret",  "sigma_integral",
                                                "model_complexity", "lambda", "plan_seconds", "fit_seconds"};
  return cols;
}

inline std::vector<double> metric_values(const EpisodeRow& r) {
  return {r.ret, r.gap, r.cum_regret, r.sigma_integral, r.model_complexity, r.lambda, r.plan_seconds,
          r.fit_seconds};
}

// Per-episode mean and standard error (sample stddev / sqrt(count)).
inline void write_aggregate_csv(std::ostream& os, const std::vector<std::vector<EpisodeRow>>& per_seed) {
  os << "episode,seeds";
  for (const auto& c : metric_columns()) os << ',' << c << "_mean," << c << "_stderr";
  os << '\n';
  int episodes = 0;
  for (const auto& rows : per_seed) episodes = std::max(episodes, static_cast<int>(rows.size()));
  for (int e = 0; e < episodes; ++e) {
    std::vector<std::vector<double>> vals;
    for (const auto& rows : per_seed)
      if (e < static_cast<int>(rows.size())) vals.push_back(metric_values(rows[e]));
    const double n = static_cast<double>(vals.size());
    os << (e + 1) << ',' << vals.size();
    for (std::size_t m = 0; m < metric_columns().size(); ++m) {
      double mean = 0.0;
      for (const auto& v : vals) mean += v[m];
      mean /= n;
      double ss = 0.0;
      for (const auto& v : vals) ss += (v[m] - mean) * (v[m] - mean);
      const double se = vals.size() > 1 ? std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : 0.0;
      os << ',' << detail::fmt_double(mean) << ',' << detail::fmt_double(se);
    }
    os << '\n';
  }
}

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  int error_kind = 0;  // 2 config, 3 numerical
  std::vector<EpisodeRow> rows;
  std::vector<Trajectory> trajectories;
  std::optional<StatisticalModel> model;
  std::map<std::string, double> downstream;
  double wall_seconds = 0.0;
};

struct SuiteResult {
  std::vector<SeedResult> seeds;
  double oracle = 0.0;
  std::string config_hash;

  std::vector<const SeedResult*> completed() const {
    std::vector<const SeedResult*> out;
    for (const auto& s : seeds)
      if (s.ok) out.push_back(&s);
    return out;
  }
};

inline nlohmann::json snapshot_json(const StatisticalModel& model, const RunConfig& cfg) {
  nlohmann::json j = to_json(model);
  j["environment"] = cfg.env;
  return j;
}

// Runs one seed end to end (episodes, regret against `oracle`, downstream
// evaluation); errors are captured into the result.
inline SeedResult run_seed(const RunConfig& cfg, std::uint64_t seed, double oracle) {
  SeedResult res;
  res.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  std::optional<SeedRunner> runner;
  try {
    runner.emplace(cfg, seed);
    for (int i = 0; i < cfg.episodes; ++i) runner->run_episode();
    for (const auto& task : cfg.downstream) res.downstream[task] = downstream_eval(runner->model(), task, cfg, seed);
    res.ok = true;
  } catch (const ConfigError& e) {
    res.error = e.what();
    res.error_kind = 2;
  } catch (const std::exception& e) {
    res.error = e.what();
    res.error_kind = 3;
  }
  if (runner) {
    res.rows = runner->rows();
    res.trajectories = runner->trajectories();
    res.model = runner->model();
  }
  regret_metrics(res.rows, oracle);
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline int worker_slots() {
  if (const char* v = std::getenv("COMBRL_WORKERS")) {
    const int n = std::atoi(v);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs every seed (in parallel worker slots) and writes
//   seed_<k>.csv, aggregate.csv, manifest.json, model_seed_<k>.json
// into cfg.out_dir. An empty out_dir skips persistence.
inline SuiteResult run_suite(const RunConfig& cfg) {
  cfg.validate();
  SuiteResult suite;
  suite.config_hash = [&] {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(detail::fnv1a(cfg.to_ini())));
    return std::string(buf);
  }();
  suite.oracle = oracle_return(cfg);
  suite.seeds.resize(cfg.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < cfg.seeds.size();) suite.seeds[i] = run_seed(cfg, cfg.seeds[i], suite.oracle);
  };
  const int slots = std::min<int>(worker_slots(), static_cast<int>(cfg.seeds.size()));
  if (slots <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int s = 0; s < slots; ++s) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  if (cfg.out_dir.empty()) return suite;
  namespace fs = std::filesystem;
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);
  std::ofstream(dir / "config.ini") << cfg.to_ini();
  std::vector<std::vector<EpisodeRow>> done;
  nlohmann::json manifest;
  manifest["version"] = kVersion;
  manifest["config_hash"] = suite.config_hash;
  manifest["environment"] = cfg.env;
  manifest["task"] = cfg.task;
  manifest["agent"] = to_string(cfg.agent);
  manifest["oracle_return"] = suite.oracle;
  manifest["csv_header"] = kCsvHeader;
  manifest["completed_seeds"] = nlohmann::json::array();
  manifest["failed_seeds"] = nlohmann::json::array();
  nlohmann::json formulas;
  formulas[cfg.task] = make_task(cfg.task).formula;
  for (const auto& t : cfg.downstream) formulas[t] = make_task(t).formula;
  manifest["task_formulas"] = formulas;
  double wall = 0.0;
  for (const auto& s : suite.seeds) {
    std::ofstream(dir / ("seed_" + std::to_string(s.seed) + ".csv")) << [&] {
      std::ostringstream os;
      write_csv(os, s.rows);
      return os.str();
    }();
    wall += s.wall_seconds;
    if (s.ok) {
      done.push_back(s.rows);
      manifest["completed_seeds"].push_back(s.seed);
    } else {
      manifest["failed_seeds"].push_back({{"seed", s.seed}, {"error", s.error}});
      std::cerr << "warning: seed " << s.seed << " failed: " << s.error << '\n';
    }
    if (s.model) std::ofstream(dir / ("model_seed_" + std::to_string(s.seed) + ".json"))
                     << snapshot_json(*s.model, cfg).dump() << '\n';
    for (const auto& [task, value] : s.downstream) manifest["downstream"][task][std::to_string(s.seed)] = value;
    if (cfg.write_trajectories)
      for (std::size_t e = 0; e < s.trajectories.size(); ++e) {
        std::ofstream tj(dir / ("traj_seed_" + std::to_string(s.seed) + "_ep_" + std::to_string(e + 1) + ".jsonl"));
        write_jsonl(tj, s.trajectories[e]);
      }
  }
  manifest["wall_clock_seconds"] = wall;
  {
    std::ofstream agg(dir / "aggregate.csv");
    write_aggregate_csv(agg, done);
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
  return suite;
}

}  // namespace combrl
