#include "combrl/combrl.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace combrl;
namespace fs = std::filesystem;

namespace {

RunConfig tiny(const std::string& env = "pendulum-gp", AgentKind agent = AgentKind::combrl) {
  RunConfig c = preset(env, agent);
  c.planner.horizon = env == "pendulum-gp" ? 8 : 10;
  c.planner.samples = 12;
  c.planner.elites = 3;
  c.planner.iterations = 1;
  c.mss_rule = MssRule::fixed;
  c.measurements = 5;
  c.episodes = 3;
  c.objective.episodes = 3;
  c.hyper_steps = 5;
  c.seeds = {0};
  c.record_timing = false;
  c.out_dir.clear();
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("combrl_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Tasks, NamesAndEnvironments) {
  EXPECT_EQ(task_names("pendulum-gp").size(), 4u);
  EXPECT_EQ(env_of_task("swing-down"), "pendulum-gp");
  EXPECT_EQ(env_of_task("go-up-left"), "mountaincar-gp");
  EXPECT_THROW(env_of_task("run-backward"), ConfigError);
  EXPECT_THROW(make_task("nope"), ConfigError);
}

TEST(Tasks, SwingDownRewardIsMirroredAboutPi) {
  const DownstreamTask t = make_task("swing-down");
  EXPECT_NEAR(t.initial_state(0), 1.0, 1e-15);  // upright start
  const ControlledOde ode = task_env(t);
  EXPECT_NEAR(ode.reward(pendulum_state(std::numbers::pi, 0.0), Vector::Zero(1)), 0.0, 1e-20);
  EXPECT_NEAR(ode.reward(pendulum_state(std::numbers::pi - 0.5, 1.0), Vector::Constant(1, 1.0)),
              -0.25 - 0.1 - 0.02, 1e-12);
  // Wrapped difference: just past -pi is close to the target.
  EXPECT_NEAR(ode.reward(pendulum_state(-std::numbers::pi + 0.2, 0.0), Vector::Zero(1)), -0.04, 1e-12);
  EXPECT_NE(t.formula.find("wrap"), std::string::npos);
  // Same dynamics as the primary environment.
  const Vector x = pendulum_state(0.7, 0.3);
  EXPECT_TRUE(ode.drift(x, Vector::Ones(1)) == pendulum_env().drift(x, Vector::Ones(1)));
}

TEST(Tasks, GoUpLeftBonus) {
  const ControlledOde ode = task_env(make_task("go-up-left"));
  Vector x(2);
  x << -1.18, -0.01;
  EXPECT_NEAR(ode.reward(x, Vector::Zero(1)), 100.0, 1e-12);
  x << -1.18, 0.01;
  EXPECT_NEAR(ode.reward(x, Vector::Zero(1)), 0.0, 1e-12);
  x << 0.5, 0.01;
  EXPECT_NEAR(ode.reward(x, Vector::Zero(1)), 0.0, 1e-12);
}

TEST(Tasks, BalanceAndKeepDownStarts) {
  EXPECT_NEAR(make_task("balance-upright").initial_state(0), 1.0, 1e-15);
  EXPECT_NEAR(make_task("keep-down").initial_state(0), -1.0, 1e-15);
  EXPECT_NEAR(make_task("swing-up").initial_state(0), -1.0, 1e-15);
}

TEST(Regret, Examples) {
  std::vector<EpisodeRow> rows(4);
  for (auto& r : rows) r.ret = -5.0;
  regret_metrics(rows, -5.0);
  EXPECT_EQ(rows.back().cum_regret, 0.0);
  for (auto& r : rows) r.ret = -7.5;
  regret_metrics(rows, -5.0);
  EXPECT_DOUBLE_EQ(rows.back().cum_regret, 4 * 2.5);
  rows[2].ret = -1.0;  // beats the oracle estimate: stored signed
  regret_metrics(rows, -5.0);
  EXPECT_DOUBLE_EQ(rows[2].gap, -4.0);
  EXPECT_DOUBLE_EQ(rows[3].cum_regret, 2.5 + 2.5 - 4.0 + 2.5);
}

TEST(UncertaintyIntegral, ConstantAndZero) {
  const ControlledOde ode = pendulum_env();
  const Trajectory traj = rollout(ode, [](double, const Vector&) { return Vector::Constant(1, 0.5); }, {20.0, 10});
  const StatisticalModel prior(std::vector<RbfKernel>(3, RbfKernel::make(4.0, 1.0, 4)), 1e-4);
  const UncertaintyIntegral ui = uncertainty_integral(prior, traj);
  EXPECT_NEAR(ui.sigma, 2.0 * std::sqrt(3.0) * 2.5, 1e-12);
  EXPECT_NEAR(ui.squared, 12.0 * 2.5, 1e-12);
  const StatisticalModel flat(std::vector<RbfKernel>(3, RbfKernel::make(1e-300, 1.0, 4)), 1e-4);
  EXPECT_LT(uncertainty_integral(flat, traj).sigma, 1e-100);
  const StatisticalModel wrong(std::vector<RbfKernel>(3, RbfKernel::make(1.0, 1.0, 3)), 1e-4);
  EXPECT_THROW(uncertainty_integral(wrong, traj), ShapeError);
}

TEST(Mss, GrowingRuleStaysOnGrid) {
  RunConfig c = tiny();
  c.mss_rule = MssRule::growing;
  EXPECT_EQ(measurement_count(c, 2.5, 1), 1);
  EXPECT_EQ(measurement_count(c, 2.5, 5), 5);
  EXPECT_EQ(measurement_count(c, 2.5, 7), 5);
  EXPECT_EQ(measurement_count(c, 2.5, 12), 10);
  c.mss_rule = MssRule::per_step;
  EXPECT_EQ(measurement_count(c, 2.5, 3), 50);
}

TEST(SeedRunnerTest, RowsLambdaAndDatasetGrowth) {
  RunConfig c = tiny();
  SeedRunner runner(c, 3);
  std::size_t expected = 0;
  double complexity = 0.0;
  for (int n = 1; n <= 3; ++n) {
    const EpisodeRow& row = runner.run_episode();
    expected += 5;
    EXPECT_EQ(row.episode, n);
    EXPECT_EQ(row.dataset_size, expected);
    EXPECT_EQ(runner.dataset().size(), expected);
    EXPECT_EQ(row.lambda, 1.0);
    complexity += row.sigma_sq_integral;
    EXPECT_NEAR(row.model_complexity, complexity, 1e-12);
    for (const auto& rec : runner.dataset().records)
      if (rec.episode == n) EXPECT_NEAR(std::fmod(rec.t, 0.5), 0.0, 1e-9);
  }
  EXPECT_EQ(runner.rows().size(), 3u);
  EXPECT_EQ(runner.model().episode, 3);
  EXPECT_EQ(runner.model().data_size(), 15);
  // First episode plans under the prior: uncertainty integral of the prior.
  EXPECT_NEAR(runner.rows()[0].sigma_integral, std::sqrt(10.0 + 10.0 + 100.0) * 2.5, 1e-9);
}

TEST(SeedRunnerTest, MeanAgentLogsZeroLambda) {
  SeedRunner runner(tiny("pendulum-gp", AgentKind::mean), 0);
  runner.run(2);
  for (const auto& r : runner.rows()) EXPECT_EQ(r.lambda, 0.0);
}

TEST(SeedRunnerTest, UnsupervisedLogsInfiniteLambda) {
  RunConfig c = tiny();
  c.objective = ObjectiveSpec::unsupervised();
  SeedRunner runner(c, 0);
  runner.run(1);
  EXPECT_TRUE(std::isinf(runner.rows()[0].lambda));
}

TEST(SeedRunnerTest, AnnealingFollowsSchedule) {
  RunConfig c = tiny();
  c.objective = ObjectiveSpec::annealing(10.0, 3);
  SeedRunner runner(c, 0);
  runner.run(3);
  EXPECT_NEAR(runner.rows()[0].lambda, 10.0 * (1.0 - 1.0 / 3.0), 1e-12);
  EXPECT_NEAR(runner.rows()[2].lambda, 0.0, 1e-12);
}

TEST(SeedRunnerTest, AutoTunedLambdaStaysInRange) {
  RunConfig c = tiny();
  c.objective = ObjectiveSpec::auto_tuned(1.0, 0.5, 0.3);
  SeedRunner runner(c, 0);
  runner.run(3);
  EXPECT_EQ(runner.rows()[0].lambda, 1.0);
  for (const auto& r : runner.rows()) {
    EXPECT_GE(r.lambda, kLambdaFloor);
    EXPECT_LE(r.lambda, kLambdaCeiling);
  }
}

TEST(SeedRunnerTest, TheoryBetaIsMonotone) {
  RunConfig c = tiny();
  c.beta_rule = BetaRule::chowdhury(1.0, 0.01);
  SeedRunner runner(c, 0);
  double prev = runner.model().beta;
  for (int n = 0; n < 3; ++n) {
    runner.run_episode();
    EXPECT_GE(runner.model().beta, prev);
    prev = runner.model().beta;
  }
}

TEST(SeedRunnerTest, EveryAgentRuns) {
  for (AgentKind k : {AgentKind::combrl, AgentKind::mean, AgentKind::pets, AgentKind::ocorl}) {
    RunConfig c = tiny("pendulum-gp", k);
    c.particles = 2;
    SeedRunner runner(c, 1);
    runner.run(2);
    EXPECT_EQ(runner.rows().size(), 2u) << to_string(k);
    for (const auto& u : runner.trajectories().back().actions) {
      EXPECT_GE(u(0), -2.0);
      EXPECT_LE(u(0), 2.0);
    }
  }
}

TEST(SeedRunnerTest, ProjectionSwitch) {
  RunConfig c = tiny();
  c.project = true;
  c.beta_rule.rkhs_bound = 5.0;
  SeedRunner runner(c, 0);
  runner.run(2);
  EXPECT_EQ(runner.rows().size(), 2u);
}

TEST(SeedRunnerTest, MountainCarRuns) {
  RunConfig c = tiny("mountaincar-gp");
  c.measurements = 10;
  SeedRunner runner(c, 0);
  runner.run(1);
  for (const auto& x : runner.trajectories().back().states) {
    EXPECT_GE(x(0), -1.2);
    EXPECT_LE(x(0), 0.6);
  }
  EXPECT_EQ(runner.dataset().size(), 10u);
}

TEST(SeedRunnerTest, TaskFromOtherEnvironmentIsRejected) {
  RunConfig c = tiny();
  c.task = "go-up-right";
  EXPECT_THROW(SeedRunner(c, 0), ConfigError);
}

TEST(Oracle, CachedAndNotWorseThanZeroPolicy) {
  RunConfig c = tiny();
  c.task = "balance-upright";
  const int before = oracle_computations();
  const double a = oracle_return(c);
  EXPECT_EQ(oracle_computations(), before + 1);
  const double b = oracle_return(c);
  EXPECT_EQ(a, b);
  EXPECT_EQ(oracle_computations(), before + 1);
  const ControlledOde ode = task_env(make_task("balance-upright"));
  const double zero = rollout(ode, [](double, const Vector&) { return Vector::Zero(1); }, {20.0, 10}).cumulative_return;
  EXPECT_GE(a, zero);
}

TEST(Oracle, ZeroRewardGivesZero) {
  ControlledOde ode = pendulum_env();
  ode.reward_batch = [](const Matrix& X, const Matrix&, Vector& r) { r = Vector::Zero(X.cols()); };
  const RunConfig c = tiny();
  EXPECT_EQ(execute_greedy(ode, true_drift(ode), nullptr, c, c.planner).cumulative_return, 0.0);
}

TEST(Oracle, PerfectModelBeatsColdStart) {
  RunConfig c = tiny("pendulum-gp", AgentKind::mean);
  c.planner = {20, 60, 6, 3, 0.2, 2.0, 0.3, 0.5, 0, 0};
  SeedRunner runner(c, 4);
  const double cold = runner.run_episode().ret;
  const ControlledOde ode = pendulum_env();
  IcemConfig icem = c.planner;
  icem.seed = 4;
  const double perfect = execute_greedy(ode, true_drift(ode), nullptr, c, icem).cumulative_return;
  const double oracle = oracle_return(c);
  EXPECT_LE(oracle - perfect, oracle - cold);
}

TEST(Downstream, IdentityTaskEqualsGreedyEvaluation) {
  RunConfig c = tiny();
  SeedRunner runner(c, 0);
  runner.run(2);
  const double a = downstream_eval(runner.model(), "swing-up", c, 5);
  IcemConfig icem = c.planner;
  icem.seed = detail::mix_seed(5, 0x646f776eull);
  const StatisticalModel& m = runner.model();
  const double b = execute_greedy(pendulum_env(), mean_drift(m), &m, c, icem).cumulative_return;
  EXPECT_NEAR(a, b, 1e-9);
  EXPECT_TRUE(std::isfinite(downstream_eval(runner.model(), "swing-down", c, 5)));
  EXPECT_THROW(downstream_eval(runner.model(), "go-up-left", c), ConfigError);
  EXPECT_THROW(downstream_eval(runner.model(), "unknown", c), ConfigError);
}

TEST(Persistence, CsvHeaderAndRows) {
  std::vector<EpisodeRow> rows(2);
  rows[0] = {7, 1, -1.5, 0.5, 0.5, 2.0, 4.0, 4.0, 1.0, 0.0, 0.0, 5};
  rows[1] = {7, 2, -1.25, 0.25, 0.75, 1.0, 1.0, 5.0, 1.0, 0.0, 0.0, 10};
  std::ostringstream os;
  write_csv(os, rows);
  EXPECT_EQ(os.str(),
            "seed,episode,return,gap,cum_regret,sigma_integral,model_complexity,lambda,plan_seconds,fit_seconds\n"
            "7,1,-1.5,0.5,0.5,2,4,1,0,0\n"
            "7,2,-1.25,0.25,0.75,1,5,1,0,0\n");
}

TEST(Persistence, AggregateStandardError) {
  std::vector<std::vector<EpisodeRow>> per_seed(5, std::vector<EpisodeRow>(3));
  const double vals[] = {1.0, 2.0, 4.0, 8.0, 10.0};
  for (int s = 0; s < 5; ++s)
    for (int e = 0; e < 3; ++e) per_seed[s][e].ret = vals[s] + e;
  std::ostringstream os;
  write_aggregate_csv(os, per_seed);
  std::istringstream in(os.str());
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header.rfind("episode,seeds,return_mean,return_stderr,gap_mean", 0), 0u);
  int lines = 0;
  while (std::getline(in, line)) {
    std::vector<double> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(std::stod(cell));
    EXPECT_EQ(f[0], lines + 1);
    EXPECT_EQ(f[1], 5);
    EXPECT_NEAR(f[2], 5.0 + lines, 1e-12);
    double ss = 0.0;
    for (double v : vals) ss += (v - 5.0) * (v - 5.0);
    EXPECT_NEAR(f[3], std::sqrt(ss / 4.0) / std::sqrt(5.0), 1e-12);
    ++lines;
  }
  EXPECT_EQ(lines, 3);

  std::ostringstream one;
  write_aggregate_csv(one, {per_seed[0]});
  std::istringstream in1(one.str());
  std::getline(in1, header);
  while (std::getline(in1, line)) {
    std::stringstream ls(line);
    std::vector<std::string> cells;
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    for (std::size_t i = 3; i < cells.size(); i += 2) EXPECT_EQ(cells[i], "0");
  }
}

TEST(Persistence, SuiteWritesArtifactsDeterministically) {
  RunConfig c = tiny();
  c.seeds = {0, 1};
  c.downstream = {"swing-down"};
  c.write_trajectories = true;
  const fs::path a = scratch_dir("suite_a"), b = scratch_dir("suite_b");
  c.out_dir = a.string();
  const SuiteResult ra = run_suite(c);
  c.out_dir = b.string();
  run_suite(c);
  ASSERT_EQ(ra.completed().size(), 2u);
  for (const char* f : {"seed_0.csv", "seed_1.csv", "aggregate.csv", "model_seed_0.json", "config.ini",
                        "traj_seed_1_ep_3.jsonl"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    if (std::string(f) != "config.ini") EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  const std::string csv = slurp(a / "seed_0.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kCsvHeader);
  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  EXPECT_EQ(manifest["config_hash"], ra.config_hash);
  EXPECT_EQ(manifest["completed_seeds"].size(), 2u);
  EXPECT_TRUE(manifest["failed_seeds"].empty());
  EXPECT_TRUE(manifest["task_formulas"].contains("swing-down"));
  EXPECT_TRUE(manifest["downstream"]["swing-down"].contains("1"));
  EXPECT_TRUE(manifest.contains("wall_clock_seconds"));
  EXPECT_TRUE(manifest.contains("version"));

  // Snapshot from disk reproduces the in-memory model.
  const auto snap = nlohmann::json::parse(slurp(a / "model_seed_0.json"));
  EXPECT_EQ(snap["environment"], "pendulum-gp");
  const StatisticalModel loaded = model_from_json(snap);
  EXPECT_EQ(training_digest(loaded), training_digest(*ra.seeds[0].model));

  // Cumulative regret is recomputable from the gaps.
  double cum = 0.0;
  for (const auto& r : ra.seeds[1].rows) {
    cum += r.gap;
    EXPECT_NEAR(r.cum_regret, cum, 1e-12);
    EXPECT_NEAR(r.gap, ra.oracle - r.ret, 1e-12);
  }
}

TEST(Persistence, TimingColumnsRecordedWhenEnabled) {
  RunConfig c = tiny();
  c.record_timing = true;
  SeedRunner runner(c, 0);
  runner.run(1);
  EXPECT_GT(runner.rows()[0].plan_seconds, 0.0);
}

TEST(Workers, EnvironmentVariable) {
  ::setenv("COMBRL_WORKERS", "3", 1);
  EXPECT_EQ(worker_slots(), 3);
  ::setenv("COMBRL_WORKERS", "junk", 1);
  EXPECT_GE(worker_slots(), 1);
  ::unsetenv("COMBRL_WORKERS");
}

TEST(Workers, ParallelSlotsMatchSequentialResults) {
  RunConfig c = tiny();
  c.seeds = {0, 1, 2};
  ::setenv("COMBRL_WORKERS", "1", 1);
  const SuiteResult seq = run_suite(c);
  ::setenv("COMBRL_WORKERS", "3", 1);
  const SuiteResult par = run_suite(c);
  ::unsetenv("COMBRL_WORKERS");
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t e = 0; e < seq.seeds[i].rows.size(); ++e)
      EXPECT_EQ(seq.seeds[i].rows[e].ret, par.seeds[i].rows[e].ret);
}

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, PresetsFollowPublishedSetup) {
  const RunConfig p = preset("pendulum-gp");
  EXPECT_EQ(p.episodes, 12);
  EXPECT_EQ(p.control_freq, 20.0);
  EXPECT_EQ(p.objective.lambda, 1.0);
  EXPECT_EQ(p.planner.horizon, 30);
  EXPECT_EQ(p.planner.samples, 500);
  EXPECT_EQ(p.planner.elites, 50);
  EXPECT_EQ(p.planner.iterations, 10);
  EXPECT_EQ(p.planner.momentum, 0.2);
  EXPECT_EQ(p.planner.noise_exponent, 2.0);
  EXPECT_EQ(p.hyper_lr, 0.01);
  EXPECT_EQ(preset("pendulum-gp", AgentKind::ocorl).beta_rule.value, 7.5);
  EXPECT_EQ(preset("pendulum-gp", AgentKind::ocorl).objective.regime, Regime::greedy);
  const RunConfig m = preset("mountaincar-gp");
  EXPECT_EQ(m.episodes, 15);
  EXPECT_EQ(m.control_freq, 1.0);
  EXPECT_EQ(m.objective.lambda, 1e6);
  EXPECT_EQ(m.planner.horizon, 100);
  EXPECT_EQ(m.planner.iterations, 5);
  EXPECT_EQ(preset("mountaincar-gp", AgentKind::ocorl).beta_rule.value, 30.0);
  EXPECT_THROW(preset("acrobot"), ConfigError);
}

TEST(Config, ParsesSectionsAndOverrides) {
  std::istringstream in(R"([environment]
name = mountaincar-gp
obs_noise = 0.001
[agent]
algo = pets
particles = 4
[planner]
samples = 64
elites = 8
[model]
beta_rule = chowdhury
rkhs_bound = 2.5
[mss]
measurements = 20
[output]
seeds = 3, 4
episodes = 6
timing = false
[evaluation]
downstream = go-up-left
)");
  const RunConfig c = parse_config(in);
  EXPECT_EQ(c.env, "mountaincar-gp");
  EXPECT_EQ(c.agent, AgentKind::pets);
  EXPECT_EQ(c.particles, 4);
  EXPECT_EQ(c.planner.samples, 64);
  EXPECT_EQ(c.planner.horizon, 100);
  EXPECT_EQ(c.beta_rule.kind, BetaRule::Kind::chowdhury);
  EXPECT_EQ(c.beta_rule.rkhs_bound, 2.5);
  EXPECT_EQ(c.mss_rule, MssRule::fixed);
  EXPECT_EQ(c.measurements, 20);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3, 4}));
  EXPECT_EQ(c.episodes, 6);
  EXPECT_FALSE(c.record_timing);
  EXPECT_EQ(c.objective.regime, Regime::greedy);
  EXPECT_EQ(c.downstream, std::vector<std::string>{"go-up-left"});
}

TEST(Config, InlineCommentsAreIgnored) {
  std::istringstream in("[agent]\nalgo = pets   ; trajectory sampling\nparticles = 3 # few\n");
  const RunConfig c = parse_config(in);
  EXPECT_EQ(c.agent, AgentKind::pets);
  EXPECT_EQ(c.particles, 3);
}

TEST(Config, IniRoundTrip) {
  RunConfig c = tiny();
  c.objective = ObjectiveSpec::annealing(10.0, 3);
  c.objective.episodes = 3;
  c.downstream = {"swing-down", "keep-down"};
  c.out_dir = "runs/x";
  std::istringstream in(c.to_ini());
  const RunConfig back = parse_config(in);
  EXPECT_EQ(back.to_ini(), c.to_ini());
}

TEST(Config, Errors) {
  auto parse = [](const std::string& s) {
    std::istringstream in(s);
    return parse_config(in);
  };
  EXPECT_THROW(parse("[environment]\nname = pendulum-gp\ncolour = red\n"), ConfigError);
  EXPECT_THROW(parse("[optimizer]\nlr = 1\n"), ConfigError);
  EXPECT_THROW(parse("[environment]\nname = hopper\n"), ConfigError);
  EXPECT_THROW(parse("[agent]\nalgo = sac\n"), ConfigError);
  EXPECT_THROW(parse("[planner]\nsamples = lots\n"), ConfigError);
  EXPECT_THROW(parse("[planner]\nsamples = 2.5\n"), ConfigError);
  EXPECT_THROW(parse("[planner]\nelites = 900\n"), ConfigError);
  EXPECT_THROW(parse("[mss]\nmeasurements = 7\n"), ConfigError);
  EXPECT_THROW(parse("[output]\nepisodes = 0\n"), ConfigError);
  EXPECT_THROW(parse("[schedule]\nregime = sometimes\n"), ConfigError);
  EXPECT_THROW(parse("[model]\nlengthscales = 1,2\n"), ConfigError);
  EXPECT_THROW(parse("[environment]\ncontrol_freq = 3\n"), ConfigError);
  EXPECT_THROW(parse("[environment]\nobs_noise = -1\n"), ConfigError);
  EXPECT_THROW(parse("not an ini [ file\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/combrl.ini"), ConfigError);
}
