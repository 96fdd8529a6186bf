// combrl command-line front end.
//
//   combrl run --config FILE [--env NAME --algo NAME --seeds K --episodes N --out DIR]
//   combrl eval-downstream --snapshot FILE --task NAME [--config FILE]
//   combrl oracle --env NAME [--config FILE]
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure.
// COMBRL_WORKERS sets the number of parallel seed slots.

#include "combrl/combrl.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <numeric>

namespace {

constexpr int kConfigExit = 2;
constexpr int kNumericExit = 3;

combrl::RunConfig base_config(const std::string& path, const std::string& env) {
  if (!path.empty()) return combrl::load_config(path);
  return combrl::preset(env.empty() ? "pendulum-gp" : env);
}

int cmd_run(const std::string& config_path, const std::string& env, const std::string& algo, int seeds,
            int episodes, const std::string& out) {
  combrl::RunConfig cfg = base_config(config_path, env);
  if (!env.empty() && env != cfg.env) {
    auto fresh = combrl::preset(env, cfg.agent);
    fresh.seeds = cfg.seeds;
    fresh.out_dir = cfg.out_dir;
    cfg = fresh;
  }
  if (!algo.empty()) {
    const auto kind = combrl::agent_from_string(algo);
    if (kind != cfg.agent) {
      const auto objective = cfg.objective;
      cfg.agent = kind;
      cfg.objective = kind == combrl::AgentKind::combrl ? objective : combrl::ObjectiveSpec::greedy();
    }
  }
  if (seeds > 0) {
    cfg.seeds.resize(static_cast<std::size_t>(seeds));
    std::iota(cfg.seeds.begin(), cfg.seeds.end(), 0);
  }
  if (episodes > 0) {
    cfg.episodes = episodes;
    cfg.objective.episodes = episodes;
  }
  if (!out.empty()) cfg.out_dir = out;
  cfg.validate();

  const auto suite = combrl::run_suite(cfg);
  const auto done = suite.completed();
  std::cout << "oracle return " << suite.oracle << '\n';
  for (const auto* s : done)
    std::cout << "seed " << s->seed << " final return " << s->rows.back().ret << " cumulative regret "
              << s->rows.back().cum_regret << '\n';
  std::cout << "wrote " << cfg.out_dir << '\n';
  if (done.empty()) {
    for (const auto& s : suite.seeds)
      if (s.error_kind == kConfigExit) return kConfigExit;
    return kNumericExit;
  }
  return 0;
}

int cmd_downstream(const std::string& snapshot, const std::string& task, const std::string& config_path) {
  std::ifstream in(snapshot);
  if (!in) throw combrl::ConfigError("cannot open snapshot '" + snapshot + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw combrl::ConfigError(std::string("bad snapshot: ") + e.what());
  }
  combrl::StatisticalModel model;
  try {
    model = combrl::model_from_json(j);
  } catch (const std::invalid_argument& e) {
    throw combrl::ConfigError(e.what());
  }
  const std::string env = j.value("environment", combrl::env_of_task(task));
  combrl::RunConfig cfg = base_config(config_path, env);
  const double ret = combrl::downstream_eval(model, task, cfg);
  std::cout << "task " << task << " zero-shot return " << ret << '\n';
  return 0;
}

int cmd_oracle(const std::string& env, const std::string& config_path) {
  combrl::RunConfig cfg = base_config(config_path, env);
  std::cout << "oracle return " << combrl::oracle_return(cfg) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optimistic continuous-time model-based RL laboratory"};
  app.require_subcommand(1);

  std::string config, env, algo, out, snapshot, task;
  int seeds = 0, episodes = 0;

  auto* run = app.add_subcommand("run", "run the episodic loop over seeds");
  run->add_option("--config", config, "INI config file")->required()->check(CLI::ExistingFile);
  run->add_option("--env", env, "environment (pendulum-gp, mountaincar-gp)");
  run->add_option("--algo", algo, "agent (combrl, mean, pets, ocorl)");
  run->add_option("--seeds", seeds, "run seeds 0..K-1");
  run->add_option("--episodes", episodes, "number of episodes");
  run->add_option("--out", out, "output directory");

  auto* down = app.add_subcommand("eval-downstream", "zero-shot evaluation of a model snapshot");
  down->add_option("--snapshot", snapshot, "model snapshot JSON")->required();
  down->add_option("--task", task, "downstream task name")->required();
  down->add_option("--config", config, "INI config file for planner settings");

  auto* oracle = app.add_subcommand("oracle", "planning-based optimal return estimate");
  oracle->add_option("--env", env, "environment")->required();
  oracle->add_option("--config", config, "INI config file for planner settings");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    if (*run) return cmd_run(config, env, algo, seeds, episodes, out);
    if (*down) return cmd_downstream(snapshot, task, config);
    if (*oracle) return cmd_oracle(env, config);
  } catch (const combrl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericExit;
  }
  return 0;
}
