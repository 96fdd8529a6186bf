#pragma once

// Run configuration: per-environment defaults and an INI-style file with the
// sections [environment] [agent] [planner] [model] [schedule] [mss]
// [output] [evaluation]. Unknown sections or keys are rejected.

#include "combrl/agents.hpp"
#include "combrl/env.hpp"
#include "combrl/gp.hpp"
#include "combrl/icem.hpp"
#include "combrl/objective.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace combrl {

enum class MssRule { per_step, fixed, growing };

struct RunConfig {
  // [environment]
  std::string env = "pendulum-gp";
  std::string task;                 // primary task; empty selects the environment default
  double obs_noise = 0.01;
  double control_freq = 20.0;
  int env_substeps = 10;

  // [agent]
  AgentKind agent = AgentKind::combrl;
  int particles = 10;

  // [planner]
  IcemConfig planner;
  int model_substeps = 1;

  // [model]
  std::vector<double> signal_variance;  // per output dimension
  std::vector<double> lengthscales;     // per input dimension, shared initial value
  double noise_variance = 1e-4;
  BetaRule beta_rule = BetaRule::fixed(1.0);
  double delta = 0.1;
  bool project = false;
  int hyper_steps = 100;
  double hyper_lr = 0.01;

  // [schedule]
  ObjectiveSpec objective = ObjectiveSpec::fixed(1.0);

  // [mss]
  MssRule mss_rule = MssRule::per_step;
  int measurements = 0;

  // [output]
  std::string out_dir = "runs/out";
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  int episodes = 12;
  bool record_timing = true;
  bool write_trajectories = false;
  int verbosity = 0;

  // [evaluation]
  std::vector<std::string> downstream;

  void validate() const;
  std::string to_ini() const;
};

// Defaults for an environment and agent; planner, horizon, episode count,
// control rate, lambda and beta follow the published GP-experiment setup.
inline RunConfig preset(const std::string& env, AgentKind agent = AgentKind::combrl) {
  RunConfig c;
  c.env = env;
  c.agent = agent;
  if (env == "pendulum-gp") {
    c.task = "swing-up";
    c.control_freq = 20.0;
    c.episodes = 12;
    c.obs_noise = 0.01;
    c.noise_variance = 1e-4;
    c.signal_variance = {10.0, 10.0, 100.0};
    c.lengthscales = {1.0, 1.0, 4.0, 2.0};
    c.planner = {30, 500, 50, 10, 0.2, 2.0, 0.3, 0.5, 0, 0};
    c.beta_rule = BetaRule::fixed(7.5);
    c.objective = ObjectiveSpec::fixed(1.0);
  } else if (env == "mountaincar-gp") {
    c.task = "go-up-right";
    c.control_freq = 1.0;
    c.episodes = 15;
    c.obs_noise = 1e-4;
    c.noise_variance = 1e-8;
    c.signal_variance = {5e-3, 1e-5};
    c.lengthscales = {0.5, 0.05, 1.0};
    c.planner = {100, 500, 50, 5, 0.2, 2.0, 0.3, 0.5, 0, 0};
    c.beta_rule = BetaRule::fixed(30.0);
    c.objective = ObjectiveSpec::fixed(1e6);
  } else {
    throw ConfigError("unknown environment '" + env + "'");
  }
  c.particles = 10;
  c.hyper_steps = 100;
  c.hyper_lr = 0.01;
  if (agent != AgentKind::combrl) c.objective = ObjectiveSpec::greedy();
  return c;
}

// Measurements in episode n (1-based) for the configured rule.
inline int measurement_count(const RunConfig& c, double horizon, int episode) {
  const int steps = control_steps(horizon, c.control_freq);
  switch (c.mss_rule) {
    case MssRule::per_step: return steps;
    case MssRule::fixed: return c.measurements;
    case MssRule::growing: {
      // Largest divisor of the step count not exceeding n, so the
      // measurement times stay on the control grid.
      int m = std::min(std::max(episode, 1), steps);
      while (steps % m != 0) --m;
      return m;
    }
  }
  return steps;
}

namespace detail {

inline std::string join_doubles(const std::vector<double>& v) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

template <typename T>
std::vector<T> split_list(const std::string& s) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    const auto e = item.find_last_not_of(" \t");
    item = item.substr(b, e - b + 1);
    if constexpr (std::is_same_v<T, std::string>) {
      out.push_back(item);
    } else {
      std::istringstream is(item);
      T v{};
      if (!(is >> v) || !is.eof()) throw ConfigError("bad list entry '" + item + "'");
      out.push_back(v);
    }
  }
  return out;
}

inline std::string to_string(MssRule r) {
  switch (r) {
    case MssRule::per_step: return "per-step";
    case MssRule::fixed: return "fixed";
    case MssRule::growing: return "growing";
  }
  return "?";
}

inline MssRule mss_rule_from_string(const std::string& s) {
  if (s == "per-step") return MssRule::per_step;
  if (s == "fixed") return MssRule::fixed;
  if (s == "growing") return MssRule::growing;
  throw ConfigError("unknown mss rule '" + s + "'");
}

}  // namespace detail

inline void RunConfig::validate() const {
  const ControlledOde ode = make_env(env);
  if (episodes < 1) throw ConfigError("episodes must be >= 1");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  planner.validate();
  if (env_substeps < 1 || model_substeps < 1) throw ConfigError("substeps must be >= 1");
  const int steps = control_steps(ode.horizon, control_freq);
  if (mss_rule == MssRule::fixed && (measurements < 1 || steps % measurements != 0))
    throw ConfigError("mss measurements must divide the number of control steps (" +
                      std::to_string(steps) + ")");
  if (static_cast<int>(signal_variance.size()) != ode.state_dim)
    throw ConfigError("model.signal_variance needs one entry per state dimension");
  if (static_cast<int>(lengthscales.size()) != ode.input_dim())
    throw ConfigError("model.lengthscales needs one entry per input dimension");
  if (!(noise_variance > 0.0)) throw ConfigError("model.noise_variance must be positive");
  if (!(obs_noise >= 0.0) || !std::isfinite(obs_noise)) throw ConfigError("environment.obs_noise must be >= 0");
  if (!(delta > 0.0 && delta <= 1.0)) throw ConfigError("model.delta must lie in (0, 1]");
  if (particles < 1) throw ConfigError("agent.particles must be >= 1");
  if (objective.lambda < 0.0) throw ConfigError("schedule.lambda must be >= 0");
  if (objective.regime == Regime::auto_tuned && !(objective.lambda > 0.0))
    throw ConfigError("auto regime needs schedule.lambda > 0");
}

inline std::string RunConfig::to_ini() const {
  std::ostringstream os;
  os.precision(17);
  os << "[environment]\nname = " << env << "\ntask = " << task << "\nobs_noise = " << obs_noise
     << "\ncontrol_freq = " << control_freq << "\nsubsteps = " << env_substeps << "\n\n";
  os << "[agent]\nalgo = " << to_string(agent) << "\nparticles = " << particles << "\n\n";
  os << "[planner]\nhorizon = " << planner.horizon << "\nsamples = " << planner.samples
     << "\nelites = " << planner.elites << "\niterations = " << planner.iterations
     << "\nmomentum = " << planner.momentum << "\nexponent = " << planner.noise_exponent
     << "\nkeep_fraction = " << planner.keep_fraction << "\ninit_std = " << planner.init_std_fraction
     << "\nmodel_substeps = " << model_substeps << "\nverbosity = " << planner.verbosity << "\n\n";
  os << "[model]\nsignal_variance = " << detail::join_doubles(signal_variance)
     << "\nlengthscales = " << detail::join_doubles(lengthscales) << "\nnoise_variance = " << noise_variance
     << "\nbeta_rule = " << (beta_rule.kind == BetaRule::Kind::fixed ? "fixed" : "chowdhury")
     << "\nbeta = " << beta_rule.value << "\nrkhs_bound = " << beta_rule.rkhs_bound
     << "\ndelta = " << delta << "\nproject = " << (project ? "true" : "false")
     << "\nhyper_steps = " << hyper_steps << "\nhyper_lr = " << hyper_lr << "\n\n";
  os << "[schedule]\nregime = " << to_string(objective.regime) << "\nlambda = " << objective.lambda
     << "\nlambda0 = " << objective.lambda0 << "\nlambda_lr = " << objective.lambda_lr
     << "\npolyak_tau = " << objective.polyak_tau << "\n\n";
  os << "[mss]\nrule = " << detail::to_string(mss_rule) << "\nmeasurements = " << measurements << "\n\n";
  os << "[output]\ndir = " << out_dir << "\nseeds = ";
  for (std::size_t i = 0; i < seeds.size(); ++i) os << (i ? "," : "") << seeds[i];
  os << "\nepisodes = " << episodes << "\ntiming = " << (record_timing ? "true" : "false")
     << "\ntrajectories = " << (write_trajectories ? "true" : "false") << "\nverbosity = " << verbosity
     << "\n\n";
  os << "[evaluation]\ndownstream = ";
  for (std::size_t i = 0; i < downstream.size(); ++i) os << (i ? "," : "") << downstream[i];
  os << "\n";
  return os.str();
}

// Parses an INI document on top of the defaults for its environment/agent.
inline RunConfig parse_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }

  static const std::map<std::string, std::set<std::string>> known = {
      {"environment", {"name", "task", "obs_noise", "control_freq", "substeps"}},
      {"agent", {"algo", "particles", "beta"}},
      {"planner",
       {"horizon", "samples", "elites", "iterations", "momentum", "exponent", "keep_fraction", "init_std",
        "model_substeps", "verbosity"}},
      {"model",
       {"signal_variance", "lengthscales", "noise_variance", "beta_rule", "beta", "rkhs_bound", "delta",
        "project", "hyper_steps", "hyper_lr"}},
      {"schedule", {"regime", "lambda", "lambda0", "lambda_lr", "polyak_tau"}},
      {"mss", {"rule", "measurements"}},
      {"output", {"dir", "seeds", "episodes", "timing", "trajectories", "verbosity"}},
      {"evaluation", {"downstream"}},
  };
  for (const auto& [section, body] : tree) {
    const auto it = known.find(section);
    if (it == known.end()) throw ConfigError("unknown config section [" + section + "]");
    for (const auto& [key, value] : body)
      if (!it->second.count(key)) throw ConfigError("unknown config key " + section + "." + key);
  }

  // Values may carry a trailing "; comment" or "# comment".
  auto get = [&](const std::string& path) -> std::optional<std::string> {
    auto v = tree.get_optional<std::string>(path);
    if (!v) return std::nullopt;
    std::string s = v->substr(0, v->find_first_of(";#"));
    s.erase(s.find_last_not_of(" \t") + 1);
    return s;
  };
  auto as_double = [](const std::string& path, const std::string& s) {
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key " + path + " expects a number, got '" + s + "'");
    }
  };
  auto as_int = [&](const std::string& path, const std::string& s) {
    const double v = as_double(path, s);
    if (v != std::floor(v)) throw ConfigError("config key " + path + " expects an integer");
    return static_cast<int>(v);
  };
  auto as_bool = [](const std::string& path, const std::string& s) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("config key " + path + " expects a boolean");
  };

  const std::string env = get("environment.name").value_or("pendulum-gp");
  const AgentKind agent = agent_from_string(get("agent.algo").value_or("combrl"));
  RunConfig c = preset(env, agent);

  auto num = [&](const std::string& path, double& dst) {
    if (auto v = get(path)) dst = as_double(path, *v);
  };
  auto integer = [&](const std::string& path, int& dst) {
    if (auto v = get(path)) dst = as_int(path, *v);
  };
  auto flag = [&](const std::string& path, bool& dst) {
    if (auto v = get(path)) dst = as_bool(path, *v);
  };

  if (auto v = get("environment.task")) c.task = *v;
  num("environment.obs_noise", c.obs_noise);
  num("environment.control_freq", c.control_freq);
  integer("environment.substeps", c.env_substeps);

  integer("agent.particles", c.particles);
  if (auto v = get("agent.beta")) c.beta_rule = BetaRule::fixed(as_double("agent.beta", *v));

  integer("planner.horizon", c.planner.horizon);
  integer("planner.samples", c.planner.samples);
  integer("planner.elites", c.planner.elites);
  integer("planner.iterations", c.planner.iterations);
  num("planner.momentum", c.planner.momentum);
  num("planner.exponent", c.planner.noise_exponent);
  num("planner.keep_fraction", c.planner.keep_fraction);
  num("planner.init_std", c.planner.init_std_fraction);
  integer("planner.model_substeps", c.model_substeps);
  integer("planner.verbosity", c.planner.verbosity);

  if (auto v = get("model.signal_variance")) c.signal_variance = detail::split_list<double>(*v);
  if (auto v = get("model.lengthscales")) c.lengthscales = detail::split_list<double>(*v);
  num("model.noise_variance", c.noise_variance);
  if (auto v = get("model.beta_rule")) {
    if (*v == "fixed") c.beta_rule.kind = BetaRule::Kind::fixed;
    else if (*v == "chowdhury") c.beta_rule.kind = BetaRule::Kind::chowdhury;
    else throw ConfigError("unknown beta rule '" + *v + "'");
  }
  num("model.beta", c.beta_rule.value);
  num("model.rkhs_bound", c.beta_rule.rkhs_bound);
  num("model.delta", c.delta);
  flag("model.project", c.project);
  integer("model.hyper_steps", c.hyper_steps);
  num("model.hyper_lr", c.hyper_lr);
  c.beta_rule.noise_std = std::sqrt(c.noise_variance);

  if (auto v = get("schedule.regime")) {
    c.objective.regime = regime_from_string(*v);
    if (c.objective.regime == Regime::greedy || c.objective.regime == Regime::unsupervised)
      c.objective.lambda = c.objective.lambda0 = 0.0;
  }
  num("schedule.lambda", c.objective.lambda);
  if (auto v = get("schedule.lambda0")) {
    c.objective.lambda0 = as_double("schedule.lambda0", *v);
    if (c.objective.regime == Regime::annealing) c.objective.lambda = c.objective.lambda0;
  } else if (c.objective.regime != Regime::annealing) {
    c.objective.lambda0 = c.objective.lambda;
  }
  num("schedule.lambda_lr", c.objective.lambda_lr);
  num("schedule.polyak_tau", c.objective.polyak_tau);

  if (auto v = get("mss.rule")) c.mss_rule = detail::mss_rule_from_string(*v);
  integer("mss.measurements", c.measurements);
  if (c.measurements > 0 && !get("mss.rule")) c.mss_rule = MssRule::fixed;

  if (auto v = get("output.dir")) c.out_dir = *v;
  if (auto v = get("output.seeds")) c.seeds = detail::split_list<std::uint64_t>(*v);
  integer("output.episodes", c.episodes);
  flag("output.timing", c.record_timing);
  flag("output.trajectories", c.write_trajectories);
  integer("output.verbosity", c.verbosity);

  if (auto v = get("evaluation.downstream")) c.downstream = detail::split_list<std::string>(*v);

  if (agent != AgentKind::combrl) c.objective = ObjectiveSpec::greedy();
  c.objective.episodes = c.episodes;
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in);
}

}  // namespace combrl
