#pragma once

// Running objective (r + lambda * ||sigma||) / (1 + lambda) and the
// schedules that move lambda between episodes.

#include "combrl/env.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

namespace combrl {

enum class Regime { greedy, static_weight, annealing, auto_tuned, unsupervised };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::greedy: return "greedy";
    case Regime::static_weight: return "static";
    case Regime::annealing: return "annealing";
    case Regime::auto_tuned: return "auto";
    case Regime::unsupervised: return "unsupervised";
  }
  return "?";
}

inline Regime regime_from_string(const std::string& s) {
  if (s == "greedy") return Regime::greedy;
  if (s == "static") return Regime::static_weight;
  if (s == "annealing") return Regime::annealing;
  if (s == "auto") return Regime::auto_tuned;
  if (s == "unsupervised") return Regime::unsupervised;
  throw ConfigError("unknown lambda regime '" + s + "'");
}

inline constexpr double kLambdaFloor = 1e-4;
inline constexpr double kLambdaCeiling = 1e6;

struct ObjectiveSpec {
  Regime regime = Regime::static_weight;
  double lambda = 1.0;    // current weight
  double lambda0 = 1.0;   // annealing start
  int episodes = 1;       // annealing length N
  double lambda_lr = 0.01;
  double polyak_tau = 0.005;
  int episode = 0;

  static ObjectiveSpec greedy() { return {Regime::greedy, 0.0, 0.0}; }
  static ObjectiveSpec fixed(double lambda) { return {Regime::static_weight, lambda, lambda}; }
  static ObjectiveSpec annealing(double lambda0, int episodes) {
    return {Regime::annealing, lambda0, lambda0, episodes};
  }
  static ObjectiveSpec unsupervised() { return {Regime::unsupervised, 0.0, 0.0}; }
  static ObjectiveSpec auto_tuned(double init, double lr, double tau) {
    return {Regime::auto_tuned, init, init, 1, lr, tau};
  }

  // Weight reported in logs; the unsupervised limit is reported as +inf.
  double effective_lambda() const {
    if (regime == Regime::greedy) return 0.0;
    if (regime == Regime::unsupervised) return std::numeric_limits<double>::infinity();
    return lambda;
  }

  bool uses_uncertainty() const { return regime == Regime::unsupervised || effective_lambda() > 0.0; }
};

inline double blended_reward(const ObjectiveSpec& spec, double reward, double uncertainty) {
  switch (spec.regime) {
    case Regime::greedy: return reward;
    case Regime::unsupervised: return uncertainty;
    default: break;
  }
  const double l = spec.lambda;
  if (l == 0.0) return reward;
  return (reward + l * uncertainty) / (1.0 + l);
}

// Lambda for episode n of N.
inline double schedule_step(ObjectiveSpec& spec, int n, int N) {
  if (n < 0 || n > N) throw std::invalid_argument("schedule_step: need 0 <= n <= N");
  spec.episode = n;
  if (spec.regime == Regime::annealing)
    spec.lambda = std::max(0.0, spec.lambda0 * (1.0 - static_cast<double>(n) / N));
  return spec.lambda;
}

// One descent step on E[log(lambda) (s(x,u) - s(x,u_target))] in log lambda.
// `gap` holds the per-sample uncertainty gaps; an empty sample is a no-op.
inline double auto_tune_step(ObjectiveSpec& spec, const Vector& gap, double lr) {
  if (gap.size() == 0) return spec.lambda;
  if (!(spec.lambda > 0.0)) throw std::invalid_argument("auto-tuning needs lambda > 0");
  const double log_lambda = std::log(spec.lambda) - lr * gap.mean();
  spec.lambda = std::clamp(std::exp(log_lambda), kLambdaFloor, kLambdaCeiling);
  return spec.lambda;
}

// Same step, computing the gaps from an uncertainty-norm evaluator over
// replayed states with current and target actions (columns).
inline double auto_tune_step(ObjectiveSpec& spec, const Matrix& states, const Matrix& current_actions,
                             const Matrix& target_actions,
                             const std::function<Vector(const Matrix&)>& stddev_norm, double lr) {
  if (states.cols() == 0) return spec.lambda;
  Matrix Zc(states.rows() + current_actions.rows(), states.cols());
  Matrix Zt(states.rows() + target_actions.rows(), states.cols());
  Zc << states, current_actions;
  Zt << states, target_actions;
  const Vector gap = stddev_norm(Zc) - stddev_norm(Zt);
  return auto_tune_step(spec, gap, lr);
}

// Polyak averaging of the target plan toward the current plan.
inline void polyak_update(Matrix& target, const Matrix& current, double tau) {
  if (target.size() == 0) {
    target = current;
    return;
  }
  target = (1.0 - tau) * target + tau * current;
}

}  // namespace combrl
