#pragma once

// Candidate evaluators for the planning agents. Every evaluator rolls a
// batch of open-loop candidates through a model in lockstep and integrates a
// running objective with left-endpoint quadrature at the control rate.
//
//   combrl  (r + lambda ||sigma||) / (1 + lambda) under the planning model
//   mean    extrinsic r under the posterior mean (combrl with lambda = 0)
//   pets    extrinsic r averaged over TS-1 particles drawn from the posterior
//   ocorl   extrinsic r under mu + beta sigma * eta, with eta planned jointly

#include "combrl/env.hpp"
#include "combrl/gp.hpp"
#include "combrl/icem.hpp"
#include "combrl/objective.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace combrl {

enum class AgentKind { combrl, mean, pets, ocorl };

inline std::string to_string(AgentKind a) {
  switch (a) {
    case AgentKind::combrl: return "combrl";
    case AgentKind::mean: return "mean";
    case AgentKind::pets: return "pets";
    case AgentKind::ocorl: return "ocorl";
  }
  return "?";
}

inline AgentKind agent_from_string(const std::string& s) {
  if (s == "combrl") return AgentKind::combrl;
  if (s == "mean") return AgentKind::mean;
  if (s == "pets") return AgentKind::pets;
  if (s == "ocorl") return AgentKind::ocorl;
  throw ConfigError("unknown agent '" + s + "'");
}

// Drift used for planning, evaluated on stacked (x, u) columns.
using MeanDrift = std::function<Matrix(const Matrix& Z)>;

inline MeanDrift mean_drift(const StatisticalModel& model) {
  return [&model](const Matrix& Z) { return model.mean(Z); };
}
inline MeanDrift mean_drift(const ProjectedModel& model) {
  return [&model](const Matrix& Z) { return model.mean(Z); };
}
inline MeanDrift true_drift(const ControlledOde& ode) {
  return [&ode](const Matrix& Z) {
    Matrix dX;
    ode.drift_batch(Z.topRows(ode.state_dim), Z.bottomRows(ode.action_dim), dX);
    return dX;
  };
}

struct ModelRollout {
  const ControlledOde* ode = nullptr;  // bounds, clipping, default reward
  BatchReward reward;                   // task reward; falls back to ode's
  MeanDrift drift;                      // planning model f_n
  const StatisticalModel* uncertainty = nullptr;  // sigma_{n-1}
  double control_freq = 20.0;
  int substeps = 1;

  const BatchReward& task_reward() const { return reward ? reward : ode->reward_batch; }
  double dt() const { return 1.0 / (control_freq * substeps); }
};

namespace detail {

inline Matrix stack(const Matrix& X, const Matrix& U) {
  Matrix Z(X.rows() + U.rows(), X.cols());
  Z << X, U;
  return Z;
}

inline Matrix replicate_state(const Vector& x0, Eigen::Index count) {
  return x0.replicate(1, count);
}

}  // namespace detail

// combrl / mean: left-endpoint quadrature of the blended reward.
inline Vector blended_values(const ModelRollout& m, const ObjectiveSpec& spec, const Vector& x0,
                             const ActionBatch& batch) {
  const ControlledOde& ode = *m.ode;
  const Eigen::Index B = batch.count();
  const bool need_sigma = spec.uses_uncertainty();
  if (need_sigma && !m.uncertainty) throw std::invalid_argument("objective needs an uncertainty model");
  Matrix X = detail::replicate_state(x0, B);
  Vector values = Vector::Zero(B);
  Vector r;
  const BatchDrift drift = [&](const Matrix& Xs, const Matrix& Us, Matrix& dX) {
    dX = m.drift(detail::stack(Xs, Us));
  };
  const double period = 1.0 / m.control_freq;
  for (int t = 0; t < batch.horizon(); ++t) {
    const Matrix& U = batch.steps[t];
    m.task_reward()(X, U, r);
    if (need_sigma) {
      const Vector s = m.uncertainty->stddev_norm(detail::stack(X, U));
      for (Eigen::Index i = 0; i < B; ++i) values(i) += blended_reward(spec, r(i), s(i)) * period;
    } else {
      values += r * period;
    }
    for (int s = 0; s < m.substeps; ++s) {
      rk4_step(drift, X, U, m.dt());
      ode.project(X);
    }
  }
  return values;
}

// TS-1: every particle draws a fresh function instance at each control step.
// The instance is mu(z) + sigma(z_k) * eps with eps ~ N(0, I) drawn at the
// left endpoint z_k and shared by the four RK4 stages of that step.
inline Vector pets_values(const ModelRollout& m, const Vector& x0, const ActionBatch& batch, int particles,
                          std::uint64_t seed) {
  if (particles < 1) throw std::invalid_argument("pets needs at least one particle");
  if (!m.uncertainty) throw std::invalid_argument("pets needs a posterior");
  const ControlledOde& ode = *m.ode;
  const Eigen::Index B = batch.count();
  const Eigen::Index P = particles;
  Matrix X = detail::replicate_state(x0, B * P);
  Vector totals = Vector::Zero(B * P);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix U(batch.dim(), B * P), offset(ode.state_dim, B * P), mu, sd;
  Vector r;
  const BatchDrift drift = [&](const Matrix& Xs, const Matrix& Us, Matrix& dX) {
    dX = m.drift(detail::stack(Xs, Us)) + offset;
  };
  const double period = 1.0 / m.control_freq;
  for (int t = 0; t < batch.horizon(); ++t) {
    for (Eigen::Index i = 0; i < B; ++i) U.middleCols(i * P, P) = batch.steps[t].col(i).replicate(1, P);
    m.task_reward()(X, U, r);
    totals += r * period;
    m.uncertainty->predict(detail::stack(X, U), mu, &sd);
    for (Eigen::Index c = 0; c < offset.cols(); ++c)
      for (Eigen::Index j = 0; j < offset.rows(); ++j) offset(j, c) = sd(j, c) * normal(rng);
    for (int s = 0; s < m.substeps; ++s) {
      rk4_step(drift, X, U, m.dt());
      ode.project(X);
    }
  }
  Vector values(B);
  for (Eigen::Index i = 0; i < B; ++i) values(i) = totals.segment(i * P, P).mean();
  return values;
}

// Hallucinated optimism: candidates carry (u, eta) with eta in [-1, 1]^d_x;
// the drift mu(z) + beta * sigma(z) * eta is evaluated at every RK4 stage.
inline Vector ocorl_values(const ModelRollout& m, const Vector& x0, const ActionBatch& batch, double beta) {
  if (!m.uncertainty) throw std::invalid_argument("ocorl needs a posterior");
  const ControlledOde& ode = *m.ode;
  const int du = ode.action_dim, dx = ode.state_dim;
  if (batch.dim() != du + dx) throw ShapeError("ocorl candidates must have action_dim + state_dim rows");
  const Eigen::Index B = batch.count();
  Matrix X = detail::replicate_state(x0, B);
  Vector values = Vector::Zero(B);
  Matrix eta;
  Vector r;
  const BatchDrift drift = [&](const Matrix& Xs, const Matrix& Us, Matrix& dX) {
    const Matrix Z = detail::stack(Xs, Us);
    Matrix mu, sd;
    m.uncertainty->predict(Z, mu, &sd);
    dX = m.drift(Z) + beta * sd.cwiseProduct(eta);
  };
  const double period = 1.0 / m.control_freq;
  for (int t = 0; t < batch.horizon(); ++t) {
    const Matrix U = batch.steps[t].topRows(du);
    eta = batch.steps[t].bottomRows(dx).cwiseMax(-1.0).cwiseMin(1.0);
    m.task_reward()(X, U, r);
    values += r * period;
    for (int s = 0; s < m.substeps; ++s) {
      rk4_step(drift, X, U, m.dt());
      ode.project(X);
    }
  }
  return values;
}

// Planner action bounds for an agent: ocorl appends eta in [-1, 1]^d_x.
inline std::vector<Interval> planner_bounds(AgentKind kind, const ControlledOde& ode) {
  auto b = ode.action_bounds;
  if (kind == AgentKind::ocorl) b.insert(b.end(), ode.state_dim, Interval{-1.0, 1.0});
  return b;
}

struct AgentParams {
  AgentKind kind = AgentKind::combrl;
  ObjectiveSpec objective;   // combrl
  int particles = 10;        // pets
  double beta = 1.0;         // ocorl
};

// Builds the evaluator that the planner calls for state x0. The pets seed is
// advanced per call so that repeated evaluations draw fresh particles.
inline CandidateEvaluator make_evaluator(const AgentParams& agent, const ModelRollout& m, const Vector& x0,
                                         std::uint64_t seed) {
  switch (agent.kind) {
    case AgentKind::combrl:
      return [&agent, &m, x0](const ActionBatch& b) { return blended_values(m, agent.objective, x0, b); };
    case AgentKind::mean:
      return [&m, x0](const ActionBatch& b) { return blended_values(m, ObjectiveSpec::greedy(), x0, b); };
    case AgentKind::pets:
      return [&agent, &m, x0, seed, calls = std::uint64_t{0}](const ActionBatch& b) mutable {
        return pets_values(m, x0, b, agent.particles, detail::mix_seed(seed, calls++));
      };
    case AgentKind::ocorl:
      return [&agent, &m, x0](const ActionBatch& b) { return ocorl_values(m, x0, b, agent.beta); };
  }
  throw std::logic_error("unhandled agent kind");
}

// ---------------------------------------------------------------------------
// Single-plan objectives (plan is horizon x dim)

inline ActionBatch single(const Matrix& plan) {
  ActionBatch b(static_cast<int>(plan.rows()), static_cast<int>(plan.cols()), 1);
  b.set_candidate(0, plan);
  return b;
}

inline double mean_agent_objective(const ModelRollout& m, const Vector& x0, const Matrix& plan) {
  return blended_values(m, ObjectiveSpec::greedy(), x0, single(plan))(0);
}

inline double combrl_objective(const ModelRollout& m, const ObjectiveSpec& spec, const Vector& x0,
                               const Matrix& plan) {
  return blended_values(m, spec, x0, single(plan))(0);
}

inline double pets_ts1_objective(const ModelRollout& m, const Vector& x0, const Matrix& plan, int particles,
                                 std::uint64_t seed) {
  return pets_values(m, x0, single(plan), particles, seed)(0);
}

inline double ocorl_objective(const ModelRollout& m, const Vector& x0, const Matrix& extended_plan,
                              double beta) {
  return ocorl_values(m, x0, single(extended_plan), beta)(0);
}

}  // namespace combrl
