#pragma once

// Continuous-time environments: controlled ODE + reward rate, a fixed-step
// RK4 integrator, zero-order-hold rollouts and noisy derivative measurements.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace combrl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double clamp(double v) const { return std::min(std::max(v, lo), hi); }
  bool contains(double v) const { return v >= lo && v <= hi; }
  double width() const { return hi - lo; }
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(int dimension, const std::string& what)
      : std::runtime_error(what), dimension_(dimension) {}
  int dimension() const { return dimension_; }

 private:
  int dimension_;
};

// Column-batched callbacks: every column of X (state_dim rows) pairs with the
// same column of U (action_dim rows).
using BatchDrift = std::function<void(const Matrix& X, const Matrix& U, Matrix& dX)>;
using BatchReward = std::function<void(const Matrix& X, const Matrix& U, Vector& r)>;
using StateConstraint = std::function<void(Matrix& X)>;

struct ControlledOde {
  std::string name;
  int state_dim = 0;
  int action_dim = 0;
  BatchDrift drift_batch;
  BatchReward reward_batch;
  std::vector<Interval> state_bounds;
  std::vector<Interval> action_bounds;
  bool clip_state = false;
  // Extra projection applied after clipping (e.g. inelastic walls).
  StateConstraint constraint;
  double horizon = 0.0;
  Vector initial_state;

  int input_dim() const { return state_dim + action_dim; }

  Vector drift(const Vector& x, const Vector& u) const {
    Matrix dx(state_dim, 1);
    drift_batch(x, u, dx);
    return dx.col(0);
  }

  double reward(const Vector& x, const Vector& u) const {
    Vector r(1);
    reward_batch(x, u, r);
    return r(0);
  }

  // Clips every column to the declared bounds when the environment asks for it.
  void project(Matrix& X) const {
    if (!clip_state) return;
    for (Eigen::Index c = 0; c < X.cols(); ++c)
      for (int i = 0; i < state_dim; ++i) X(i, c) = state_bounds[i].clamp(X(i, c));
    if (constraint) constraint(X);
  }

  void clip_actions(Matrix& U) const {
    for (Eigen::Index c = 0; c < U.cols(); ++c)
      for (int i = 0; i < action_dim; ++i) U(i, c) = action_bounds[i].clamp(U(i, c));
  }
};

// ---------------------------------------------------------------------------
// Integration

namespace detail {

inline void check_finite(const Matrix& m, const char* what) {
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      if (!std::isfinite(m(i, c)))
        throw IntegrationError(static_cast<int>(i), std::string("non-finite ") + what +
                                                        " in dimension " + std::to_string(i));
}

}  // namespace detail

// Classical RK4 step of dx/dt = drift(x, u) with u held over the step,
// applied column-wise; clipping follows the step.
inline void rk4_step(const BatchDrift& drift, Matrix& X, const Matrix& U, double dt) {
  Matrix k1(X.rows(), X.cols()), k2(X.rows(), X.cols()), k3(X.rows(), X.cols()),
      k4(X.rows(), X.cols());
  drift(X, U, k1);
  drift(X + 0.5 * dt * k1, U, k2);
  drift(X + 0.5 * dt * k2, U, k3);
  drift(X + dt * k3, U, k4);
  X += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline Vector integrate_step(const ControlledOde& ode, const Vector& x, const Vector& u, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("integrate_step: dt must be positive");
  Matrix X = x;
  const Matrix U = u;
  auto checked = [&](const Matrix& Xs, const Matrix& Us, Matrix& dX) {
    detail::check_finite(Xs, "state");
    ode.drift_batch(Xs, Us, dX);
    detail::check_finite(dX, "derivative");
  };
  rk4_step(checked, X, U, dt);
  detail::check_finite(X, "state");
  ode.project(X);
  return X.col(0);
}

// ---------------------------------------------------------------------------
// Environments

inline double pendulum_angle(double cos_theta, double sin_theta) {
  return std::atan2(sin_theta, cos_theta);
}

// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  a = std::fmod(a + pi, 2.0 * pi);
  if (a <= 0.0) a += 2.0 * pi;
  return a - pi;
}

struct PendulumParams {
  double gravity = 9.81;
  double mass = 1.0;
  double length = 1.0;
};

// State (cos theta, sin theta, theta_dot); theta = 0 is upright.
inline ControlledOde pendulum_env(PendulumParams p = {}) {
  ControlledOde ode;
  ode.name = "pendulum-gp";
  ode.state_dim = 3;
  ode.action_dim = 1;
  const double grav = 3.0 * p.gravity / (2.0 * p.length);
  const double gain = 3.0 / (p.mass * p.length * p.length);
  ode.drift_batch = [grav, gain](const Matrix& X, const Matrix& U, Matrix& dX) {
    dX.resize(3, X.cols());
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      const double cs = X(0, c), sn = X(1, c), w = X(2, c);
      dX(0, c) = -sn * w;
      dX(1, c) = cs * w;
      dX(2, c) = grav * sn + gain * U(0, c);
    }
  };
  ode.reward_batch = [](const Matrix& X, const Matrix& U, Vector& r) {
    r.resize(X.cols());
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      const double th = pendulum_angle(X(0, c), X(1, c));
      const double w = X(2, c), u = U(0, c);
      r(c) = -th * th - 0.1 * w * w - 0.02 * u * u;
    }
  };
  constexpr double inf = std::numeric_limits<double>::infinity();
  ode.state_bounds = {{-1.0, 1.0}, {-1.0, 1.0}, {-inf, inf}};
  ode.action_bounds = {{-2.0, 2.0}};
  ode.clip_state = false;
  ode.horizon = 2.5;
  ode.initial_state = Vector::Zero(3);
  ode.initial_state << -1.0, 0.0, 0.0;  // hanging down
  return ode;
}

inline Vector pendulum_state(double theta, double theta_dot) {
  Vector x(3);
  x << std::cos(theta), std::sin(theta), theta_dot;
  return x;
}

inline constexpr double kMountainCarGoalPosition = 0.45;
inline constexpr double kMountainCarBonus = 100.0;

inline ControlledOde mountaincar_env() {
  ControlledOde ode;
  ode.name = "mountaincar-gp";
  ode.state_dim = 2;
  ode.action_dim = 1;
  ode.drift_batch = [](const Matrix& X, const Matrix& U, Matrix& dX) {
    dX.resize(2, X.cols());
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      dX(0, c) = X(1, c);
      dX(1, c) = 0.0015 * U(0, c) - 0.0025 * std::cos(3.0 * X(0, c));
    }
  };
  ode.reward_batch = [](const Matrix& X, const Matrix& U, Vector& r) {
    r.resize(X.cols());
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      const double u = U(0, c);
      const bool goal = X(0, c) >= kMountainCarGoalPosition && X(1, c) >= 0.0;
      r(c) = -0.1 * u * u + (goal ? kMountainCarBonus : 0.0);
    }
  };
  ode.state_bounds = {{-1.2, 0.6}, {-0.07, 0.07}};
  ode.action_bounds = {{-1.0, 1.0}};
  ode.clip_state = true;
  ode.constraint = [](Matrix& X) {
    for (Eigen::Index c = 0; c < X.cols(); ++c)
      if (X(0, c) <= -1.2 && X(1, c) < 0.0) X(1, c) = 0.0;
  };
  ode.horizon = 200.0;
  ode.initial_state = Vector::Zero(2);
  ode.initial_state << -0.5, 0.0;
  return ode;
}

inline ControlledOde make_env(const std::string& name) {
  if (name == "pendulum-gp") return pendulum_env();
  if (name == "mountaincar-gp") return mountaincar_env();
  throw ConfigError("unknown environment '" + name + "'");
}

// ---------------------------------------------------------------------------
// Trajectories

struct Trajectory {
  std::vector<double> timestamps;
  std::vector<Vector> states;   // state at each timestamp
  std::vector<Vector> actions;  // zero-order-hold action from each timestamp
  std::vector<double> rewards;  // reward-rate samples r(x_k, u_k)
  Vector final_state;
  double dt = 0.0;              // control period
  double cumulative_return = 0.0;
  int clipped_actions = 0;

  std::size_t size() const { return timestamps.size(); }

  // Left-endpoint quadrature of the stored reward-rate samples.
  double recompute_return() const {
    double sum = 0.0;
    for (double r : rewards) sum += r * dt;
    return sum;
  }
};

using Policy = std::function<Vector(double t, const Vector& x)>;

inline Policy open_loop(std::vector<Vector> plan, double control_freq) {
  return [plan = std::move(plan), control_freq](double t, const Vector&) {
    auto k = static_cast<std::size_t>(std::llround(t * control_freq));
    return plan[std::min(k, plan.size() - 1)];
  };
}

inline int control_steps(double horizon, double control_freq) {
  if (!(control_freq > 0.0)) throw ConfigError("control frequency must be positive");
  const double steps = horizon * control_freq;
  const double rounded = std::round(steps);
  if (std::abs(steps - rounded) > 1e-9 || rounded < 1.0)
    throw ConfigError("horizon * control frequency must be a whole number of steps");
  return static_cast<int>(rounded);
}

struct RolloutOptions {
  double control_freq = 20.0;
  int substeps = 10;  // RK4 substeps per control period
};

inline Trajectory rollout(const ControlledOde& ode, const Policy& policy, RolloutOptions opt,
                          const Vector* start = nullptr) {
  const int steps = control_steps(ode.horizon, opt.control_freq);
  const double period = 1.0 / opt.control_freq;
  const double dt = period / opt.substeps;
  Trajectory traj;
  traj.dt = period;
  traj.timestamps.reserve(steps);
  Vector x = start ? *start : ode.initial_state;
  for (int k = 0; k < steps; ++k) {
    const double t = k * period;
    Vector u = policy(t, x);
    if (u.size() != ode.action_dim) throw std::invalid_argument("policy returned wrong action size");
    bool clipped = false;
    for (int i = 0; i < ode.action_dim; ++i) {
      const double c = ode.action_bounds[i].clamp(u(i));
      clipped = clipped || c != u(i);
      u(i) = c;
    }
    traj.clipped_actions += clipped ? 1 : 0;
    const double r = ode.reward(x, u);
    traj.timestamps.push_back(t);
    traj.states.push_back(x);
    traj.actions.push_back(u);
    traj.rewards.push_back(r);
    for (int s = 0; s < opt.substeps; ++s) x = integrate_step(ode, x, u, dt);
  }
  traj.final_state = x;
  traj.cumulative_return = traj.recompute_return();
  return traj;
}

// One JSON object per control step: {"t":..,"x":[..],"u":[..],"r":..}.
inline void write_jsonl(std::ostream& os, const Trajectory& traj) {
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << buf;
  };
  auto arr = [&](const Vector& v) {
    os << '[';
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (i) os << ',';
      num(v(i));
    }
    os << ']';
  };
  for (std::size_t k = 0; k < traj.size(); ++k) {
    os << "{\"t\":";
    num(traj.timestamps[k]);
    os << ",\"x\":";
    arr(traj.states[k]);
    os << ",\"u\":";
    arr(traj.actions[k]);
    os << ",\"r\":";
    num(traj.rewards[k]);
    os << "}\n";
  }
}

// ---------------------------------------------------------------------------
// Measurements

struct EquidistantMss {
  int measurement_count = 1;
  double horizon = 1.0;

  std::vector<double> timestamps() const {
    std::vector<double> ts(measurement_count);
    for (int i = 0; i < measurement_count; ++i) ts[i] = i * horizon / measurement_count;
    return ts;
  }
};

struct DerivativeRecord {
  int episode = 0;
  double t = 0.0;
  Vector z;      // (x, u)
  Vector ydot;   // noisy state derivative
};

struct DerivativeDataset {
  std::vector<DerivativeRecord> records;
  double noise_std = 0.0;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }

  void append(const std::vector<DerivativeRecord>& more) {
    records.insert(records.end(), more.begin(), more.end());
  }

  // Inputs as columns (input_dim x n).
  Matrix inputs() const {
    if (records.empty()) return {};
    Matrix Z(records.front().z.size(), static_cast<Eigen::Index>(records.size()));
    for (std::size_t i = 0; i < records.size(); ++i) Z.col(static_cast<Eigen::Index>(i)) = records[i].z;
    return Z;
  }

  // Targets as rows per output dimension (output_dim x n).
  Matrix targets() const {
    if (records.empty()) return {};
    Matrix Y(records.front().ydot.size(), static_cast<Eigen::Index>(records.size()));
    for (std::size_t i = 0; i < records.size(); ++i) Y.col(static_cast<Eigen::Index>(i)) = records[i].ydot;
    return Y;
  }
};

inline std::vector<DerivativeRecord> observe(const Trajectory& traj, const EquidistantMss& mss,
                                             const ControlledOde& ode, double noise_std,
                                             std::uint64_t seed, int episode = 0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<DerivativeRecord> out;
  out.reserve(mss.measurement_count);
  for (double t : mss.timestamps()) {
    const auto k = static_cast<std::size_t>(std::llround(t / traj.dt));
    if (k >= traj.size() || std::abs(traj.timestamps[k] - t) > 1e-9)
      throw std::invalid_argument("measurement time " + std::to_string(t) +
                                  " is not on the trajectory grid");
    DerivativeRecord rec;
    rec.episode = episode;
    rec.t = t;
    rec.z.resize(ode.input_dim());
    rec.z << traj.states[k], traj.actions[k];
    rec.ydot = ode.drift(traj.states[k], traj.actions[k]);
    if (noise_std > 0.0)
      for (Eigen::Index i = 0; i < rec.ydot.size(); ++i) rec.ydot(i) += noise_std * normal(rng);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace combrl
