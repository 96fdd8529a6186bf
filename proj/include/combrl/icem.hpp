#pragma once

// Improved cross-entropy method (iCEM) over open-loop action sequences with
// temporally colored sampling noise, plus a receding-horizon wrapper.

#include "combrl/env.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

namespace combrl {

class PlanningError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct IcemConfig {
  int horizon = 30;
  int samples = 500;
  int elites = 50;
  int iterations = 10;
  double momentum = 0.2;
  double noise_exponent = 2.0;
  double keep_fraction = 0.3;
  double init_std_fraction = 0.5;  // of the action range
  std::uint64_t seed = 0;
  int verbosity = 0;

  void validate() const {
    if (horizon < 1) throw ConfigError("planner horizon must be >= 1");
    if (samples < 1) throw ConfigError("planner samples must be >= 1");
    if (elites < 1 || elites > samples) throw ConfigError("planner elites must lie in [1, samples]");
    if (iterations < 1) throw ConfigError("planner iterations must be >= 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("planner momentum must lie in [0, 1)");
    if (!(noise_exponent >= 0.0)) throw ConfigError("noise exponent must be >= 0");
    if (!(keep_fraction >= 0.0 && keep_fraction <= 1.0)) throw ConfigError("keep fraction must lie in [0, 1]");
  }
};

// Candidate action sequences: one (dim x count) block per time step.
struct ActionBatch {
  std::vector<Matrix> steps;

  ActionBatch() = default;
  ActionBatch(int horizon, int dim, int count) : steps(horizon, Matrix::Zero(dim, count)) {}

  int horizon() const { return static_cast<int>(steps.size()); }
  int dim() const { return steps.empty() ? 0 : static_cast<int>(steps.front().rows()); }
  int count() const { return steps.empty() ? 0 : static_cast<int>(steps.front().cols()); }

  // Sequence of candidate i as (horizon x dim).
  Matrix candidate(int i) const {
    Matrix out(horizon(), dim());
    for (int t = 0; t < horizon(); ++t) out.row(t) = steps[t].col(i).transpose();
    return out;
  }

  void set_candidate(int i, const Matrix& seq) {
    for (int t = 0; t < horizon(); ++t) steps[t].col(i) = seq.row(t).transpose();
  }
};

// Returns one objective value per candidate (higher is better).
using CandidateEvaluator = std::function<Vector(const ActionBatch&)>;

// Noise with power spectral density ~ 1/f^exponent along the horizon axis,
// normalized to unit marginal variance. Built by shaping complex Gaussian
// spectra and applying an inverse real DFT.
inline ActionBatch colored_noise(int horizon, int dim, int count, double exponent, std::mt19937_64& rng) {
  if (!(exponent >= 0.0)) throw std::invalid_argument("noise exponent must be >= 0");
  ActionBatch out(horizon, dim, count);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int n = horizon;
  const int nf = n / 2 + 1;
  if (n == 1) {
    for (int d = 0; d < dim; ++d)
      for (int c = 0; c < count; ++c) out.steps[0](d, c) = normal(rng);
    return out;
  }
  // Frequencies k/n, with the DC bin given the scale of the lowest nonzero bin.
  std::vector<double> scale(nf);
  for (int k = 0; k < nf; ++k) {
    const double f = std::max(k, 1) / static_cast<double>(n);
    scale[k] = std::pow(f, -exponent / 2.0);
  }
  // Exact per-step variance of the synthesized signal (identical for every t):
  // DC and Nyquist bins contribute 2 s^2, the others 4 s^2.
  double var = 0.0;
  for (int k = 0; k < nf; ++k) {
    const bool edge = k == 0 || (n % 2 == 0 && k == nf - 1);
    var += (edge ? 2.0 : 4.0) * scale[k] * scale[k];
  }
  const double sigma = std::sqrt(var) / n;

  Matrix cosT(n, nf), sinT(n, nf);
  for (int t = 0; t < n; ++t)
    for (int k = 0; k < nf; ++k) {
      const double ang = 2.0 * std::numbers::pi * k * t / n;
      cosT(t, k) = std::cos(ang);
      sinT(t, k) = std::sin(ang);
    }
  std::vector<double> re(nf), im(nf);
  for (int d = 0; d < dim; ++d)
    for (int c = 0; c < count; ++c) {
      for (int k = 0; k < nf; ++k) {
        re[k] = scale[k] * normal(rng);
        im[k] = scale[k] * normal(rng);
      }
      im[0] = 0.0;
      re[0] *= std::sqrt(2.0);
      if (n % 2 == 0) {
        im[nf - 1] = 0.0;
        re[nf - 1] *= std::sqrt(2.0);
      }
      for (int t = 0; t < n; ++t) {
        double acc = re[0];
        for (int k = 1; k < nf; ++k) {
          const double w = (n % 2 == 0 && k == nf - 1) ? 1.0 : 2.0;
          acc += w * (re[k] * cosT(t, k) - im[k] * sinT(t, k));
        }
        out.steps[t](d, c) = acc / n / sigma;
      }
    }
  return out;
}

inline ActionBatch colored_noise(int horizon, int dim, int count, double exponent, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return colored_noise(horizon, dim, count, exponent, rng);
}

struct ActionPlan {
  Matrix actions;            // best sequence found (horizon x dim)
  double value = -std::numeric_limits<double>::infinity();
  Matrix mean;               // final sampling distribution
  Matrix stddev;
  std::vector<double> best_per_iteration;  // best-ever value after each iteration
  std::vector<int> elite_counts;
};

namespace detail {

inline void clip_rows(Matrix& seq, const std::vector<Interval>& bounds) {
  for (Eigen::Index t = 0; t < seq.rows(); ++t)
    for (Eigen::Index d = 0; d < seq.cols(); ++d) seq(t, d) = bounds[d].clamp(seq(t, d));
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace detail

inline Matrix initial_stddev(const std::vector<Interval>& bounds, int horizon, double fraction) {
  Matrix s(horizon, static_cast<int>(bounds.size()));
  for (std::size_t d = 0; d < bounds.size(); ++d)
    s.col(static_cast<Eigen::Index>(d)).setConstant(fraction * bounds[d].width());
  return s;
}

// Runs iCEM from the given sampling distribution (horizon x dim each). The
// sampling mean is evaluated alongside the samples in every iteration, so the
// result is never worse than the warm start.
inline ActionPlan plan(const CandidateEvaluator& evaluate, const std::vector<Interval>& bounds,
                       const IcemConfig& cfg, Matrix mean, Matrix stddev) {
  cfg.validate();
  const int H = cfg.horizon;
  const int D = static_cast<int>(bounds.size());
  if (mean.rows() != H || mean.cols() != D || stddev.rows() != H || stddev.cols() != D)
    throw std::invalid_argument("plan: distribution shape does not match horizon x action dim");
  std::mt19937_64 rng(cfg.seed);
  ActionPlan out;
  const int keep = static_cast<int>(std::floor(cfg.keep_fraction * cfg.elites));
  std::vector<Matrix> kept;

  for (int it = 0; it < cfg.iterations; ++it) {
    // Fresh samples, then the carried-over elites, then the current mean.
    const int fresh = cfg.samples;
    const int total = fresh + static_cast<int>(kept.size()) + 1;
    ActionBatch batch = colored_noise(H, D, fresh, cfg.noise_exponent, rng);
    ActionBatch cand(H, D, total);
    for (int t = 0; t < H; ++t) {
      cand.steps[t].leftCols(fresh) =
          (batch.steps[t].array().colwise() * stddev.row(t).transpose().array()).colwise() +
          mean.row(t).transpose().array();
      for (int d = 0; d < D; ++d)
        cand.steps[t].row(d) = cand.steps[t].row(d).cwiseMax(bounds[d].lo).cwiseMin(bounds[d].hi);
    }
    for (std::size_t k = 0; k < kept.size(); ++k) cand.set_candidate(fresh + static_cast<int>(k), kept[k]);
    Matrix clipped_mean = mean;
    detail::clip_rows(clipped_mean, bounds);
    cand.set_candidate(total - 1, clipped_mean);

    const Vector values = evaluate(cand);
    if (values.size() != total) throw std::invalid_argument("evaluator returned wrong number of values");
    std::vector<int> order;
    order.reserve(total);
    for (int i = 0; i < total; ++i)
      if (std::isfinite(values(i))) order.push_back(i);
    if (order.empty()) throw PlanningError("all candidates produced non-finite objectives");
    const int n_elite = std::min<int>(cfg.elites, static_cast<int>(order.size()));
    std::partial_sort(order.begin(), order.begin() + n_elite, order.end(), [&](int a, int b) {
      return values(a) > values(b) || (values(a) == values(b) && a < b);
    });
    out.elite_counts.push_back(n_elite);

    if (values(order[0]) > out.value) {
      out.value = values(order[0]);
      out.actions = cand.candidate(order[0]);
    }
    out.best_per_iteration.push_back(out.value);

    Matrix emean = Matrix::Zero(H, D), esq = Matrix::Zero(H, D);
    for (int e = 0; e < n_elite; ++e) {
      const Matrix seq = cand.candidate(order[e]);
      emean += seq;
      esq += seq.cwiseAbs2();
    }
    emean /= n_elite;
    const Matrix evar = (esq / n_elite - emean.cwiseAbs2()).cwiseMax(0.0);
    mean = cfg.momentum * mean + (1.0 - cfg.momentum) * emean;
    stddev = cfg.momentum * stddev + (1.0 - cfg.momentum) * evar.cwiseSqrt();

    kept.clear();
    for (int e = 0; e < std::min(keep, n_elite); ++e) kept.push_back(cand.candidate(order[e]));

    if (cfg.verbosity > 1) {
      double emean_val = 0.0;
      for (int e = 0; e < n_elite; ++e) emean_val += values(order[e]);
      std::cerr << "icem iter " << it << " best " << out.value << " elite-mean " << emean_val / n_elite
                << '\n';
    }
  }
  out.mean = std::move(mean);
  out.stddev = std::move(stddev);
  return out;
}

// Receding-horizon controller: re-plans at every call, warm-starting from the
// previous best sequence shifted by one step.
class MpcPlanner {
 public:
  MpcPlanner(IcemConfig cfg, std::vector<Interval> bounds)
      : cfg_(cfg), bounds_(std::move(bounds)) {
    cfg_.validate();
  }

  const IcemConfig& config() const { return cfg_; }
  const std::vector<Interval>& bounds() const { return bounds_; }
  const std::optional<Matrix>& previous() const { return previous_; }
  int calls() const { return calls_; }

  void reset() {
    previous_.reset();
    calls_ = 0;
  }

  Matrix warm_start() const {
    const int H = cfg_.horizon;
    const int D = static_cast<int>(bounds_.size());
    if (!previous_) return Matrix::Zero(H, D);
    Matrix m(H, D);
    m.topRows(H - 1) = previous_->bottomRows(H - 1);
    m.row(H - 1) = previous_->row(H - 1);
    return m;
  }

  const ActionPlan& last_plan() const { return last_; }

  Vector step(const CandidateEvaluator& evaluate) {
    IcemConfig cfg = cfg_;
    cfg.seed = detail::mix_seed(cfg_.seed, static_cast<std::uint64_t>(calls_));
    Matrix mean = warm_start();
    detail::clip_rows(mean, bounds_);
    last_ = plan(evaluate, bounds_, cfg, mean,
                 initial_stddev(bounds_, cfg_.horizon, cfg_.init_std_fraction));
    previous_ = last_.actions;
    ++calls_;
    return last_.actions.row(0).transpose();
  }

 private:
  IcemConfig cfg_;
  std::vector<Interval> bounds_;
  std::optional<Matrix> previous_;
  ActionPlan last_;
  int calls_ = 0;
};

}  // namespace combrl
