#pragma once

// Independent-output Gaussian-process model of an unknown drift.
//
// Each output dimension j has its own RBF kernel and posterior
//   mu_j(z)     = k(z)^T (K + s^2 I)^{-1} y_j
//   sigma_j^2(z) = k(z, z) - k(z)^T (K + s^2 I)^{-1} k(z)
// plus a confidence scale beta_n and an optional projection of the mean onto
// an RKHS ball of radius B.

#include "combrl/env.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace combrl {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IllConditionedKernel : public NumericalError {
 public:
  IllConditionedKernel(double condition, const std::string& what)
      : NumericalError(what), condition_(condition) {}
  double condition_estimate() const { return condition_; }

 private:
  double condition_;
};

// Hyperparameters live in log space so unconstrained ascent keeps them positive.
struct RbfKernel {
  double log_signal_variance = 0.0;
  Vector log_lengthscales;

  static RbfKernel make(double signal_variance, const Vector& lengthscales) {
    if (!(signal_variance > 0.0) || (lengthscales.array() <= 0.0).any())
      throw std::invalid_argument("RBF hyperparameters must be positive");
    return {std::log(signal_variance), lengthscales.array().log().matrix()};
  }
  static RbfKernel make(double signal_variance, double lengthscale, int input_dim) {
    return make(signal_variance, Vector::Constant(input_dim, lengthscale));
  }

  int input_dim() const { return static_cast<int>(log_lengthscales.size()); }
  double signal_variance() const { return std::exp(log_signal_variance); }
  Vector lengthscales() const { return log_lengthscales.array().exp().matrix(); }

  double operator()(const Vector& a, const Vector& b) const {
    const Vector d = (a - b).cwiseQuotient(lengthscales());
    return signal_variance() * std::exp(-0.5 * d.squaredNorm());
  }

  // Gram block between the columns of A and the columns of B.
  Matrix cross(const Matrix& A, const Matrix& B) const {
    if (A.rows() != input_dim() || B.rows() != input_dim())
      throw ShapeError("kernel input dimension mismatch");
    const Vector inv = lengthscales().cwiseInverse();
    const Matrix As = inv.asDiagonal() * A;
    const Matrix Bs = inv.asDiagonal() * B;
    Matrix D = -2.0 * As.transpose() * Bs;
    D.colwise() += As.colwise().squaredNorm().transpose();
    D.rowwise() += Bs.colwise().squaredNorm();
    const double sf2 = signal_variance();
    return (-0.5 * D.array().max(0.0)).exp().matrix() * sf2;
  }
};

namespace detail {

inline constexpr double kJitterStart = 1e-10;
inline constexpr double kJitterMax = 1e-6;

inline double condition_estimate(const Matrix& A) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(A, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  return lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
}

// Cholesky of A (+ escalating jitter, relative to the mean diagonal);
// returns the absolute jitter that succeeded.
inline double robust_cholesky(const Matrix& A, Matrix& lower) {
  const Eigen::Index n = A.rows();
  Eigen::LLT<Matrix> llt(A);
  if (llt.info() == Eigen::Success) {
    lower = llt.matrixL();
    return 0.0;
  }
  const double scale = n > 0 ? std::max(A.diagonal().mean(), std::numeric_limits<double>::min()) : 1.0;
  for (double rel = kJitterStart; rel <= kJitterMax * (1.0 + 1e-9); rel *= 10.0) {
    const double jitter = rel * scale;
    llt.compute(A + jitter * Matrix::Identity(n, n));
    if (llt.info() == Eigen::Success) {
      lower = llt.matrixL();
      return jitter;
    }
  }
  const double cond = condition_estimate(A);
  throw IllConditionedKernel(cond, "kernel matrix not positive definite after jitter " +
                                       std::to_string(kJitterMax) +
                                       " (condition estimate " + std::to_string(cond) + ")");
}

}  // namespace detail

// Posterior of one output dimension.
class GpPosterior {
 public:
  GpPosterior() = default;

  const RbfKernel& kernel() const { return kernel_; }
  double noise_variance() const { return noise_variance_; }
  const Matrix& inputs() const { return inputs_; }
  const Vector& targets() const { return targets_; }
  const Matrix& cholesky() const { return lower_; }
  const Vector& weights() const { return alpha_; }
  double jitter() const { return jitter_; }
  Eigen::Index size() const { return inputs_.cols(); }
  int input_dim() const { return kernel_.input_dim(); }

  // Mean (and optionally variance) at the columns of Zq.
  void predict(const Matrix& Zq, Vector& mean, Vector* variance) const {
    if (Zq.rows() != input_dim()) throw ShapeError("query dimension mismatch");
    const double prior = kernel_.signal_variance();
    if (size() == 0) {
      mean = Vector::Zero(Zq.cols());
      if (variance) *variance = Vector::Constant(Zq.cols(), prior);
      return;
    }
    Matrix Kq = kernel_.cross(inputs_, Zq);
    mean.noalias() = Kq.transpose() * alpha_;
    if (variance) {
      lower_.triangularView<Eigen::Lower>().solveInPlace(Kq);
      *variance = (prior - Kq.colwise().squaredNorm().array()).max(0.0).matrix().transpose();
    }
  }

  Vector mean(const Matrix& Zq) const {
    Vector m;
    predict(Zq, m, nullptr);
    return m;
  }

  Vector variance(const Matrix& Zq) const {
    Vector m, v;
    predict(Zq, m, &v);
    return v;
  }

  Matrix covariance(const Matrix& Zq) const {
    Matrix C = kernel_.cross(Zq, Zq);
    if (size() == 0) return C;
    Matrix V = kernel_.cross(inputs_, Zq);
    lower_.triangularView<Eigen::Lower>().solveInPlace(V);
    C.noalias() -= V.transpose() * V;
    return 0.5 * (C + C.transpose());
  }

  friend GpPosterior fit_posterior(const Matrix& Z, const Vector& y, const RbfKernel& kernel,
                                   double noise_variance);

 private:
  RbfKernel kernel_;
  double noise_variance_ = 0.0;
  Matrix inputs_;
  Vector targets_;
  Matrix lower_;
  Vector alpha_;
  double jitter_ = 0.0;
};

inline GpPosterior fit_posterior(const Matrix& Z, const Vector& y, const RbfKernel& kernel,
                                 double noise_variance) {
  if (Z.cols() != y.size()) throw ShapeError("inputs and targets disagree in count");
  if (Z.cols() > 0 && Z.rows() != kernel.input_dim()) throw ShapeError("input dimension mismatch");
  if (!(noise_variance >= 0.0)) throw std::invalid_argument("noise variance must be >= 0");
  GpPosterior post;
  post.kernel_ = kernel;
  post.noise_variance_ = noise_variance;
  post.inputs_ = Z.cols() > 0 ? Z : Matrix(kernel.input_dim(), 0);
  post.targets_ = y;
  if (Z.cols() == 0) return post;
  Matrix Ky = kernel.cross(Z, Z);
  Ky.diagonal().array() += noise_variance;
  post.jitter_ = detail::robust_cholesky(Ky, post.lower_);
  post.alpha_ = post.lower_.triangularView<Eigen::Lower>().solve(y);
  post.lower_.transpose().triangularView<Eigen::Upper>().solveInPlace(post.alpha_);
  return post;
}

// ---------------------------------------------------------------------------
// Marginal likelihood and hyperparameter fitting

struct LogLikelihood {
  double value = -std::numeric_limits<double>::infinity();
  Vector gradient;  // w.r.t. (log sf^2, log l_1..d)
};

inline LogLikelihood log_marginal_likelihood(const Matrix& Z, const Vector& y, const RbfKernel& kernel,
                                             double noise_variance) {
  const Eigen::Index n = Z.cols();
  const int d = kernel.input_dim();
  LogLikelihood out;
  out.gradient = Vector::Zero(d + 1);
  if (n == 0) {
    out.value = 0.0;
    return out;
  }
  const Matrix Kf = kernel.cross(Z, Z);
  Matrix Ky = Kf;
  Ky.diagonal().array() += noise_variance;
  Matrix L;
  detail::robust_cholesky(Ky, L);
  const auto tri = L.triangularView<Eigen::Lower>();
  Vector alpha = tri.solve(y);
  L.transpose().triangularView<Eigen::Upper>().solveInPlace(alpha);
  out.value = -0.5 * y.dot(alpha) - L.diagonal().array().log().sum() -
              0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);

  Matrix Kinv = Matrix::Identity(n, n);
  tri.solveInPlace(Kinv);
  L.transpose().triangularView<Eigen::Upper>().solveInPlace(Kinv);
  const Matrix W = alpha * alpha.transpose() - Kinv;
  const Matrix WK = W.cwiseProduct(Kf);
  out.gradient(0) = 0.5 * WK.sum();
  const Vector ell = kernel.lengthscales();
  for (int k = 0; k < d; ++k) {
    double g = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < n; ++i) {
        const double diff = (Z(k, i) - Z(k, j)) / ell(k);
        g += WK(i, j) * diff * diff;
      }
    out.gradient(k + 1) = 0.5 * g;
  }
  return out;
}

struct HyperparameterFit {
  int steps = 100;
  double learning_rate = 0.01;
  double log_min = -12.0;  // box on every log-hyperparameter
  double log_max = 12.0;
};

// Adam ascent on the log marginal likelihood in log-hyperparameter space.
// Returns the best iterate seen, which is never worse than the start.
inline RbfKernel optimize_hyperparameters(const Matrix& Z, const Vector& y, const RbfKernel& init,
                                          double noise_variance, HyperparameterFit opt = {}) {
  if (Z.cols() == 0) throw std::invalid_argument("hyperparameter fitting needs data");
  if (opt.steps <= 0) return init;
  const int p = init.input_dim() + 1;
  auto pack = [](const RbfKernel& k) {
    Vector th(k.input_dim() + 1);
    th << k.log_signal_variance, k.log_lengthscales;
    return th;
  };
  auto unpack = [p](const Vector& th) {
    RbfKernel k;
    k.log_signal_variance = th(0);
    k.log_lengthscales = th.tail(p - 1);
    return k;
  };

  Vector theta = pack(init);
  RbfKernel best = init;
  double best_value;
  LogLikelihood cur;
  try {
    cur = log_marginal_likelihood(Z, y, init, noise_variance);
  } catch (const NumericalError&) {
    return init;
  }
  best_value = cur.value;

  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Vector m = Vector::Zero(p), v = Vector::Zero(p);
  for (int t = 1; t <= opt.steps; ++t) {
    if (!cur.gradient.allFinite() || !std::isfinite(cur.value)) break;
    m = b1 * m + (1 - b1) * cur.gradient;
    v = b2 * v + (1 - b2) * cur.gradient.cwiseAbs2();
    const Vector mhat = m / (1 - std::pow(b1, t));
    const Vector vhat = v / (1 - std::pow(b2, t));
    theta += (opt.learning_rate * mhat.array() / (vhat.array().sqrt() + eps)).matrix();
    theta = theta.cwiseMax(opt.log_min).cwiseMin(opt.log_max);
    try {
      cur = log_marginal_likelihood(Z, y, unpack(theta), noise_variance);
    } catch (const NumericalError&) {
      break;
    }
    if (std::isfinite(cur.value) && cur.value > best_value) {
      best_value = cur.value;
      best = unpack(theta);
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Confidence scaling

// 0.5 * log det(I + K / s^2), the information-gain proxy.
inline double information_gain(const Matrix& Z, const RbfKernel& kernel, double noise_variance) {
  if (Z.cols() == 0) return 0.0;
  Matrix A = kernel.cross(Z, Z) / noise_variance;
  A.diagonal().array() += 1.0;
  Matrix L;
  detail::robust_cholesky(A, L);
  return L.diagonal().array().log().sum();
}

struct BetaRule {
  enum class Kind { fixed, chowdhury };
  Kind kind = Kind::fixed;
  double value = 1.0;        // fixed
  double rkhs_bound = 1.0;   // chowdhury: B
  double noise_std = 0.1;    // chowdhury: sub-Gaussian scale

  static BetaRule fixed(double c) { return {Kind::fixed, c, 1.0, 0.1}; }
  static BetaRule chowdhury(double bound, double noise_std) {
    return {Kind::chowdhury, 0.0, bound, noise_std};
  }
};

// The theory rule scales the sub-Gaussian noise level by the noise standard
// deviation of the posterior it calibrates: the confidence width is measured
// in units of that posterior's sigma, whose regularizer is the noise variance.
// With a unit regularizer (model_noise_std = 1) this is B + s sqrt(2(g+1+ln 1/d)).
inline double beta(const BetaRule& rule, double delta, double info_gain, double model_noise_std = 1.0) {
  if (!(delta > 0.0 && delta <= 1.0)) throw std::invalid_argument("delta must lie in (0, 1]");
  if (rule.kind == BetaRule::Kind::fixed) return rule.value;
  if (!(model_noise_std > 0.0)) throw std::invalid_argument("model noise std must be positive");
  return rule.rkhs_bound + rule.noise_std / model_noise_std *
                               std::sqrt(2.0 * (info_gain + 1.0 + std::log(1.0 / delta)));
}

// ---------------------------------------------------------------------------
// Model over all output dimensions

class StatisticalModel {
 public:
  StatisticalModel() = default;

  // Prior model with one kernel per output dimension.
  StatisticalModel(std::vector<RbfKernel> kernels, double noise_variance) {
    if (kernels.empty()) throw std::invalid_argument("model needs at least one output");
    for (auto& k : kernels) dims_.push_back(fit_posterior(Matrix(k.input_dim(), 0), Vector(), k, noise_variance));
  }

  explicit StatisticalModel(std::vector<GpPosterior> dims) : dims_(std::move(dims)) {}

  int input_dim() const { return dims_.front().input_dim(); }
  int output_dim() const { return static_cast<int>(dims_.size()); }
  const GpPosterior& dim(int j) const { return dims_[j]; }
  const std::vector<GpPosterior>& dims() const { return dims_; }
  Eigen::Index data_size() const { return dims_.front().size(); }

  double beta = 1.0;
  int episode = 0;
  double rkhs_bound = 1.0;

  void predict(const Matrix& Z, Matrix& mean, Matrix* stddev) const {
    if (Z.rows() != input_dim()) throw ShapeError("model input dimension mismatch");
    mean.resize(output_dim(), Z.cols());
    if (stddev) stddev->resize(output_dim(), Z.cols());
    Vector m, v;
    for (int j = 0; j < output_dim(); ++j) {
      dims_[j].predict(Z, m, stddev ? &v : nullptr);
      mean.row(j) = m.transpose();
      if (stddev) stddev->row(j) = v.cwiseSqrt().transpose();
    }
  }

  Matrix mean(const Matrix& Z) const {
    Matrix m;
    predict(Z, m, nullptr);
    return m;
  }

  Matrix stddev(const Matrix& Z) const {
    Matrix m, s;
    predict(Z, m, &s);
    return s;
  }

  // Euclidean norm of the per-dimension uncertainty, one entry per column.
  Vector stddev_norm(const Matrix& Z) const { return stddev(Z).colwise().norm().transpose(); }

  Vector mean(const Vector& z) const { return mean(Matrix(z)).col(0); }
  Vector stddev(const Vector& z) const { return stddev(Matrix(z)).col(0); }

  std::vector<RbfKernel> kernels() const {
    std::vector<RbfKernel> ks;
    for (const auto& d : dims_) ks.push_back(d.kernel());
    return ks;
  }

  double noise_variance() const { return dims_.front().noise_variance(); }

 private:
  std::vector<GpPosterior> dims_;
};

struct ModelFitOptions {
  double noise_variance = 1e-4;
  HyperparameterFit hyper;
  bool optimize = true;
};

// Fits one posterior per output dimension, warm-starting hyperparameters from
// `kernels`.
inline StatisticalModel fit_model(const DerivativeDataset& data, const std::vector<RbfKernel>& kernels,
                                  const ModelFitOptions& opt) {
  if (data.empty()) return StatisticalModel(kernels, opt.noise_variance);
  const Matrix Z = data.inputs();
  const Matrix Y = data.targets();
  if (static_cast<std::size_t>(Y.rows()) != kernels.size())
    throw ShapeError("kernel count does not match output dimension");
  std::vector<GpPosterior> dims;
  for (Eigen::Index j = 0; j < Y.rows(); ++j) {
    const Vector y = Y.row(j).transpose();
    RbfKernel k = kernels[j];
    if (opt.optimize) k = optimize_hyperparameters(Z, y, k, opt.noise_variance, opt.hyper);
    dims.push_back(fit_posterior(Z, y, k, opt.noise_variance));
  }
  return StatisticalModel(std::move(dims));
}

// Largest per-dimension information-gain proxy of a fitted model.
inline double information_gain(const StatisticalModel& model) {
  double g = 0.0;
  for (const auto& d : model.dims())
    g = std::max(g, information_gain(d.inputs(), d.kernel(), d.noise_variance()));
  return g;
}

// ---------------------------------------------------------------------------
// Projection onto the RKHS ball

struct ProjectionResult {
  Vector alpha;          // representer weights over the training inputs
  double objective = 0;  // (a - a_n)^T K (I + K/s^2) (a - a_n)
  double rkhs_norm = 0;  // sqrt(a^T K a)
  double multiplier = 0; // dual variable of the norm constraint
  bool constraint_active = false;
};

// Solves min_a (a - a_n)^T K (I + K/s^2) (a - a_n) s.t. a^T K a <= B^2.
// In the eigenbasis of K both quadratics are diagonal, so the stationary
// point for a dual multiplier m is a_i = c_i a_n,i / (c_i + m) with
// c_i = 1 + lambda_i / s^2; m is found by bisection on the constraint.
inline ProjectionResult project_weights(const Matrix& K, const Vector& alpha_n, double noise_variance,
                                        double bound) {
  if (K.rows() != K.cols() || K.rows() != alpha_n.size()) throw ShapeError("projection shape mismatch");
  if (!(bound >= 0.0)) throw std::invalid_argument("RKHS bound must be >= 0");
  if (!(noise_variance > 0.0)) throw std::invalid_argument("projection needs positive noise variance");
  ProjectionResult out;
  const Eigen::Index n = K.rows();
  const double norm2 = alpha_n.dot(K * alpha_n);
  if (norm2 <= bound * bound) {
    out.alpha = alpha_n;
    out.rkhs_norm = std::sqrt(std::max(norm2, 0.0));
    return out;
  }
  out.constraint_active = true;
  if (bound == 0.0) {
    out.alpha = Vector::Zero(n);
    const Vector d = -alpha_n;
    out.objective = d.dot(K * (d + K * d / noise_variance));
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (K + K.transpose()));
  const Vector lam = es.eigenvalues().cwiseMax(0.0);
  const Matrix& Q = es.eigenvectors();
  const Vector an = Q.transpose() * alpha_n;
  const Vector c = (lam.array() / noise_variance + 1.0).matrix();
  auto coords = [&](double m) { return Vector((c.array() * an.array() / (c.array() + m)).matrix()); };
  auto constraint = [&](double m) {
    const Vector a = coords(m);
    return (lam.array() * a.array().square()).sum();
  };
  const double b2 = bound * bound;
  double lo = 0.0, hi = 1.0;
  int guard = 0;
  while (constraint(hi) > b2) {
    lo = hi;
    hi *= 2.0;
    if (++guard > 2000) throw NumericalError("projection: failed to bracket the dual multiplier");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-16 * std::max(1.0, hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    (constraint(mid) > b2 ? lo : hi) = mid;
  }
  const Vector a = coords(hi);
  const double residual = constraint(hi) - b2;
  if (residual > 1e-8 * std::max(1.0, b2))
    throw NumericalError("projection did not converge: constraint residual " + std::to_string(residual));
  out.multiplier = hi;
  out.alpha = Q * a;
  out.objective = (lam.array() * c.array() * (a - an).array().square()).sum();
  out.rkhs_norm = std::sqrt(std::max(constraint(hi), 0.0));
  return out;
}

// Planning model f_n(z) = sum_i alpha_i k(z_i, z) per output dimension.
class ProjectedModel {
 public:
  struct Dim {
    RbfKernel kernel;
    Matrix inputs;
    Vector alpha;
    double distance = 0.0;   // ||f - mu_n||_{k_n}
    double rkhs_norm = 0.0;  // ||f||_k
  };

  explicit ProjectedModel(std::vector<Dim> dims) : dims_(std::move(dims)) {}

  const std::vector<Dim>& dims() const { return dims_; }
  int output_dim() const { return static_cast<int>(dims_.size()); }

  Matrix mean(const Matrix& Z) const {
    Matrix out(output_dim(), Z.cols());
    for (int j = 0; j < output_dim(); ++j) {
      const auto& d = dims_[j];
      if (d.inputs.cols() == 0) {
        out.row(j).setZero();
        continue;
      }
      out.row(j) = (d.kernel.cross(d.inputs, Z).transpose() * d.alpha).transpose();
    }
    return out;
  }

 private:
  std::vector<Dim> dims_;
};

inline ProjectedModel project_to_rkhs_ball(const StatisticalModel& model, double bound) {
  std::vector<ProjectedModel::Dim> dims;
  for (const auto& post : model.dims()) {
    if (post.size() == 0) throw std::invalid_argument("projection needs a non-empty training set");
    const Matrix K = post.kernel().cross(post.inputs(), post.inputs());
    const auto res = project_weights(K, post.weights(), post.noise_variance(), bound);
    dims.push_back({post.kernel(), post.inputs(), res.alpha, std::sqrt(res.objective), res.rkhs_norm});
  }
  return ProjectedModel(std::move(dims));
}

// ---------------------------------------------------------------------------
// Posterior sampling

// One joint draw of f at the columns of Zq.
inline Vector sample_function_values(const GpPosterior& post, const Matrix& Zq, std::mt19937_64& rng) {
  Vector mu, var;
  post.predict(Zq, mu, &var);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector eps(Zq.cols());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = normal(rng);
  const double scale = post.kernel().signal_variance();
  if (var.size() == 0 || var.maxCoeff() <= 1e-14 * scale) return mu;
  Matrix L;
  try {
    detail::robust_cholesky(post.covariance(Zq), L);
  } catch (const IllConditionedKernel& e) {
    throw NumericalError(std::string("posterior covariance is not PSD: ") + e.what());
  }
  return mu + L.triangularView<Eigen::Lower>() * eps;
}

inline Vector sample_function_values(const GpPosterior& post, const Matrix& Zq, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_function_values(post, Zq, rng);
}

// Independent joint draws for every output dimension (output_dim x batch).
inline Matrix sample_function_values(const StatisticalModel& model, const Matrix& Zq, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Matrix out(model.output_dim(), Zq.cols());
  for (int j = 0; j < model.output_dim(); ++j)
    out.row(j) = sample_function_values(model.dim(j), Zq, rng).transpose();
  return out;
}

// ---------------------------------------------------------------------------
// Snapshots

inline constexpr const char* kModelSchema = "combrl.model/1";

// FNV-1a over the raw bytes of the training inputs and targets.
inline std::string training_digest(const StatisticalModel& model) {
  std::uint64_t h = 1469598103934665603ull;
  auto feed = [&h](const double* p, Eigen::Index n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p);
    for (Eigen::Index i = 0; i < n * static_cast<Eigen::Index>(sizeof(double)); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& d : model.dims()) {
    feed(d.inputs().data(), d.inputs().size());
    feed(d.targets().data(), d.targets().size());
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline nlohmann::json to_json(const StatisticalModel& model) {
  using nlohmann::json;
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  json j;
  j["schema"] = kModelSchema;
  j["episode"] = model.episode;
  j["beta"] = model.beta;
  j["rkhs_bound"] = model.rkhs_bound;
  j["noise_variance"] = model.noise_variance();
  j["input_dim"] = model.input_dim();
  j["training_digest"] = training_digest(model);
  const auto& first = model.dim(0);
  json inputs = json::array();
  for (Eigen::Index c = 0; c < first.inputs().cols(); ++c) inputs.push_back(vec(first.inputs().col(c)));
  j["inputs"] = std::move(inputs);
  json dims = json::array();
  for (const auto& d : model.dims()) {
    json dj;
    dj["log_signal_variance"] = d.kernel().log_signal_variance;
    dj["log_lengthscales"] = vec(d.kernel().log_lengthscales);
    dj["targets"] = vec(d.targets());
    dj["alpha"] = d.size() ? vec(d.weights()) : std::vector<double>{};
    dims.push_back(std::move(dj));
  }
  j["dims"] = std::move(dims);
  return j;
}

inline StatisticalModel model_from_json(const nlohmann::json& j) {
  if (j.value("schema", std::string()) != kModelSchema)
    throw std::invalid_argument("unsupported model snapshot schema");
  const int d = j.at("input_dim").get<int>();
  const auto& rows = j.at("inputs");
  Matrix Z(d, static_cast<Eigen::Index>(rows.size()));
  for (std::size_t c = 0; c < rows.size(); ++c)
    for (int i = 0; i < d; ++i) Z(i, static_cast<Eigen::Index>(c)) = rows[c].at(i).get<double>();
  const double noise = j.at("noise_variance").get<double>();
  std::vector<GpPosterior> dims;
  for (const auto& dj : j.at("dims")) {
    RbfKernel k;
    k.log_signal_variance = dj.at("log_signal_variance").get<double>();
    const auto ls = dj.at("log_lengthscales").get<std::vector<double>>();
    k.log_lengthscales = Eigen::Map<const Vector>(ls.data(), static_cast<Eigen::Index>(ls.size()));
    const auto ys = dj.at("targets").get<std::vector<double>>();
    const Vector y = Eigen::Map<const Vector>(ys.data(), static_cast<Eigen::Index>(ys.size()));
    dims.push_back(fit_posterior(Z, y, k, noise));
  }
  StatisticalModel model(std::move(dims));
  model.episode = j.at("episode").get<int>();
  model.beta = j.at("beta").get<double>();
  model.rkhs_bound = j.at("rkhs_bound").get<double>();
  if (training_digest(model) != j.at("training_digest").get<std::string>())
    throw std::invalid_argument("model snapshot digest mismatch");
  return model;
}

}  // namespace combrl
