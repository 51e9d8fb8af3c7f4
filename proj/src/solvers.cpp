#include "csou/solvers.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "csou/errors.hpp"
#include "csou/simd/kernels.hpp"

namespace csou {
namespace {

constexpr double kDivergenceNorm = 1e12;

double norm2(std::span<const double> v) { return std::sqrt(simd::dot(v, v)); }

void check_sizes(const AdmmState& s) {
  if (s.z.size() != s.x.size() || s.beta.size() != s.x.size()) {
    throw DimensionError("ADMM state vectors differ in length");
  }
}

}  // namespace

NormalSolver::NormalSolver(const ForwardOperator& op) : op_(&op), m_(op.rows()) {
  const std::size_t n = op.cols();
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> a(
      op.matrix().data(), static_cast<Eigen::Index>(m_), static_cast<Eigen::Index>(n));
  const Eigen::MatrixXd gram = a * a.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  if (eig.info() != Eigen::Success) throw Error("eigendecomposition of A A^T failed");
  eig_.resize(m_);
  basis_.resize(m_ * m_);
  for (std::size_t k = 0; k < m_; ++k) {
    eig_[k] = std::max(0.0, eig.eigenvalues()(static_cast<Eigen::Index>(k)));
    for (std::size_t i = 0; i < m_; ++i) {
      basis_[i * m_ + k] =
          eig.eigenvectors()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    }
  }
}

void NormalSolver::apply_k(std::span<const double> v, double rho, std::span<double> out) const {
  if (v.size() != m_ || out.size() != m_) throw DimensionError("apply_k: size mismatch");
  if (!(rho > 0.0)) throw InvalidParameter("rho must be positive");
  // coeff = diag(1/(e+rho)) U^T v, out = U coeff
  std::vector<double> coeff(m_, 0.0);
  const auto& k = simd::active();
  for (std::size_t i = 0; i < m_; ++i) {
    if (v[i] != 0.0) k.axpy(v[i], basis_.data() + i * m_, coeff.data(), m_);
  }
  for (std::size_t j = 0; j < m_; ++j) coeff[j] /= (eig_[j] + rho);
  for (std::size_t i = 0; i < m_; ++i) out[i] = k.dot(basis_.data() + i * m_, coeff.data(), m_);
}

void NormalSolver::admm_x(std::span<const double> y, std::span<const double> w, double rho,
                          std::span<double> out) const {
  const std::size_t n = op_->cols();
  if (y.size() != m_ || w.size() != n || out.size() != n) {
    throw DimensionError("admm_x: size mismatch");
  }
  std::vector<double> resid(m_);
  op_->apply(w, resid);
  for (std::size_t i = 0; i < m_; ++i) resid[i] = y[i] - resid[i];
  std::vector<double> kr(m_);
  apply_k(resid, rho, kr);
  op_->adjoint(kr, out);
  for (std::size_t j = 0; j < n; ++j) out[j] += w[j];
}

void NormalSolver::solve(std::span<const double> r, double rho, std::span<double> out) const {
  const std::size_t n = op_->cols();
  if (r.size() != n || out.size() != n) throw DimensionError("solve: size mismatch");
  std::vector<double> ar(m_);
  op_->apply(r, ar);
  std::vector<double> kar(m_);
  apply_k(ar, rho, kar);
  op_->adjoint(kar, out);
  const double inv = 1.0 / rho;
  for (std::size_t j = 0; j < n; ++j) out[j] = (r[j] - out[j]) * inv;
}

void SolverConfig::validate() const {
  if (!(lambda >= 0.0)) throw InvalidParameter("lambda must be >= 0");
  if (!(rho > 0.0)) throw InvalidParameter("rho must be > 0");
  if (!(step >= 0.0)) throw InvalidParameter("step size must be >= 0");
  if (max_iters < 1) throw InvalidParameter("max_iters must be >= 1");
  if (!(tol >= 0.0)) throw InvalidParameter("tol must be >= 0");
}

std::vector<double> soft_threshold(std::span<const double> v, double theta) {
  if (!(theta >= 0.0)) throw InvalidParameter("soft-threshold theta must be >= 0");
  std::vector<double> out(v.size());
  simd::soft_threshold(v, theta, out);
  return out;
}

std::vector<double> soft_threshold(std::span<const double> v, std::span<const double> theta) {
  if (theta.size() != v.size()) throw DimensionError("soft_threshold: theta size mismatch");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(theta[i] >= 0.0)) throw InvalidParameter("soft-threshold theta must be >= 0");
    const double mag = std::fabs(v[i]) - theta[i];
    out[i] = mag > 0.0 ? std::copysign(mag, v[i]) : 0.0;
  }
  return out;
}

std::vector<double> admm_x_update(const AdmmState& state, std::span<const double> y,
                                  const SolverConfig& cfg, const NormalSolver& normal) {
  check_sizes(state);
  std::vector<double> w(state.z.size());
  for (std::size_t j = 0; j < w.size(); ++j) w[j] = state.z[j] - state.beta[j];
  std::vector<double> x(w.size());
  normal.admm_x(y, w, cfg.rho, x);
  return x;
}

std::vector<double> admm_z_update_prox(const AdmmState& state, const SolverConfig& cfg) {
  check_sizes(state);
  std::vector<double> v(state.x.size());
  for (std::size_t j = 0; j < v.size(); ++j) v[j] = state.x[j] + state.beta[j];
  return soft_threshold(v, cfg.lambda / cfg.rho);
}

std::vector<double> correlate2d(std::span<const double> image, std::size_t rows, std::size_t cols,
                                const SparsifyingFilter& f) {
  if (f.side % 2 == 0 || f.taps.size() != f.side * f.side) {
    throw InvalidParameter("sparsifying filter must be odd-sided and square");
  }
  if (image.size() != rows * cols) throw DimensionError("correlate2d: image size mismatch");
  const long h = static_cast<long>(f.side / 2);
  std::vector<double> out(image.size(), 0.0);
  for (long r = 0; r < static_cast<long>(rows); ++r) {
    for (long c = 0; c < static_cast<long>(cols); ++c) {
      double acc = 0.0;
      for (long dr = -h; dr <= h; ++dr) {
        const long rr = r + dr;
        if (rr < 0 || rr >= static_cast<long>(rows)) continue;
        for (long dc = -h; dc <= h; ++dc) {
          const long cc = c + dc;
          if (cc < 0 || cc >= static_cast<long>(cols)) continue;
          acc += f.taps[static_cast<std::size_t>((dr + h) * static_cast<long>(f.side) + dc + h)] *
                 image[static_cast<std::size_t>(rr * static_cast<long>(cols) + cc)];
        }
      }
      out[static_cast<std::size_t>(r * static_cast<long>(cols) + c)] = acc;
    }
  }
  return out;
}

std::vector<double> correlate2d_adjoint(std::span<const double> image, std::size_t rows,
                                        std::size_t cols, const SparsifyingFilter& f) {
  SparsifyingFilter flipped = f;
  std::reverse(flipped.taps.begin(), flipped.taps.end());
  return correlate2d(image, rows, cols, flipped);
}

std::vector<double> admm_z_update_gradient(const AdmmState& state, const SolverConfig& cfg,
                                           std::size_t grid_rows, std::size_t grid_cols) {
  check_sizes(state);
  const double mu1 = cfg.mu1();
  const double mu2 = cfg.mu2();
  if (!(mu1 > 0.0 && mu1 < 1.0)) {
    throw InvalidParameter("gradient z-update needs 0 < 1 - step*rho < 1, got " +
                           std::to_string(mu1));
  }
  std::vector<double> z(state.z.size());
  for (std::size_t j = 0; j < z.size(); ++j) {
    z[j] = mu1 * state.z[j] + mu2 * (state.x[j] + state.beta[j]);
  }
  for (const SparsifyingFilter& f : cfg.filters) {
    const double weight = cfg.step * f.lambda;
    if (weight == 0.0) continue;
    std::vector<double> dz = correlate2d(state.z, grid_rows, grid_cols, f);
    if (cfg.activation) {
      for (double& v : dz) v = cfg.activation(v);
    }
    const std::vector<double> back = correlate2d_adjoint(dz, grid_rows, grid_cols, f);
    simd::axpy(-weight, back, z);
  }
  return z;
}

std::vector<double> admm_beta_update(const AdmmState& state, const SolverConfig& /*cfg*/) {
  check_sizes(state);
  std::vector<double> beta = state.beta;
  for (std::size_t j = 0; j < beta.size(); ++j) beta[j] += state.x[j] - state.z[j];
  return beta;
}

double lasso_objective(std::span<const double> x, std::span<const double> y,
                       const ForwardOperator& op, double lambda) {
  std::vector<double> ax(op.rows());
  op.apply(x, ax);
  double l1 = 0.0;
  for (double v : x) l1 += std::fabs(v);
  return 0.5 * simd::squared_distance(ax, y) + lambda * l1;
}

double augmented_lagrangian(const AdmmState& s, std::span<const double> y,
                            const ForwardOperator& op, double lambda, double rho) {
  check_sizes(s);
  std::vector<double> ax(op.rows());
  op.apply(s.x, ax);
  double l1 = 0.0;
  double coupling = 0.0;
  double penalty = 0.0;
  for (std::size_t j = 0; j < s.x.size(); ++j) {
    const double r = s.x[j] - s.z[j];
    l1 += std::fabs(s.z[j]);
    coupling += s.beta[j] * r;
    penalty += r * r;
  }
  return 0.5 * simd::squared_distance(ax, y) + lambda * l1 + rho * coupling + 0.5 * rho * penalty;
}

void admm_iterate(AdmmState& state, std::span<const double> y, const SolverConfig& cfg,
                  const NormalSolver& normal, std::size_t grid_rows, std::size_t grid_cols) {
  state.x = admm_x_update(state, y, cfg, normal);
  state.z = cfg.z_update == ZUpdate::kProx
                ? admm_z_update_prox(state, cfg)
                : admm_z_update_gradient(state, cfg, grid_rows, grid_cols);
  state.beta = admm_beta_update(state, cfg);
}

SolveResult admm_solve(const Measurement& y, const ForwardOperator& op, const NormalSolver& normal,
                       const SolverConfig& cfg, std::size_t grid_rows, std::size_t grid_cols,
                       const IterationCallback& on_iteration) {
  cfg.validate();
  if (y.size() != op.rows() || grid_rows * grid_cols != op.cols()) {
    throw DimensionError("admm_solve: operator does not match measurement/grid sizes");
  }
  AdmmState state(op.cols());
  SolveResult result;
  for (std::size_t it = 1; it <= cfg.max_iters; ++it) {
    const std::vector<double> z_prev = state.z;
    admm_iterate(state, y.values(), cfg, normal, grid_rows, grid_cols);
    const double z_norm = norm2(state.z);
    if (!std::isfinite(z_norm) || z_norm > kDivergenceNorm || norm2(state.x) > kDivergenceNorm) {
      throw DivergenceError("ADMM diverged at iteration " + std::to_string(it), it);
    }
    double change = 0.0;
    double residual = 0.0;
    for (std::size_t j = 0; j < state.z.size(); ++j) {
      const double d = state.z[j] - z_prev[j];
      const double r = state.x[j] - state.z[j];
      change += d * d;
      residual += r * r;
    }
    change = std::sqrt(change) / std::max(z_norm, 1e-12);
    residual = std::sqrt(residual);
    result.iterations = it;
    if (on_iteration) {
      IterationInfo info;
      info.iteration = it;
      info.objective = lasso_objective(state.z, y.values(), op, cfg.lambda);
      info.lagrangian = augmented_lagrangian(state, y.values(), op, cfg.lambda, cfg.rho);
      info.relative_change = change;
      info.primal_residual = residual;
      on_iteration(info);
    }
    if (change < cfg.tol && residual / std::max(z_norm, 1.0) < cfg.tol) {
      result.converged = true;
      break;
    }
  }
  result.estimate = HighResGrid(grid_rows, grid_cols, state.z);
  for (double& v : result.estimate.values()) v = std::max(v, 0.0);
  return result;
}

SolveResult ista_solve(const Measurement& y, const ForwardOperator& op, const SolverConfig& cfg,
                       std::size_t grid_rows, std::size_t grid_cols,
                       const IterationCallback& on_iteration) {
  cfg.validate();
  if (y.size() != op.rows() || grid_rows * grid_cols != op.cols()) {
    throw DimensionError("ista_solve: operator does not match measurement/grid sizes");
  }
  const double step = cfg.step > 0.0 ? cfg.step : 1.0 / op.lipschitz();
  std::vector<double> x(op.cols(), 0.0);
  std::vector<double> ax(op.rows());
  std::vector<double> grad(op.cols());
  std::vector<double> v(op.cols());
  SolveResult result;
  for (std::size_t it = 1; it <= cfg.max_iters; ++it) {
    op.apply(x, ax);
    for (std::size_t i = 0; i < ax.size(); ++i) ax[i] -= y.values()[i];
    op.adjoint(ax, grad);
    for (std::size_t j = 0; j < x.size(); ++j) v[j] = x[j] - step * grad[j];
    std::vector<double> next = soft_threshold(v, step * cfg.lambda);
    const double next_norm = norm2(next);
    if (!std::isfinite(next_norm) || next_norm > kDivergenceNorm) {
      throw DivergenceError("ISTA diverged at iteration " + std::to_string(it), it);
    }
    const double change = std::sqrt(simd::squared_distance(next, x)) / std::max(next_norm, 1e-12);
    x = std::move(next);
    result.iterations = it;
    if (on_iteration) {
      IterationInfo info;
      info.iteration = it;
      info.objective = lasso_objective(x, y.values(), op, cfg.lambda);
      info.relative_change = change;
      on_iteration(info);
    }
    if (change < cfg.tol) {
      result.converged = true;
      break;
    }
  }
  result.estimate = HighResGrid(grid_rows, grid_cols, std::move(x));
  for (double& v2 : result.estimate.values()) v2 = std::max(v2, 0.0);
  return result;
}

}  // namespace csou
