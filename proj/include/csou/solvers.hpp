#pragma once

// Model-driven baselines for  min_x 1/2 ||A x - y||^2 + lambda ||x||_1
// with A = Phi * H materialized as a ForwardOperator.

#include <functional>
#include <span>
#include <vector>

#include "csou/scene.hpp"

namespace csou {

// Exact solves with (A^T A + rho I) for any rho > 0 through the eigen
// decomposition A A^T = U diag(e) U^T, which is only M x M. The push-through
// identities below avoid any 1/rho factor on the ADMM path, so rho -> 0 is
// well conditioned:
//   admm_x(y, w, rho) = w + A^T K (y - A w),   K = (A A^T + rho I)^-1
//                     = (A^T A + rho I)^-1 (A^T y + rho w)
//   solve(r, rho)     = (r - A^T K A r) / rho
class NormalSolver {
 public:
  explicit NormalSolver(const ForwardOperator& op);

  const ForwardOperator& op() const { return *op_; }
  std::span<const double> eigenvalues() const { return eig_; }

  // out = K v, v and out of length M.
  void apply_k(std::span<const double> v, double rho, std::span<double> out) const;
  void admm_x(std::span<const double> y, std::span<const double> w, double rho,
              std::span<double> out) const;
  void solve(std::span<const double> r, double rho, std::span<double> out) const;

 private:
  const ForwardOperator* op_;
  std::size_t m_;
  std::vector<double> basis_;  // U, row-major M x M (column k = eigenvector k)
  std::vector<double> eig_;
};

enum class ZUpdate { kProx, kGradient };

// One sparsifying filter D_l of the gradient-form z-update: an odd-sided
// 2-d kernel applied as zero-padded cross-correlation on the fine grid.
struct SparsifyingFilter {
  std::size_t side = 1;
  std::vector<double> taps;
  double lambda = 0.0;
};

struct SolverConfig {
  double lambda = 0.1;
  double rho = 0.01;
  double step = 0.0;  // l_r; 0 selects 1 / ||A||^2 for ISTA
  std::size_t max_iters = 200;
  double tol = 1e-6;
  ZUpdate z_update = ZUpdate::kProx;
  std::vector<SparsifyingFilter> filters;        // gradient z-update only
  std::function<double(double)> activation;      // empty = identity

  void validate() const;
  double mu1() const { return 1.0 - step * rho; }
  double mu2() const { return step * rho; }
};

// Scaled form: beta = mu / rho.
struct AdmmState {
  std::vector<double> x;
  std::vector<double> z;
  std::vector<double> beta;

  explicit AdmmState(std::size_t n = 0) : x(n, 0.0), z(n, 0.0), beta(n, 0.0) {}
};

struct IterationInfo {
  std::size_t iteration = 0;  // 1-based
  double objective = 0.0;     // 1/2||A v - y||^2 + lambda ||v||_1 at the estimate
  double lagrangian = 0.0;    // augmented Lagrangian (ADMM only)
  double relative_change = 0.0;
  double primal_residual = 0.0;  // ||x - z|| (ADMM only)
};

using IterationCallback = std::function<void(const IterationInfo&)>;

struct SolveResult {
  HighResGrid estimate;
  std::size_t iterations = 0;
  bool converged = false;
};

std::vector<double> soft_threshold(std::span<const double> v, double theta);
std::vector<double> soft_threshold(std::span<const double> v, std::span<const double> theta);

std::vector<double> admm_x_update(const AdmmState& state, std::span<const double> y,
                                  const SolverConfig& cfg, const NormalSolver& normal);
std::vector<double> admm_z_update_prox(const AdmmState& state, const SolverConfig& cfg);
std::vector<double> admm_z_update_gradient(const AdmmState& state, const SolverConfig& cfg,
                                           std::size_t grid_rows, std::size_t grid_cols);
// Scaled dual ascent: beta + (x - z).
std::vector<double> admm_beta_update(const AdmmState& state, const SolverConfig& cfg);

// 1/2||A x - y||^2 + lambda ||z||_1 + rho <beta, x - z> + rho/2 ||x - z||^2
double augmented_lagrangian(const AdmmState& state, std::span<const double> y,
                            const ForwardOperator& op, double lambda, double rho);
double lasso_objective(std::span<const double> x, std::span<const double> y,
                       const ForwardOperator& op, double lambda);

// Runs one full ADMM iteration in place (x, then z, then beta).
void admm_iterate(AdmmState& state, std::span<const double> y, const SolverConfig& cfg,
                  const NormalSolver& normal, std::size_t grid_rows, std::size_t grid_cols);

SolveResult admm_solve(const Measurement& y, const ForwardOperator& op, const NormalSolver& normal,
                       const SolverConfig& cfg, std::size_t grid_rows, std::size_t grid_cols,
                       const IterationCallback& on_iteration = {});
SolveResult ista_solve(const Measurement& y, const ForwardOperator& op, const SolverConfig& cfg,
                       std::size_t grid_rows, std::size_t grid_cols,
                       const IterationCallback& on_iteration = {});

// Zero-padded 2-d cross-correlation and its adjoint, used by the filters.
std::vector<double> correlate2d(std::span<const double> image, std::size_t rows, std::size_t cols,
                                const SparsifyingFilter& f);
std::vector<double> correlate2d_adjoint(std::span<const double> image, std::size_t rows,
                                        std::size_t cols, const SparsifyingFilter& f);

}  // namespace csou
