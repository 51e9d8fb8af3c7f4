#pragma once

// Differentiable wrappers around NormalSolver. Grids are [B,1,N1,N2],
// measurements [B,M] and rho a learnable [1] tensor.

#include "csou/autodiff/tape.hpp"
#include "csou/solvers.hpp"

namespace csou::net {

// x = (A^T A + rho I)^-1 (A^T y + rho w), y held constant.
ad::Var admm_x(const NormalSolver& solver, const ad::Tensor& y, ad::Var w, ad::Var rho);
// x = (A^T A + rho I)^-1 r
ad::Var normal_solve(const NormalSolver& solver, ad::Var r, ad::Var rho);
// A^T y for a batch of measurements [B,M] -> [B,1,N1,N2].
ad::Tensor adjoint_batch(const ForwardOperator& op, const ad::Tensor& y, std::size_t n1,
                         std::size_t n2);

}  // namespace csou::net
