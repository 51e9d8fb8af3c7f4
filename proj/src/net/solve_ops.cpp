#include "csou/net/solve_ops.hpp"

#include <memory>

#include "csou/errors.hpp"
#include "csou/simd/kernels.hpp"

namespace csou::net {
namespace {

using ad::Tape;
using ad::Tensor;
using ad::Var;

std::size_t check_grid(const char* op, const Tensor& t, std::size_t n) {
  if (t.rank() != 4 || t.dim(1) != 1 || t.dim(2) * t.dim(3) != n) {
    throw ShapeError(std::string(op) + ": expected [B,1,N1,N2] with N1*N2 = " + std::to_string(n) +
                     ", got " + ad::to_string(t.shape()));
  }
  return t.dim(0);
}

double positive_rho(const char* op, Var rho) {
  if (rho.size() != 1) throw ShapeError(std::string(op) + ": rho must hold one value");
  const double r = rho.value()[0];
  if (!(r > 0.0)) throw InvalidParameter(std::string(op) + ": rho must be positive");
  return r;
}

}  // namespace

Tensor adjoint_batch(const ForwardOperator& op, const Tensor& y, std::size_t n1, std::size_t n2) {
  if (y.rank() != 2 || y.dim(1) != op.rows() || n1 * n2 != op.cols()) {
    throw ShapeError("adjoint_batch: measurement batch " + ad::to_string(y.shape()) +
                     " does not match the operator");
  }
  const std::size_t b = y.dim(0);
  Tensor out({b, 1, n1, n2});
  for (std::size_t i = 0; i < b; ++i) {
    op.adjoint(y.data().subspan(i * op.rows(), op.rows()),
               out.data().subspan(i * op.cols(), op.cols()));
  }
  return out;
}

Var admm_x(const NormalSolver& solver, const Tensor& y, Var w, Var rho) {
  const ForwardOperator& op = solver.op();
  const std::size_t n = op.cols();
  const std::size_t m = op.rows();
  const std::size_t batch = check_grid("admm_x", w.value(), n);
  if (y.rank() != 2 || y.dim(0) != batch || y.dim(1) != m) {
    throw ShapeError("admm_x: measurements " + ad::to_string(y.shape()) + " for batch " +
                     std::to_string(batch));
  }
  const double r = positive_rho("admm_x", rho);
  Tensor out(w.shape());
  // Saved per sample for backward: K (y - A w).
  auto kres = std::make_shared<std::vector<double>>(batch * m);
  std::vector<double> res(m);
  for (std::size_t b = 0; b < batch; ++b) {
    auto wb = w.value().data().subspan(b * n, n);
    op.apply(wb, res);
    for (std::size_t i = 0; i < m; ++i) res[i] = y[b * m + i] - res[i];
    std::span<double> kb(kres->data() + b * m, m);
    solver.apply_k(res, r, kb);
    auto xb = out.data().subspan(b * n, n);
    op.adjoint(kb, xb);
    simd::axpy(1.0, wb, xb);
  }
  const std::size_t idw = w.id();
  const std::size_t idr = rho.id();
  const NormalSolver* s = &solver;
  return w.tape()->record(
      "admm_x", std::move(out), {w, rho},
      [s, kres, idw, idr, batch, n, m, r](Tape& t, const Tensor&, std::span<const double> g) {
        const ForwardOperator& op = s->op();
        std::vector<double> ag(m);
        std::vector<double> kag(m);
        std::vector<double> back(n);
        double grho = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
          auto gb = g.subspan(b * n, n);
          op.apply(gb, ag);
          s->apply_k(ag, r, kag);
          grho -= simd::dot(kag, std::span<const double>(kres->data() + b * m, m));
          if (t.requires_grad(idw)) {
            op.adjoint(kag, back);
            auto gw = t.grad_buffer(idw).subspan(b * n, n);
            simd::axpy(1.0, gb, gw);
            simd::axpy(-1.0, back, gw);
          }
        }
        if (t.requires_grad(idr)) t.grad_buffer(idr)[0] += grho;
      });
}

Var normal_solve(const NormalSolver& solver, Var rhs, Var rho) {
  const std::size_t n = solver.op().cols();
  const std::size_t batch = check_grid("normal_solve", rhs.value(), n);
  const double r = positive_rho("normal_solve", rho);
  Tensor out(rhs.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    solver.solve(rhs.value().data().subspan(b * n, n), r, out.data().subspan(b * n, n));
  }
  const std::size_t idx = rhs.id();
  const std::size_t idr = rho.id();
  const NormalSolver* s = &solver;
  return rhs.tape()->record(
      "normal_solve", std::move(out), {rhs, rho},
      [s, idx, idr, batch, n, r](Tape& t, const Tensor& x, std::span<const double> g) {
        std::vector<double> sg(n);
        double grho = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
          s->solve(g.subspan(b * n, n), r, sg);
          grho -= simd::dot(sg, x.data().subspan(b * n, n));
          if (t.requires_grad(idx)) simd::axpy(1.0, sg, t.grad_buffer(idx).subspan(b * n, n));
        }
        if (t.requires_grad(idr)) t.grad_buffer(idr)[0] += grho;
      });
}

}  // namespace csou::net
