#include "csou/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "csou/errors.hpp"
#include "csou/simd/kernels.hpp"

namespace csou::ad {
namespace {

void same_tape(const char* op, Var a, Var b) {
  if (!a.tape() || a.tape() != b.tape()) {
    throw AutodiffError(std::string(op) + ": operands on different tapes");
  }
}

// Flat input offsets for every output element under NumPy broadcasting.
struct Broadcast {
  Shape out;
  bool same = false;
  bool a_scalar = false;  // a has one element, b has the output shape
  bool b_scalar = false;
  std::vector<std::size_t> ia;
  std::vector<std::size_t> ib;
};

Broadcast broadcast(const char* op, const Shape& a, const Shape& b) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.same = true;
    return bc;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  if (numel(a) == 1 && b.size() == rank) {
    bc.out = b;
    bc.a_scalar = true;
    return bc;
  }
  if (numel(b) == 1 && a.size() == rank) {
    bc.out = a;
    bc.b_scalar = true;
    return bc;
  }
  Shape pa(rank - a.size(), 1);
  pa.insert(pa.end(), a.begin(), a.end());
  Shape pb(rank - b.size(), 1);
  pb.insert(pb.end(), b.begin(), b.end());
  bc.out.resize(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    if (pa[d] == pb[d] || pb[d] == 1) {
      bc.out[d] = pa[d];
    } else if (pa[d] == 1) {
      bc.out[d] = pb[d];
    } else {
      throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " +
                       to_string(b) + " along axis " + std::to_string(d));
    }
  }
  std::vector<std::size_t> sa(rank, 0);
  std::vector<std::size_t> sb(rank, 0);
  std::size_t ka = 1;
  std::size_t kb = 1;
  for (std::size_t d = rank; d-- > 0;) {
    if (pa[d] != 1) sa[d] = ka;
    if (pb[d] != 1) sb[d] = kb;
    ka *= pa[d];
    kb *= pb[d];
  }
  const std::size_t n = numel(bc.out);
  bc.ia.resize(n);
  bc.ib.resize(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0;
  std::size_t ob = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bc.ia[i] = oa;
    bc.ib[i] = ob;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < bc.out[d]) break;
      oa -= sa[d] * idx[d];
      ob -= sb[d] * idx[d];
      idx[d] = 0;
    }
  }
  return bc;
}

// f(a, b) -> value; da(a, b), db(a, b) -> local partials.
template <typename F, typename Da, typename Db>
Var binary(const char* op, Var a, Var b, F f, Da da, Db db) {
  same_tape(op, a, b);
  Tape& tape = *a.tape();
  auto bc = std::make_shared<Broadcast>(broadcast(op, a.shape(), b.shape()));
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  Tensor out(bc->out);
  const std::size_t n = out.size();
  if (bc->same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(va[i], vb[i]);
  } else if (bc->a_scalar) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(va[0], vb[i]);
  } else if (bc->b_scalar) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(va[i], vb[0]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(va[bc->ia[i]], vb[bc->ib[i]]);
  }
  const std::size_t ida = a.id();
  const std::size_t idb = b.id();
  return tape.record(op, std::move(out), {a, b},
                     [bc, ida, idb, da, db](Tape& t, const Tensor&, std::span<const double> g) {
                       const Tensor& xa = t.value(ida);
                       const Tensor& xb = t.value(idb);
                       const bool need_a = t.requires_grad(ida);
                       const bool need_b = t.requires_grad(idb);
                       std::span<double> ga = need_a ? t.grad_buffer(ida) : std::span<double>{};
                       std::span<double> gb = need_b ? t.grad_buffer(idb) : std::span<double>{};
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const std::size_t ia =
                             bc->same || bc->b_scalar ? i : (bc->a_scalar ? 0 : bc->ia[i]);
                         const std::size_t ib =
                             bc->same || bc->a_scalar ? i : (bc->b_scalar ? 0 : bc->ib[i]);
                         if (need_a) ga[ia] += g[i] * da(xa[ia], xb[ib]);
                         if (need_b) gb[ib] += g[i] * db(xa[ia], xb[ib]);
                       }
                     });
}

// f(x) -> y; df(x, y) -> dy/dx.
template <typename F, typename Df>
Var unary(const char* op, Var x, F f, Df df) {
  Tape& tape = *x.tape();
  const Tensor& v = x.value();
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = f(v[i]);
  const std::size_t idx = x.id();
  return tape.record(op, std::move(out), {x},
                     [idx, df](Tape& t, const Tensor& yv, std::span<const double> g) {
                       const Tensor& xv = t.value(idx);
                       std::span<double> gx = t.grad_buffer(idx);
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], yv[i]);
                     });
}

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_value(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(t.shape()));
  }
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var scale(Var a, double s) {
  return unary(
      "scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(
      "add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var silu(Var x) {
  return unary(
      "silu", x, [](double v) { return v * sigmoid_value(v); },
      [](double v, double) {
        const double s = sigmoid_value(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Var tanh(Var x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var x) {
  return unary(
      "sigmoid", x, [](double v) { return sigmoid_value(v); },
      [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var x) {
  return unary(
      "softplus", x, [](double v) { return softplus_value(v); },
      [](double v, double) { return sigmoid_value(v); });
}

Var relu(Var x) {
  return unary(
      "relu", x, [](double v) { return v < 0.0 ? 0.0 : v; },  // keeps NaN
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var soft_threshold(Var x, Var theta) {
  for (double t : theta.value().data()) {
    // NaN passes through so the trainer reports divergence.
    if (t < 0.0) throw InvalidParameter("soft_threshold: theta must be >= 0");
  }
  Var out = binary(
      "soft_threshold", x, theta,
      [](double v, double t) {
        const double mag = std::fabs(v) - t;
        return mag > 0.0 ? std::copysign(mag, v) : 0.0;
      },
      [](double v, double t) { return std::fabs(v) > t ? 1.0 : 0.0; },
      [](double v, double t) { return std::fabs(v) > t ? (v > 0.0 ? -1.0 : 1.0) : 0.0; });
  if (out.shape() != x.shape()) {
    throw ShapeError("soft_threshold: theta " + to_string(theta.shape()) +
                     " does not broadcast over x " + to_string(x.shape()));
  }
  return out;
}

Var reshape(Var x, Shape shape) {
  Tape& tape = *x.tape();
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t idx = x.id();
  return tape.record("reshape", std::move(out), {x},
                     [idx](Tape& t, const Tensor&, std::span<const double> g) { t.accumulate(idx, g); });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (first.size() < 2) throw ShapeError("concat: inputs need rank >= 2");
  Shape out_shape = first;
  out_shape[1] = 0;
  for (const Var& p : parts) {
    same_tape("concat", parts[0], p);
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch " + to_string(s));
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != 1 && s[d] != first[d]) {
        throw ShapeError("concat: mismatch along axis " + std::to_string(d) + ": " +
                         to_string(s) + " vs " + to_string(first));
      }
    }
    out_shape[1] += s[1];
  }
  const std::size_t batch = first[0];
  std::size_t inner = 1;
  for (std::size_t d = 2; d < first.size(); ++d) inner *= first[d];
  Tensor out(out_shape);
  std::vector<std::size_t> ids;
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const std::size_t w = p.shape()[1] * inner;
    const Tensor& v = p.value();
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(v.data().data() + b * w, w,
                  out.data().data() + b * out_shape[1] * inner + offset);
    }
    offset += w;
    ids.push_back(p.id());
    widths.push_back(w);
  }
  const std::size_t row = out_shape[1] * inner;
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape()->record(
      "concat", std::move(out), std::move(inputs),
      [ids, widths, batch, row](Tape& t, const Tensor&, std::span<const double> g) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (t.requires_grad(ids[k])) {
            std::span<double> gk = t.grad_buffer(ids[k]);
            for (std::size_t b = 0; b < batch; ++b) {
              for (std::size_t i = 0; i < widths[k]; ++i) {
                gk[b * widths[k] + i] += g[b * row + off + i];
              }
            }
          }
          off += widths[k];
        }
      });
}

Var index(Var x, std::size_t i) {
  if (i >= x.size()) throw ShapeError("index " + std::to_string(i) + " out of range");
  const std::size_t idx = x.id();
  return x.tape()->record("index", Tensor::scalar(x.value()[i]), {x},
                          [idx, i](Tape& t, const Tensor&, std::span<const double> g) {
                            t.grad_buffer(idx)[i] += g[0];
                          });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::size_t idx = x.id();
  return x.tape()->record("sum", Tensor::scalar(s), {x},
                          [idx](Tape& t, const Tensor&, std::span<const double> g) {
                            for (double& v : t.grad_buffer(idx)) v += g[0];
                          });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Var mse(Var a, Var b) {
  same_tape("mse", a, b);
  if (a.shape() != b.shape()) {
    throw ShapeError("mse: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const double n = static_cast<double>(a.size());
  const double value = simd::squared_distance(a.value().data(), b.value().data()) / n;
  const std::size_t ida = a.id();
  const std::size_t idb = b.id();
  return a.tape()->record("mse", Tensor::scalar(value), {a, b},
                          [ida, idb, n](Tape& t, const Tensor&, std::span<const double> g) {
                            const Tensor& va = t.value(ida);
                            const Tensor& vb = t.value(idb);
                            const double k = 2.0 * g[0] / n;
                            if (t.requires_grad(ida)) {
                              std::span<double> ga = t.grad_buffer(ida);
                              for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += k * (va[i] - vb[i]);
                            }
                            if (t.requires_grad(idb)) {
                              std::span<double> gb = t.grad_buffer(idb);
                              for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= k * (va[i] - vb[i]);
                            }
                          });
}

Var channel_mean(Var x) {
  const Tensor& v = x.value();
  require_rank("channel_mean", v, 4);
  const std::size_t B = v.dim(0), C = v.dim(1), P = v.dim(2) * v.dim(3);
  if (C == 0) throw ShapeError("channel_mean: no channels");
  Tensor out({B, 1, v.dim(2), v.dim(3)});
  const double inv = 1.0 / static_cast<double>(C);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t p = 0; p < P; ++p) out[b * P + p] += v[(b * C + c) * P + p];
    }
    for (std::size_t p = 0; p < P; ++p) out[b * P + p] *= inv;
  }
  const std::size_t idx = x.id();
  return x.tape()->record("channel_mean", std::move(out), {x},
                          [idx, B, C, P, inv](Tape& t, const Tensor&, std::span<const double> g) {
                            std::span<double> gx = t.grad_buffer(idx);
                            for (std::size_t b = 0; b < B; ++b) {
                              for (std::size_t c = 0; c < C; ++c) {
                                for (std::size_t p = 0; p < P; ++p) {
                                  gx[(b * C + c) * P + p] += inv * g[b * P + p];
                                }
                              }
                            }
                          });
}

Var channel_max(Var x) {
  const Tensor& v = x.value();
  require_rank("channel_max", v, 4);
  const std::size_t B = v.dim(0), C = v.dim(1), P = v.dim(2) * v.dim(3);
  if (C == 0) throw ShapeError("channel_max: no channels");
  Tensor out({B, 1, v.dim(2), v.dim(3)});
  auto arg = std::make_shared<std::vector<std::size_t>>(B * P, 0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t p = 0; p < P; ++p) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < C; ++c) {
        if (v[(b * C + c) * P + p] > v[(b * C + best) * P + p]) best = c;
      }
      (*arg)[b * P + p] = best;
      out[b * P + p] = v[(b * C + best) * P + p];
    }
  }
  const std::size_t idx = x.id();
  return x.tape()->record("channel_max", std::move(out), {x},
                          [idx, arg, C, P](Tape& t, const Tensor&, std::span<const double> g) {
                            std::span<double> gx = t.grad_buffer(idx);
                            for (std::size_t i = 0; i < g.size(); ++i) {
                              const std::size_t b = i / P;
                              const std::size_t p = i % P;
                              gx[(b * C + (*arg)[i]) * P + p] += g[i];
                            }
                          });
}

Var global_avg_pool(Var x) {
  const Tensor& v = x.value();
  require_rank("global_avg_pool", v, 4);
  const std::size_t B = v.dim(0), C = v.dim(1), P = v.dim(2) * v.dim(3);
  if (P == 0) throw ShapeError("global_avg_pool: empty spatial extent");
  Tensor out({B, C});
  const double inv = 1.0 / static_cast<double>(P);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    double s = 0.0;
    for (std::size_t p = 0; p < P; ++p) s += v[bc * P + p];
    out[bc] = s * inv;
  }
  const std::size_t idx = x.id();
  return x.tape()->record("global_avg_pool", std::move(out), {x},
                          [idx, P, inv](Tape& t, const Tensor&, std::span<const double> g) {
                            std::span<double> gx = t.grad_buffer(idx);
                            for (std::size_t bc = 0; bc < g.size(); ++bc) {
                              for (std::size_t p = 0; p < P; ++p) gx[bc * P + p] += inv * g[bc];
                            }
                          });
}

Var matmul(Var a, Var b) {
  same_tape("matmul", a, b);
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  require_rank("matmul", va, 2);
  require_rank("matmul", vb, 2);
  const std::size_t M = va.dim(0), K = va.dim(1), N = vb.dim(1);
  if (vb.dim(0) != K) {
    throw ShapeError("matmul: inner axis mismatch " + to_string(va.shape()) + " x " +
                     to_string(vb.shape()));
  }
  Tensor out({M, N});
  simd::gemm(M, N, K, va.data().data(), K, vb.data().data(), N, out.data().data(), N);
  const std::size_t ida = a.id();
  const std::size_t idb = b.id();
  return a.tape()->record(
      "matmul", std::move(out), {a, b}, [ida, idb, M, K, N](Tape& t, const Tensor&, std::span<const double> g) {
        const Tensor& xa = t.value(ida);
        const Tensor& xb = t.value(idb);
        if (t.requires_grad(ida)) {
          // dA = G B^T
          std::span<double> ga = t.grad_buffer(ida);
          for (std::size_t i = 0; i < M; ++i) {
            for (std::size_t k = 0; k < K; ++k) {
              ga[i * K + k] += simd::dot(g.subspan(i * N, N), xb.data().subspan(k * N, N));
            }
          }
        }
        if (t.requires_grad(idb)) {
          // dB = A^T G
          std::vector<double> at(K * M);
          for (std::size_t i = 0; i < M; ++i) {
            for (std::size_t k = 0; k < K; ++k) at[k * M + i] = xa[i * K + k];
          }
          simd::gemm(K, N, M, at.data(), M, g.data(), N, t.grad_buffer(idb).data(), N);
        }
      });
}

Var softmax(Var x) {
  const Tensor& v = x.value();
  if (v.rank() == 0 || v.shape().back() == 0) throw ShapeError("softmax: empty last axis");
  const std::size_t n = v.shape().back();
  const std::size_t rows = v.size() / n;
  Tensor out(v.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = v[r * n];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, v[r * n + i]);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      out[r * n + i] = std::exp(v[r * n + i] - mx);
      s += out[r * n + i];
    }
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] /= s;
  }
  const std::size_t idx = x.id();
  return x.tape()->record("softmax", std::move(out), {x},
                          [idx, n, rows](Tape& t, const Tensor& yv, std::span<const double> g) {
                            std::span<double> gx = t.grad_buffer(idx);
                            for (std::size_t r = 0; r < rows; ++r) {
                              double d = 0.0;
                              for (std::size_t i = 0; i < n; ++i) d += g[r * n + i] * yv[r * n + i];
                              for (std::size_t i = 0; i < n; ++i) {
                                gx[r * n + i] += yv[r * n + i] * (g[r * n + i] - d);
                              }
                            }
                          });
}

}  // namespace csou::ad
