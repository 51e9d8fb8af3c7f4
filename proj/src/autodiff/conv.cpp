#include <algorithm>
#include <vector>

#include "csou/autodiff/ops.hpp"
#include "csou/errors.hpp"
#include "csou/simd/kernels.hpp"

namespace csou::ad {
namespace {

struct ConvGeometry {
  std::size_t batch, cin, h, w, cout, k, pad, ho, wo;
  bool per_sample;
  std::size_t rows() const { return cin * k * k; }
  std::size_t pixels() const { return ho * wo; }
};

// col[(ci*k + ki)*k + kj][oh*wo + ow] = x[ci][oh + ki - pad][ow + kj - pad], 0 outside.
void im2col(const ConvGeometry& g, const double* x, double* col) {
  const long pad = static_cast<long>(g.pad);
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const double* plane = x + ci * g.h * g.w;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        double* row = col + ((ci * g.k + ki) * g.k + kj) * g.pixels();
        const long dj = static_cast<long>(kj) - pad;
        const long lo = std::clamp<long>(-dj, 0, static_cast<long>(g.wo));
        const long hi = std::clamp<long>(static_cast<long>(g.w) - dj, lo, static_cast<long>(g.wo));
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          double* dst = row + oh * g.wo;
          const long ih = static_cast<long>(oh + ki) - pad;
          if (ih < 0 || ih >= static_cast<long>(g.h)) {
            std::fill_n(dst, g.wo, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(ih) * g.w;
          std::fill(dst, dst + lo, 0.0);
          std::copy(src + lo + dj, src + hi + dj, dst + lo);
          std::fill(dst + hi, dst + g.wo, 0.0);
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* col, double* x) {
  const long pad = static_cast<long>(g.pad);
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    double* plane = x + ci * g.h * g.w;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const double* row = col + ((ci * g.k + ki) * g.k + kj) * g.pixels();
        const long dj = static_cast<long>(kj) - pad;
        const long lo = std::clamp<long>(-dj, 0, static_cast<long>(g.wo));
        const long hi = std::clamp<long>(static_cast<long>(g.w) - dj, lo, static_cast<long>(g.wo));
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const long ih = static_cast<long>(oh + ki) - pad;
          if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
          double* dst = plane + static_cast<std::size_t>(ih) * g.w + dj;
          const double* src = row + oh * g.wo;
          for (long j = lo; j < hi; ++j) dst[j] += src[j];
        }
      }
    }
  }
}

ConvGeometry geometry(const Tensor& x, const Tensor& w, const Tensor* bias, std::size_t pad) {
  if (x.rank() != 4) throw ShapeError("conv2d: input must be [B,C,H,W], got " + to_string(x.shape()));
  ConvGeometry g{};
  g.batch = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.pad = pad;
  std::size_t o = 0;
  if (w.rank() == 5) {
    g.per_sample = true;
    if (w.dim(0) != g.batch) {
      throw ShapeError("conv2d: per-sample weight axis 0 is " + std::to_string(w.dim(0)) +
                       ", batch is " + std::to_string(g.batch));
    }
    o = 1;
  } else if (w.rank() != 4) {
    throw ShapeError("conv2d: weight must be rank 4 or 5, got " + to_string(w.shape()));
  }
  g.cout = w.dim(o);
  if (w.dim(o + 1) != g.cin) {
    throw ShapeError("conv2d: weight input-channel axis is " + std::to_string(w.dim(o + 1)) +
                     ", input has " + std::to_string(g.cin) + " channels");
  }
  g.k = w.dim(o + 2);
  if (w.dim(o + 3) != g.k) throw ShapeError("conv2d: kernel must be square, got " + to_string(w.shape()));
  if (g.k % 2 == 0) throw ShapeError("conv2d: kernel side must be odd, got " + std::to_string(g.k));
  if (g.h + 2 * pad < g.k || g.w + 2 * pad < g.k) {
    throw ShapeError("conv2d: kernel larger than padded input along the spatial axes");
  }
  g.ho = g.h + 2 * pad - g.k + 1;
  g.wo = g.w + 2 * pad - g.k + 1;
  if (bias && (bias->rank() != 1 || bias->dim(0) != g.cout)) {
    throw ShapeError("conv2d: bias must be [" + std::to_string(g.cout) + "], got " +
                     to_string(bias->shape()));
  }
  return g;
}

}  // namespace

Var conv2d(Var x, Var w, Var bias, std::size_t padding) {
  const bool has_bias = bias.tape() != nullptr;
  if (x.tape() != w.tape() || (has_bias && bias.tape() != x.tape())) {
    throw AutodiffError("conv2d: operands on different tapes");
  }
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const ConvGeometry g = geometry(xv, wv, has_bias ? &bias.value() : nullptr, padding);
  const std::size_t rows = g.rows();
  const std::size_t pix = g.pixels();
  const std::size_t wsize = g.cout * rows;

  Tensor out({g.batch, g.cout, g.ho, g.wo});
  std::vector<double> col(rows * pix);
  for (std::size_t b = 0; b < g.batch; ++b) {
    double* ob = out.data().data() + b * g.cout * pix;
    if (has_bias) {
      for (std::size_t co = 0; co < g.cout; ++co) std::fill_n(ob + co * pix, pix, bias.value()[co]);
    }
    im2col(g, xv.data().data() + b * g.cin * g.h * g.w, col.data());
    const double* wb = wv.data().data() + (g.per_sample ? b * wsize : 0);
    simd::gemm(g.cout, pix, rows, wb, rows, col.data(), pix, ob, pix);
  }

  std::vector<Var> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  const std::size_t idx = x.id();
  const std::size_t idw = w.id();
  const std::size_t idb = has_bias ? bias.id() : 0;
  return x.tape()->record(
      "conv2d", std::move(out), std::move(inputs),
      [g, idx, idw, idb, has_bias](Tape& t, const Tensor&, std::span<const double> grad) {
        const Tensor& xv = t.value(idx);
        const Tensor& wv = t.value(idw);
        const std::size_t rows = g.rows();
        const std::size_t pix = g.pixels();
        const std::size_t wsize = g.cout * rows;
        const bool need_x = t.requires_grad(idx);
        const bool need_w = t.requires_grad(idw);
        std::vector<double> col(rows * pix);
        std::vector<double> gcol(need_x ? rows * pix : 0);
        std::vector<double> wt(need_x ? wsize : 0);
        for (std::size_t b = 0; b < g.batch; ++b) {
          const double* gb = grad.data() + b * g.cout * pix;
          if (has_bias && t.requires_grad(idb)) {
            std::span<double> gbias = t.grad_buffer(idb);
            for (std::size_t co = 0; co < g.cout; ++co) {
              double s = 0.0;
              for (std::size_t p = 0; p < pix; ++p) s += gb[co * pix + p];
              gbias[co] += s;
            }
          }
          if (need_w) {
            im2col(g, xv.data().data() + b * g.cin * g.h * g.w, col.data());
            double* gw = t.grad_buffer(idw).data() + (g.per_sample ? b * wsize : 0);
            for (std::size_t co = 0; co < g.cout; ++co) {
              for (std::size_t r = 0; r < rows; ++r) {
                gw[co * rows + r] += simd::active().dot(gb + co * pix, col.data() + r * pix, pix);
              }
            }
          }
          if (need_x) {
            const double* wb = wv.data().data() + (g.per_sample ? b * wsize : 0);
            if (g.per_sample || b == 0) {
              for (std::size_t co = 0; co < g.cout; ++co) {
                for (std::size_t r = 0; r < rows; ++r) wt[r * g.cout + co] = wb[co * rows + r];
              }
            }
            std::fill(gcol.begin(), gcol.end(), 0.0);
            simd::gemm(rows, pix, g.cout, wt.data(), g.cout, gb, pix, gcol.data(), pix);
            col2im_add(g, gcol.data(), t.grad_buffer(idx).data() + b * g.cin * g.h * g.w);
          }
        }
      });
}

}  // namespace csou::ad
