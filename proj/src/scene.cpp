#include "csou/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "csou/errors.hpp"
#include "csou/rng.hpp"
#include "csou/simd/kernels.hpp"

namespace csou {

void SceneConfig::validate() const {
  if (rows < 1 || cols < 1) throw InvalidParameter("patch dimensions must be >= 1");
  if (ratio < 1 || ratio % 2 == 0) {
    throw InvalidParameter("sub-pixel ratio must be odd and >= 1, got " +
                           std::to_string(ratio));
  }
  if (!(sigma_psf > 0.0)) throw InvalidParameter("sigma_psf must be positive");
  if (!(noise_sigma >= 0.0)) throw InvalidParameter("noise_sigma must be >= 0");
  if (!(pixel_pitch > 0.0)) throw InvalidParameter("pixel_pitch must be positive");
}

std::size_t SceneConfig::default_psf_radius() const {
  return static_cast<std::size_t>(
      std::ceil(4.0 * static_cast<double>(ratio) * sigma_psf - 1e-12));
}

double SceneConfig::localization_bound() const {
  return std::numbers::sqrt2 / (2.0 * static_cast<double>(ratio)) * pixel_pitch;
}

Grid2D::Grid2D(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionError("grid buffer holds " + std::to_string(data_.size()) +
                         " values, expected " + std::to_string(rows_ * cols_));
  }
}

std::size_t Grid2D::count_nonzero() const {
  return static_cast<std::size_t>(
      std::count_if(data_.begin(), data_.end(), [](double v) { return v != 0.0; }));
}

double Grid2D::sum() const {
  double acc = 0.0;
  for (double v : data_) acc += v;
  return acc;
}

double psf_density(double d_row, double d_col, double sigma_psf) {
  if (!(sigma_psf > 0.0)) throw InvalidParameter("sigma_psf must be positive");
  const double var = sigma_psf * sigma_psf;
  return std::exp(-(d_row * d_row + d_col * d_col) / (2.0 * var)) /
         (2.0 * std::numbers::pi * var);
}

PsfKernel make_psf_kernel(double sigma_psf, std::size_t radius, std::size_t ratio) {
  if (!(sigma_psf > 0.0)) throw InvalidParameter("sigma_psf must be positive");
  if (radius < 1) throw InvalidParameter("PSF radius must be >= 1");
  if (ratio < 1) throw InvalidParameter("ratio must be >= 1");
  PsfKernel k;
  k.radius = radius;
  k.sigma_psf = sigma_psf;
  k.ratio = ratio;
  const std::size_t side = k.side();
  k.taps.resize(side * side);
  const double inv_ratio = 1.0 / static_cast<double>(ratio);
  const long r = static_cast<long>(radius);
  double total = 0.0;
  for (long dr = -r; dr <= r; ++dr) {
    for (long dc = -r; dc <= r; ++dc) {
      const double v = psf_density(static_cast<double>(dr) * inv_ratio,
                                   static_cast<double>(dc) * inv_ratio, sigma_psf);
      k.taps[static_cast<std::size_t>(dr + r) * side + static_cast<std::size_t>(dc + r)] = v;
      total += v;
    }
  }
  for (double& v : k.taps) v /= total;
  return k;
}

PsfKernel make_psf_kernel(const SceneConfig& cfg) {
  cfg.validate();
  return make_psf_kernel(cfg.sigma_psf, std::max<std::size_t>(1, cfg.default_psf_radius()),
                         cfg.ratio);
}

std::pair<std::size_t, std::size_t> target_cell(const Target& t, const SceneConfig& cfg) {
  const double c = static_cast<double>(cfg.ratio);
  const double offset = (c - 1.0) / 2.0;
  // Ties round half up.
  const double row = std::floor(c * t.y + offset + 0.5);
  const double col = std::floor(c * t.x + offset + 0.5);
  if (!std::isfinite(row) || !std::isfinite(col) || row < 0.0 || col < 0.0 ||
      row >= static_cast<double>(cfg.hr_rows()) ||
      col >= static_cast<double>(cfg.hr_cols())) {
    throw BoundsError("target (x=" + std::to_string(t.x) + ", y=" + std::to_string(t.y) +
                      ") maps outside the " + std::to_string(cfg.hr_rows()) + "x" +
                      std::to_string(cfg.hr_cols()) + " grid");
  }
  return {static_cast<std::size_t>(row), static_cast<std::size_t>(col)};
}

HighResGrid embed_scene(const SparseScene& scene, const SceneConfig& cfg) {
  cfg.validate();
  HighResGrid grid(cfg);
  std::vector<bool> taken(grid.size(), false);
  for (const Target& t : scene.targets) {
    if (!(t.s >= 0.0)) throw InvalidParameter("target intensity must be nonnegative");
    const auto [r, c] = target_cell(t, cfg);
    const std::size_t idx = r * grid.cols() + c;
    if (taken[idx]) {
      throw CollisionError("two targets share sub-pixel cell (" + std::to_string(r) + ", " +
                           std::to_string(c) + ")");
    }
    taken[idx] = true;
    grid.at(r, c) = t.s;
  }
  return grid;
}

HighResGrid apply_psf(const HighResGrid& grid, const PsfKernel& kernel) {
  if (kernel.taps.size() != kernel.side() * kernel.side()) {
    throw DimensionError("PSF kernel taps do not form a square of side 2r+1");
  }
  const long rows = static_cast<long>(grid.rows());
  const long cols = static_cast<long>(grid.cols());
  const long r = static_cast<long>(kernel.radius);
  const std::size_t side = kernel.side();
  HighResGrid out(grid.rows(), grid.cols());
  // Scatter each nonzero source; zero padding outside the grid.
  for (long sr = 0; sr < rows; ++sr) {
    for (long sc = 0; sc < cols; ++sc) {
      const double v = grid.at(static_cast<std::size_t>(sr), static_cast<std::size_t>(sc));
      if (v == 0.0) continue;
      const long c_lo = std::max(-r, -sc);
      const long c_hi = std::min(r, cols - 1 - sc);
      if (c_lo > c_hi) continue;
      for (long dr = std::max(-r, -sr); dr <= std::min(r, rows - 1 - sr); ++dr) {
        const double* taps =
            kernel.taps.data() + static_cast<std::size_t>(dr + r) * side +
            static_cast<std::size_t>(c_lo + r);
        double* dst = out.row(static_cast<std::size_t>(sr + dr)).data() + (sc + c_lo);
        simd::active().axpy(v, taps, dst, static_cast<std::size_t>(c_hi - c_lo + 1));
      }
    }
  }
  return out;
}

Measurement measure(const HighResGrid& blurred, const SceneConfig& cfg) {
  const std::size_t c = cfg.ratio;
  if (c == 0 || blurred.rows() % c != 0 || blurred.cols() % c != 0) {
    throw DimensionError("grid " + std::to_string(blurred.rows()) + "x" +
                         std::to_string(blurred.cols()) + " is not a multiple of ratio " +
                         std::to_string(c));
  }
  Measurement m(blurred.rows() / c, blurred.cols() / c);
  const double inv = 1.0 / static_cast<double>(c * c);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t q = 0; q < m.cols(); ++q) {
      double acc = 0.0;
      for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = 0; j < c; ++j) acc += blurred.at(r * c + i, q * c + j);
      }
      m.at(r, q) = acc * inv;
    }
  }
  return m;
}

Measurement add_noise(const Measurement& m, double noise_sigma, std::uint64_t seed) {
  if (!(noise_sigma >= 0.0)) throw InvalidParameter("noise_sigma must be >= 0");
  Measurement out = m;
  if (noise_sigma == 0.0) return out;
  CounterRng rng(seed);
  for (double& v : out.values()) v += noise_sigma * rng.normal();
  return out;
}

Measurement forward(const HighResGrid& x, const PsfKernel& kernel, const SceneConfig& cfg) {
  return measure(apply_psf(x, kernel), cfg);
}

PixelIndex reproject(std::size_t row, std::size_t col, const SceneConfig& cfg) {
  const long c = static_cast<long>(cfg.ratio);
  const long half = (c - 1) / 2;
  auto axis = [&](std::size_t v, std::size_t limit) {
    const long shifted = static_cast<long>(v) - half;
    // floor division for possibly negative numerators
    long q = shifted / c;
    if (shifted % c != 0 && shifted < 0) --q;
    q = std::clamp<long>(q, 0, static_cast<long>(limit) - 1);
    return static_cast<std::size_t>(q);
  };
  return {axis(row, cfg.rows), axis(col, cfg.cols)};
}

Point cell_center(std::size_t row, std::size_t col, std::size_t ratio) {
  const double c = static_cast<double>(ratio);
  const double offset = (c - 1.0) / 2.0;
  return {(static_cast<double>(col) - offset) / c, (static_cast<double>(row) - offset) / c};
}

HighResGrid replicate(const Measurement& m, std::size_t ratio) {
  HighResGrid out(m.rows() * ratio, m.cols() * ratio);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) = m.at(r / ratio, c / ratio);
  }
  return out;
}

ForwardOperator::ForwardOperator(const SceneConfig& cfg, const PsfKernel& kernel)
    : rows_(cfg.measurement_size()), cols_(cfg.grid_size()), matrix_(rows_ * cols_, 0.0) {
  cfg.validate();
  const long hr_rows = static_cast<long>(cfg.hr_rows());
  const long hr_cols = static_cast<long>(cfg.hr_cols());
  const long c = static_cast<long>(cfg.ratio);
  const long r = static_cast<long>(kernel.radius);
  const double inv = 1.0 / static_cast<double>(c * c);
  for (long sr = 0; sr < hr_rows; ++sr) {
    for (long sc = 0; sc < hr_cols; ++sc) {
      const std::size_t j = static_cast<std::size_t>(sr * hr_cols + sc);
      for (long dr = std::max(-r, -sr); dr <= std::min(r, hr_rows - 1 - sr); ++dr) {
        const long qr = sr + dr;
        for (long dc = std::max(-r, -sc); dc <= std::min(r, hr_cols - 1 - sc); ++dc) {
          const long qc = sc + dc;
          const std::size_t i = static_cast<std::size_t>((qr / c) * static_cast<long>(cfg.cols) + qc / c);
          matrix_[i * cols_ + j] += kernel.at(dr, dc) * inv;
        }
      }
    }
  }
}

ForwardOperator::ForwardOperator(std::size_t rows, std::size_t cols, std::vector<double> matrix)
    : rows_(rows), cols_(cols), matrix_(std::move(matrix)) {
  if (matrix_.size() != rows_ * cols_) throw DimensionError("operator matrix size mismatch");
}

void ForwardOperator::apply(std::span<const double> x, std::span<double> out) const {
  if (x.size() != cols_ || out.size() != rows_) throw DimensionError("apply: size mismatch");
  const auto& k = simd::active();
  for (std::size_t i = 0; i < rows_; ++i) out[i] = k.dot(matrix_.data() + i * cols_, x.data(), cols_);
}

void ForwardOperator::adjoint(std::span<const double> v, std::span<double> out) const {
  if (v.size() != rows_ || out.size() != cols_) throw DimensionError("adjoint: size mismatch");
  const auto& k = simd::active();
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < rows_; ++i) {
    if (v[i] != 0.0) k.axpy(v[i], matrix_.data() + i * cols_, out.data(), cols_);
  }
}

double ForwardOperator::lipschitz() const {
  std::vector<double> x(cols_, 1.0);
  std::vector<double> ax(rows_);
  double eig = 0.0;
  for (int it = 0; it < 500; ++it) {
    const double norm = std::sqrt(simd::dot(x, x));
    if (norm == 0.0) return 0.0;
    for (double& v : x) v /= norm;
    apply(x, ax);
    adjoint(ax, x);
    const double next = std::sqrt(simd::dot(x, x));
    if (std::fabs(next - eig) <= 1e-14 * next) {
      eig = next;
      break;
    }
    eig = next;
  }
  return eig;
}

}  // namespace csou
