#pragma once

// Sub-pixel scene representation and the forward imaging chain
//   y = Phi * H(x) + n
// where x lives on a grid c times finer than the detector, H is a Gaussian
// blur and Phi averages each c x c block into one detector pixel.

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace csou {

struct SceneConfig {
  std::size_t rows = 11;  // M1
  std::size_t cols = 11;  // M2
  std::size_t ratio = 3;  // c, sub-pixel subdivision
  double sigma_psf = 0.75;  // low-res pixels
  double pixel_pitch = 1.0;  // D
  double noise_sigma = 2.0;

  void validate() const;
  std::size_t hr_rows() const { return rows * ratio; }
  std::size_t hr_cols() const { return cols * ratio; }
  std::size_t measurement_size() const { return rows * cols; }
  std::size_t grid_size() const { return hr_rows() * hr_cols(); }
  // ceil(4 * c * sigma_psf) high-res cells.
  std::size_t default_psf_radius() const;
  // Worst-case distance between a target and the center of its cell.
  double localization_bound() const;
};

struct Target {
  double x = 0.0;  // column coordinate, low-res pixels
  double y = 0.0;  // row coordinate, low-res pixels
  double s = 0.0;  // radiant intensity
};

struct SparseScene {
  std::vector<Target> targets;
  std::size_t size() const { return targets.size(); }
};

// Row-major 2-d array of doubles.
class Grid2D {
 public:
  Grid2D() = default;
  Grid2D(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Grid2D(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  std::size_t count_nonzero() const;
  double sum() const;

  friend bool operator==(const Grid2D&, const Grid2D&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Signal on the (c*M1) x (c*M2) sub-pixel grid.
class HighResGrid : public Grid2D {
 public:
  using Grid2D::Grid2D;
  explicit HighResGrid(const SceneConfig& cfg) : Grid2D(cfg.hr_rows(), cfg.hr_cols()) {}
};

// Observation on the M1 x M2 detector grid.
class Measurement : public Grid2D {
 public:
  using Grid2D::Grid2D;
  explicit Measurement(const SceneConfig& cfg) : Grid2D(cfg.rows, cfg.cols) {}
};

struct PsfKernel {
  std::size_t radius = 0;
  double sigma_psf = 0.0;
  std::size_t ratio = 1;
  std::vector<double> taps;  // (2r+1)^2, row-major, sums to 1

  std::size_t side() const { return 2 * radius + 1; }
  double at(long dr, long dc) const {
    return taps[static_cast<std::size_t>(dr + static_cast<long>(radius)) * side() +
                static_cast<std::size_t>(dc + static_cast<long>(radius))];
  }
};

// Gaussian point-spread density at an offset (low-res pixels) from the source.
double psf_density(double d_row, double d_col, double sigma_psf);

// Taps sampled at integer high-res offsets (offset / ratio in low-res units),
// then renormalized to unit sum.
PsfKernel make_psf_kernel(double sigma_psf, std::size_t radius, std::size_t ratio = 1);
PsfKernel make_psf_kernel(const SceneConfig& cfg);

std::pair<std::size_t, std::size_t> target_cell(const Target& t, const SceneConfig& cfg);
HighResGrid embed_scene(const SparseScene& scene, const SceneConfig& cfg);

HighResGrid apply_psf(const HighResGrid& grid, const PsfKernel& kernel);
Measurement measure(const HighResGrid& blurred, const SceneConfig& cfg);
Measurement add_noise(const Measurement& m, double noise_sigma, std::uint64_t seed);

// Noiseless y = Phi * H(x).
Measurement forward(const HighResGrid& x, const PsfKernel& kernel, const SceneConfig& cfg);

struct PixelIndex {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const PixelIndex&, const PixelIndex&) = default;
};

// High-res cell -> detector pixel: floor((v - floor((c-1)/2)) / c), clamped.
PixelIndex reproject(std::size_t row, std::size_t col, const SceneConfig& cfg);

// Continuous low-res coordinates of a high-res cell center.
struct Point {
  double x = 0.0;
  double y = 0.0;
};
Point cell_center(std::size_t row, std::size_t col, std::size_t ratio);

// Upsampling adjoint-style replication of a measurement onto the fine grid.
HighResGrid replicate(const Measurement& m, std::size_t ratio);

// Dense M x N matrix of Phi * H, row-major. Row i is the response of detector
// pixel i, column j the footprint of a unit impulse at fine cell j.
class ForwardOperator {
 public:
  ForwardOperator(const SceneConfig& cfg, const PsfKernel& kernel);
  // Wraps an explicit matrix (used for tests and degenerate operators).
  ForwardOperator(std::size_t rows, std::size_t cols, std::vector<double> matrix);

  std::size_t rows() const { return rows_; }  // M
  std::size_t cols() const { return cols_; }  // N
  std::span<const double> matrix() const { return matrix_; }
  std::span<const double> row(std::size_t i) const {
    return {matrix_.data() + i * cols_, cols_};
  }

  // out = A x
  void apply(std::span<const double> x, std::span<double> out) const;
  // out = A^T v
  void adjoint(std::span<const double> v, std::span<double> out) const;
  // Largest eigenvalue of A^T A (power iteration).
  double lipschitz() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> matrix_;
};

}  // namespace csou
