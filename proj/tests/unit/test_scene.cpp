#include <cmath>
#include <numbers>
#include <vector>

#include "csou/errors.hpp"
#include "csou/rng.hpp"
#include "csou/scene.hpp"
#include "doctest.h"

using namespace csou;

namespace {

// Dense H (zero-padded convolution) and Phi (block mean) built straight from
// their definitions, independent of ForwardOperator.
std::vector<double> dense_blur(const SceneConfig& cfg, const PsfKernel& k) {
  const long n1 = static_cast<long>(cfg.hr_rows()), n2 = static_cast<long>(cfg.hr_cols());
  const long r = static_cast<long>(k.radius);
  const std::size_t n = cfg.grid_size();
  std::vector<double> h(n * n, 0.0);
  for (long i = 0; i < n1; ++i)
    for (long j = 0; j < n2; ++j)
      for (long u = 0; u < n1; ++u)
        for (long v = 0; v < n2; ++v) {
          const long dr = i - u, dc = j - v;
          if (std::abs(dr) > r || std::abs(dc) > r) continue;
          h[static_cast<std::size_t>(i * n2 + j) * n + static_cast<std::size_t>(u * n2 + v)] =
              k.at(dr, dc);
        }
  return h;
}

std::vector<double> dense_phi(const SceneConfig& cfg) {
  const std::size_t m = cfg.measurement_size(), n = cfg.grid_size(), c = cfg.ratio;
  std::vector<double> phi(m * n, 0.0);
  for (std::size_t r = 0; r < cfg.rows; ++r)
    for (std::size_t q = 0; q < cfg.cols; ++q)
      for (std::size_t a = 0; a < c; ++a)
        for (std::size_t b = 0; b < c; ++b)
          phi[(r * cfg.cols + q) * n + (r * c + a) * cfg.hr_cols() + q * c + b] =
              1.0 / static_cast<double>(c * c);
  return phi;
}

}  // namespace

TEST_SUITE("scene") {
  TEST_CASE("psf density and kernel taps") {
    CHECK(psf_density(0, 0, 0.5) == doctest::Approx(1.0 / (2 * std::numbers::pi * 0.25)));
    CHECK(psf_density(0, 0, 0.5) == doctest::Approx(0.63662).epsilon(1e-5));
    CHECK_THROWS_AS(psf_density(0, 0, 0.0), InvalidParameter);
    for (double sigma : {0.3, 0.75, 1.4}) {
      const PsfKernel k = make_psf_kernel(sigma, 6, 3);
      double sum = 0.0;
      for (double t : k.taps) sum += t;
      CHECK(std::fabs(sum - 1.0) <= 1e-9);
      const long r = 6;
      for (long a = -r; a <= r; ++a)
        for (long b = -r; b <= r; ++b) {
          CHECK(std::fabs(k.at(a, b) - k.at(-a, -b)) <= 1e-12);
          CHECK(std::fabs(k.at(a, b) - k.at(b, a)) <= 1e-12);
        }
    }
    CHECK_THROWS_AS(make_psf_kernel(-1.0, 3, 3), InvalidParameter);
    CHECK(SceneConfig{}.default_psf_radius() == 9);
  }

  TEST_CASE("embedding follows the cell assignment formula") {
    const SceneConfig cfg;
    SparseScene s;
    s.targets.push_back({4.0, 7.0, 200.0});
    HighResGrid g = embed_scene(s, cfg);
    CHECK(g.at(22, 13) == 200.0);
    CHECK(g.count_nonzero() == 1);

    s.targets = {{0.0, 0.0, 5.0}};
    CHECK(embed_scene(s, cfg).at(1, 1) == 5.0);

    s.targets = {{2.0, 2.0, 10.0}, {5.2, 6.9, 20.0}};
    CHECK(embed_scene(s, cfg).count_nonzero() == 2);

    s.targets = {{2.0, 2.0, 10.0}, {2.05, 2.05, 20.0}};
    CHECK_THROWS_AS(embed_scene(s, cfg), CollisionError);
    s.targets = {{11.5, 2.0, 10.0}};
    CHECK_THROWS_AS(embed_scene(s, cfg), BoundsError);
  }

  TEST_CASE("psf application: identity, zero and superposition") {
    const SceneConfig cfg;
    const PsfKernel k = make_psf_kernel(cfg);
    HighResGrid g(cfg);
    g.at(16, 16) = 1.0;
    const HighResGrid out = apply_psf(g, k);
    const long r = static_cast<long>(k.radius);
    for (long a = -r; a <= r; ++a)
      for (long b = -r; b <= r; ++b)
        CHECK(out.at(static_cast<std::size_t>(16 + a), static_cast<std::size_t>(16 + b)) ==
              doctest::Approx(k.at(a, b)).epsilon(1e-14));
    CHECK(apply_psf(HighResGrid(cfg), k).count_nonzero() == 0);

    HighResGrid two(cfg);
    two.at(3, 4) = 2.0;
    two.at(20, 30) = -1.5;
    const HighResGrid sum = apply_psf(two, k);
    for (long i = 0; i < 33; ++i)
      for (long j = 0; j < 33; ++j) {
        double ref = 0.0;
        if (std::abs(i - 3) <= r && std::abs(j - 4) <= r) ref += 2.0 * k.at(i - 3, j - 4);
        if (std::abs(i - 20) <= r && std::abs(j - 30) <= r) ref += -1.5 * k.at(i - 20, j - 30);
        CHECK(std::fabs(sum.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) - ref) <=
              1e-14);
      }
  }

  TEST_CASE("block averaging") {
    const SceneConfig cfg;
    HighResGrid ones(cfg.hr_rows(), cfg.hr_cols(), 1.0);
    const Measurement m = measure(ones, cfg);
    CHECK(m.rows() == 11);
    for (double v : m.values()) CHECK(v == doctest::Approx(1.0));

    HighResGrid g(cfg);
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = 0; b < 3; ++b) g.at(6 + a, 9 + b) = static_cast<double>(a * 3 + b) / 4.0;
    CHECK(measure(g, cfg).at(2, 3) == doctest::Approx(1.0));
    CHECK_THROWS_AS(measure(HighResGrid(32, 33), cfg), DimensionError);
  }

  TEST_CASE("forward operator equals dense Phi*H") {
    const SceneConfig cfg;
    const PsfKernel k = make_psf_kernel(cfg);
    const ForwardOperator op(cfg, k);
    const auto h = dense_blur(cfg, k);
    const auto phi = dense_phi(cfg);
    const std::size_t m = cfg.measurement_size(), n = cfg.grid_size();
    CounterRng rng(5);
    for (int trial = 0; trial < 3; ++trial) {
      HighResGrid x(cfg);
      for (double& v : x.values()) v = rng.uniform(-1.0, 1.0) * 100.0;
      std::vector<double> hx(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) hx[i] += h[i * n + j] * x.values()[j];
      const Measurement y = forward(x, k, cfg);
      std::vector<double> ay(m);
      op.apply(x.values(), ay);
      for (std::size_t i = 0; i < m; ++i) {
        double ref = 0.0;
        for (std::size_t j = 0; j < n; ++j) ref += phi[i * n + j] * hx[j];
        CHECK(std::fabs(y.values()[i] - ref) <= 1e-8);
        CHECK(std::fabs(ay[i] - ref) <= 1e-8);
      }
    }
  }

  TEST_CASE("linearity and adjoint identity") {
    const SceneConfig cfg;
    const PsfKernel k = make_psf_kernel(cfg);
    const ForwardOperator op(cfg, k);
    CounterRng rng(9);
    HighResGrid a(cfg), b(cfg), mix(cfg);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a.values()[i] = rng.normal();
      b.values()[i] = rng.normal();
      mix.values()[i] = 2.5 * a.values()[i] - 0.75 * b.values()[i];
    }
    const Measurement ma = forward(a, k, cfg), mb = forward(b, k, cfg), mm = forward(mix, k, cfg);
    for (std::size_t i = 0; i < mm.size(); ++i)
      CHECK(std::fabs(mm.values()[i] - (2.5 * ma.values()[i] - 0.75 * mb.values()[i])) <= 1e-8);

    std::vector<double> v(op.rows()), atv(op.cols());
    for (double& t : v) t = rng.normal();
    op.adjoint(v, atv);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < op.rows(); ++i) lhs += ma.values()[i] * v[i];
    for (std::size_t j = 0; j < op.cols(); ++j) rhs += a.values()[j] * atv[j];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    CHECK(op.lipschitz() > 0.0);
    CHECK(op.lipschitz() <= 1.0 / 9.0 + 1e-12);
  }

  TEST_CASE("noise") {
    const SceneConfig cfg;
    Measurement m(cfg);
    for (std::size_t i = 0; i < m.size(); ++i) m.values()[i] = static_cast<double>(i);
    CHECK(add_noise(m, 0.0, 1) == m);
    CHECK(add_noise(m, 2.0, 1) == add_noise(m, 2.0, 1));
    CHECK(!(add_noise(m, 2.0, 1) == add_noise(m, 2.0, 2)));
    CHECK_THROWS_AS(add_noise(m, -1.0, 1), InvalidParameter);

    const Measurement zero(1000, 1000);
    const double sigma = 2.0;
    const Measurement noisy = add_noise(zero, sigma, 77);
    double mean = 0.0;
    for (double v : noisy.values()) mean += v;
    mean /= static_cast<double>(noisy.size());
    CHECK(std::fabs(mean) <= 5.0 * sigma / 1000.0);
  }

  TEST_CASE("reprojection") {
    const SceneConfig cfg;
    CHECK(reproject(22, 13, cfg) == PixelIndex{7, 4});
    CHECK(reproject(1, 1, cfg) == PixelIndex{0, 0});
    CHECK(reproject(0, 0, cfg) == PixelIndex{0, 0});
    CHECK(reproject(32, 32, cfg) == PixelIndex{10, 10});
    for (std::size_t r = 0; r < 11; ++r)
      for (std::size_t c = 0; c < 11; ++c) {
        SparseScene s;
        s.targets = {{static_cast<double>(c), static_cast<double>(r), 1.0}};
        const auto [hr, hc] = target_cell(s.targets[0], cfg);
        CHECK(reproject(hr, hc, cfg) == PixelIndex{r, c});
      }
  }

  TEST_CASE("replication and cell centers") {
    const SceneConfig cfg;
    Measurement m(cfg);
    m.at(4, 7) = 3.0;
    const HighResGrid up = replicate(m, 3);
    CHECK(up.rows() == 33);
    CHECK(up.at(12, 21) == 3.0);
    CHECK(up.at(14, 23) == 3.0);
    CHECK(up.count_nonzero() == 9);
    const Point p = cell_center(22, 13, 3);
    CHECK(p.x == doctest::Approx(4.0));
    CHECK(p.y == doctest::Approx(7.0));
    CHECK(cfg.localization_bound() == doctest::Approx(std::sqrt(2.0) / 6.0));
  }
}
