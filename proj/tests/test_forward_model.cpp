#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>

#include <stdexcept>

#include "doctest.h"
#include "oat/forward_model.hpp"
#include "oat/rng.hpp"
#include "oat/selftest.hpp"

using namespace oat;

namespace {

SensorArray single_sensor_at(Vec2 p) {
  SensorArray arr;
  arr.positions = {p};
  arr.radius = std::hypot(p.x, p.y);
  arr.coverage_deg = 360.0;
  return arr;
}

}  // namespace

TEST_SUITE_BEGIN("forward_model");

TEST_CASE("single-pixel entry matches the hand-evaluated shell weight") {
  // one pixel at exactly 5 mm from the sensor, vs = 1490 m/s, dt = 10 ns
  const ImagingGrid grid = build_grid(2, 2, 60e-6, 60e-6);
  const Vec2 pixel = grid.pixel_center(0, 0);
  const double dist = 5e-3;
  const SensorArray sensor = single_sensor_at({pixel.x + dist, pixel.y});
  const double vs = 1490.0;
  const double dt = 1e-8;
  const ForwardOperator op = build_system_matrix(grid, sensor, vs, 512, dt);

  const auto k_expect = static_cast<int>(std::llround(dist / (vs * dt)));
  CHECK(k_expect == 336);
  const double value_expect =
      1.0 / (4.0 * std::numbers::pi * vs * vs) * grid.cell_volume() / (dt * dt) / dist;

  int k_found = -1;
  double value_found = 0.0;
  int entries_in_column = 0;
  for (int row = 0; row < op.shell.outerSize(); ++row)
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(op.shell, row); it;
         ++it)
      if (it.col() == grid.linear_index(0, 0)) {
        ++entries_in_column;
        k_found = row;
        value_found = it.value();
      }
  CHECK(entries_in_column == 1);
  CHECK(k_found == k_expect);
  CHECK(value_found == doctest::Approx(value_expect).epsilon(1e-12));
}

TEST_CASE("equidistant pixels share a time bin with equal weights") {
  const ImagingGrid grid = build_grid(2, 2, 60e-6, 60e-6);
  // sensor on the x axis: pixels (0,0) and (0,1) are mirror images
  const SensorArray sensor = single_sensor_at({8e-3, 0.0});
  const ForwardOperator op = build_system_matrix(grid, sensor, 1490.0, 1024, 1e-8);

  struct Entry {
    int row = -1;
    double value = 0.0;
  };
  Entry a, b;
  for (int row = 0; row < op.shell.outerSize(); ++row)
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(op.shell, row); it;
         ++it) {
      if (it.col() == grid.linear_index(0, 0)) a = {row, it.value()};
      if (it.col() == grid.linear_index(0, 1)) b = {row, it.value()};
    }
  CHECK(a.row == b.row);
  CHECK(a.value == b.value);
}

TEST_CASE("shell matrix stays within the one-entry-per-pair budget") {
  const ImagingGrid grid = build_grid(24, 24, 120e-6, 120e-6);
  const SensorArray sensors = place_sensors(6, 8e-3, 360.0, 0.0);
  const ForwardOperator op = build_system_matrix(grid, sensors, 1490.0, 512, 2e-8);

  CHECK(op.shell.nonZeros() + op.dropped_events ==
        static_cast<std::int64_t>(6) * grid.pixel_count());
  CHECK(op.dropped_events == 0);  // window covers the whole region here
  for (int row = 0; row < op.shell.outerSize(); ++row)
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(op.shell, row); it;
         ++it)
      CHECK(it.value() > 0.0);
}

TEST_CASE("an exact half-bin tie goes to the lower bin") {
  // dyadic geometry so the time-of-flight is exactly k + 1/2 bins
  const ImagingGrid grid = build_grid(2, 2, 1.0, 1.0);
  const SensorArray sensor = single_sensor_at({2.0, -0.5});  // 2.5 m from pixel (0,0)
  const ForwardOperator op = build_system_matrix(grid, sensor, 1.0, 8, 1.0);

  int k_found = -1;
  for (int row = 0; row < op.shell.outerSize(); ++row)
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(op.shell, row); it;
         ++it)
      if (it.col() == grid.linear_index(0, 0)) k_found = row;
  CHECK(k_found == 2);  // not rounded up to 3

  // pixel (1,0) sits at exactly 1.5 m, same rule
  int k_other = -1;
  for (int row = 0; row < op.shell.outerSize(); ++row)
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(op.shell, row); it;
         ++it)
      if (it.col() == grid.linear_index(1, 0)) k_other = row;
  CHECK(k_other == 1);
}

TEST_CASE("shape mismatches are rejected") {
  const ImagingGrid grid = build_grid(12, 12, 120e-6, 120e-6);
  const SensorArray sensors = place_sensors(4, 8e-3, 360.0, 0.0);
  const ForwardOperator op = build_system_matrix(grid, sensors, 1490.0, 256, 2e-8);
  CHECK_THROWS_AS(apply_forward(op, Image(10, 12)), std::invalid_argument);
  CHECK_THROWS_AS(apply_adjoint(op, Sinogram(4, 128, 2e-8)), std::invalid_argument);
  CHECK_THROWS_AS(apply_adjoint(op, Sinogram(5, 256, 2e-8)), std::invalid_argument);
}

TEST_CASE("arrivals past the recording window are dropped and counted") {
  const ImagingGrid grid = build_grid(16, 16, 120e-6, 120e-6);
  const SensorArray sensors = place_sensors(2, 8e-3, 360.0, 0.0);
  const double vs = 1490.0;
  const double dt = 2e-8;
  const int n_t = 260;  // cuts through the middle of the region

  std::int64_t expect_dropped = 0;
  for (const auto& rd : sensors.positions)
    for (int j = 0; j < grid.ny; ++j)
      for (int i = 0; i < grid.nx; ++i) {
        const Vec2 rj = grid.pixel_center(i, j);
        const double bin = std::hypot(rd.x - rj.x, rd.y - rj.y) / (vs * dt);
        if (static_cast<int>(std::ceil(bin - 0.5)) >= n_t) ++expect_dropped;
      }
  REQUIRE(expect_dropped > 0);

  const ForwardOperator op = build_system_matrix(grid, sensors, vs, n_t, dt);
  CHECK(op.dropped_events == expect_dropped);
  CHECK(op.shell.nonZeros() + op.dropped_events ==
        static_cast<std::int64_t>(2) * grid.pixel_count());
}

TEST_CASE("a sensor inside the imaging region is invalid geometry") {
  const ImagingGrid grid = build_grid(16, 16, 120e-6, 120e-6);
  const SensorArray inside = single_sensor_at({0.0, 0.5e-3});
  CHECK_THROWS_AS(build_system_matrix(grid, inside, 1490.0, 256, 2e-8),
                  std::invalid_argument);
}

TEST_CASE("time derivative stencil and its adjoint") {
  Sinogram s(1, 3, 1e-8);
  s.data = {0.0, 1.0, 0.0};
  const Sinogram d = apply_time_derivative(s);
  CHECK(d.data[0] == doctest::Approx(0.5));
  CHECK(d.data[1] == doctest::Approx(0.0));
  CHECK(d.data[2] == doctest::Approx(-0.5));

  // a constant channel differentiates to zero everywhere the stencil is
  // interior; the zero padding shows up only at the two boundary samples
  Sinogram constant(3, 16, 1e-8);
  for (double& v : constant.data) v = 2.5;
  const Sinogram dc = apply_time_derivative(constant);
  for (int l = 0; l < 3; ++l) {
    CHECK(dc.at(l, 0) == doctest::Approx(1.25));
    CHECK(dc.at(l, 15) == doctest::Approx(-1.25));
    for (int k = 1; k < 15; ++k) CHECK(dc.at(l, k) == 0.0);
  }

  // adjoint identity on random vectors
  Rng rng(99);
  Sinogram x(2, 64, 1e-8), y(2, 64, 1e-8);
  for (double& v : x.data) v = rng.gaussian();
  for (double& v : y.data) v = rng.gaussian();
  const Sinogram dx = apply_time_derivative(x);
  const Sinogram dty = adjoint_time_derivative(y);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    lhs += dx.data[i] * y.data[i];
    rhs += x.data[i] * dty.data[i];
  }
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));

  Sinogram tiny(1, 2, 1e-8);
  CHECK_THROWS_AS(apply_time_derivative(tiny), std::invalid_argument);
}

TEST_CASE("forward map is linear and zero on zero images") {
  const ImagingGrid grid = build_grid(12, 12, 120e-6, 120e-6);
  const SensorArray sensors = place_sensors(4, 8e-3, 360.0, 0.0);
  const ForwardOperator op = build_system_matrix(grid, sensors, 1490.0, 512, 2e-8);

  const Sinogram zero = apply_forward(op, Image(12, 12));
  for (double v : zero.data) CHECK(v == 0.0);

  Rng rng(3);
  Image a(12, 12), b(12, 12);
  for (double& v : a.data) v = rng.gaussian();
  for (double& v : b.data) v = rng.gaussian();
  const Sinogram sa = apply_forward(op, a);
  const Sinogram sb = apply_forward(op, b);
  Image combo(12, 12);
  for (std::size_t i = 0; i < combo.size(); ++i) combo.data[i] = 2.0 * a.data[i] - 3.0 * b.data[i];
  const Sinogram sc = apply_forward(op, combo);
  double worst = 0.0;
  for (std::size_t i = 0; i < sc.size(); ++i)
    worst = std::max(worst, std::abs(sc.data[i] - (2.0 * sa.data[i] - 3.0 * sb.data[i])));
  CHECK(worst < 1e-12);
}

TEST_CASE("single-pixel image produces the derivative of an arrival spike") {
  const ImagingGrid grid = build_grid(2, 2, 60e-6, 60e-6);
  const Vec2 pixel = grid.pixel_center(0, 0);
  const double dist = 5e-3;
  const SensorArray sensor = single_sensor_at({pixel.x + dist, pixel.y});
  const double vs = 1490.0, dt = 1e-8;
  const ForwardOperator op = build_system_matrix(grid, sensor, vs, 512, dt);

  Image img(2, 2);
  img.at(0, 0) = 1.0;
  const Sinogram s = apply_forward(op, img);

  // other pixels are dark, so the channel is the stencil of one shell spike
  const int k0 = 336;
  const double amp =
      1.0 / (4.0 * std::numbers::pi * vs * vs) * grid.cell_volume() / (dt * dt) / dist;
  CHECK(s.at(0, k0 - 1) == doctest::Approx(amp / 2.0).epsilon(1e-12));
  CHECK(s.at(0, k0) == doctest::Approx(0.0));
  CHECK(s.at(0, k0 + 1) == doctest::Approx(-amp / 2.0).epsilon(1e-12));
}

TEST_CASE("composite operator passes the dot-product adjoint test") {
  const ImagingGrid grid = build_grid(20, 20, 120e-6, 120e-6);
  const SensorArray sensors = place_sensors(5, 8e-3, 360.0, 0.0);
  const ForwardOperator op = build_system_matrix(grid, sensors, 1490.0, 384, 2e-8);
  CHECK(adjoint_defect(op, 20, 1234) < 1e-12);
}

TEST_CASE("back-projected point inherits the ring symmetry") {
  const ImagingGrid grid = build_grid(33, 33, 120e-6, 120e-6);
  const SensorArray sensors = place_sensors(8, 8e-3, 360.0, 0.0);
  const ForwardOperator op = build_system_matrix(grid, sensors, 1490.0, 512, 2e-8);

  Image point(33, 33);
  point.at(16, 16) = 1.0;  // exact grid center
  const Image back = apply_adjoint(op, apply_forward(op, point));

  double max_abs = 0.0;
  for (double v : back.data) max_abs = std::max(max_abs, std::abs(v));
  double asym = 0.0;
  for (int j = 0; j < 33; ++j)
    for (int i = 0; i < 33; ++i) {
      asym = std::max(asym, std::abs(back.at(i, j) - back.at(32 - i, j)));
      asym = std::max(asym, std::abs(back.at(i, j) - back.at(i, 32 - j)));
      asym = std::max(asym, std::abs(back.at(i, j) - back.at(j, 32 - i)));
    }
  CHECK(asym < 1e-9 * max_abs);
}

TEST_CASE("noise injection realizes the requested SNR and is seeded") {
  Sinogram s(16, 8192, 1e-8);
  Rng rng(5);
  for (std::size_t i = 0; i < s.size(); ++i)
    s.data[i] = std::sin(0.02 * static_cast<double>(i)) + 0.3 * rng.gaussian();

  const Sinogram noisy = add_noise(s, 40.0, 777);
  double p_sig = 0.0, p_noise = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    p_sig += s.data[i] * s.data[i];
    p_noise += (noisy.data[i] - s.data[i]) * (noisy.data[i] - s.data[i]);
  }
  const double realized = 10.0 * std::log10(p_sig / p_noise);
  CHECK(realized > 39.5);
  CHECK(realized < 40.5);

  const Sinogram again = add_noise(s, 40.0, 777);
  CHECK(std::memcmp(noisy.data.data(), again.data.data(),
                    noisy.data.size() * sizeof(double)) == 0);

  const Sinogram infinite = add_noise(s, std::numeric_limits<double>::infinity(), 777);
  CHECK(std::memcmp(infinite.data.data(), s.data.data(), s.data.size() * sizeof(double)) == 0);

  CHECK_THROWS_AS(add_noise(Sinogram(2, 16, 1e-8), 40.0, 1), std::invalid_argument);
}

TEST_CASE("noise is independent across channels") {
  Sinogram s(2, 1024, 1e-8);
  for (std::size_t i = 0; i < s.size(); ++i) s.data[i] = std::sin(0.05 * static_cast<double>(i));
  const Sinogram noisy = add_noise(s, 20.0, 4242);
  std::vector<double> n0(1024), n1(1024);
  for (int k = 0; k < 1024; ++k) {
    n0[static_cast<std::size_t>(k)] = noisy.at(0, k) - s.at(0, k);
    n1[static_cast<std::size_t>(k)] = noisy.at(1, k) - s.at(1, k);
  }
  double m0 = 0.0, m1 = 0.0;
  for (int k = 0; k < 1024; ++k) {
    m0 += n0[static_cast<std::size_t>(k)] / 1024.0;
    m1 += n1[static_cast<std::size_t>(k)] / 1024.0;
  }
  double cov = 0.0, v0 = 0.0, v1 = 0.0;
  for (int k = 0; k < 1024; ++k) {
    const double a = n0[static_cast<std::size_t>(k)] - m0;
    const double b = n1[static_cast<std::size_t>(k)] - m1;
    cov += a * b;
    v0 += a * a;
    v1 += b * b;
  }
  CHECK(std::abs(cov / std::sqrt(v0 * v1)) < 0.05);
}

TEST_CASE("synthesis with zero uncertainty equals the direct pipeline") {
  const ImagingGrid grid = build_grid(16, 16, 120e-6, 120e-6);
  NominalParams nominal;
  nominal.n_t = 384;

  EnvironmentSpec spec;
  spec.n_detectors = 4;
  spec.snr_lo_db = 50.0;
  spec.snr_hi_db = 50.0;
  const RealizedEnvironment env = realize_environment(spec, nominal.vs, nominal.radius, 9);

  Image phantom(16, 16);
  phantom.at(8, 5) = 1.0;
  phantom.at(3, 12) = 0.5;

  const Sinogram via_env = synthesize_sinogram(phantom, env, grid, nominal, 31337);

  const SensorArray sensors = place_sensors(4, nominal.radius, 360.0, 0.0);
  const ForwardOperator op =
      build_system_matrix(grid, sensors, nominal.vs, nominal.n_t, nominal.dt);
  const Sinogram direct = add_noise(
      bandpass_filter(apply_forward(op, phantom), nominal.f_lo_hz, nominal.f_hi_hz), 50.0,
      31337);
  REQUIRE(via_env.size() == direct.size());
  CHECK(std::memcmp(via_env.data.data(), direct.data.data(),
                    direct.data.size() * sizeof(double)) == 0);
}

TEST_CASE("an all-zero phantom with noise disabled synthesizes silence") {
  const ImagingGrid grid = build_grid(16, 16, 120e-6, 120e-6);
  NominalParams nominal;
  nominal.n_t = 384;
  EnvironmentSpec spec;
  spec.n_detectors = 4;
  RealizedEnvironment env = realize_environment(spec, nominal.vs, nominal.radius, 9);
  env.snr_db = std::numeric_limits<double>::infinity();
  const Sinogram s = synthesize_sinogram(Image(16, 16), env, grid, nominal, 1);
  for (double v : s.data) CHECK(v == 0.0);
}

TEST_CASE("a sound-speed error shifts arrivals by the expected fraction") {
  const ImagingGrid grid = build_grid(16, 16, 120e-6, 120e-6);
  NominalParams nominal;
  nominal.n_t = 512;
  nominal.dt = 2e-8;  // keeps the arrival inside the recording window

  EnvironmentSpec spec;
  spec.n_detectors = 1;
  RealizedEnvironment env = realize_environment(spec, nominal.vs, nominal.radius, 9);
  env.snr_db = std::numeric_limits<double>::infinity();

  Image phantom(16, 16);
  phantom.at(2, 8) = 1.0;

  const Sinogram reference = synthesize_sinogram(phantom, env, grid, nominal, 1);
  RealizedEnvironment fast = env;
  fast.vs_true = nominal.vs * 1.02;
  const Sinogram shifted = synthesize_sinogram(phantom, fast, grid, nominal, 1);

  // cross-correlation lag ~ 2% of the time of flight
  const Vec2 pixel = grid.pixel_center(2, 8);
  const Vec2 rd = env.sensors_true.positions.front();
  const double tof_bins = std::hypot(rd.x - pixel.x, rd.y - pixel.y) / (nominal.vs * nominal.dt);
  const int expected_lag = static_cast<int>(std::round(tof_bins * (1.0 - 1.0 / 1.02)));

  int best_lag = 0;
  double best = -1e300;
  for (int lag = -20; lag <= 20; ++lag) {
    double acc = 0.0;
    for (int k = 0; k < nominal.n_t; ++k) {
      const int k2 = k + lag;
      if (k2 < 0 || k2 >= nominal.n_t) continue;
      acc += reference.at(0, k) * shifted.at(0, k2);
    }
    if (acc > best) {
      best = acc;
      best_lag = lag;
    }
  }
  CHECK(std::abs(best_lag - (-expected_lag)) <= 1);
}

TEST_CASE("sensor subdivision spans the aperture tangentially") {
  const SensorArray one = subdivide_sensor({10e-3, 0.0}, 2e-3, 1);
  REQUIRE(one.count() == 1);
  CHECK(one.positions[0].x == doctest::Approx(10e-3));
  CHECK(one.positions[0].y == doctest::Approx(0.0));
  CHECK_FALSE(one.perturbed);

  const SensorArray three = subdivide_sensor({10e-3, 0.0}, 2e-3, 3);
  REQUIRE(three.count() == 3);
  CHECK(three.positions[0].y == doctest::Approx(-1e-3));
  CHECK(three.positions[1].y == doctest::Approx(0.0));
  CHECK(three.positions[2].y == doctest::Approx(1e-3));
  for (const auto& p : three.positions) CHECK(p.x == doctest::Approx(10e-3));

  CHECK_THROWS_AS(subdivide_sensor({10e-3, 0.0}, 1e-3, 0), std::invalid_argument);
}

TEST_CASE("finite-aperture averaging lowers the off-axis peak") {
  const ImagingGrid grid = build_grid(16, 16, 120e-6, 120e-6);
  const double vs = 1490.0, dt = 1e-8;
  const int n_t = 1024;

  Image phantom(16, 16);
  phantom.at(8, 14) = 1.0;  // off the sensor axis

  const SensorArray point = single_sensor_at({10e-3, 0.0});
  const ForwardOperator op_point = build_system_matrix(grid, point, vs, n_t, dt);
  const Sinogram s_point = apply_forward(op_point, phantom);

  const SensorArray elements = subdivide_sensor({10e-3, 0.0}, 3e-3, 5);
  const ForwardOperator op_sub = build_system_matrix(grid, elements, vs, n_t, dt);
  const Sinogram s_sub = apply_forward(op_sub, phantom);

  double peak_point = 0.0;
  for (double v : s_point.data) peak_point = std::max(peak_point, std::abs(v));
  double peak_avg = 0.0;
  for (int k = 0; k < n_t; ++k) {
    double acc = 0.0;
    for (int l = 0; l < 5; ++l) acc += s_sub.at(l, k);
    peak_avg = std::max(peak_avg, std::abs(acc / 5.0));
  }
  CHECK(peak_avg < peak_point);
}

TEST_SUITE_END();
