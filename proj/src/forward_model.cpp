#include "oat/forward_model.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "oat/rng.hpp"
#include "oat/signal.hpp"

namespace oat {

namespace {

void check_shapes(const ForwardOperator& op, const Image& image) {
  if (image.nx != op.grid.nx || image.ny != op.grid.ny)
    throw std::invalid_argument("apply_forward: image shape does not match the operator grid");
}

void check_shapes(const ForwardOperator& op, const Sinogram& s) {
  if (s.n_d != op.n_d || s.n_t != op.n_t)
    throw std::invalid_argument("apply_adjoint: sinogram shape does not match the operator");
}

}  // namespace

ForwardOperator build_system_matrix(const ImagingGrid& grid, const SensorArray& sensors,
                                    double vs, int n_t, double dt) {
  if (vs <= 0.0) throw std::invalid_argument("build_system_matrix: vs must be positive");
  if (n_t < 1) throw std::invalid_argument("build_system_matrix: n_t must be >= 1");
  if (dt <= 0.0) throw std::invalid_argument("build_system_matrix: dt must be positive");
  if (sensors.positions.empty())
    throw std::invalid_argument("build_system_matrix: empty sensor array");

  // sensors must sit outside the image region; a sensor inside would put a
  // pixel at zero distance and break the 1/|r| weight
  const double half_x = (grid.nx - 1) / 2.0 * grid.dx + grid.dx / 2.0;
  const double half_y = (grid.ny - 1) / 2.0 * grid.dy + grid.dy / 2.0;
  for (const auto& p : sensors.positions) {
    if (std::abs(p.x - grid.center.x) <= half_x && std::abs(p.y - grid.center.y) <= half_y)
      throw std::invalid_argument("build_system_matrix: sensor lies inside the image region");
  }

  ForwardOperator op;
  op.vs = vs;
  op.dt = dt;
  op.n_t = n_t;
  op.n_d = sensors.count();
  op.grid = grid;
  op.sensors = sensors;

  const int n_pix = grid.pixel_count();
  const double amp = 1.0 / (4.0 * std::numbers::pi * vs * vs) * grid.cell_volume() / (dt * dt);

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(op.n_d) * n_pix);
  std::int64_t dropped = 0;

  for (int l = 0; l < op.n_d; ++l) {
    const Vec2 rd = sensors.positions[static_cast<std::size_t>(l)];
    for (int j = 0; j < grid.ny; ++j) {
      for (int i = 0; i < grid.nx; ++i) {
        const Vec2 rj = grid.pixel_center(i, j);
        const double dist = std::hypot(rd.x - rj.x, rd.y - rj.y);
        // |t_k - dist/vs| < dt/2 selects k = round(dist/(vs*dt)); an exact tie
        // at dt/2 goes to the lower bin
        const double bin = dist / (vs * dt);
        const auto k = static_cast<std::int64_t>(std::ceil(bin - 0.5));
        if (k >= n_t) {
          ++dropped;
          continue;
        }
        const int col = grid.linear_index(i, j);
        triplets.emplace_back(static_cast<int>(l * static_cast<std::int64_t>(n_t) + k), col,
                              amp / dist);
      }
    }
  }

  op.shell.resize(op.rows(), n_pix);
  op.shell.setFromTriplets(triplets.begin(), triplets.end());
  op.shell.makeCompressed();
  op.shell_adj = op.shell.transpose();
  op.shell_adj.makeCompressed();
  op.dropped_events = dropped;
  return op;
}

Sinogram apply_time_derivative(const Sinogram& s) {
  if (s.n_t < 3) throw std::invalid_argument("apply_time_derivative: need n_t >= 3");
  Sinogram out(s.n_d, s.n_t, s.dt);
  for (int l = 0; l < s.n_d; ++l) {
    const double* x = &s.data[static_cast<std::size_t>(l) * s.n_t];
    double* y = &out.data[static_cast<std::size_t>(l) * s.n_t];
    y[0] = x[1] / 2.0;
    for (int k = 1; k < s.n_t - 1; ++k) y[k] = (x[k + 1] - x[k - 1]) / 2.0;
    y[s.n_t - 1] = -x[s.n_t - 2] / 2.0;
  }
  return out;
}

Sinogram adjoint_time_derivative(const Sinogram& s) {
  // the zero-padded central difference is skew-symmetric
  Sinogram out = apply_time_derivative(s);
  for (double& v : out.data) v = -v;
  return out;
}

Sinogram apply_forward(const ForwardOperator& op, const Image& image) {
  check_shapes(op, image);
  Sinogram shell_out(op.n_d, op.n_t, op.dt);
  Eigen::Map<const Eigen::VectorXd> x(image.data.data(),
                                      static_cast<Eigen::Index>(image.size()));
  Eigen::Map<Eigen::VectorXd> y(shell_out.data.data(),
                                static_cast<Eigen::Index>(shell_out.size()));
  y = op.shell * x;
  return apply_time_derivative(shell_out);
}

Image apply_adjoint(const ForwardOperator& op, const Sinogram& sinogram) {
  check_shapes(op, sinogram);
  const Sinogram deriv_t = adjoint_time_derivative(sinogram);
  Image out(op.grid.nx, op.grid.ny);
  Eigen::Map<const Eigen::VectorXd> y(deriv_t.data.data(),
                                      static_cast<Eigen::Index>(deriv_t.size()));
  Eigen::Map<Eigen::VectorXd> x(out.data.data(), static_cast<Eigen::Index>(out.size()));
  x = op.shell_adj * y;
  return out;
}

Sinogram bandpass_filter(const Sinogram& s, double f_lo_hz, double f_hi_hz) {
  if (s.dt <= 0.0) throw std::invalid_argument("bandpass_filter: sinogram carries no time step");
  const auto filt = ZeroPhaseBandpass::design(f_lo_hz, f_hi_hz, 1.0 / s.dt);
  Sinogram out = s;
  std::vector<double> channel(static_cast<std::size_t>(s.n_t));
  for (int l = 0; l < s.n_d; ++l) {
    const auto base = static_cast<std::size_t>(l) * s.n_t;
    std::copy(out.data.begin() + base, out.data.begin() + base + s.n_t, channel.begin());
    filt.filtfilt(channel);
    std::copy(channel.begin(), channel.end(), out.data.begin() + base);
  }
  return out;
}

Sinogram add_noise(const Sinogram& s, double snr_db, std::uint64_t seed) {
  if (std::isinf(snr_db) && snr_db > 0.0) return s;
  double power = 0.0;
  for (double v : s.data) power += v * v;
  power /= static_cast<double>(s.size());
  if (power <= 0.0)
    throw std::invalid_argument("add_noise: zero-power sinogram, SNR undefined");

  const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  Rng rng(seed);
  Sinogram out = s;
  for (double& v : out.data) v += rng.gaussian(0.0, sigma);
  return out;
}

SensorArray subdivide_sensor(const Vec2& sensor_position, double aperture_length,
                             int n_elements) {
  if (n_elements < 1) throw std::invalid_argument("subdivide_sensor: n_elements must be >= 1");
  if (aperture_length < 0.0)
    throw std::invalid_argument("subdivide_sensor: aperture must be non-negative");

  const double r = std::hypot(sensor_position.x, sensor_position.y);
  if (r <= 0.0)
    throw std::invalid_argument("subdivide_sensor: sensor at the origin has no tangent");
  const Vec2 tangent{-sensor_position.y / r, sensor_position.x / r};

  SensorArray array;
  array.radius = r;
  array.coverage_deg = 0.0;
  array.offset_deg = 0.0;
  array.perturbed = n_elements > 1;
  array.positions.reserve(static_cast<std::size_t>(n_elements));
  for (int e = 0; e < n_elements; ++e) {
    const double offset =
        n_elements == 1 ? 0.0
                        : -aperture_length / 2.0 + aperture_length * e / (n_elements - 1);
    array.positions.push_back(
        {sensor_position.x + offset * tangent.x, sensor_position.y + offset * tangent.y});
  }
  return array;
}

Sinogram synthesize_sinogram(const Image& image, const RealizedEnvironment& env,
                             const ImagingGrid& grid, const NominalParams& nominal,
                             std::uint64_t seed, const ForwardOperator* prebuilt) {
  ForwardOperator local;
  const ForwardOperator* op = prebuilt;
  if (op == nullptr) {
    local = build_system_matrix(grid, env.sensors_true, env.vs_true, nominal.n_t, nominal.dt);
    op = &local;
  }
  Sinogram raw = apply_forward(*op, image);
  Sinogram band = bandpass_filter(raw, nominal.f_lo_hz, nominal.f_hi_hz);
  return add_noise(band, env.snr_db, seed);
}

}  // namespace oat
