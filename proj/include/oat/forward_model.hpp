#pragma once

#include <Eigen/SparseCore>
#include <cstdint>
#include <vector>

#include "oat/geometry.hpp"

namespace oat {

/// Initial-pressure image on the grid, row-major (rows are y).
struct Image {
  int nx = 0;
  int ny = 0;
  std::vector<double> data;

  Image() = default;
  Image(int nx_, int ny_) : nx(nx_), ny(ny_), data(static_cast<std::size_t>(nx_) * ny_, 0.0) {}

  double& at(int i, int j) { return data[static_cast<std::size_t>(j) * nx + i]; }
  double at(int i, int j) const { return data[static_cast<std::size_t>(j) * nx + i]; }
  std::size_t size() const { return data.size(); }
};

/// Stacked per-detector time series, detector-major: sample (l, k) lives at
/// data[l * n_t + k].
struct Sinogram {
  int n_d = 0;
  int n_t = 0;
  double dt = 0.0;  // [s]
  std::vector<double> data;

  Sinogram() = default;
  Sinogram(int n_d_, int n_t_, double dt_)
      : n_d(n_d_), n_t(n_t_), dt(dt_), data(static_cast<std::size_t>(n_d_) * n_t_, 0.0) {}

  double& at(int l, int k) { return data[static_cast<std::size_t>(l) * n_t + k]; }
  double at(int l, int k) const { return data[static_cast<std::size_t>(l) * n_t + k]; }
  std::size_t size() const { return data.size(); }
};

/// Discrete acquisition model A = A_deriv * A_shell. The shell matrix holds
/// the spherical-shell weights; the time derivative is applied as a stencil.
/// The shell matrix and its transpose are stored separately so the forward
/// and adjoint paths are independent code paths (the adjoint identity test
/// would not certify anything if both sides walked the same arrays).
struct ForwardOperator {
  Eigen::SparseMatrix<double, Eigen::RowMajor> shell;      // (n_d*n_t) x N
  Eigen::SparseMatrix<double, Eigen::RowMajor> shell_adj;  // N x (n_d*n_t)
  double vs = 0.0;
  double dt = 0.0;
  int n_t = 0;
  int n_d = 0;
  ImagingGrid grid;
  SensorArray sensors;
  std::int64_t dropped_events = 0;  // arrival bins past the recording window

  std::int64_t rows() const { return static_cast<std::int64_t>(n_d) * n_t; }
  std::int64_t cols() const { return grid.pixel_count(); }
};

/// Assembles the shell matrix: entry (row l*n_t+k, column j) is
/// (1/(4 pi vs^2)) * (dV/dt^2) / |r_dl - r_j| when the arrival time
/// |r_dl - r_j| / vs falls into bin k (|t_k - tof| < dt/2, ties to the lower
/// bin), zero otherwise. Arrivals past the window are dropped and counted.
ForwardOperator build_system_matrix(const ImagingGrid& grid, const SensorArray& sensors,
                                    double vs, int n_t, double dt);

/// Per-channel central difference y_k = (x_{k+1} - x_{k-1}) / 2 with zero
/// padding at both ends; the 1/dt scale is absorbed into the shell matrix.
Sinogram apply_time_derivative(const Sinogram& s);

/// Exact transpose of the central difference (its negation).
Sinogram adjoint_time_derivative(const Sinogram& s);

Sinogram apply_forward(const ForwardOperator& op, const Image& image);

Image apply_adjoint(const ForwardOperator& op, const Sinogram& sinogram);

/// Zero-phase 4th-order Butterworth band-pass applied per channel.
Sinogram bandpass_filter(const Sinogram& s, double f_lo_hz, double f_hi_hz);

/// Additive white Gaussian noise at the requested SNR (dB, relative to the
/// mean sample power). An infinite SNR is the identity. Deterministic per seed.
Sinogram add_noise(const Sinogram& s, double snr_db, std::uint64_t seed);

/// Splits a finite-aperture detector into point elements spanning the
/// aperture tangentially (perpendicular to the radial direction through the
/// sensor); their sinograms are averaged downstream.
SensorArray subdivide_sensor(const Vec2& sensor_position, double aperture_length,
                             int n_elements);

/// Time base and transducer band shared by synthesis and reconstruction.
struct NominalParams {
  double vs = 1490.0;     // [m/s]
  double radius = 0.01;   // [m]
  int n_t = 512;
  double dt = 2e-8;       // [s]
  double f_lo_hz = 1e5;
  double f_hi_hz = 1.5e7;
};

/// Full acquisition chain for one example: forward model built from the
/// environment's true sensors and sound speed, transducer band-pass, then
/// noise at the environment's SNR. `prebuilt` short-circuits matrix assembly
/// when the caller knows consecutive examples share the same true geometry.
Sinogram synthesize_sinogram(const Image& image, const RealizedEnvironment& env,
                             const ImagingGrid& grid, const NominalParams& nominal,
                             std::uint64_t seed, const ForwardOperator* prebuilt = nullptr);

}  // namespace oat
