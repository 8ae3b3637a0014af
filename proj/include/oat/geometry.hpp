#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace oat {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

/// Discretized square imaging region. Pixel (i, j) is indexed with i along x
/// and j along y; the physical center of pixel (i, j) is
///   center + ((i - (nx-1)/2) * dx, (j - (ny-1)/2) * dy).
struct ImagingGrid {
  int nx = 0;
  int ny = 0;
  double dx = 0.0;  // [m]
  double dy = 0.0;  // [m]
  Vec2 center{};
  double slab_thickness = 0.0;  // [m] depth of the 2D slice

  int pixel_count() const { return nx * ny; }

  // volume element of one pixel
  double cell_volume() const { return dx * dy * slab_thickness; }

  Vec2 pixel_center(int i, int j) const {
    return {center.x + (i - (nx - 1) / 2.0) * dx, center.y + (j - (ny - 1) / 2.0) * dy};
  }

  // row-major storage: rows are y, columns are x
  int linear_index(int i, int j) const { return j * nx + i; }
};

/// Point detectors on (an arc of) a circle around the imaging region.
struct SensorArray {
  std::vector<Vec2> positions;
  double radius = 0.0;        // [m]
  double coverage_deg = 0.0;  // angular section covered by the detectors
  double offset_deg = 0.0;    // angle of the first detector
  bool perturbed = false;     // true once positions left the ideal arc

  int count() const { return static_cast<int>(positions.size()); }
};

/// One acquisition-condition distribution: detector layout plus the parameter
/// uncertainties and noise level data drawn under it are subject to.
struct EnvironmentSpec {
  int n_detectors = 16;
  double coverage_deg = 360.0;
  double position_uncertainty_pct = 0.0;  // percent of the detection radius
  double vs_uncertainty_pct = 0.0;        // percent of the nominal sound speed
  double snr_lo_db = 40.0;
  double snr_hi_db = 60.0;
  std::string label;

  bool deterministic_geometry() const {
    return position_uncertainty_pct == 0.0 && vs_uncertainty_pct == 0.0;
  }
};

/// One concrete draw from an EnvironmentSpec.
struct RealizedEnvironment {
  SensorArray sensors_true;
  double vs_true = 0.0;  // [m/s]
  double snr_db = 0.0;
  EnvironmentSpec spec;
};

ImagingGrid build_grid(int nx, int ny, double dx, double dy, double slab_thickness = 0.0);

SensorArray place_sensors(int n_detectors, double radius, double coverage_deg,
                          double offset_deg);

void validate(const EnvironmentSpec& spec);

/// Draws one realization: sensors are placed per spec and each Cartesian
/// coordinate perturbed by a zero-mean Gaussian with std
/// (position_uncertainty_pct/100) * radius; the true sound speed is the
/// nominal one scaled by (1 + g), g ~ N(0, vs_uncertainty_pct/100); the SNR is
/// uniform in the spec range. Pure function of (spec, vs_nominal, radius, seed).
RealizedEnvironment realize_environment(const EnvironmentSpec& spec, double vs_nominal,
                                        double radius, std::uint64_t seed);

}  // namespace oat
