#include "oat/geometry.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "oat/rng.hpp"

namespace oat {

ImagingGrid build_grid(int nx, int ny, double dx, double dy, double slab_thickness) {
  if (nx < 2 || ny < 2) throw std::invalid_argument("build_grid: nx and ny must be >= 2");
  if (dx <= 0.0 || dy <= 0.0)
    throw std::invalid_argument("build_grid: pixel pitch must be positive");
  if (slab_thickness < 0.0)
    throw std::invalid_argument("build_grid: slab_thickness must be non-negative");
  ImagingGrid grid;
  grid.nx = nx;
  grid.ny = ny;
  grid.dx = dx;
  grid.dy = dy;
  grid.center = {0.0, 0.0};
  grid.slab_thickness = slab_thickness > 0.0 ? slab_thickness : dx;
  return grid;
}

SensorArray place_sensors(int n_detectors, double radius, double coverage_deg,
                          double offset_deg) {
  if (n_detectors < 1) throw std::invalid_argument("place_sensors: need at least one detector");
  if (radius <= 0.0) throw std::invalid_argument("place_sensors: radius must be positive");
  if (coverage_deg <= 0.0 || coverage_deg > 360.0)
    throw std::invalid_argument("place_sensors: coverage must be in (0, 360] degrees");

  SensorArray array;
  array.radius = radius;
  array.coverage_deg = coverage_deg;
  array.offset_deg = offset_deg;
  array.positions.reserve(static_cast<std::size_t>(n_detectors));

  constexpr double deg = std::numbers::pi / 180.0;
  for (int l = 0; l < n_detectors; ++l) {
    // full coverage omits the duplicate endpoint; a partial arc includes both
    double theta;
    if (coverage_deg == 360.0) {
      theta = offset_deg + 360.0 * l / n_detectors;
    } else if (n_detectors == 1) {
      theta = offset_deg;
    } else {
      theta = offset_deg + coverage_deg * l / (n_detectors - 1);
    }
    array.positions.push_back({radius * std::cos(theta * deg), radius * std::sin(theta * deg)});
  }
  return array;
}

void validate(const EnvironmentSpec& spec) {
  if (spec.n_detectors < 1)
    throw std::invalid_argument("EnvironmentSpec: n_detectors must be >= 1");
  if (spec.coverage_deg <= 0.0 || spec.coverage_deg > 360.0)
    throw std::invalid_argument("EnvironmentSpec: coverage must be in (0, 360] degrees");
  if (spec.position_uncertainty_pct < 0.0 || spec.vs_uncertainty_pct < 0.0)
    throw std::invalid_argument("EnvironmentSpec: uncertainties must be non-negative");
  if (spec.snr_lo_db > spec.snr_hi_db)
    throw std::invalid_argument("EnvironmentSpec: snr range must satisfy lo <= hi");
}

RealizedEnvironment realize_environment(const EnvironmentSpec& spec, double vs_nominal,
                                        double radius, std::uint64_t seed) {
  validate(spec);
  if (vs_nominal <= 0.0)
    throw std::invalid_argument("realize_environment: vs_nominal must be positive");

  RealizedEnvironment env;
  env.spec = spec;
  env.sensors_true = place_sensors(spec.n_detectors, radius, spec.coverage_deg, 0.0);

  Rng rng(seed);
  if (spec.position_uncertainty_pct > 0.0) {
    const double sigma = spec.position_uncertainty_pct / 100.0 * radius;
    for (auto& p : env.sensors_true.positions) {
      p.x += rng.gaussian(0.0, sigma);
      p.y += rng.gaussian(0.0, sigma);
    }
    env.sensors_true.perturbed = true;
  }
  env.vs_true = vs_nominal;
  if (spec.vs_uncertainty_pct > 0.0)
    env.vs_true = vs_nominal * (1.0 + rng.gaussian(0.0, spec.vs_uncertainty_pct / 100.0));
  env.snr_db = rng.uniform(spec.snr_lo_db, spec.snr_hi_db);
  return env;
}

}  // namespace oat
