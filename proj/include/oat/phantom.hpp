#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oat/forward_model.hpp"
#include "oat/lbp.hpp"

namespace oat {

/// Knobs of the procedural vessel generator. Per-seed draws pick the branch
/// count and stroke thickness inside the configured ranges.
struct PhantomParams {
  int branches_min = 2;
  int branches_max = 5;
  double thickness_min = 1.0;  // [px]
  double thickness_max = 3.0;  // [px]
  int walk_steps = 0;          // 0 selects ~0.9 * grid side
  double step_px = 1.0;
  double turn_sigma = 0.30;    // angular diffusion per step [rad]
  double branch_prob = 0.035;  // per-step probability of spawning a child
  int max_active = 12;
};

/// One deterministic augmentation: quarter turns, axis flips, integer-pixel
/// translation with zero fill, applied in that order.
struct AugmentOp {
  int quarter_turns = 0;  // counterclockwise, 0..3
  bool flip_h = false;    // mirror along x
  bool flip_v = false;    // mirror along y
  int shift_x = 0;        // [px]
  int shift_y = 0;        // [px]

  bool is_identity() const {
    return quarter_turns == 0 && !flip_h && !flip_v && shift_x == 0 && shift_y == 0;
  }
};

/// Ground-truth image in [0, 1] plus how it came to be.
struct Phantom {
  Image image;
  std::string provenance;  // "procedural:<seed>" or "import:<path>"
  AugmentOp augment_record{};

  double foreground_fraction(double threshold = 0.1) const;
};

/// Vessel-tree phantom: seeded random walkers with angular momentum render
/// anti-aliased strokes. Retries with derived sub-seeds until the foreground
/// fraction lands in the non-degenerate band [0.5%, 30%].
Phantom generate_vessel_phantom(const ImagingGrid& grid, std::uint64_t seed,
                                const PhantomParams& params = {});

Phantom augment_with(const Phantom& phantom, const AugmentOp& op);

/// Random draw over the discrete augmentation group; translations reach up to
/// +-10% of the grid side.
Phantom augment(const Phantom& phantom, std::uint64_t seed);

/// Loads an 8/16-bit grayscale PNG or PGM, rescales to [0, 1] and resamples
/// onto the grid by area averaging.
Phantom import_image(const std::string& path, const ImagingGrid& grid);

/// One training example: measured data, its ground truth and the
/// back-projected network input.
struct Sample {
  Sinogram sinogram;
  Phantom phantom;
  Image lbp;
  double lbp_scale = 1.0;
  std::uint64_t realization_seed = 0;
};

struct DatasetSplit {
  std::vector<Sample> train;
  std::vector<Sample> validation;
};

/// Builds one environment's dataset: n_base phantoms augmented to
/// n_base*augment_factor examples, each synthesized under a fresh realization
/// of the environment spec, with LBP inputs computed against the nominal
/// operator. The split is by base phantom so augmented copies never leak
/// across it. Pure function of its arguments.
DatasetSplit build_environment_dataset(const EnvironmentSpec& spec, int n_base,
                                       int augment_factor, double split_fraction,
                                       std::uint64_t seed, const ImagingGrid& grid,
                                       const NominalParams& nominal,
                                       const PhantomParams& phantom_params = {},
                                       int threads = 1);

}  // namespace oat
