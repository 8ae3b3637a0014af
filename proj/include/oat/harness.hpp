#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oat/forward_model.hpp"
#include "oat/geometry.hpp"
#include "oat/metrics.hpp"
#include "oat/network.hpp"
#include "oat/phantom.hpp"
#include "oat/training.hpp"

namespace oat {

struct DatasetConfig {
  int base_phantoms_per_env = 120;
  int augment_factor = 2;
  double split_fraction = 0.8;
  int test_images = 50;
};

/// Everything one experiment run needs, resolvable from a template name plus
/// JSON overrides. Reference rows carry published full-scale results for the
/// report; they are informational only.
struct ExperimentConfig {
  std::string kind = "custom";  // position | detectors | coverage | soundspeed | custom
  int grid_nx = 64;
  int grid_ny = 64;
  double grid_dx = 120e-6;
  double grid_dy = 120e-6;
  NominalParams nominal;
  std::vector<EnvironmentSpec> train_envs;
  EnvironmentSpec lax_env;
  EnvironmentSpec challenging_env;
  NetworkConfig network;
  TrainConfig training;
  std::vector<double> taus{0.4, 0.8};
  DatasetConfig dataset;
  PhantomParams phantom;
  std::uint64_t seed = 1234;
  int threads = 0;  // 0 = hardware concurrency
  std::string output_dir = "runs/out";
  MetricsReport reference_targets;

  ImagingGrid grid() const { return build_grid(grid_nx, grid_ny, grid_dx, grid_dy); }
};

/// Built-in experiment families at desk scale.
ExperimentConfig template_config(const std::string& kind);

/// Parses and validates a JSON config file. An "experiment" key selects the
/// template the remaining keys override; unknown keys are rejected with their
/// path.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config_json(const std::string& json_text);
std::string config_to_json(const ExperimentConfig& config);

/// Per-environment test set drawn from a spec: fresh phantoms (disjoint seed
/// stream from training), fresh realizations, LBP inputs from the nominal
/// operator.
std::vector<Sample> build_test_set(const EnvironmentSpec& spec, int n_images,
                                   std::uint64_t seed, const ImagingGrid& grid,
                                   const NominalParams& nominal,
                                   const PhantomParams& phantom_params, int threads = 1);

struct ExperimentArtifacts {
  MetricsReport report;
  std::string report_csv_path;
  std::string report_md_path;
  std::string manifest_path;
  std::vector<std::string> checkpoint_paths;
};

/// Full pipeline: per-environment datasets, ANDMask training at each tau plus
/// the pooled benchmark, evaluation of LBP and all models on the lax and
/// challenging test sets, CSV/markdown reports, example reconstruction
/// panels, checkpoints and a run manifest with artifact hashes.
ExperimentArtifacts run_experiment(const ExperimentConfig& config);

/// Dataset synthesis only; writes per-environment sample files plus a JSON
/// manifest listing (phantom file, sinogram file, realization seed).
void run_simulate(const ExperimentConfig& config);

/// Training only (datasets stay in memory); writes checkpoints, history and a
/// run manifest into output_dir.
std::vector<std::string> run_train(const ExperimentConfig& config);

/// Evaluation of previously trained checkpoints against fresh test sets.
ExperimentArtifacts run_evaluate(const ExperimentConfig& config,
                                 const std::string& run_dir);

}  // namespace oat
