#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "oat/network.hpp"
#include "oat/phantom.hpp"

namespace oat {

/// Gradient sign-agreement masking: component j of the output is the plain
/// mean of the per-environment gradients when at least tau*d environments
/// agree in sign (|sum_e sign(g_e[j])| >= tau*d, inclusive; sign(0) = 0), and
/// exactly zero otherwise. survival_fraction, when given, receives the kept
/// fraction of components.
GradientSet andmask_aggregate(const std::vector<GradientSet>& env_grads, double tau,
                              double* survival_fraction = nullptr);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

AdamState make_adam_state(std::size_t n_params, double lr);

/// Standard bias-corrected adaptive-moment update. The moments see the
/// gradient exactly as passed in (masked gradients stay masked).
void adam_step(ParameterSet& params, const GradientSet& grad, AdamState& state);

struct TrainConfig {
  int epochs = 100;
  int batch_per_env = 2;
  int pooled_batch = 10;
  double learning_rate = 5e-4;
  double tau = 0.4;
  int patience = 10;  // epochs without validation improvement before stopping
  int threads = 1;
};

struct EpochRecord {
  std::vector<double> env_train_loss;  // mean step loss per environment
  double validation_loss = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<double> mask_survival;  // per optimization step; empty for pooled runs
  int best_epoch = -1;
  double best_validation_loss = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
};

struct TrainResult {
  ParameterSet params;
  TrainHistory history;
};

/// Per-environment invariant training: each step draws batch_per_env examples
/// from every environment, aggregates the per-environment gradients with
/// andmask_aggregate and applies one ADAM update. Early stopping watches the
/// mean validation loss across environments and restores the best checkpoint.
TrainResult train_andmask(const TrainConfig& config, const NetworkConfig& net_config,
                          const std::vector<DatasetSplit>& env_datasets, std::uint64_t seed);

/// Pooled baseline: identical machinery on one unsegregated dataset with the
/// plain mean gradient over pooled_batch examples.
TrainResult train_benchmark(const TrainConfig& config, const NetworkConfig& net_config,
                            const DatasetSplit& pooled_dataset, std::uint64_t seed);

/// Concatenates environment datasets (sizes add, order preserved).
DatasetSplit pool_datasets(const std::vector<DatasetSplit>& env_datasets);

/// LBP image as a network input tensor / ground truth as a target tensor.
Tensor sample_input(const Sample& s);
Tensor sample_target(const Sample& s);

}  // namespace oat
